//! Complex Riccati solve for the phase Hessian along a Fermi chart.
//!
//! The degree-two phase coefficient H(s) obeys H' + HPH + R = 0 where
//! P = diag(0,1,...,1) over the transverse slots and R(s) is the screen
//! curvature block extracted from the chart jets. We integrate the linear
//! lift Y' = PZ, Z' = -RY with Y(0) = I, Z(0) = H0 and recover H = Z Y^{-1},
//! which keeps Im H positive-definite wherever Y stays invertible.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::causal::{FermiChart, TAU_CONJ};
use crate::error::{Error, Result};

type CMat = DMatrix<Complex64>;

pub struct RiccatiSolution {
    /// Chart node parameters.
    pub s: Vec<f64>,
    pub y: Vec<CMat>,
    pub z: Vec<CMat>,
    /// H = Z Y^{-1} per node.
    pub h: Vec<CMat>,
    /// Per-node sigma Taylor coefficients of Y and Z across the node gap.
    pub y_jet: Vec<Vec<CMat>>,
    pub z_jet: Vec<Vec<CMat>>,
    /// Worst relative drift of det(Im H)|det Y|^2 from its initial value.
    pub invariant_drift: f64,
    /// Worst cross-node residual of H' + HPH + R.
    pub residual: f64,
    /// Smallest eigenvalue of Im H over all nodes.
    pub min_im_eig: f64,
}

impl RiccatiSolution {
    /// H evaluated inside the gap of node `idx` by the stored jets.
    pub fn h_at(&self, idx: usize, sigma: f64) -> CMat {
        let yv = eval_jet(&self.y_jet[idx], sigma);
        let zv = eval_jet(&self.z_jet[idx], sigma);
        let yi = yv.try_inverse().expect("Y degenerate inside node gap");
        zv * yi
    }
}

fn eval_jet(jet: &[CMat], sigma: f64) -> CMat {
    let mut acc = jet[jet.len() - 1].clone();
    for m in (0..jet.len() - 1).rev() {
        acc = acc * Complex64::new(sigma, 0.0) + &jet[m];
    }
    acc
}

fn eval_jet_deriv(jet: &[CMat], sigma: f64) -> CMat {
    let top = jet.len() - 1;
    let mut acc = &jet[top] * Complex64::new(top as f64, 0.0);
    for m in (1..top).rev() {
        acc = acc * Complex64::new(sigma, 0.0) + &jet[m] * Complex64::new(m as f64, 0.0);
    }
    acc
}

fn im_part(m: &CMat) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].im)
}

fn min_eig_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn frob(m: &CMat) -> f64 {
    m.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

pub fn solve_riccati(chart: &FermiChart, h0: &CMat) -> Result<RiccatiSolution> {
    let n = chart.n;
    if h0.nrows() != n || h0.ncols() != n {
        return Err(Error::Dimension(format!(
            "H0 is {}x{}, chart wants {n}x{n}",
            h0.nrows(),
            h0.ncols()
        )));
    }
    let sym_err = frob(&(h0 - h0.transpose()));
    if sym_err > 1e-12 * (1.0 + frob(h0)) {
        return Err(Error::Config("H0 is not symmetric".into()));
    }
    let im0 = min_eig_sym(&im_part(h0));
    if im0 <= 0.0 {
        return Err(Error::Config(format!(
            "Im H0 is not positive-definite (min eigenvalue {im0:.3e})"
        )));
    }

    let cap = chart.sigma_cap + 2;
    let mut y = CMat::identity(n, n);
    let mut z = h0.clone();
    let inv0 = im_part(h0).determinant();

    let mut sol = RiccatiSolution {
        s: Vec::with_capacity(chart.nodes.len()),
        y: Vec::with_capacity(chart.nodes.len()),
        z: Vec::with_capacity(chart.nodes.len()),
        h: Vec::with_capacity(chart.nodes.len()),
        y_jet: Vec::with_capacity(chart.nodes.len()),
        z_jet: Vec::with_capacity(chart.nodes.len()),
        invariant_drift: 0.0,
        residual: 0.0,
        min_im_eig: f64::INFINITY,
    };
    let mut max_dety = y.determinant().norm();
    let mut prev_step: Option<(CMat, CMat)> = None; // (H(gap-), R at gap-)

    for node in &chart.nodes {
        let dety = y.determinant().norm();
        max_dety = max_dety.max(dety);
        if dety < TAU_CONJ * max_dety {
            return Err(Error::FocalPoint(dety));
        }
        let yi = y
            .clone()
            .try_inverse()
            .ok_or(Error::FocalPoint(dety))?;
        let h = &z * &yi;

        // Lemma-level invariant: det(Im H)|det Y|^2 is conserved.
        let inv = im_part(&h).determinant() * y.determinant().norm_sqr();
        sol.invariant_drift = sol
            .invariant_drift
            .max((inv - inv0).abs() / inv0.abs());
        sol.min_im_eig = sol.min_im_eig.min(min_eig_sym(&im_part(&h)));

        // curvature jets, complexified
        let r_jet: Vec<CMat> = node
            .curvature_jet(n, chart.sigma_cap)
            .into_iter()
            .map(|r| r.map(|x| Complex64::new(x, 0.0)))
            .collect();

        // the jets propagated across the previous gap must satisfy the
        // equation against the freshly extracted curvature at this node
        if let Some((h_end, hp_end)) = prev_step.take() {
            let hph = &h_end * p_apply(&h_end, n);
            let resid = frob(&(&hp_end + &hph + &r_jet[0]));
            sol.residual = sol.residual.max(resid);
        }

        // Taylor coefficients over this node's gap
        let mut yc: Vec<CMat> = vec![CMat::zeros(n, n); cap + 1];
        let mut zc: Vec<CMat> = vec![CMat::zeros(n, n); cap + 1];
        yc[0] = y.clone();
        zc[0] = z.clone();
        for m in 0..cap {
            let mut pz = zc[m].clone();
            for col in 0..n {
                pz[(0, col)] = Complex64::new(0.0, 0.0);
            }
            yc[m + 1] = pz / Complex64::new((m + 1) as f64, 0.0);
            let mut ry = CMat::zeros(n, n);
            for (j, rj) in r_jet.iter().enumerate().take(m + 1) {
                ry += rj * &yc[m - j];
            }
            zc[m + 1] = -ry / Complex64::new((m + 1) as f64, 0.0);
        }

        sol.s.push(node.s);
        sol.y.push(y.clone());
        sol.z.push(z.clone());
        sol.h.push(h.clone());

        if node.gap > 0.0 {
            let yv = eval_jet(&yc, node.gap);
            let zv = eval_jet(&zc, node.gap);
            let yp = eval_jet_deriv(&yc, node.gap);
            let zp = eval_jet_deriv(&zc, node.gap);
            let yvi = yv.clone().try_inverse().ok_or_else(|| {
                Error::FocalPoint(yv.determinant().norm())
            })?;
            let h_end = &zv * &yvi;
            let hp_end = (&zp - &h_end * &yp) * &yvi;
            prev_step = Some((h_end, hp_end));
            y = yv;
            z = zv;
        }
        sol.y_jet.push(yc);
        sol.z_jet.push(zc);
    }
    Ok(sol)
}

fn p_apply(h: &CMat, n: usize) -> CMat {
    // P H with P = diag(0, 1, ..., 1)
    let mut out = h.clone();
    for col in 0..n {
        out[(0, col)] = Complex64::new(0.0, 0.0);
    }
    out
}

/// Branch-continuous inverse square root along a sampled path: each value
/// picks the root closer to the previous one, starting from the principal
/// branch.
pub fn continuous_inv_sqrt(vals: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(vals.len());
    let mut prev: Option<Complex64> = None;
    for v in vals {
        let mut w = 1.0 / v.sqrt();
        if let Some(p) = prev {
            if (w + p).norm() < (w - p).norm() {
                w = -w;
            }
        }
        prev = Some(w);
        out.push(w);
    }
    out
}
