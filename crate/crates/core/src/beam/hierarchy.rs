//! Phase and amplitude jet hierarchies along a Fermi chart.
//!
//! The phase is phi = z1 + psi(sigma, z) with psi of transverse degree >= 2.
//! Requiring the eikonal defect <dphi, dphi> to vanish through degree N at
//! every sigma gives a triangular system: the degree-j, sigma-order-(m+1)
//! coefficients of psi are determined by lower orders through the chart
//! jets, because the only appearance of the unknown is the cross term
//! 2 G^{sigma z1} (d_sigma psi)(d_z1 phi). Amplitudes follow the same
//! pattern for the transport operator with the inverse-rho sources.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::causal::{ChartNode, FermiChart};
use crate::error::{Error, Result};
use crate::poly::{self, MultiPoly, PolyShape};

use super::riccati::{solve_riccati, RiccatiSolution};

type CPoly = MultiPoly<Complex64>;

/// Complexified per-node chart data shared by the hierarchy and the
/// quasimode residual evaluation.
pub(crate) struct NodeCx {
    pub gu: Vec<Vec<CPoly>>,
    pub div: Vec<CPoly>,
    pub g01: Complex64,
    pub dim: usize,
}

impl NodeCx {
    pub fn new(node: &ChartNode) -> NodeCx {
        let dim = node.f_map.len();
        let gu: Vec<Vec<CPoly>> = node
            .g_upper
            .iter()
            .map(|row| row.iter().map(|p| p.map(|x| Complex64::new(x, 0.0))).collect())
            .collect();
        let div: Vec<CPoly> = node
            .div_coef
            .iter()
            .map(|p| p.map(|x| Complex64::new(x, 0.0)))
            .collect();
        let g01 = gu[0][1].constant_term();
        NodeCx { gu, div, g01, dim }
    }

    /// <df, dh>_G = sum_ab G^{ab} (d_a f)(d_b h).
    pub fn grad_inner(&self, f: &CPoly, h: &CPoly) -> CPoly {
        let df: Vec<CPoly> = (0..self.dim).map(|a| f.deriv(a)).collect();
        let dh: Vec<CPoly> = (0..self.dim).map(|a| h.deriv(a)).collect();
        let mut acc = CPoly::zero(&f.shape);
        for a in 0..self.dim {
            for b in 0..self.dim {
                if self.gu[a][b].is_zero() {
                    continue;
                }
                acc = &acc + &self.gu[a][b].mul(&df[a]).mul(&dh[b]);
            }
        }
        acc
    }

    /// Box f = G^{ab} d_a d_b f + B^b d_b f in chart coordinates.
    pub fn box_apply(&self, f: &CPoly) -> CPoly {
        let mut acc = CPoly::zero(&f.shape);
        for a in 0..self.dim {
            let da = f.deriv(a);
            for b in 0..self.dim {
                if !self.gu[a][b].is_zero() {
                    acc = &acc + &self.gu[a][b].mul(&da.deriv(b));
                }
            }
            if !self.div[a].is_zero() {
                acc = &acc + &self.div[a].mul(&da);
            }
        }
        acc
    }
}

/// Collapse the sigma dependence: evaluate at sigma = gap, keeping z.
pub(crate) fn sigma_collapse(p: &CPoly, gap: f64) -> CPoly {
    let mut out = CPoly::zero(&p.shape);
    for (slot, e) in p.shape.exps.iter().enumerate() {
        let c = p.c[slot];
        if c == Complex64::new(0.0, 0.0) {
            continue;
        }
        let mut e0 = *e;
        let pow = gap.powi(e[0] as i32);
        e0[0] = 0;
        out.add_coeff(&e0, c * Complex64::new(pow, 0.0));
    }
    out
}

fn z_degree(e: &[u8; poly::MAX_VARS]) -> usize {
    e[1] as usize + e[2] as usize
}

pub struct PhaseJet {
    pub n: usize,
    /// Jet order N: transverse degrees 2..=N are solved.
    pub order: usize,
    /// Full phase polynomial per chart node, in that node's (sigma, z).
    pub phi: Vec<CPoly>,
    pub riccati: RiccatiSolution,
    /// Smallest eigenvalue of Im H along the ray.
    pub im_floor: f64,
    /// Worst deviation of the hierarchy's degree-2 block from the Riccati H.
    pub h_consistency: f64,
}

impl PhaseJet {
    pub fn shape(&self) -> &Arc<PolyShape> {
        &self.phi[0].shape
    }
}

pub fn build_phase_jet(
    chart: &FermiChart,
    order: usize,
    h0: &DMatrix<Complex64>,
) -> Result<PhaseJet> {
    let n = chart.n;
    let shape = &chart.shape;
    let mut init = CPoly::var(shape, 1);
    for i in 0..n {
        for j in 0..n {
            let mut e = [0u8; poly::MAX_VARS];
            e[1 + i] += 1;
            e[1 + j] += 1;
            init.add_coeff(&e, h0[(i, j)] * Complex64::new(0.5, 0.0));
        }
    }
    build_phase_jet_with(chart, order, &init)
}

/// Phase hierarchy from a full initial transverse jet (the sigma = 0 slice
/// at the first node). The jet must carry no sigma dependence, start at
/// z1 exactly through degree 1, and have a positive-definite imaginary
/// quadratic part.
pub fn build_phase_jet_with(chart: &FermiChart, order: usize, init: &CPoly) -> Result<PhaseJet> {
    let n = chart.n;
    if order + 1 > chart.z_cap {
        return Err(Error::Config(format!(
            "jet order {order} needs chart z_cap >= {}, have {}",
            order + 1,
            chart.z_cap
        )));
    }
    let shape = &chart.shape;
    for (slot, e) in shape.exps.iter().enumerate() {
        if init.c[slot] == Complex64::new(0.0, 0.0) {
            continue;
        }
        if e[0] != 0 {
            return Err(Error::Config("phase init must not depend on sigma".into()));
        }
        let d = z_degree(e);
        if d == 0 || (d == 1 && !(e[1] == 1 && (init.c[slot] - Complex64::new(1.0, 0.0)).norm() < 1e-12)) {
            return Err(Error::Config(
                "phase init must equal z1 through transverse degree 1".into(),
            ));
        }
        if d > order {
            return Err(Error::Config(format!(
                "phase init carries degree {d} beyond the jet order {order}"
            )));
        }
    }

    // H0 from the quadratic slice
    let mut h0 = DMatrix::<Complex64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut e = [0u8; poly::MAX_VARS];
            e[1 + i] += 1;
            e[1 + j] += 1;
            let c = init.coeff(&e);
            if i == j {
                h0[(i, j)] = c * Complex64::new(2.0, 0.0);
            } else {
                h0[(i, j)] = c;
                h0[(j, i)] = c;
            }
        }
    }
    let riccati = solve_riccati(chart, &h0)?;

    let mut carry = init.clone();
    let mut phi_nodes = Vec::with_capacity(chart.nodes.len());
    let mut h_consistency = 0.0f64;
    for (idx, node) in chart.nodes.iter().enumerate() {
        let cx = NodeCx::new(node);
        let mut phi = carry.clone();
        for m in 0..chart.sigma_cap {
            let scale = Complex64::new(2.0 * (m + 1) as f64, 0.0) * cx.g01;
            for j in 2..=order {
                let q = cx.grad_inner(&phi, &phi);
                for (slot, e) in shape.exps.iter().enumerate() {
                    if e[0] as usize != m || z_degree(e) != j {
                        continue;
                    }
                    let c = q.c[slot];
                    if c == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    let mut target = *e;
                    target[0] = m as u8 + 1;
                    phi.add_coeff(&target, -c / scale);
                }
            }
        }

        // cross-check the degree-2 sigma^0 block against the Riccati H
        let h = &riccati.h[idx];
        for i in 0..n {
            for j in i..n {
                let mut e = [0u8; poly::MAX_VARS];
                e[1 + i] += 1;
                e[1 + j] += 1;
                let got = phi.coeff(&e);
                let want = if i == j {
                    h[(i, j)] * Complex64::new(0.5, 0.0)
                } else {
                    h[(i, j)]
                };
                h_consistency = h_consistency.max((got - want).norm());
            }
        }

        carry = sigma_collapse(&phi, node.gap);
        phi_nodes.push(phi);
    }

    Ok(PhaseJet {
        n,
        order,
        phi: phi_nodes,
        im_floor: riccati.min_im_eig,
        riccati,
        h_consistency,
    })
}

pub struct AmplitudeJet {
    pub order: usize,
    /// Per-k transverse degree caps, N - 2k.
    pub caps: Vec<usize>,
    /// b[k][node]: amplitude polynomial of inverse-rho order k.
    pub b: Vec<Vec<CPoly>>,
    /// Leading coefficient b_{0,0} sampled at the nodes.
    pub b00: Vec<Complex64>,
}

pub fn build_amplitude_jet(chart: &FermiChart, phase: &PhaseJet) -> Result<AmplitudeJet> {
    let kmax = phase.order / 2;
    let init: Vec<CPoly> = (0..=kmax)
        .map(|k| {
            if k == 0 {
                CPoly::constant(&chart.shape, Complex64::new(1.0, 0.0))
            } else {
                CPoly::zero(&chart.shape)
            }
        })
        .collect();
    build_amplitude_jet_with(chart, phase, &init)
}

/// Amplitude hierarchy from full initial transverse jets, one per
/// inverse-rho order (sigma = 0 slices at the first node).
pub fn build_amplitude_jet_with(
    chart: &FermiChart,
    phase: &PhaseJet,
    init: &[CPoly],
) -> Result<AmplitudeJet> {
    let order = phase.order;
    let kmax = order / 2;
    if init.len() != kmax + 1 {
        return Err(Error::Config(format!(
            "amplitude init needs {} inverse-rho orders, got {}",
            kmax + 1,
            init.len()
        )));
    }
    let caps: Vec<usize> = (0..=kmax).map(|k| order - 2 * k).collect();
    let shape = &chart.shape;
    for (k, p) in init.iter().enumerate() {
        for (slot, e) in shape.exps.iter().enumerate() {
            if p.c[slot] == Complex64::new(0.0, 0.0) {
                continue;
            }
            if e[0] != 0 || z_degree(e) > caps[k] {
                return Err(Error::Config(format!(
                    "amplitude init {k} must be a transverse jet of degree <= {}",
                    caps[k]
                )));
            }
        }
    }
    let i_unit = Complex64::new(0.0, 1.0);

    let mut b: Vec<Vec<CPoly>> = vec![Vec::with_capacity(chart.nodes.len()); kmax + 1];
    let mut carry: Vec<CPoly> = init.to_vec();
    let mut b00 = Vec::with_capacity(chart.nodes.len());

    for (idx, node) in chart.nodes.iter().enumerate() {
        let cx = NodeCx::new(node);
        let phi = &phase.phi[idx];
        let box_phi = cx.box_apply(phi);
        for k in 0..=kmax {
            let mut bk = carry[k].clone();
            // source from the previous inverse-rho order
            let src = if k == 0 {
                CPoly::zero(shape)
            } else {
                cx.box_apply(&b[k - 1][idx]).scale(i_unit)
            };
            for m in 0..chart.sigma_cap {
                let scale = Complex64::new(2.0 * (m + 1) as f64, 0.0) * cx.g01;
                for j in 0..=caps[k] {
                    let t = &(&cx.grad_inner(phi, &bk).scale_re(2.0) + &box_phi.mul(&bk)) - &src;
                    for (slot, e) in shape.exps.iter().enumerate() {
                        if e[0] as usize != m || z_degree(e) != j {
                            continue;
                        }
                        let c = t.c[slot];
                        if c == Complex64::new(0.0, 0.0) {
                            continue;
                        }
                        let mut target = *e;
                        target[0] = m as u8 + 1;
                        bk.add_coeff(&target, -c / scale);
                    }
                }
            }
            carry[k] = sigma_collapse(&bk, node.gap);
            b[k].push(bk);
        }
        b00.push(b[0][idx].constant_term());
    }

    Ok(AmplitudeJet {
        order,
        caps,
        b,
        b00,
    })
}

/// Radial defect profile: sup of the (affine-floor-subtracted) defect on
/// transverse spheres |z| = r, with the log-log regression slope.
pub struct DefectProfile {
    pub rs: Vec<f64>,
    pub sup: Vec<f64>,
    /// Largest on-axis coefficient of degree <= 1 (the drift floor that the
    /// hierarchy by contract does not touch).
    pub floor: f64,
    pub slope: f64,
}

fn directions(n: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        (0..16)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / 16.0;
                vec![a.cos(), a.sin()]
            })
            .collect()
    }
}

fn profile_of(defect: &CPoly, n: usize, rs: &[f64]) -> DefectProfile {
    let affine = defect.filter(|e| e[0] as usize + z_degree(e) <= 1);
    let floor = affine.max_coeff();
    let body = defect.filter(|e| e[0] as usize + z_degree(e) >= 2);
    let dirs = directions(n);
    let mut sup = Vec::with_capacity(rs.len());
    for &r in rs {
        let mut worst = 0.0f64;
        for d in &dirs {
            let mut args = vec![Complex64::new(0.0, 0.0); defect.shape.nvars];
            for (i, di) in d.iter().enumerate() {
                args[1 + i] = Complex64::new(r * di, 0.0);
            }
            worst = worst.max(body.eval(&args).norm());
        }
        sup.push(worst);
    }
    let slope = crate::grid::loglog_slope(rs, &sup, rs.len());
    DefectProfile {
        rs: rs.to_vec(),
        sup,
        floor,
        slope,
    }
}

/// Minimum of Im phi / |z|^2 over the sigma = 0 slices of all nodes, radii
/// up to r_max. Positive values certify Gaussian decay on the tube.
pub fn im_phase_ratio(chart: &FermiChart, phase: &PhaseJet, r_max: f64) -> f64 {
    let dirs = directions(chart.n);
    let mut worst = f64::INFINITY;
    for phi in &phase.phi {
        for d in &dirs {
            for step in 1..=8 {
                let r = r_max * step as f64 / 8.0;
                let mut args = vec![Complex64::new(0.0, 0.0); phi.shape.nvars];
                for (i, di) in d.iter().enumerate() {
                    args[1 + i] = Complex64::new(r * di, 0.0);
                }
                worst = worst.min(phi.eval(&args).im / (r * r));
            }
        }
    }
    worst
}

/// Eikonal defect <dphi, dphi>_G at a node, as a polynomial profile in the
/// transverse radius.
pub fn eikonal_defect_profile(
    chart: &FermiChart,
    phase: &PhaseJet,
    node_idx: usize,
    rs: &[f64],
) -> DefectProfile {
    let cx = NodeCx::new(&chart.nodes[node_idx]);
    let q = cx.grad_inner(&phase.phi[node_idx], &phase.phi[node_idx]);
    profile_of(&q, chart.n, rs)
}

/// Transport defect of inverse-rho order k at a node: T b_0 for k = 0,
/// T b_k - i Box b_{k-1} for k >= 1, where T b = 2<dphi, db> + (Box phi) b.
pub fn transport_defect_profile(
    chart: &FermiChart,
    phase: &PhaseJet,
    amp: &AmplitudeJet,
    k: usize,
    node_idx: usize,
    rs: &[f64],
) -> DefectProfile {
    let defect = transport_defect_poly(chart, phase, amp, k, node_idx);
    profile_of(&defect, chart.n, rs)
}

pub(crate) fn transport_defect_poly(
    chart: &FermiChart,
    phase: &PhaseJet,
    amp: &AmplitudeJet,
    k: usize,
    node_idx: usize,
) -> CPoly {
    let cx = NodeCx::new(&chart.nodes[node_idx]);
    let phi = &phase.phi[node_idx];
    let bk = &amp.b[k][node_idx];
    let t = &cx.grad_inner(phi, bk).scale_re(2.0) + &cx.box_apply(phi).mul(bk);
    if k == 0 {
        t
    } else {
        &t - &cx
            .box_apply(&amp.b[k - 1][node_idx])
            .scale(Complex64::new(0.0, 1.0))
    }
}
