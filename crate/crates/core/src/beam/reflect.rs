//! Reflected beam initial data from wall matching.
//!
//! At a reflection the incident and reflected phase jets must agree on the
//! wall to the jet order, and amplitude traces must cancel, so that the
//! summed quasimode has a small Dirichlet trace. Both restrictions are
//! computed by inverting the chart maps along the wall; the matching
//! equations are then triangular in the wall degree because an unknown
//! degree-d coefficient of the initial jet enters the wall restriction at
//! degree d only through the linearized chart transition.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::causal::{FermiChart, ReflectionEvent};
use crate::error::{Error, Result};
use crate::grid::Domain;
use crate::poly::{self, MultiPoly, PolyShape};

use super::hierarchy::{
    build_amplitude_jet_with, build_phase_jet_with, AmplitudeJet, PhaseJet,
};

use std::sync::Arc;

type CPoly = MultiPoly<Complex64>;
type RPoly = MultiPoly<f64>;

/// Ambient parametrization of the wall near a hit point: affine in the
/// wall parameters w (time along the wall, plus the tangential spatial
/// direction when n = 2).
pub struct WallFrame {
    pub point: Vec<f64>,
    pub tangents: Vec<Vec<f64>>,
}

impl WallFrame {
    pub fn at_event(domain: &Domain, event: &ReflectionEvent) -> WallFrame {
        let point = event.x.clone();
        let mut tangents = Vec::new();
        let mut t_dir = vec![0.0; point.len()];
        t_dir[0] = 1.0;
        tangents.push(t_dir);
        if domain.n() == 2 {
            let mut s_dir = vec![0.0; point.len()];
            match domain {
                Domain::Disk { .. } => {
                    let (x, y) = (point[1], point[2]);
                    let r = (x * x + y * y).sqrt();
                    s_dir[1] = -y / r;
                    s_dir[2] = x / r;
                }
                _ => {
                    // rectangle walls 0,1 are x-faces (y tangential), 2,3 y-faces
                    if event.wall < 2 {
                        s_dir[2] = 1.0;
                    } else {
                        s_dir[1] = 1.0;
                    }
                }
            }
            tangents.push(s_dir);
        }
        WallFrame { point, tangents }
    }
}

/// Chart coordinates of the wall points, as real polynomials in the wall
/// parameters: the solution zeta(w) of F(zeta) = point + tangents . w.
pub(crate) struct WallPullback {
    pub zeta: Vec<RPoly>,
    /// Sup coefficient of the unresolved inversion residual.
    pub drift: f64,
    /// Linear part of the transverse block dz/dw at w = 0.
    pub z_lin: DMatrix<f64>,
}

pub(crate) fn invert_on_wall(
    chart: &FermiChart,
    node_idx: usize,
    zeta_star: &[f64],
    wall: &WallFrame,
    wshape: &Arc<PolyShape>,
) -> Result<WallPullback> {
    let dim = chart.dim();
    let node = &chart.nodes[node_idx];
    let order = wshape.var_caps[0];

    // wall parametrization in the w shape
    let mut target: Vec<RPoly> = Vec::with_capacity(dim);
    for a in 0..dim {
        let mut p = RPoly::constant(wshape, wall.point[a]);
        for (j, tan) in wall.tangents.iter().enumerate() {
            p = &p + &RPoly::var(wshape, j).scale(tan[a]);
        }
        target.push(p);
    }

    // Jacobian of the chart map at the expansion point
    let mut jac = DMatrix::<f64>::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            jac[(a, b)] = node.f_map[a].deriv(b).eval(zeta_star);
        }
    }
    let jinv = jac
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Geometry("chart map is singular at the wall".into()))?;

    let mut eta: Vec<RPoly> = (0..dim).map(|_| RPoly::zero(wshape)).collect();
    let mut drift = 0.0;
    for _ in 0..=order {
        // residual target - F(zeta* + eta)
        let args: Vec<RPoly> = (0..dim)
            .map(|a| &RPoly::constant(wshape, zeta_star[a]) + &eta[a])
            .collect();
        let mut res: Vec<RPoly> = Vec::with_capacity(dim);
        for a in 0..dim {
            res.push(&target[a] - &node.f_map[a].compose(&args));
        }
        drift = res.iter().map(|r| r.max_coeff()).fold(0.0, f64::max);
        for a in 0..dim {
            let mut corr = RPoly::zero(wshape);
            for b in 0..dim {
                corr = &corr + &res[b].scale(jinv[(a, b)]);
            }
            eta[a] = &eta[a] + &corr;
        }
    }

    let n = chart.n;
    let mut z_lin = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for (j, _) in wall.tangents.iter().enumerate() {
            let mut e = [0u8; poly::MAX_VARS];
            e[j] = 1;
            z_lin[(i, j)] = eta[1 + i].coeff(&e);
        }
    }

    let zeta: Vec<RPoly> = (0..dim)
        .map(|a| &RPoly::constant(wshape, zeta_star[a]) + &eta[a])
        .collect();
    Ok(WallPullback { zeta, drift, z_lin })
}

fn complexify(ps: &[RPoly]) -> Vec<CPoly> {
    ps.iter().map(|p| p.map(|x| Complex64::new(x, 0.0))).collect()
}

fn w_degree(e: &[u8; poly::MAX_VARS], nw: usize) -> usize {
    (0..nw).map(|v| e[v] as usize).sum()
}

/// Per-degree composition matrices: column j is the degree-d image of the
/// j-th degree-d z monomial under z -> z_lin w.
struct DegreeSystems {
    /// For each degree d: (z-monomial exponents, LU-ready matrix inverse).
    mono: Vec<Vec<[u8; poly::MAX_VARS]>>,
    inv: Vec<DMatrix<f64>>,
    /// Wall-shape slots of the degree-d w monomials, fixing row order.
    rows: Vec<Vec<usize>>,
}

impl DegreeSystems {
    fn build(
        chart_shape: &Arc<PolyShape>,
        wshape: &Arc<PolyShape>,
        z_lin: &DMatrix<f64>,
        n: usize,
        max_deg: usize,
    ) -> Result<DegreeSystems> {
        // linear substitution polynomials z_i(w)
        let subs: Vec<RPoly> = (0..n)
            .map(|i| {
                let mut p = RPoly::zero(wshape);
                for j in 0..n {
                    p = &p + &RPoly::var(wshape, j).scale(z_lin[(i, j)]);
                }
                p
            })
            .collect();
        let mut mono = Vec::with_capacity(max_deg + 1);
        let mut inv = Vec::with_capacity(max_deg + 1);
        let mut rows = Vec::with_capacity(max_deg + 1);
        for d in 0..=max_deg {
            // degree-d z monomials (sigma-free) of the chart shape
            let monomials: Vec<[u8; poly::MAX_VARS]> = chart_shape
                .exps
                .iter()
                .filter(|e| {
                    e[0] == 0 && (1..=n).map(|v| e[v] as usize).sum::<usize>() == d
                })
                .cloned()
                .collect();
            let wrows: Vec<usize> = wshape
                .exps
                .iter()
                .enumerate()
                .filter(|(_, e)| w_degree(e, n) == d)
                .map(|(slot, _)| slot)
                .collect();
            if monomials.len() != wrows.len() {
                return Err(Error::Geometry(
                    "wall matching system is not square".into(),
                ));
            }
            let m = monomials.len();
            let mut a = DMatrix::<f64>::zeros(m, m);
            for (col, e) in monomials.iter().enumerate() {
                let mut p = RPoly::constant(wshape, 1.0);
                for v in 1..=n {
                    for _ in 0..e[v] {
                        p = p.mul(&subs[v - 1]);
                    }
                }
                for (row, &slot) in wrows.iter().enumerate() {
                    a[(row, col)] = p.c[slot];
                }
            }
            let ainv = a.try_inverse().ok_or_else(|| {
                Error::Geometry(format!(
                    "wall matching system is singular at degree {d} (tangential ray?)"
                ))
            })?;
            mono.push(monomials);
            inv.push(ainv);
            rows.push(wrows);
        }
        Ok(DegreeSystems { mono, inv, rows })
    }

    /// Solve degree d: add to `init` the z jet whose wall image matches
    /// `target - current` at degree d.
    fn apply(&self, d: usize, target: &CPoly, current: &CPoly, init: &mut CPoly) {
        let m = self.mono[d].len();
        let mut rhs = nalgebra::DVector::<Complex64>::zeros(m);
        for (row, &slot) in self.rows[d].iter().enumerate() {
            rhs[row] = target.c[slot] - current.c[slot];
        }
        for (col, e) in self.mono[d].iter().enumerate() {
            let mut x = Complex64::new(0.0, 0.0);
            for row in 0..m {
                x += Complex64::new(self.inv[d][(col, row)], 0.0) * rhs[row];
            }
            init.add_coeff(e, x);
        }
    }
}

pub struct ReflectedBeam {
    pub phase: PhaseJet,
    pub amp: AmplitudeJet,
    /// Wall mismatch of the phase restrictions through degree 1; the
    /// reflection law makes these agree without any solving.
    pub deg1_mismatch: f64,
    /// Sup coefficient mismatch of the full phase restrictions.
    pub phase_residual: f64,
    /// Sup coefficient mismatch of b_k^ref + b_k^inc on the wall.
    pub amp_residual: f64,
    /// Jet inversion drift on both sides.
    pub pullback_drift: f64,
}

/// Solve reflected beam initial data at a wall hit.
///
/// `inc_chart` must end at the reflection point (its segment's last
/// sample), `ref_chart` must start there.
pub fn build_reflected_beam(
    inc_chart: &FermiChart,
    inc_phase: &PhaseJet,
    inc_amp: &AmplitudeJet,
    ref_chart: &FermiChart,
    event: &ReflectionEvent,
    domain: &Domain,
) -> Result<ReflectedBeam> {
    let n = inc_chart.n;
    let order = inc_phase.order;
    if ref_chart.n != n {
        return Err(Error::Dimension(format!(
            "incident chart has n = {n}, reflected has n = {}",
            ref_chart.n
        )));
    }
    let wshape = poly::shape_total(n, order);
    let wall = WallFrame::at_event(domain, event);

    // incident side: expand about the segment end
    let inc_idx = inc_chart.nodes.len() - 1;
    let inc_node = &inc_chart.nodes[inc_idx];
    let mut zeta_inc = vec![0.0; inc_chart.dim()];
    zeta_inc[0] = event.s - inc_node.s;
    let pb_inc = invert_on_wall(inc_chart, inc_idx, &zeta_inc, &wall, &wshape)?;

    // reflected side: expand about the segment start
    let zeta_ref = vec![0.0; ref_chart.dim()];
    let pb_ref = invert_on_wall(ref_chart, 0, &zeta_ref, &wall, &wshape)?;
    let drift = pb_inc.drift.max(pb_ref.drift);

    let cz_inc = complexify(&pb_inc.zeta);
    let cz_ref = complexify(&pb_ref.zeta);

    let phi_inc_wall = inc_phase.phi[inc_idx].compose(&cz_inc);
    let systems = DegreeSystems::build(&ref_chart.shape, &wshape, &pb_ref.z_lin, n, order)?;

    // degree <= 1 agreement is forced by the reflection law: the reflected
    // covector has the same tangential part, so check rather than solve
    let z1_wall = cz_ref[1].clone();
    let mut deg1 = 0.0f64;
    for (slot, e) in wshape.exps.iter().enumerate() {
        if w_degree(e, n) <= 1 {
            deg1 = deg1.max((phi_inc_wall.c[slot] - z1_wall.c[slot]).norm());
        }
    }

    // phase: degree 2 first (fixes H^ref), then 3..=order with the full
    // hierarchy rebuilt so evolved sigma coefficients are accounted for
    let mut init = CPoly::var(&ref_chart.shape, 1);
    systems.apply(2, &phi_inc_wall, &z1_wall, &mut init);
    for d in 3..=order {
        let phase = build_phase_jet_with(ref_chart, order, &init)?;
        let cur = phase.phi[0].compose(&cz_ref);
        systems.apply(d, &phi_inc_wall, &cur, &mut init);
    }
    let phase = build_phase_jet_with(ref_chart, order, &init)?;
    let phase_wall = phase.phi[0].compose(&cz_ref);
    let mut phase_residual = 0.0f64;
    for (slot, _) in wshape.exps.iter().enumerate() {
        phase_residual = phase_residual.max((phi_inc_wall.c[slot] - phase_wall.c[slot]).norm());
    }

    // amplitudes: target -b_k^inc on the wall, order k ascending
    let kmax = order / 2;
    let mut amp_init: Vec<CPoly> = (0..=kmax).map(|_| CPoly::zero(&ref_chart.shape)).collect();
    let mut amp_residual = 0.0f64;
    for k in 0..=kmax {
        let cap = order - 2 * k;
        let target = inc_amp.b[k][inc_idx].compose(&cz_inc).scale_re(-1.0);
        for d in 0..=cap {
            let amp = build_amplitude_jet_with(ref_chart, &phase, &amp_init)?;
            let cur = amp.b[k][0].compose(&cz_ref);
            systems.apply(d, &target, &cur, &mut amp_init[k]);
        }
    }
    let amp = build_amplitude_jet_with(ref_chart, &phase, &amp_init)?;
    for k in 0..=kmax {
        let cap = order - 2 * k;
        let target = inc_amp.b[k][inc_idx].compose(&cz_inc).scale_re(-1.0);
        let cur = amp.b[k][0].compose(&cz_ref);
        for (slot, e) in wshape.exps.iter().enumerate() {
            if w_degree(e, n) <= cap {
                amp_residual = amp_residual.max((target.c[slot] - cur.c[slot]).norm());
            }
        }
    }

    Ok(ReflectedBeam {
        phase,
        amp,
        deg1_mismatch: deg1,
        phase_residual,
        amp_residual,
        pullback_drift: drift,
    })
}

/// Beam value at an ambient point from jets: chi e^{i rho phi} sum of
/// inverse-rho amplitudes, zero outside the chart tube.
pub fn beam_value(
    chart: &FermiChart,
    phase: &PhaseJet,
    amp: &AmplitudeJet,
    p: &[f64],
    rho: f64,
) -> Complex64 {
    let Some((idx, zeta)) = super::quasimode::locate(chart, p) else {
        return Complex64::new(0.0, 0.0);
    };
    let r = zeta[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let (chi, _, _) = super::quasimode::cutoff(r / chart.delta);
    if chi == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let args: Vec<Complex64> = zeta.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let phi = phase.phi[idx].eval(&args);
    let mut b = Complex64::new(0.0, 0.0);
    let mut w = 1.0;
    for bk in amp.b.iter() {
        b += bk[idx].eval(&args) * Complex64::new(w, 0.0);
        w /= rho;
    }
    (Complex64::new(0.0, rho) * phi).exp() * b * Complex64::new(chi, 0.0)
}

/// Discrete H^k norm of the summed incident + reflected trace on the wall
/// patch around the reflection point, per rho, with the top-4 log-log
/// slope. The patch is sampled along the wall tangent directions.
#[allow(clippy::too_many_arguments)]
pub fn boundary_trace_decay(
    inc_chart: &FermiChart,
    inc_phase: &PhaseJet,
    inc_amp: &AmplitudeJet,
    refl: &ReflectedBeam,
    ref_chart: &FermiChart,
    event: &ReflectionEvent,
    domain: &Domain,
    rhos: &[f64],
    k: usize,
    half_width: f64,
    samples: usize,
) -> Result<super::quasimode::DecayReport> {
    if rhos.len() < 4 {
        return Err(Error::Config("need at least 4 rho values".into()));
    }
    if k > 1 {
        return Err(Error::Unsupported("trace derivative order k > 1".into()));
    }
    if domain.n() != 1 {
        return Err(Error::Unsupported(
            "trace sampling along 2-d wall patches".into(),
        ));
    }
    let wall = WallFrame::at_event(domain, event);
    let h = 2.0 * half_width / (samples - 1) as f64;
    let mut norms = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let mut vals = Vec::with_capacity(samples);
        for i in 0..samples {
            let w = -half_width + h * i as f64;
            let p: Vec<f64> = (0..event.x.len())
                .map(|a| event.x[a] + wall.tangents[0][a] * w)
                .collect();
            let v = beam_value(inc_chart, inc_phase, inc_amp, &p, rho)
                + beam_value(ref_chart, &refl.phase, &refl.amp, &p, rho);
            vals.push(v);
        }
        let mut sq = 0.0;
        match k {
            0 => {
                for v in &vals {
                    sq += v.norm_sqr() * h;
                }
            }
            _ => {
                for i in 1..samples - 1 {
                    let d = (vals[i + 1] - vals[i - 1]) / Complex64::new(2.0 * h, 0.0);
                    sq += (vals[i].norm_sqr() + d.norm_sqr()) * h;
                }
            }
        }
        norms.push(sq.sqrt());
    }
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let exact = scale < 1e-12;
    let slope = if exact {
        f64::NEG_INFINITY
    } else {
        crate::grid::loglog_slope(rhos, &norms, 4)
    };
    Ok(super::quasimode::DecayReport {
        rhos: rhos.to_vec(),
        norms,
        slope,
        exact,
    })
}
