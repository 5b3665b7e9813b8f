//! Quasimode assembly on the PDE lattice and residual decay measurements.
//!
//! The beam ansatz chi(|z|/delta') e^{i rho phi} sum_k rho^{-k} b_k is
//! sampled by inverting the chart map at each lattice point in the tube.
//! Wave-operator residuals are evaluated analytically from the jets,
//! including the cutoff commutator terms, so the measured decay reflects
//! the construction rather than lattice differencing.

use std::sync::Arc;

use num_complex::Complex64;

use crate::causal::FermiChart;
use crate::error::{Error, Result};
use crate::grid::{loglog_slope, GridField, Lattice};
use crate::poly::MultiPoly;

use super::hierarchy::{transport_defect_poly, AmplitudeJet, NodeCx, PhaseJet};

type CPoly = MultiPoly<Complex64>;

/// Smooth plateau cutoff: 1 for tau <= 1/4, 0 for tau >= 1/2, the standard
/// exponential partition step on the band between. Returns (chi, chi',
/// chi'') with derivatives in tau.
pub fn cutoff(tau: f64) -> (f64, f64, f64) {
    fn bump(q: f64) -> (f64, f64, f64) {
        if q <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let e = (-1.0 / q).exp();
        (e, e / (q * q), e * (1.0 - 2.0 * q) / (q * q * q * q))
    }
    let t = tau.abs();
    if t <= 0.25 {
        return (1.0, 0.0, 0.0);
    }
    if t >= 0.5 {
        return (0.0, 0.0, 0.0);
    }
    let q = (t - 0.25) * 4.0;
    let (u, du, ddu) = bump(q);
    let (v, dv0, ddv) = bump(1.0 - q);
    let (dv, ddv) = (-dv0, ddv);
    let w = u + v;
    let s1 = (du * v - u * dv) / (w * w);
    let s2 = (ddu * v - u * ddv) / (w * w) - 2.0 * s1 * (du + dv) / w;
    (1.0 - u / w, -4.0 * s1, -16.0 * s2)
}

pub struct Quasimode {
    pub rho: f64,
    pub kappa: f64,
    pub field: GridField,
    /// Tube radius delta' used by the cutoff.
    pub support_radius: f64,
    /// Lattice nodes with a nonzero sample.
    pub support_nodes: usize,
    /// Largest |z| over sampled points.
    pub max_z: f64,
}

/// Locate a lattice point in the chart: node index and chart coordinates.
/// The base-curve time is monotone along s, so the search is seeded from
/// the point's own time slot.
pub(crate) fn locate(chart: &FermiChart, p: &[f64]) -> Option<(usize, Vec<f64>)> {
    let nodes = &chart.nodes;
    let t = p[0];
    let mut lo = 0usize;
    let mut hi = nodes.len() - 1;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if nodes[mid].x[0] <= t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut best: Option<(usize, Vec<f64>)> = None;
    let from = lo.saturating_sub(2);
    let to = (lo + 2).min(nodes.len() - 1);
    for idx in from..=to {
        if let Some(zeta) = chart.from_ambient(&nodes[idx], p) {
            let gap = nodes[idx].gap.max(1e-12);
            let mid = (zeta[0] - 0.5 * gap).abs();
            let better = match &best {
                None => true,
                Some((bidx, bz)) => {
                    mid < (bz[0] - 0.5 * nodes[*bidx].gap.max(1e-12)).abs()
                }
            };
            if better {
                best = Some((idx, zeta));
            }
        }
    }
    best
}

fn z_norm(zeta: &[f64]) -> f64 {
    zeta[1..].iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn cargs(zeta: &[f64]) -> Vec<Complex64> {
    zeta.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

pub fn assemble_quasimode(
    chart: &FermiChart,
    phase: &PhaseJet,
    amp: &AmplitudeJet,
    lattice: &Arc<Lattice>,
    rho: f64,
    kappa: f64,
) -> Result<Quasimode> {
    if rho <= 0.0 {
        return Err(Error::Config("rho must be positive".into()));
    }
    if kappa == 0.0 {
        return Err(Error::Config("kappa must be nonzero".into()));
    }
    let delta = chart.delta;
    let rho_eff = rho * kappa.abs();
    let mut field = GridField::zeros(lattice);
    let mut support_nodes = 0usize;
    let mut max_z = 0.0f64;

    for it in 0..lattice.nt {
        for ix in 0..lattice.nx {
            for iy in 0..lattice.ny {
                let p = lattice.point(it, ix, iy);
                let Some((idx, zeta)) = locate(chart, &p) else {
                    continue;
                };
                let r = z_norm(&zeta);
                let (chi, _, _) = cutoff(r / delta);
                if chi == 0.0 {
                    continue;
                }
                let args = cargs(&zeta);
                let phi = phase.phi[idx].eval(&args);
                let mut b = Complex64::new(0.0, 0.0);
                let mut w = 1.0;
                for bk in amp.b.iter() {
                    b += bk[idx].eval(&args) * Complex64::new(w, 0.0);
                    w /= rho_eff;
                }
                let mut v = (Complex64::new(0.0, rho_eff) * phi).exp()
                    * b
                    * Complex64::new(chi, 0.0);
                if kappa < 0.0 {
                    v = v.conj();
                }
                field.set(it, ix, iy, v);
                support_nodes += 1;
                max_z = max_z.max(r);
            }
        }
    }
    Ok(Quasimode {
        rho,
        kappa,
        field,
        support_radius: delta,
        support_nodes,
        max_z,
    })
}

/// Per-node residual ingredients, cached once per chart.
struct ResidualJets {
    /// Eikonal defect polynomial <dphi, dphi>.
    q: Vec<CPoly>,
    /// Transport defects per inverse-rho order.
    tk: Vec<Vec<CPoly>>,
    /// Box of the last amplitude order.
    box_tail: Vec<CPoly>,
    /// Gradients of phi and of each b_k (per node, per coordinate).
    dphi: Vec<Vec<CPoly>>,
    db: Vec<Vec<Vec<CPoly>>>,
    kmax: usize,
}

impl ResidualJets {
    fn build(chart: &FermiChart, phase: &PhaseJet, amp: &AmplitudeJet) -> ResidualJets {
        let kmax = amp.b.len() - 1;
        let nn = chart.nodes.len();
        let mut q = Vec::with_capacity(nn);
        let mut tk = vec![Vec::with_capacity(nn); kmax + 1];
        let mut box_tail = Vec::with_capacity(nn);
        let mut dphi = Vec::with_capacity(nn);
        let mut db = vec![Vec::with_capacity(nn); kmax + 1];
        let dim = chart.dim();
        for (idx, node) in chart.nodes.iter().enumerate() {
            let cx = NodeCx::new(node);
            q.push(cx.grad_inner(&phase.phi[idx], &phase.phi[idx]));
            for (k, row) in tk.iter_mut().enumerate() {
                row.push(transport_defect_poly(chart, phase, amp, k, idx));
            }
            box_tail.push(cx.box_apply(&amp.b[kmax][idx]));
            dphi.push((0..dim).map(|a| phase.phi[idx].deriv(a)).collect());
            for (k, row) in db.iter_mut().enumerate() {
                row.push((0..dim).map(|a| amp.b[k][idx].deriv(a)).collect());
            }
        }
        ResidualJets {
            q,
            tk,
            box_tail,
            dphi,
            db,
            kmax,
        }
    }
}

/// Analytic Box v at one located point, cutoff commutator included.
#[allow(clippy::too_many_arguments)]
fn box_v_at(
    chart: &FermiChart,
    phase: &PhaseJet,
    amp: &AmplitudeJet,
    jets: &ResidualJets,
    idx: usize,
    zeta: &[f64],
    rho_eff: f64,
) -> Complex64 {
    let args = cargs(zeta);
    let node = &chart.nodes[idx];
    let cx = NodeCx::new(node);
    let dim = chart.dim();
    let delta = chart.delta;
    let i_unit = Complex64::new(0.0, 1.0);

    let phi = phase.phi[idx].eval(&args);
    let e_phase = (i_unit * Complex64::new(rho_eff, 0.0) * phi).exp();

    // B = sum rho^{-k} b_k and the grouped interior defect
    let mut b_val = Complex64::new(0.0, 0.0);
    let mut w = 1.0;
    let mut interior = Complex64::new(0.0, 0.0);
    for k in 0..=jets.kmax {
        let bk = amp.b[k][idx].eval(&args);
        b_val += bk * Complex64::new(w, 0.0);
        // -rho^2 Q b_k rho^{-k} + i rho^{1-k} T_k
        interior += jets.q[idx].eval(&args) * bk * Complex64::new(-rho_eff * rho_eff * w, 0.0);
        interior += jets.tk[k][idx].eval(&args) * i_unit * Complex64::new(rho_eff * w, 0.0);
        w /= rho_eff;
    }
    // the i T_k defects already carry Box b_{k-1}; the untelescoped tail is
    // rho^{-kmax} Box b_{kmax}
    interior += jets.box_tail[idx].eval(&args) * Complex64::new(rho_eff.powi(-(jets.kmax as i32)), 0.0);

    let r = z_norm(zeta);
    let (chi, dchi, ddchi) = cutoff(r / delta);
    let chi_u_box = interior * e_phase * Complex64::new(chi, 0.0);
    if dchi == 0.0 && ddchi == 0.0 {
        return chi_u_box;
    }

    // cutoff commutator: 2 <d chi, d u> + (Box chi) u
    // tau = |z|/delta; d_a tau and Hessian of tau over chart coordinates
    let mut dtau = vec![0.0; dim];
    for a in 1..dim {
        dtau[a] = zeta[a] / (r * delta);
    }
    let guv: Vec<Vec<Complex64>> = (0..dim)
        .map(|a| (0..dim).map(|bb| cx.gu[a][bb].eval(&args)).collect())
        .collect();
    let divv: Vec<Complex64> = (0..dim).map(|a| cx.div[a].eval(&args)).collect();

    // du_a = e^{i rho phi} (i rho dphi_a B + dB_a)
    let mut du = vec![Complex64::new(0.0, 0.0); dim];
    for a in 0..dim {
        let dphi_a = jets.dphi[idx][a].eval(&args);
        let mut dba = Complex64::new(0.0, 0.0);
        let mut wk = 1.0;
        for k in 0..=jets.kmax {
            dba += jets.db[k][idx][a].eval(&args) * Complex64::new(wk, 0.0);
            wk /= rho_eff;
        }
        du[a] = e_phase * (i_unit * Complex64::new(rho_eff, 0.0) * dphi_a * b_val + dba);
    }

    let mut grad_pair = Complex64::new(0.0, 0.0);
    let mut tau_quad = Complex64::new(0.0, 0.0);
    let mut box_tau = Complex64::new(0.0, 0.0);
    for a in 0..dim {
        for bb in 0..dim {
            grad_pair += guv[a][bb] * Complex64::new(dtau[a], 0.0) * du[bb];
            tau_quad += guv[a][bb] * Complex64::new(dtau[a] * dtau[bb], 0.0);
            if a >= 1 && bb >= 1 {
                let hess = if a == bb {
                    (1.0 - zeta[a] * zeta[bb] / (r * r)) / (r * delta)
                } else {
                    -zeta[a] * zeta[bb] / (r * r) / (r * delta)
                };
                box_tau += guv[a][bb] * Complex64::new(hess, 0.0);
            }
        }
        box_tau += divv[a] * Complex64::new(dtau[a], 0.0);
    }
    let u_val = e_phase * b_val;
    chi_u_box
        + grad_pair * Complex64::new(2.0 * dchi, 0.0)
        + u_val * (tau_quad * Complex64::new(ddchi, 0.0) + box_tau * Complex64::new(dchi, 0.0))
}

/// The analytic wave-operator residual of the assembled quasimode, as a
/// lattice field.
pub fn residual_field(
    chart: &FermiChart,
    phase: &PhaseJet,
    amp: &AmplitudeJet,
    lattice: &Arc<Lattice>,
    rho: f64,
    kappa: f64,
) -> Result<GridField> {
    if rho <= 0.0 || kappa == 0.0 {
        return Err(Error::Config("rho must be positive and kappa nonzero".into()));
    }
    let rho_eff = rho * kappa.abs();
    let jets = ResidualJets::build(chart, phase, amp);
    let mut field = GridField::zeros(lattice);
    for it in 0..lattice.nt {
        for ix in 0..lattice.nx {
            for iy in 0..lattice.ny {
                let p = lattice.point(it, ix, iy);
                let Some((idx, zeta)) = locate(chart, &p) else {
                    continue;
                };
                if z_norm(&zeta) / chart.delta >= 0.5 {
                    continue;
                }
                let mut v = box_v_at(chart, phase, amp, &jets, idx, &zeta, rho_eff);
                if kappa < 0.0 {
                    v = v.conj();
                }
                field.set(it, ix, iy, v);
            }
        }
    }
    Ok(field)
}

#[derive(Debug, Clone)]
pub struct DecayReport {
    pub rhos: Vec<f64>,
    pub norms: Vec<f64>,
    pub slope: f64,
    /// All norms at the double-precision floor (exact construction).
    pub exact: bool,
}

/// Interior residual decay: discrete H^k norms of Box v_rho over a rho
/// sweep plus the fitted top-of-sweep slope.
pub fn residual_decay(
    chart: &FermiChart,
    phase: &PhaseJet,
    amp: &AmplitudeJet,
    lattice: &Arc<Lattice>,
    rhos: &[f64],
    k: usize,
) -> Result<DecayReport> {
    if rhos.len() < 4 {
        return Err(Error::Config("need at least 4 rho values".into()));
    }
    if k > 1 {
        return Err(Error::Unsupported("derivative order k > 1".into()));
    }
    // resolution guard: at least 8 lattice steps per transverse e-fold
    let rho_max = rhos.iter().cloned().fold(0.0, f64::max);
    let c = phase.im_floor.max(1e-12);
    let efold = 1.0 / (rho_max * c).sqrt();
    let dx = lattice.dx().max(if lattice.n() == 2 { lattice.dy() } else { 0.0 });
    if 8.0 * dx > efold {
        return Err(Error::Config(format!(
            "lattice too coarse for rho = {rho_max}: e-fold width {efold:.3e} needs dx <= {:.3e}",
            efold / 8.0
        )));
    }
    let mut norms = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let res = residual_field(chart, phase, amp, lattice, rho, 1.0)?;
        let norm = match k {
            0 => res.l2_norm(),
            _ => (res.l2_norm().powi(2) + res.h1_seminorm().powi(2)).sqrt(),
        };
        norms.push(norm);
    }
    let scale = norms.iter().cloned().fold(0.0, f64::max);
    let exact = scale < 1e-12;
    let slope = if exact {
        f64::NEG_INFINITY
    } else {
        loglog_slope(rhos, &norms, 4)
    };
    Ok(DecayReport {
        rhos: rhos.to_vec(),
        norms,
        slope,
        exact,
    })
}

/// Transverse Gaussian width of |v| at the mid ray point: the |z| radius
/// where the profile falls to e^{-1/2} of its axis value.
pub fn transverse_width(
    chart: &FermiChart,
    phase: &PhaseJet,
    amp: &AmplitudeJet,
    rho: f64,
) -> f64 {
    let idx = chart.nodes.len() / 2;
    let args0 = cargs(&vec![0.0; chart.dim()]);
    let b0 = amp.b[0][idx].eval(&args0).norm();
    let target = b0 * (-0.5f64).exp();
    let mut lo = 0.0f64;
    let mut hi = chart.delta * 0.5;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let mut zeta = vec![0.0; chart.dim()];
        zeta[1] = mid;
        let args = cargs(&zeta);
        let phi = phase.phi[idx].eval(&args);
        let v = ((Complex64::new(0.0, rho) * phi).exp() * amp.b[0][idx].eval(&args)).norm();
        if v > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
