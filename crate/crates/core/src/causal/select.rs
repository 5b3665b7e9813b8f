//! Beam covector selection at a target point.
//!
//! Produces a quadruple of null covectors at the target whose weighted sum
//! closes to zero, such that the four null geodesics they generate leave
//! the target in distinct directions, reach the lateral boundary
//! transversally, and carry no conjugate points on the way out. Two of the
//! covectors point along future-exiting rays and two along past-exiting
//! ones; the past pair is realised downstream by conjugated beams.
//!
//! The spatial direction pattern is swept over a fixed fan (64 base
//! angles) and the first admissible quadruple wins, which keeps the choice
//! deterministic. Orders above the base four repeat the last beam with a
//! proportionally split weight so the closure is preserved.

use crate::error::{Error, Result};
use crate::spacetime::MetricSpec;

use super::chart::{conjugate_point_scan, FermiChart, FermiChartOpts};
use super::geodesic::{shoot_null_geodesic, BrokenNullGeodesic, ShootOpts};
use super::reach::ReachableSet;

#[derive(Debug, Clone, Copy)]
pub struct SelectOpts {
    /// Spatial fan resolution for the direction sweep.
    pub fan: usize,
    /// Shooting parameters for the admissibility probes.
    pub shoot: ShootOpts,
    /// Scan each exit segment for conjugate points.
    pub check_conjugates: bool,
}

impl SelectOpts {
    pub fn for_spec(spec: &MetricSpec) -> Self {
        SelectOpts {
            fan: 64,
            shoot: ShootOpts::for_spec(spec),
            check_conjugates: true,
        }
    }
}

pub struct BeamDirection {
    /// Null covector at the target.
    pub theta: Vec<f64>,
    /// Closure weight.
    pub kappa: f64,
    /// Sharp of theta points to the future.
    pub future: bool,
    /// Probe geodesic from the target in the sharp direction.
    pub geodesic: BrokenNullGeodesic,
}

pub struct CovectorSelection {
    pub p_tilde: Vec<f64>,
    pub beams: Vec<BeamDirection>,
    pub closure_residual: f64,
    /// Total beam count m; the base quadruple covers m = 4.
    pub beam_count: usize,
    /// The last beam is repeated this many times for m > 4 ...
    pub beam3_copies: usize,
    /// ... each copy carrying this weight (kappa_3 split evenly).
    pub beam3_weight: f64,
}

impl CovectorSelection {
    /// Closure residual of the weighted covector sum.
    pub fn residual(thetas: &[Vec<f64>], kappas: &[f64]) -> f64 {
        let dim = thetas[0].len();
        let mut s = vec![0.0; dim];
        for (th, k) in thetas.iter().zip(kappas) {
            for i in 0..dim {
                s[i] += k * th[i];
            }
        }
        s.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// Null covector with time slot `tau` and spatial direction `u`, scaled so
/// the inverse metric annihilates it.
fn null_covector(spec: &MetricSpec, p: &[f64], tau: f64, u: &[f64]) -> Result<Vec<f64>> {
    let n = spec.n;
    let val = spec.eval_metric(p)?;
    // g^{-1}(theta, theta) = -tau^2/beta + b^2 q(u) with q = g0^{-1}(u,u)
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            q += val.g_inv[(1 + i, 1 + j)] * u[i] * u[j];
        }
    }
    if q <= 0.0 {
        return Err(Error::Geometry("degenerate spatial direction".into()));
    }
    let b = (tau * tau / (val.beta * q)).sqrt();
    let mut theta = vec![tau];
    for ui in u.iter().take(n) {
        theta.push(b * ui);
    }
    Ok(theta)
}

struct Probe {
    theta: Vec<f64>,
    future: bool,
    geodesic: BrokenNullGeodesic,
}

/// Shoot the sharp of theta and demand a transversal boundary exit before
/// any time cap.
fn probe_direction(
    spec: &MetricSpec,
    p: &[f64],
    theta: &[f64],
    opts: &SelectOpts,
) -> Option<Probe> {
    let v = spec.sharp(p, theta).ok()?;
    let mut shoot = opts.shoot;
    shoot.max_reflections = 0;
    let geo = shoot_null_geodesic(spec, p, &v, &shoot).ok()?;
    if geo.reflections.is_empty() {
        return None;
    }

    Some(Probe {
        theta: theta.to_vec(),
        future: v[0] > 0.0,
        geodesic: geo,
    })
}

/// Distinct-ray check: sampled minimum separation of the exit segments
/// away from the common start.
fn rays_meet_again(probes: &[Probe]) -> bool {
    let samples: Vec<Vec<Vec<f64>>> = probes
        .iter()
        .map(|p| {
            let seg = &p.geodesic.segments[0];
            let cut = (seg.samples.len() / 20).max(2);
            seg.samples.iter().skip(cut).map(|s| s.x.clone()).collect()
        })
        .collect();
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            for a in &samples[i] {
                for b in &samples[j] {
                    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                    if d2 < 1e-12 {
                        return true;
                    }
                }
            }
        }
    }
    false
}

fn conjugate_free(spec: &MetricSpec, probe: &Probe) -> bool {
    if spec.n == 1 {
        // transverse block is the flow direction; the Jacobi matrix stays
        // constant and never degenerates
        return true;
    }
    let opts = FermiChartOpts {
        z_cap: 3,
        sigma_cap: 3,
        stride: 8,
        delta: 0.3,
    };
    match FermiChart::build(spec, &probe.geodesic.segments[0], &opts) {
        Ok(chart) => conjugate_point_scan(&chart).first_degenerate.is_none(),
        Err(_) => false,
    }
}

pub fn select_beam_covectors(
    spec: &MetricSpec,
    reach: &ReachableSet,
    p_tilde: &[f64],
    m: usize,
    opts: &SelectOpts,
) -> Result<CovectorSelection> {
    if m < 4 {
        return Err(Error::Unsupported("beam count below four".into()));
    }
    let n = spec.n;

    // membership in the recoverable set at the nearest lattice cell
    {
        let lat = &reach.lattice;
        let ix = ((p_tilde[1] - lat.domain.origin()[0]) / lat.dx()).round() as usize;
        let ix = ix.min(lat.nx - 1);
        let iy = if n == 2 {
            let j = ((p_tilde[2] - lat.domain.origin()[1]) / lat.dy()).round() as usize;
            j.min(lat.ny - 1)
        } else {
            0
        };
        if !reach.in_diamond(p_tilde[0], ix, iy) {
            return Err(Error::Geometry(
                "target point outside the recoverable set".into(),
            ));
        }
    }

    let fan = if n == 1 { 1 } else { opts.fan };
    for k in 0..fan {
        let (thetas, kappas): (Vec<Vec<f64>>, Vec<f64>) = if n == 1 {
            // antipodal pairs on the two null lines
            let th0 = null_covector(spec, p_tilde, 1.0, &[1.0])?;
            let th1 = null_covector(spec, p_tilde, 1.0, &[-1.0])?;
            let th2: Vec<f64> = th0.iter().map(|v| -v).collect();
            let th3: Vec<f64> = th1.iter().map(|v| -v).collect();
            (vec![th0, th1, th2, th3], vec![1.0, 1.0, 1.0, 1.0])
        } else {
            // equal time slots, right-angle spatial fan at base angle alpha
            let alpha = 2.0 * std::f64::consts::PI * k as f64 / fan as f64;
            let mut thetas = Vec::with_capacity(4);
            for j in 0..4 {
                let ang = alpha + std::f64::consts::FRAC_PI_2 * j as f64;
                let u = [ang.cos(), ang.sin()];
                thetas.push(null_covector(spec, p_tilde, 1.0, &u)?);
            }
            // closure: kappa_0 = 1, solve the 3x3 system for the rest
            let mut a = nalgebra::DMatrix::zeros(3, 3);
            let mut rhs = nalgebra::DVector::zeros(3);
            for r in 0..3 {
                for c in 0..3 {
                    a[(r, c)] = thetas[c + 1][r];
                }
                rhs[r] = -thetas[0][r];
            }
            let sol = match a.lu().solve(&rhs) {
                Some(s) => s,
                None => continue,
            };
            (thetas, vec![1.0, sol[0], sol[1], sol[2]])
        };

        if kappas.iter().any(|k| k.abs() < 1e-10) {
            continue;
        }
        let residual = CovectorSelection::residual(&thetas, &kappas);
        if residual > 1e-12 {
            continue;
        }

        let probes: Vec<Probe> = thetas
            .iter()
            .filter_map(|th| probe_direction(spec, p_tilde, th, opts))
            .collect();
        if probes.len() < 4 {
            continue;
        }
        if rays_meet_again(&probes) {
            continue;
        }
        if opts.check_conjugates && !probes.iter().all(|p| conjugate_free(spec, p)) {
            continue;
        }

        let beams: Vec<BeamDirection> = probes
            .into_iter()
            .zip(kappas.iter())
            .map(|(p, k)| BeamDirection {
                theta: p.theta,
                kappa: *k,
                future: p.future,
                geodesic: p.geodesic,
            })
            .collect();
        let copies = m - 3;
        let w3 = kappas[3] / copies as f64;
        return Ok(CovectorSelection {
            p_tilde: p_tilde.to_vec(),
            beams,
            closure_residual: residual,
            beam_count: m,
            beam3_copies: copies,
            beam3_weight: w3,
        });
    }
    Err(Error::Geometry(
        "no admissible covector quadruple in the direction fan".into(),
    ))
}
