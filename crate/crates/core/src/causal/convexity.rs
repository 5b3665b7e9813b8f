//! Null-convexity scan of the timelike boundary cylinder.
//!
//! For sampled boundary points and sampled null tangents V of the cylinder
//! the scan evaluates the second fundamental form II(V,V) = g(grad_V nu, V)
//! with nu the outward unit normal, and reports the minimum. Negative
//! values beyond the tolerance flag a boundary that can trap grazing rays.
//!
//! In one spatial dimension the cylinder tangent space is spanned by the
//! timelike d/dt alone and carries no null directions; the scan then probes
//! d/dt itself and notes that the null condition is vacuous.

use crate::error::Result;
use crate::grid::Domain;
use crate::spacetime::MetricSpec;

#[derive(Debug, Clone)]
pub struct ConvexityReport {
    pub min_ii: f64,
    /// Point and tangent realising the minimum.
    pub worst_point: Vec<f64>,
    pub samples: usize,
    /// True when the boundary has no null tangents (one spatial dimension)
    /// and the timelike generator was probed instead.
    pub vacuous: bool,
}

pub const TAU_II: f64 = 1e-9;

impl ConvexityReport {
    pub fn violated(&self) -> bool {
        self.min_ii < -TAU_II
    }
}

/// Outward normal field near the boundary: the g-normalised sharp of the
/// gradient of the wall coordinate function, evaluated at an arbitrary
/// nearby point so it can be differentiated.
fn normal_field(spec: &MetricSpec, p: &[f64], wall: usize) -> Result<Vec<f64>> {
    let n = spec.n;
    // outward co-normal, constant for flat walls, radial for the disk
    let mut cov = vec![0.0; n + 1];
    match spec.domain {
        Domain::Interval { .. } => {
            cov[1] = if wall == 0 { -1.0 } else { 1.0 };
        }
        Domain::Rect { .. } => match wall {
            0 => cov[1] = -1.0,
            1 => cov[1] = 1.0,
            2 => cov[2] = -1.0,
            _ => cov[2] = 1.0,
        },
        Domain::Disk { .. } => {
            let r = (p[1] * p[1] + p[2] * p[2]).sqrt();
            cov[1] = p[1] / r;
            cov[2] = p[2] / r;
        }
    }
    let mut nu = spec.sharp(p, &cov)?;
    let norm = spec.inner(p, &nu, &nu)?;
    let s = norm.sqrt();
    for t in nu.iter_mut() {
        *t /= s;
    }
    Ok(nu)
}

/// Boundary sample points (t, x) with their wall index and the spatial
/// tangent direction of the wall (zero for an interval).
fn boundary_samples(spec: &MetricSpec, nt: usize, nb: usize) -> Vec<(Vec<f64>, usize, Vec<f64>)> {
    let mut out = Vec::new();
    let times: Vec<f64> = (1..=nt)
        .map(|i| spec.t_max * i as f64 / (nt + 1) as f64)
        .collect();
    match spec.domain {
        Domain::Interval { length } => {
            for &t in &times {
                out.push((vec![t, 0.0], 0, vec![0.0]));
                out.push((vec![t, length], 1, vec![0.0]));
            }
        }
        Domain::Rect { lx, ly } => {
            for &t in &times {
                for i in 0..nb {
                    let f = (i as f64 + 0.5) / nb as f64;
                    out.push((vec![t, 0.0, f * ly], 0, vec![0.0, 1.0]));
                    out.push((vec![t, lx, f * ly], 1, vec![0.0, 1.0]));
                    out.push((vec![t, f * lx, 0.0], 2, vec![1.0, 0.0]));
                    out.push((vec![t, f * lx, ly], 3, vec![1.0, 0.0]));
                }
            }
        }
        Domain::Disk { radius } => {
            for &t in &times {
                for i in 0..nb {
                    let th = 2.0 * std::f64::consts::PI * i as f64 / nb as f64;
                    let (s, c) = th.sin_cos();
                    out.push((
                        vec![t, radius * c, radius * s],
                        0,
                        vec![-s, c],
                    ));
                }
            }
        }
    }
    out
}

pub fn null_convexity_scan(spec: &MetricSpec, nt: usize, nb: usize) -> Result<ConvexityReport> {
    let n = spec.n;
    let dim = n + 1;
    let mut min_ii = f64::INFINITY;
    let mut worst = vec![0.0; dim];
    let mut count = 0usize;
    let vacuous = n == 1;

    for (p, wall, tan) in boundary_samples(spec, nt, nb) {
        // null tangents of the cylinder: V = d/dt + b * wall tangent with
        // g(V,V) = 0; for n = 1 only d/dt exists
        let mut tangents: Vec<Vec<f64>> = Vec::new();
        if vacuous {
            let mut v = vec![0.0; dim];
            v[0] = 1.0;
            tangents.push(v);
        } else {
            let mut tv = vec![0.0; dim];
            tv[1] = tan[0];
            tv[2] = tan[1];
            let mut t0 = vec![0.0; dim];
            t0[0] = 1.0;
            let gtt = spec.inner(&p, &t0, &t0)?;
            let gss = spec.inner(&p, &tv, &tv)?;
            let gts = spec.inner(&p, &t0, &tv)?;
            // solve g(t0 + b tv, t0 + b tv) = 0 for b
            let disc = gts * gts - gss * gtt;
            if disc < 0.0 || gss.abs() < 1e-14 {
                continue;
            }
            for sgn in [1.0, -1.0] {
                let b = (-gts + sgn * disc.sqrt()) / gss;
                let mut v = t0.clone();
                for i in 0..dim {
                    v[i] += b * tv[i];
                }
                tangents.push(v);
            }
        }

        for v in tangents {
            // II(V,V) = g(grad_V nu, V) with the normal extended as a field
            let h = 1e-5 * spec.t_max.max(1.0);
            let mut dnu = vec![0.0; dim];
            let mut pp = p.clone();
            let mut pm = p.clone();
            for i in 0..dim {
                pp[i] += h * v[i];
                pm[i] -= h * v[i];
            }
            let nup = normal_field(spec, &pp, wall)?;
            let num = normal_field(spec, &pm, wall)?;
            for i in 0..dim {
                dnu[i] = (nup[i] - num[i]) / (2.0 * h);
            }
            let gam = spec.christoffel(&p)?;
            let nu0 = normal_field(spec, &p, wall)?;
            let mut cov = vec![0.0; dim];
            for a in 0..dim {
                let mut acc = dnu[a];
                for b in 0..dim {
                    for c in 0..dim {
                        acc += gam.get(a, b, c) * v[b] * nu0[c];
                    }
                }
                cov[a] = acc;
            }
            let ii = spec.inner(&p, &cov, &v)?;
            count += 1;
            if ii < min_ii {
                min_ii = ii;
                worst = p.clone();
            }
        }
    }

    Ok(ConvexityReport {
        min_ii,
        worst_point: worst,
        samples: count,
        vacuous,
    })
}
