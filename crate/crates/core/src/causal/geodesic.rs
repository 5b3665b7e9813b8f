//! Null geodesics with specular boundary reflections.
//!
//! The flow is integrated in vector form, `x' = v`, `v'^a = -Gamma^a_bc v^b
//! v^c`, with classic fixed-step RK4. Wall crossings are located by step
//! bisection down to 1e-10 in the wall coordinate; at the hit the velocity
//! is reflected specularly in the full spacetime metric, which keeps the
//! tangential part of the covector and flips the normal part, so the phase
//! jets of incident and reflected beams automatically agree to first order
//! on the boundary.

use crate::error::{Error, Result};
use crate::grid::Domain;
use crate::spacetime::{CausalClass, MetricSpec};

#[derive(Debug, Clone)]
pub struct GeoSample {
    /// Affine parameter from the start of the whole broken geodesic.
    pub s: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Segment {
    /// Uniformly spaced samples (spacing `h` in affine parameter).
    pub samples: Vec<GeoSample>,
    pub h: f64,
}

impl Segment {
    pub fn first(&self) -> &GeoSample {
        &self.samples[0]
    }

    pub fn last(&self) -> &GeoSample {
        self.samples.last().unwrap()
    }

    pub fn s_range(&self) -> (f64, f64) {
        (self.first().s, self.last().s)
    }
}

#[derive(Debug, Clone)]
pub struct ReflectionEvent {
    pub s: f64,
    pub x: Vec<f64>,
    pub v_in: Vec<f64>,
    pub v_out: Vec<f64>,
    /// Wall index: interval/rectangle walls are numbered 0 = x lower,
    /// 1 = x upper, 2 = y lower, 3 = y upper; the disk rim is 0.
    pub wall: usize,
    /// |g(v, nu)| / (|v| |nu|) in the absolute-value metric; must exceed
    /// the transversality tolerance.
    pub transversality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndReason {
    /// Reached t = 0.
    InitialCap,
    /// Reached t = t_max.
    FinalCap,
    MaxReflections,
    /// Affine parameter budget exhausted.
    Budget,
}

#[derive(Debug, Clone)]
pub struct BrokenNullGeodesic {
    pub segments: Vec<Segment>,
    pub reflections: Vec<ReflectionEvent>,
    pub end: EndReason,
    pub end_state: GeoSample,
}

impl BrokenNullGeodesic {
    /// Total affine length.
    pub fn s_end(&self) -> f64 {
        self.end_state.s
    }

    /// State at affine parameter `s` by lookup in the stored samples
    /// (nearest sample; callers needing sub-sample accuracy work on charts).
    pub fn sample_at(&self, s: f64) -> &GeoSample {
        for seg in &self.segments {
            let (s0, s1) = seg.s_range();
            if s <= s1 + 0.5 * seg.h || std::ptr::eq(seg, self.segments.last().unwrap()) {
                if s < s0 {
                    return seg.first();
                }
                let i = ((s - s0) / seg.h).round() as usize;
                return &seg.samples[i.min(seg.samples.len() - 1)];
            }
        }
        &self.end_state
    }

    /// Segment index containing affine parameter `s`.
    pub fn segment_of(&self, s: f64) -> usize {
        for (i, seg) in self.segments.iter().enumerate() {
            if s <= seg.s_range().1 + 0.5 * seg.h {
                return i;
            }
        }
        self.segments.len() - 1
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ShootOpts {
    /// RK4 step in affine parameter.
    pub h: f64,
    pub max_reflections: usize,
    /// Affine parameter budget.
    pub s_max: f64,
    /// Transversality floor at reflections.
    pub tau_trans: f64,
}

impl ShootOpts {
    pub fn for_spec(spec: &MetricSpec) -> ShootOpts {
        ShootOpts {
            h: 1e-3 * spec.t_max,
            max_reflections: 8,
            s_max: 20.0 * spec.t_max,
            tau_trans: 1e-6,
        }
    }
}

/// Future- or past-directed null velocity at `p` with prescribed spatial
/// direction: `v = (a, w)` with `g0(w, w) = beta a^2`, normalised so that
/// `|a| = 1`. `future` picks the sign of the time component.
pub fn null_velocity(
    spec: &MetricSpec,
    p: &[f64],
    spatial_dir: &[f64],
    future: bool,
) -> Result<Vec<f64>> {
    let val = spec.eval_metric(p)?;
    let n = spec.n;
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            q += val.g[(i + 1, j + 1)] * spatial_dir[i] * spatial_dir[j];
        }
    }
    if q <= 0.0 {
        return Err(Error::Geometry("spatial direction has no length".into()));
    }
    let scale = (val.beta / q).sqrt();
    let mut v = vec![if future { 1.0 } else { -1.0 }];
    for d in spatial_dir.iter().take(n) {
        v.push(d * scale);
    }
    Ok(v)
}

/// Specular reflection of `v` at the wall with outward normal direction
/// `nu` (spatial, not necessarily unit): `v - 2 g(v,nu)/g(nu,nu) nu`.
pub fn reflect_vector(spec: &MetricSpec, p: &[f64], v: &[f64], nu: &[f64]) -> Result<Vec<f64>> {
    let vn = spec.inner(p, v, nu)?;
    let nn = spec.inner(p, nu, nu)?;
    if nn <= 0.0 {
        return Err(Error::Geometry("wall normal is not spacelike".into()));
    }
    let k = 2.0 * vn / nn;
    Ok(v.iter().zip(nu.iter()).map(|(a, b)| a - k * b).collect())
}

/// Signed distance to the nearest wall (positive inside) and the index of
/// that wall.
fn wall_gap(domain: &Domain, x: &[f64]) -> (f64, usize) {
    match domain {
        Domain::Interval { length } => {
            if x[0] < length - x[0] {
                (x[0], 0)
            } else {
                (length - x[0], 1)
            }
        }
        Domain::Rect { lx, ly } => {
            let gaps = [x[0], lx - x[0], x[1], ly - x[1]];
            let mut best = (gaps[0], 0);
            for (i, &g) in gaps.iter().enumerate().skip(1) {
                if g < best.0 {
                    best = (g, i);
                }
            }
            best
        }
        Domain::Disk { radius } => (radius - (x[0] * x[0] + x[1] * x[1]).sqrt(), 0),
    }
}

/// Outward wall normal direction at a boundary point (spacetime vector with
/// zero time component, coordinate normalisation).
pub fn wall_normal(domain: &Domain, wall: usize, x: &[f64]) -> Vec<f64> {
    match domain {
        Domain::Interval { .. } => match wall {
            0 => vec![0.0, -1.0],
            _ => vec![0.0, 1.0],
        },
        Domain::Rect { .. } => match wall {
            0 => vec![0.0, -1.0, 0.0],
            1 => vec![0.0, 1.0, 0.0],
            2 => vec![0.0, 0.0, -1.0],
            _ => vec![0.0, 0.0, 1.0],
        },
        Domain::Disk { .. } => {
            let r = (x[1] * x[1] + x[2] * x[2]).sqrt();
            vec![0.0, x[1] / r, x[2] / r]
        }
    }
}

struct Flow<'a> {
    spec: &'a MetricSpec,
}

impl Flow<'_> {
    /// RHS of the first-order system on (x, v).
    fn rhs(&self, x: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let dim = self.spec.dim();
        let ch = self.spec.christoffel(x)?;
        let mut dv = vec![0.0; dim];
        for a in 0..dim {
            dv[a] = -ch.contract(a, v, v);
        }
        Ok((v.to_vec(), dv))
    }

    fn rk4(&self, x: &[f64], v: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let dim = x.len();
        let (k1x, k1v) = self.rhs(x, v)?;
        let mid = |base: &[f64], k: &[f64], f: f64| -> Vec<f64> {
            base.iter().zip(k).map(|(b, kk)| b + f * kk).collect()
        };
        let (k2x, k2v) = self.rhs(&mid(x, &k1x, h / 2.0), &mid(v, &k1v, h / 2.0))?;
        let (k3x, k3v) = self.rhs(&mid(x, &k2x, h / 2.0), &mid(v, &k2v, h / 2.0))?;
        let (k4x, k4v) = self.rhs(&mid(x, &k3x, h), &mid(v, &k3v, h))?;
        let mut xn = vec![0.0; dim];
        let mut vn = vec![0.0; dim];
        for i in 0..dim {
            xn[i] = x[i] + h / 6.0 * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
            vn[i] = v[i] + h / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        Ok((xn, vn))
    }
}

/// Integrate a broken null geodesic from `(x0, v0)` until it leaves the
/// time slab, exhausts its budget or reflects too often.
pub fn shoot_null_geodesic(
    spec: &MetricSpec,
    x0: &[f64],
    v0: &[f64],
    opts: &ShootOpts,
) -> Result<BrokenNullGeodesic> {
    if spec.causal_character(x0, v0)? != CausalClass::Null {
        return Err(Error::Geometry(
            "initial velocity is not null within tolerance".into(),
        ));
    }
    let (gap0, _) = wall_gap(&spec.domain, &x0[1..]);
    if gap0 < -1e-12 {
        return Err(Error::Geometry("start point lies outside the domain".into()));
    }
    if x0[0] < -1e-12 || x0[0] > spec.t_max + 1e-12 {
        return Err(Error::Geometry("start point lies outside the time slab".into()));
    }

    let flow = Flow { spec };
    let bisect_tol = 1e-10;
    let mut segments = Vec::new();
    let mut reflections = Vec::new();

    let mut s = 0.0;
    let mut x = x0.to_vec();
    let mut v = v0.to_vec();
    let mut seg_samples = vec![GeoSample {
        s,
        x: x.clone(),
        v: v.clone(),
    }];

    let close_segment =
        |samples: &mut Vec<GeoSample>, segments: &mut Vec<Segment>, h: f64| {
            if samples.len() >= 2 {
                segments.push(Segment {
                    samples: std::mem::take(samples),
                    h,
                });
            } else {
                samples.clear();
            }
        };

    let end;
    'outer: loop {
        if s >= opts.s_max {
            end = EndReason::Budget;
            break;
        }
        let (xn, vn) = flow.rk4(&x, &v, opts.h)?;

        // time caps; a wall crossing earlier in the same step wins
        let cap_crossed = xn[0] >= spec.t_max || xn[0] <= 0.0;
        let wall_first = cap_crossed && {
            let target: f64 = if xn[0] >= spec.t_max { spec.t_max } else { 0.0 };
            let frac_cap = (target - x[0]) / (xn[0] - x[0]);
            let (probe, _) = flow.rk4(&x, &v, opts.h * frac_cap.clamp(0.0, 1.0))?;
            wall_gap(&spec.domain, &probe[1..]).0 < 0.0
        };
        if cap_crossed && !wall_first {
            let target: f64 = if xn[0] >= spec.t_max { spec.t_max } else { 0.0 };
            // bisect the step until t lands on the cap
            let mut lo = 0.0;
            let mut hi = opts.h;
            let mut xe = xn.clone();
            let mut ve = vn.clone();
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let (xm, vm) = flow.rk4(&x, &v, mid)?;
                if (xm[0] - target).abs() < bisect_tol {
                    xe = xm;
                    ve = vm;
                    hi = mid;
                    break;
                }
                let crossed = if target > 0.0 {
                    xm[0] >= target
                } else {
                    xm[0] <= target
                };
                if crossed {
                    hi = mid;
                    xe = xm;
                    ve = vm;
                } else {
                    lo = mid;
                }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            s += hi;
            seg_samples.push(GeoSample {
                s,
                x: xe.clone(),
                v: ve.clone(),
            });
            x = xe;
            v = ve;
            end = if target > 0.0 {
                EndReason::FinalCap
            } else {
                EndReason::InitialCap
            };
            break 'outer;
        }

        // wall crossing
        let (gap, _) = wall_gap(&spec.domain, &xn[1..]);
        if gap < 0.0 {
            // bisect on step size until |gap| <= tol, landing inside
            let mut lo = 0.0;
            let mut hi = opts.h;
            let mut xe = xn.clone();
            let mut ve = vn.clone();
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let (xm, vm) = flow.rk4(&x, &v, mid)?;
                let (gm, _) = wall_gap(&spec.domain, &xm[1..]);
                if gm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    xe = xm;
                    ve = vm;
                    if gm < bisect_tol {
                        break;
                    }
                }
                if hi - lo < 1e-16 {
                    break;
                }
            }
            let (_, wall) = wall_gap(&spec.domain, &xe[1..]);
            let s_hit = s + lo;
            seg_samples.push(GeoSample {
                s: s_hit,
                x: xe.clone(),
                v: ve.clone(),
            });

            let nu = wall_normal(&spec.domain, wall, &xe);
            let met = spec.eval_metric(&xe)?;
            let vn_inner = spec.inner(&xe, &ve, &nu)?;
            let mut vscale = 0.0;
            let mut nscale = 0.0;
            let dim = spec.dim();
            for i in 0..dim {
                for j in 0..dim {
                    vscale += met.g[(i, j)].abs() * ve[i].abs() * ve[j].abs();
                    nscale += met.g[(i, j)].abs() * nu[i].abs() * nu[j].abs();
                }
            }
            let trans = vn_inner.abs() / (vscale * nscale).sqrt();
            if trans < opts.tau_trans {
                return Err(Error::Geometry(format!(
                    "tangential wall hit: transversality {trans:.3e} below {:.0e}",
                    opts.tau_trans
                )));
            }
            let v_out = reflect_vector(spec, &xe, &ve, &nu)?;
            reflections.push(ReflectionEvent {
                s: s_hit,
                x: xe.clone(),
                v_in: ve.clone(),
                v_out: v_out.clone(),
                wall,
                transversality: trans,
            });

            // the terminal hit is recorded before the budget cuts off
            if reflections.len() > opts.max_reflections {
                x = xe;
                v = ve;
                s = s_hit;
                end = EndReason::MaxReflections;
                break 'outer;
            }

            // non-uniform tail sample closes the segment; record its h
            close_segment(&mut seg_samples, &mut segments, opts.h);
            s = s_hit;
            x = xe;
            v = v_out;
            seg_samples = vec![GeoSample {
                s,
                x: x.clone(),
                v: v.clone(),
            }];
            continue;
        }

        s += opts.h;
        x = xn;
        v = vn;
        seg_samples.push(GeoSample {
            s,
            x: x.clone(),
            v: v.clone(),
        });
    }

    close_segment(&mut seg_samples, &mut segments, opts.h);
    if segments.is_empty() {
        return Err(Error::Geometry(
            "geodesic left the slab before completing a single step".into(),
        ));
    }
    Ok(BrokenNullGeodesic {
        segments,
        reflections,
        end,
        end_state: GeoSample { s, x, v },
    })
}
