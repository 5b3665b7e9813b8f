//! Fermi charts along null geodesic segments.
//!
//! At every node `gamma(s_i)` of a segment the chart stores the exponential
//! map `F(sigma, z) = exp_{gamma(s_i + sigma)}(sum_a z_a E_a(s_i + sigma))`
//! as an exact truncated polynomial in the chart offsets, together with the
//! pulled-back metric, its inverse, the volume density and the divergence
//! coefficients that the d'Alembertian needs.
//!
//! The exponential map is built degree by degree from the radial grading
//! recursion
//!
//! ```text
//!   k (k-1) F_k = -[ Gamma(F) (EF, EF) ]_{z-degree k}
//! ```
//!
//! where `E = sum_a z_a d/dz_a` is the transverse Euler operator: along a
//! radial geodesic the affine parameter and the z-degree coincide, so no
//! auxiliary ray parameter is needed and the recursion terminates exactly
//! at the degree cap. Base curve and frame enter through their own
//! sigma-Taylor recursions (the base curve is itself a geodesic, the frame
//! is parallel), which makes every stored coefficient an exact jet of the
//! true chart map rather than a finite-difference estimate.
//!
//! The frame is the standard null frame: `E_0 = gamma'`, `E_1` the opposite
//! null vector normalised by `g(E_0, E_1) = 1`, and for two spatial
//! dimensions a unit spacelike `E_2` orthogonal to both. `E_1` needs no
//! transport equation: differentiating the frame identities shows it is
//! automatically parallel once `E_2` is, and in one spatial dimension it is
//! parallel outright. `E_2` is parallel-transported through its own jets
//! and re-projected onto the exact constraints at every node so the
//! on-axis metric pattern holds to machine precision.

use crate::error::{Error, Result};
use crate::poly::{self, MultiPoly, PolyMat, PolyShape};
use crate::spacetime::MetricSpec;
use nalgebra::DMatrix;
use std::sync::Arc;

use super::geodesic::Segment;

#[derive(Debug, Clone, Copy)]
pub struct FermiChartOpts {
    /// Highest transverse degree retained in the jets.
    pub z_cap: usize,
    /// Sigma-Taylor order carried per node (also the order of the
    /// integrator that steps node to node).
    pub sigma_cap: usize,
    /// Chart node every `stride` trace samples.
    pub stride: usize,
    /// Initial transverse chart radius, shrunk until the jets stay
    /// nondegenerate.
    pub delta: f64,
}

impl Default for FermiChartOpts {
    fn default() -> Self {
        FermiChartOpts {
            z_cap: 7,
            sigma_cap: 4,
            stride: 2,
            delta: 0.5,
        }
    }
}

pub struct ChartNode {
    pub s: f64,
    /// Base point and velocity.
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// Frame rows `E_0 = v, E_1, (E_2)`.
    pub frame: Vec<Vec<f64>>,
    /// Affine gap to the next node (zero at the last node).
    pub gap: f64,
    /// Chart map components `F^a(sigma, z)`.
    pub f_map: Vec<MultiPoly<f64>>,
    /// Pulled-back metric, inverse, density `W = sqrt|det G|`.
    pub g_lower: PolyMat<f64>,
    pub g_upper: PolyMat<f64>,
    pub w_dens: MultiPoly<f64>,
    /// `B^b = W^{-1} sum_a d_a (G^{ab} W)`; the d'Alembertian on the chart
    /// is `G^{ab} d_a d_b + B^b d_b`.
    pub div_coef: Vec<MultiPoly<f64>>,
    /// Differential of F at the origin and its inverse (Newton seeding).
    pub jac0: DMatrix<f64>,
    pub jac0_inv: DMatrix<f64>,
}

impl ChartNode {
    /// Transverse curvature jet `R_kl(sigma) = 1/2 d2/dz_k dz_l G^{11}` as
    /// sigma-coefficient matrices.
    pub fn curvature_jet(&self, n: usize, sigma_cap: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(sigma_cap + 1);
        for m in 0..=sigma_cap {
            let mut r = DMatrix::zeros(n, n);
            for k in 0..n {
                for l in 0..n {
                    let d = self.g_upper[1][1].deriv(1 + k).deriv(1 + l);
                    let mut e = [0u8; poly::MAX_VARS];
                    e[0] = m as u8;
                    r[(k, l)] = 0.5 * d.coeff(&e);
                }
            }
            out.push(r);
        }
        out
    }
}

pub struct FermiChart {
    /// Spatial dimension of the underlying spacetime (1 or 2); the chart
    /// has n transverse coordinates.
    pub n: usize,
    pub nodes: Vec<ChartNode>,
    pub shape: Arc<PolyShape>,
    pub z_cap: usize,
    pub sigma_cap: usize,
    /// Validated transverse radius.
    pub delta: f64,
    /// Worst on-axis pattern drift over all nodes.
    pub pattern_drift: f64,
    /// Worst on-axis Christoffel residue over all nodes.
    pub christoffel_drift: f64,
}

impl FermiChart {
    /// Chart variables: 0 = sigma, 1..=n transverse.
    pub fn dim(&self) -> usize {
        self.n + 1
    }

    pub fn s_range(&self) -> (f64, f64) {
        (self.nodes[0].s, self.nodes.last().unwrap().s)
    }

    pub fn node_index(&self, s: f64) -> usize {
        let (s0, _) = self.s_range();
        if s <= s0 || self.nodes.len() == 1 {
            return 0;
        }
        let h = self.nodes[0].gap;
        let i = ((s - s0) / h).round() as usize;
        i.min(self.nodes.len() - 1)
    }

    pub fn node_at(&self, s: f64) -> &ChartNode {
        &self.nodes[self.node_index(s)]
    }

    /// Map chart coordinates `(sigma, z)` at a node to ambient coordinates.
    pub fn to_ambient(&self, node: &ChartNode, zeta: &[f64]) -> Vec<f64> {
        node.f_map.iter().map(|f| f.eval(zeta)).collect()
    }

    /// Invert the chart map near a node by Newton iteration with the frozen
    /// origin Jacobian; None when the iteration leaves the validity ball.
    pub fn from_ambient(&self, node: &ChartNode, q: &[f64]) -> Option<Vec<f64>> {
        let dim = self.dim();
        let sigma_reach = (4.0 * self.nodes[0].gap).max(self.delta);
        let mut zeta = vec![0.0; dim];
        let dq = DMatrix::from_iterator(dim, 1, (0..dim).map(|i| q[i] - node.x[i]));
        let seed = &node.jac0_inv * &dq;
        for i in 0..dim {
            zeta[i] = seed[(i, 0)];
        }
        for _ in 0..60 {
            let fz = self.to_ambient(node, &zeta);
            let mut err = 0.0f64;
            let res = DMatrix::from_iterator(dim, 1, (0..dim).map(|i| fz[i] - q[i]));
            for i in 0..dim {
                err = err.max(res[(i, 0)].abs());
            }
            if err < 1e-13 {
                let zr: f64 = zeta[1..].iter().map(|z| z * z).sum::<f64>().sqrt();
                if zr > 2.0 * self.delta || zeta[0].abs() > 2.0 * sigma_reach {
                    return None;
                }
                return Some(zeta);
            }
            let step = &node.jac0_inv * &res;
            for i in 0..dim {
                zeta[i] -= step[(i, 0)];
            }
            if zeta[1..].iter().map(|z| z * z).sum::<f64>().sqrt() > 4.0 * self.delta {
                return None;
            }
        }
        None
    }

    /// Chart over one segment of a broken geodesic.
    pub fn build(spec: &MetricSpec, segment: &Segment, opts: &FermiChartOpts) -> Result<FermiChart> {
        let m = segment.samples.len();
        let mut states: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
        let mut i = 0;
        while i < m {
            let smp = &segment.samples[i];
            states.push((smp.s, smp.x.clone(), smp.v.clone()));
            if i == m - 1 {
                break;
            }
            i = (i + opts.stride).min(m - 1);
        }
        if states.len() < 2 {
            return Err(Error::Geometry("segment too short for a chart".into()));
        }
        build_from_states(spec, &states, None, opts)
    }

    /// Single-node chart anchored at a point, used for deep-sigma expansions
    /// at boundary hits. `e2_hint` carries the transported frame in.
    pub fn build_at_point(
        spec: &MetricSpec,
        s: f64,
        x: &[f64],
        v: &[f64],
        e2_hint: Option<&[f64]>,
        opts: &FermiChartOpts,
    ) -> Result<FermiChart> {
        let states = vec![(s, x.to_vec(), v.to_vec())];
        build_from_states(spec, &states, e2_hint, opts)
    }

    /// Chart with prescribed transverse curvature and otherwise flat
    /// pattern: `G^{11} = sum R_kl(sigma) z_k z_l` about each node. The
    /// chart map is affine; `r_jet(s)` returns the sigma-Taylor
    /// coefficients of R at affine parameter s.
    pub fn synthetic(
        n: usize,
        s_len: f64,
        n_nodes: usize,
        opts: &FermiChartOpts,
        r_jet: &dyn Fn(f64) -> Vec<DMatrix<f64>>,
    ) -> FermiChart {
        let dim = n + 1;
        let total_cap = opts.z_cap + opts.sigma_cap;
        let mut var_caps = [total_cap; poly::MAX_VARS];
        var_caps[0] = opts.sigma_cap;
        let shape = poly::shape(dim, total_cap, &var_caps);
        let h = s_len / (n_nodes - 1) as f64;
        let mut nodes = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let s = i as f64 * h;
            let rj = r_jet(s);
            let mut g_upper = vec![vec![MultiPoly::zero(&shape); dim]; dim];
            g_upper[0][1] = MultiPoly::constant(&shape, 1.0);
            g_upper[1][0] = MultiPoly::constant(&shape, 1.0);
            for a in 2..dim {
                g_upper[a][a] = MultiPoly::constant(&shape, 1.0);
            }
            let mut g11 = MultiPoly::zero(&shape);
            for (m, r) in rj.iter().enumerate().take(opts.sigma_cap + 1) {
                for k in 0..n {
                    for l in 0..n {
                        let mut e = [0u8; poly::MAX_VARS];
                        e[0] = m as u8;
                        e[1 + k] += 1;
                        e[1 + l] += 1;
                        g11.add_coeff(&e, r[(k, l)]);
                    }
                }
            }
            g_upper[1][1] = g11;
            let g_lower = poly::mat_inverse(&g_upper);
            let det = poly::mat_det(&g_lower);
            let w_dens = (-&det).sqrt();
            let w_inv = w_dens.recip();
            let mut div_coef = Vec::with_capacity(dim);
            for b in 0..dim {
                let mut acc = MultiPoly::zero(&shape);
                for a in 0..dim {
                    acc = &acc + &g_upper[a][b].mul(&w_dens).deriv(a);
                }
                div_coef.push(acc.mul(&w_inv));
            }
            let mut x0 = vec![0.0; dim];
            x0[0] = s;
            let mut f_map = Vec::with_capacity(dim);
            for a in 0..dim {
                let mut f = MultiPoly::constant(&shape, x0[a]);
                f.add_coeff(&unit_exp(a), 1.0);
                f_map.push(f);
            }
            let jac0: DMatrix<f64> = DMatrix::identity(dim, dim);
            let mut frame = vec![vec![0.0; dim]; dim];
            for (a, row) in frame.iter_mut().enumerate() {
                row[a] = 1.0;
            }
            let mut v = vec![0.0; dim];
            v[0] = 1.0;
            nodes.push(ChartNode {
                s,
                x: x0,
                v,
                frame,
                gap: if i + 1 < n_nodes { h } else { 0.0 },
                f_map,
                g_lower,
                g_upper,
                w_dens,
                div_coef,
                jac0: jac0.clone(),
                jac0_inv: jac0,
            });
        }
        FermiChart {
            n,
            nodes,
            shape,
            z_cap: opts.z_cap,
            sigma_cap: opts.sigma_cap,
            delta: opts.delta,
            pattern_drift: 0.0,
            christoffel_drift: 0.0,
        }
    }
}

/// Ambient Christoffel and metric jets at a point, shaped for composition
/// into the chart ring.
struct AmbientJets {
    gamma: Vec<MultiPoly<f64>>,
    metric: PolyMat<f64>,
    dim: usize,
}

impl AmbientJets {
    fn build(spec: &MetricSpec, p: &[f64], cap: usize) -> AmbientJets {
        let dim = spec.dim();
        let sh = poly::shape_total(dim, cap);
        let ch = spec.christoffel_taylor(p, &sh);
        let mut gamma = Vec::with_capacity(dim * dim * dim);
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    gamma.push(ch.get(a, b, c).clone());
                }
            }
        }
        AmbientJets {
            gamma,
            metric: spec.metric_taylor(p, &sh),
            dim,
        }
    }

    fn gamma(&self, a: usize, b: usize, c: usize) -> &MultiPoly<f64> {
        &self.gamma[(a * self.dim + b) * self.dim + c]
    }
}

/// sigma-Taylor of the base geodesic about a node, by power matching on
/// `x'' = -Gamma(x)(x', x')`.
fn base_curve_jets(
    jets: &AmbientJets,
    x0: &[f64],
    v0: &[f64],
    shape: &Arc<PolyShape>,
    sigma_cap: usize,
) -> Vec<MultiPoly<f64>> {
    let dim = jets.dim;
    let mut x: Vec<MultiPoly<f64>> = (0..dim)
        .map(|a| {
            let mut p = MultiPoly::constant(shape, x0[a]);
            p.add_coeff(&[1, 0, 0], v0[a]);
            p
        })
        .collect();
    for k in 1..sigma_cap {
        let dx: Vec<MultiPoly<f64>> = x.iter().map(|p| p.deriv(0)).collect();
        let delta: Vec<MultiPoly<f64>> = x
            .iter()
            .enumerate()
            .map(|(a, p)| {
                let mut d = p.clone();
                d.c[0] -= x0[a];
                d
            })
            .collect();
        let mut cache = poly::PowerCache::new(&delta);
        for a in 0..dim {
            let mut acc = MultiPoly::zero(shape);
            for b in 0..dim {
                for c in 0..dim {
                    let gam = jets.gamma(a, b, c).compose_cached(&mut cache);
                    acc = &acc + &gam.mul(&dx[b]).mul(&dx[c]);
                }
            }
            let coeff = -acc.coeff(&[(k - 1) as u8, 0, 0]) / ((k * (k + 1)) as f64);
            x[a].set_coeff(&[(k + 1) as u8, 0, 0], coeff);
        }
    }
    x
}

/// sigma-Taylor of a parallel field along the base curve:
/// `E' = -Gamma(x)(x', E)`.
fn transported_jets(
    jets: &AmbientJets,
    base: &[MultiPoly<f64>],
    x0: &[f64],
    e0: &[f64],
    shape: &Arc<PolyShape>,
    sigma_cap: usize,
) -> Vec<MultiPoly<f64>> {
    let dim = jets.dim;
    let dx: Vec<MultiPoly<f64>> = base.iter().map(|p| p.deriv(0)).collect();
    let delta: Vec<MultiPoly<f64>> = base
        .iter()
        .enumerate()
        .map(|(a, p)| {
            let mut d = p.clone();
            d.c[0] -= x0[a];
            d
        })
        .collect();
    let mut cache = poly::PowerCache::new(&delta);
    let gam_on_curve: Vec<MultiPoly<f64>> = (0..dim * dim * dim)
        .map(|i| jets.gamma[i].compose_cached(&mut cache))
        .collect();
    let mut e: Vec<MultiPoly<f64>> = (0..dim)
        .map(|a| MultiPoly::constant(shape, e0[a]))
        .collect();
    for k in 0..sigma_cap {
        for a in 0..dim {
            let mut acc = MultiPoly::zero(shape);
            for b in 0..dim {
                for c in 0..dim {
                    let g = &gam_on_curve[(a * dim + b) * dim + c];
                    acc = &acc + &g.mul(&dx[b]).mul(&e[c]);
                }
            }
            let coeff = -acc.coeff(&[k as u8, 0, 0]) / (k + 1) as f64;
            e[a].set_coeff(&[(k + 1) as u8, 0, 0], coeff);
        }
    }
    e
}

/// Exact null-frame completion: `E_1` is the opposite null vector with
/// `g(E_0, E_1) = 1`; for n = 2 the transverse `E_2` is projected exactly
/// onto the orthogonal complement and `E_1` corrected to match.
fn complete_frame(
    spec: &MetricSpec,
    p: &[f64],
    v: &[f64],
    e2_hint: Option<&[f64]>,
) -> Result<Vec<Vec<f64>>> {
    let n = spec.n;
    let val = spec.eval_metric(p)?;
    let beta = val.beta;
    let a = v[0];
    if a.abs() < 1e-14 {
        return Err(Error::Geometry("flow has no time component".into()));
    }
    let denom = -2.0 * beta * a * a;
    let mut e1: Vec<f64> = Vec::with_capacity(n + 1);
    e1.push(a / denom);
    for w in v.iter().skip(1) {
        e1.push(-w / denom);
    }
    let mut frame = vec![v.to_vec(), e1];

    if n == 2 {
        let mut e2 = match e2_hint {
            Some(h) => h.to_vec(),
            None => {
                let w = [v[1], v[2]];
                let gw = [
                    val.g[(1, 1)] * w[0] + val.g[(1, 2)] * w[1],
                    val.g[(2, 1)] * w[0] + val.g[(2, 2)] * w[1],
                ];
                vec![0.0, -gw[1], gw[0]]
            }
        };
        // decompose e2 = a E_0 + b E_1 + c T with T transverse:
        // g(e2, E_0) = b, then g(e2 - b E_1, E_1) = a
        let b_c = spec.inner(p, &e2, &frame[0])?;
        for i in 0..=n {
            e2[i] -= b_c * frame[1][i];
        }
        let a_c = spec.inner(p, &e2, &frame[1])?;
        for i in 0..=n {
            e2[i] -= a_c * frame[0][i];
        }
        let norm = spec.inner(p, &e2, &e2)?;
        if norm <= 0.0 {
            return Err(Error::Geometry("degenerate transverse frame".into()));
        }
        let s = norm.sqrt();
        for t in e2.iter_mut() {
            *t /= s;
        }
        // keep E_1 orthogonal to the corrected E_2 without breaking its
        // null pairing: E_1 += (d^2/2) E_0 - d E_2 with d = g(E_1, E_2)
        let d = spec.inner(p, &frame[1], &e2)?;
        let alpha = 0.5 * d * d;
        for i in 0..=n {
            frame[1][i] += alpha * frame[0][i] - d * e2[i];
        }
        frame.push(e2);
    }
    Ok(frame)
}

struct NodeBuild {
    node: ChartNode,
    pattern_drift: f64,
    christoffel_drift: f64,
    e2_next: Option<Vec<f64>>,
}

fn build_node(
    spec: &MetricSpec,
    s: f64,
    x0: &[f64],
    v0: &[f64],
    e2_hint: Option<&[f64]>,
    gap: f64,
    shape: &Arc<PolyShape>,
    opts: &FermiChartOpts,
    total_cap: usize,
) -> Result<NodeBuild> {
    let n = spec.n;
    let dim = n + 1;
    let frame = complete_frame(spec, x0, v0, e2_hint)?;
    let jets = AmbientJets::build(spec, x0, total_cap);
    let base = base_curve_jets(&jets, x0, v0, shape, opts.sigma_cap);

    let mut frame_jets: Vec<Vec<MultiPoly<f64>>> = Vec::with_capacity(n);
    for alpha in 0..n {
        frame_jets.push(transported_jets(
            &jets,
            &base,
            x0,
            &frame[1 + alpha],
            shape,
            opts.sigma_cap,
        ));
    }

    // radial recursion for the exponential map
    let mut f_map: Vec<MultiPoly<f64>> = base.clone();
    for a in 0..dim {
        for (alpha, ej) in frame_jets.iter().enumerate() {
            let z = MultiPoly::var(shape, 1 + alpha);
            f_map[a] = &f_map[a] + &z.mul(&ej[a]);
        }
    }
    for k in 2..=total_cap {
        let euler: Vec<MultiPoly<f64>> = f_map
            .iter()
            .map(|f| {
                let mut acc = MultiPoly::zero(shape);
                for alpha in 0..n {
                    let z = MultiPoly::var(shape, 1 + alpha);
                    acc = &acc + &z.mul(&f.deriv(1 + alpha));
                }
                acc
            })
            .collect();
        let delta: Vec<MultiPoly<f64>> = f_map
            .iter()
            .enumerate()
            .map(|(a, p)| {
                let mut d = p.clone();
                d.c[0] -= x0[a];
                d
            })
            .collect();
        let mut cache = poly::PowerCache::new(&delta);
        let scale = -1.0 / (k * (k - 1)) as f64;
        for a in 0..dim {
            let mut acc = MultiPoly::zero(shape);
            for b in 0..dim {
                for c in b..dim {
                    let gam = jets.gamma(a, b, c).compose_cached(&mut cache);
                    let prod = gam.mul(&euler[b]).mul(&euler[c]);
                    acc = if b == c {
                        &acc + &prod
                    } else {
                        &acc + &prod.scale_re(2.0)
                    };
                }
            }
            let part = acc.filter(|e| (e[1] as usize + e[2] as usize) == k);
            f_map[a] = &f_map[a] + &part.scale_re(scale);
        }
    }

    // pulled-back metric G_ab = g_cd(F) dF^c/da dF^d/db
    let df: Vec<Vec<MultiPoly<f64>>> = (0..dim)
        .map(|a| f_map.iter().map(|f| f.deriv(a)).collect())
        .collect();
    let delta_f: Vec<MultiPoly<f64>> = f_map
        .iter()
        .enumerate()
        .map(|(a, p)| {
            let mut d = p.clone();
            d.c[0] -= x0[a];
            d
        })
        .collect();
    let mut cache = poly::PowerCache::new(&delta_f);
    let mut g_amb = vec![vec![MultiPoly::zero(shape); dim]; dim];
    for c in 0..dim {
        for d in c..dim {
            let composed = jets.metric[c][d].compose_cached(&mut cache);
            g_amb[c][d] = composed.clone();
            g_amb[d][c] = composed;
        }
    }
    let mut g_lower = vec![vec![MultiPoly::zero(shape); dim]; dim];
    for a in 0..dim {
        for b in a..dim {
            let mut acc = MultiPoly::zero(shape);
            for c in 0..dim {
                for d in 0..dim {
                    acc = &acc + &g_amb[c][d].mul(&df[a][c]).mul(&df[b][d]);
                }
            }
            g_lower[a][b] = acc.clone();
            g_lower[b][a] = acc;
        }
    }

    // on-axis diagnostics: metric pattern and vanishing Christoffels
    let mut pattern_drift = 0.0f64;
    for a in 0..dim {
        for b in 0..dim {
            let want = match (a, b) {
                (0, 1) | (1, 0) => 1.0,
                (aa, bb) if aa == bb && aa >= 2 => 1.0,
                _ => 0.0,
            };
            pattern_drift = pattern_drift.max((g_lower[a][b].constant_term() - want).abs());
        }
    }
    let g_upper = poly::mat_inverse(&g_lower);
    let mut christoffel_drift = 0.0f64;
    for a in 0..dim {
        for b in 0..dim {
            for c in 0..dim {
                let mut acc = 0.0;
                for d in 0..dim {
                    let term = g_lower[d][c].coeff(&unit_exp(b))
                        + g_lower[d][b].coeff(&unit_exp(c))
                        - g_lower[b][c].coeff(&unit_exp(d));
                    acc += g_upper[a][d].constant_term() * term;
                }
                christoffel_drift = christoffel_drift.max((0.5 * acc).abs());
            }
        }
    }

    let det = poly::mat_det(&g_lower);
    let w_dens = (-&det).sqrt();
    let w_inv = w_dens.recip();
    let mut div_coef = Vec::with_capacity(dim);
    for b in 0..dim {
        let mut acc = MultiPoly::zero(shape);
        for a in 0..dim {
            acc = &acc + &g_upper[a][b].mul(&w_dens).deriv(a);
        }
        div_coef.push(acc.mul(&w_inv));
    }

    let mut jac0 = DMatrix::zeros(dim, dim);
    for (col, e) in std::iter::once(v0)
        .chain(frame.iter().skip(1).map(|f| f.as_slice()))
        .enumerate()
    {
        for r in 0..dim {
            jac0[(r, col)] = e[r];
        }
    }
    let jac0_inv = jac0
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Geometry("chart differential is singular at a node".into()))?;

    let e2_next = if n == 2 {
        let ej = &frame_jets[1];
        Some(ej.iter().map(|p| p.eval(&[gap, 0.0, 0.0])).collect())
    } else {
        None
    };

    Ok(NodeBuild {
        node: ChartNode {
            s,
            x: x0.to_vec(),
            v: v0.to_vec(),
            frame,
            gap,
            f_map,
            g_lower,
            g_upper,
            w_dens,
            div_coef,
            jac0,
            jac0_inv,
        },
        pattern_drift,
        christoffel_drift,
        e2_next,
    })
}

fn build_from_states(
    spec: &MetricSpec,
    states: &[(f64, Vec<f64>, Vec<f64>)],
    e2_seed: Option<&[f64]>,
    opts: &FermiChartOpts,
) -> Result<FermiChart> {
    let n = spec.n;
    let dim = n + 1;
    let total_cap = opts.z_cap + opts.sigma_cap;
    let mut var_caps = [total_cap; poly::MAX_VARS];
    var_caps[0] = opts.sigma_cap;
    let shape = poly::shape(dim, total_cap, &var_caps);

    let mut e2_running: Option<Vec<f64>> = e2_seed.map(|e| e.to_vec());
    let mut nodes = Vec::with_capacity(states.len());
    let mut pattern_drift = 0.0f64;
    let mut christoffel_drift = 0.0f64;

    for (idx, (s, x0, v0)) in states.iter().enumerate() {
        let gap = if idx + 1 < states.len() {
            states[idx + 1].0 - s
        } else {
            0.0
        };
        let built = build_node(
            spec,
            *s,
            x0,
            v0,
            e2_running.as_deref(),
            gap,
            &shape,
            opts,
            total_cap,
        )?;
        pattern_drift = pattern_drift.max(built.pattern_drift);
        christoffel_drift = christoffel_drift.max(built.christoffel_drift);
        e2_running = built.e2_next;
        nodes.push(built.node);
    }

    // shrink the transverse radius until the density stays tame everywhere
    let mut delta = opts.delta;
    'radius: loop {
        if delta < 1e-4 {
            return Err(Error::ChartRadius(delta));
        }
        for node in &nodes {
            for dir in sample_directions(n) {
                let mut zeta = vec![0.0; dim];
                for (i, d) in dir.iter().enumerate() {
                    zeta[1 + i] = d * delta;
                }
                let w = node.w_dens.eval(&zeta);
                let w0 = node.w_dens.constant_term();
                if !(w > 0.25 * w0 && w < 4.0 * w0) {
                    delta *= 0.8;
                    continue 'radius;
                }
            }
        }
        break;
    }

    Ok(FermiChart {
        n,
        nodes,
        shape,
        z_cap: opts.z_cap,
        sigma_cap: opts.sigma_cap,
        delta,
        pattern_drift,
        christoffel_drift,
    })
}

fn unit_exp(v: usize) -> [u8; poly::MAX_VARS] {
    let mut e = [0u8; poly::MAX_VARS];
    e[v] = 1;
    e
}

fn sample_directions(n: usize) -> Vec<Vec<f64>> {
    if n == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        (0..12)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / 12.0;
                vec![th.cos(), th.sin()]
            })
            .collect()
    }
}

/// Jacobi scan for conjugate points: integrates the real system
/// `Y' = P Z, Z' = -R(s) Y` with `Y(0) = I, Z(0) = 0`, where
/// `P = diag(0, 1, ..., 1)` over the transverse slots and R is the
/// curvature block read off the chart. The first parameter where
/// `|det Y|` falls below `tau_conj` times its running maximum is
/// reported. In one spatial dimension Y stays constant: no conjugate
/// points (the transverse block is the flow direction itself).
pub struct ConjugateScan {
    pub first_degenerate: Option<f64>,
    pub min_rel_det: f64,
}

pub const TAU_CONJ: f64 = 1e-8;

pub fn conjugate_point_scan(chart: &FermiChart) -> ConjugateScan {
    let n = chart.n;
    let mut y = DMatrix::<f64>::identity(n, n);
    let mut z = DMatrix::<f64>::zeros(n, n);
    let mut max_det = y.determinant().abs();
    let mut min_rel = 1.0f64;
    let mut prev_det = y.determinant();
    let sub = 8usize;
    for node in &chart.nodes {
        let h = node.gap;
        if h == 0.0 {
            break;
        }
        let r_jet = node.curvature_jet(n, chart.sigma_cap);
        // Taylor coefficients: Y_{m+1} = (P Z)_m/(m+1), Z_{m+1} = -(R Y)_m/(m+1)
        let cap = chart.sigma_cap + 2;
        let mut yc: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); cap + 1];
        let mut zc: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); cap + 1];
        yc[0] = y.clone();
        zc[0] = z.clone();
        for m in 0..cap {
            let mut pz = zc[m].clone();
            for col in 0..n {
                pz[(0, col)] = 0.0;
            }
            yc[m + 1] = pz / (m + 1) as f64;
            let mut ry = DMatrix::<f64>::zeros(n, n);
            for (j, rj) in r_jet.iter().enumerate().take(m + 1) {
                ry += rj * &yc[m - j];
            }
            zc[m + 1] = -ry / (m + 1) as f64;
        }
        let eval = |tau: f64| -> (DMatrix<f64>, DMatrix<f64>) {
            let mut yv = yc[cap].clone();
            let mut zv = zc[cap].clone();
            for m in (0..cap).rev() {
                yv = yv * tau + &yc[m];
                zv = zv * tau + &zc[m];
            }
            (yv, zv)
        };
        // sub-sample for threshold hits and determinant sign changes
        for j in 1..=sub {
            let tau = h * j as f64 / sub as f64;
            let (yv, _) = eval(tau);
            let ds = yv.determinant();
            let d = ds.abs();
            max_det = max_det.max(d);
            min_rel = min_rel.min(d / max_det);
            if d < TAU_CONJ * max_det || ds * prev_det < 0.0 {
                // bisect the zero crossing of the signed determinant
                let mut lo = h * (j - 1) as f64 / sub as f64;
                let mut hi = tau;
                let ref_sign = prev_det.signum();
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    let (ym, _) = eval(mid);
                    let dm = ym.determinant();
                    if dm.abs() < TAU_CONJ * max_det || dm.signum() != ref_sign {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return ConjugateScan {
                    first_degenerate: Some(node.s + 0.5 * (lo + hi)),
                    min_rel_det: 0.0,
                };
            }
            prev_det = ds;
        }
        let (yv, zv) = eval(h);
        y = yv;
        z = zv;
    }
    ConjugateScan {
        first_degenerate: None,
        min_rel_det: min_rel,
    }
}
