//! Lorentzian product metrics on the cylinder `(0, t_max) x M`.
//!
//! The metric has the block form `g = -beta(t,x) dt^2 + g0_ij(t,x) dx^i dx^j`
//! in the product chart, signature `(-, +, ..., +)`. All geometry in the
//! crate runs through this module: pointwise evaluation with inverse and
//! density, exact Taylor jets of the components, Christoffel symbols
//! (analytic via jets, or by central differences for cross-checks), causal
//! typing of vectors, and the musical isomorphisms.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::Domain;
use crate::poly::{self, MultiPoly, PolyMat, PolyShape};
use nalgebra::DMatrix;
use std::sync::Arc;

/// How Christoffel symbols are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DerivativeMode {
    /// Exact first derivatives from the coefficient jets.
    Analytic,
    /// Central differences of the metric with the given step.
    FiniteDiff { h: f64 },
}

/// Relative tolerance for classifying a vector as null.
pub const TAU_NULL: f64 = 1e-9;
/// `g * g^-1 = I` must hold to this tolerance at every evaluation.
pub const TAU_INVERSE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MetricSpec {
    /// Spatial dimension, 1 or 2.
    pub n: usize,
    pub t_max: f64,
    pub domain: Domain,
    /// Lapse factor in front of `-dt^2`; must be positive on the cylinder.
    pub beta: Expr,
    /// Spatial block, row-major `n x n`, symmetric.
    pub g0: Vec<Vec<Expr>>,
    pub derivative_mode: DerivativeMode,
    /// Human-readable tag for reports.
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct MetricValue {
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    /// sqrt |det g|
    pub sqrt_abs_det: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CausalClass {
    Timelike,
    Null,
    Spacelike,
}

/// Christoffel symbols at a point; `gamma(a, b, c)` is the upper index `a`.
#[derive(Debug, Clone)]
pub struct Christoffel {
    pub dim: usize,
    v: Vec<f64>,
}

impl Christoffel {
    pub fn zero(dim: usize) -> Self {
        Christoffel {
            dim,
            v: vec![0.0; dim * dim * dim],
        }
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, c: usize) -> f64 {
        self.v[(a * self.dim + b) * self.dim + c]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, c: usize, val: f64) {
        self.v[(a * self.dim + b) * self.dim + c] = val;
    }

    /// Contraction `Gamma^a_{bc} u^b w^c` for fixed `a`.
    pub fn contract(&self, a: usize, u: &[f64], w: &[f64]) -> f64 {
        let mut acc = 0.0;
        for b in 0..self.dim {
            for c in 0..self.dim {
                acc += self.get(a, b, c) * u[b] * w[c];
            }
        }
        acc
    }
}

impl MetricSpec {
    pub fn minkowski(n: usize, t_max: f64, domain: Domain) -> MetricSpec {
        let one = Expr::constant(1.0);
        let zero = Expr::constant(0.0);
        let mut g0 = vec![vec![zero; n]; n];
        for (i, row) in g0.iter_mut().enumerate() {
            row[i] = one.clone();
        }
        MetricSpec {
            n,
            t_max,
            domain,
            beta: one,
            g0,
            derivative_mode: DerivativeMode::Analytic,
            label: "minkowski".into(),
        }
    }

    /// Conformally flat metric `c(t,x) * (-dt^2 + sum dx_i^2)`.
    pub fn conformal(n: usize, t_max: f64, domain: Domain, factor: Expr) -> MetricSpec {
        let zero = Expr::constant(0.0);
        let mut g0 = vec![vec![zero; n]; n];
        for (i, row) in g0.iter_mut().enumerate() {
            row[i] = factor.clone();
        }
        MetricSpec {
            n,
            t_max,
            domain,
            beta: factor,
            g0,
            derivative_mode: DerivativeMode::Analytic,
            label: "conformal".into(),
        }
    }

    /// Fully custom product metric from expressions.
    pub fn product(
        n: usize,
        t_max: f64,
        domain: Domain,
        beta: Expr,
        g0: Vec<Vec<Expr>>,
    ) -> Result<MetricSpec> {
        if g0.len() != n || g0.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "spatial block must be {n} x {n}"
            )));
        }
        Ok(MetricSpec {
            n,
            t_max,
            domain,
            beta,
            g0,
            derivative_mode: DerivativeMode::Analytic,
            label: "custom".into(),
        })
    }

    /// Build a spec from sampled coefficient values by a global least
    /// squares polynomial fit of the given total degree. The fit is exact
    /// when the sampled functions are themselves polynomials of that degree;
    /// otherwise it is the smooth stand-in for tabulated data.
    ///
    /// `samples` holds rows `[t, x, (y,) beta, g0_00, (g0_01, g0_11)]`.
    pub fn from_samples(
        n: usize,
        t_max: f64,
        domain: Domain,
        samples: &[Vec<f64>],
        degree: usize,
    ) -> Result<MetricSpec> {
        let ncoord = n + 1;
        let ncomp = if n == 1 { 2 } else { 4 };
        if samples.is_empty() || samples.iter().any(|r| r.len() != ncoord + ncomp) {
            return Err(Error::Config(
                "sample rows must be coordinates followed by beta and spatial components".into(),
            ));
        }
        let sh = poly::shape_total(ncoord, degree);
        let nbasis = sh.len();
        if samples.len() < nbasis {
            return Err(Error::Config(format!(
                "need at least {nbasis} samples for a degree {degree} fit"
            )));
        }
        let mut design = DMatrix::zeros(samples.len(), nbasis);
        for (row, s) in samples.iter().enumerate() {
            for col in 0..nbasis {
                let e = sh.exps[col];
                let mut v = 1.0;
                for (axis, &p) in s[..ncoord].iter().enumerate() {
                    v *= p.powi(e[axis] as i32);
                }
                design[(row, col)] = v;
            }
        }
        let svd = design.svd(true, true);
        let fit_component = |comp: usize| -> Result<Expr> {
            let rhs =
                DMatrix::from_iterator(samples.len(), 1, samples.iter().map(|s| s[ncoord + comp]));
            let sol = svd
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::Config(format!("sample fit failed: {e}")))?;
            Ok(poly_to_expr(&sh, sol.as_slice()))
        };
        let beta = fit_component(0)?;
        let g0 = if n == 1 {
            vec![vec![fit_component(1)?]]
        } else {
            let c00 = fit_component(1)?;
            let c01 = fit_component(2)?;
            let c11 = fit_component(3)?;
            vec![vec![c00, c01.clone()], vec![c01, c11]]
        };
        let mut spec = MetricSpec::product(n, t_max, domain, beta, g0)?;
        spec.label = "sampled".into();
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.n + 1
    }

    fn coords(&self, p: &[f64]) -> [f64; 3] {
        let mut c = [0.0; 3];
        for (i, &v) in p.iter().take(3).enumerate() {
            c[i] = v;
        }
        c
    }

    /// Metric, inverse and density at a point. Fails when the lapse or the
    /// spatial block loses positivity, or when the inverse check misses
    /// `TAU_INVERSE`.
    pub fn eval_metric(&self, p: &[f64]) -> Result<MetricValue> {
        let dim = self.dim();
        if p.len() != dim {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, expected {dim}",
                p.len()
            )));
        }
        let c = self.coords(p);
        let beta = self.beta.eval(&c);
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::BadMetric {
                at: p.to_vec(),
                msg: format!("lapse beta = {beta} not positive"),
            });
        }
        let mut g = DMatrix::zeros(dim, dim);
        g[(0, 0)] = -beta;
        for i in 0..self.n {
            for j in 0..self.n {
                g[(i + 1, j + 1)] = self.g0[i][j].eval(&c);
            }
        }
        // positivity of the spatial block
        let det0 = match self.n {
            1 => g[(1, 1)],
            _ => g[(1, 1)] * g[(2, 2)] - g[(1, 2)] * g[(2, 1)],
        };
        let pos = match self.n {
            1 => g[(1, 1)] > 0.0,
            _ => g[(1, 1)] > 0.0 && det0 > 0.0,
        };
        if !pos {
            return Err(Error::BadMetric {
                at: p.to_vec(),
                msg: "spatial block not positive definite".into(),
            });
        }
        // block inverse
        let mut g_inv = DMatrix::zeros(dim, dim);
        g_inv[(0, 0)] = -1.0 / beta;
        match self.n {
            1 => {
                g_inv[(1, 1)] = 1.0 / g[(1, 1)];
            }
            _ => {
                g_inv[(1, 1)] = g[(2, 2)] / det0;
                g_inv[(2, 2)] = g[(1, 1)] / det0;
                g_inv[(1, 2)] = -g[(1, 2)] / det0;
                g_inv[(2, 1)] = -g[(2, 1)] / det0;
            }
        }
        let prod = &g * &g_inv;
        let mut drift: f64 = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                let want = if i == j { 1.0 } else { 0.0 };
                drift = drift.max((prod[(i, j)] - want).abs());
            }
        }
        if drift > TAU_INVERSE {
            return Err(Error::BadMetric {
                at: p.to_vec(),
                msg: format!("inverse drift {drift:.3e} exceeds {TAU_INVERSE:.0e}"),
            });
        }
        Ok(MetricValue {
            g,
            g_inv,
            sqrt_abs_det: (beta * det0).sqrt(),
            beta,
        })
    }

    /// Taylor jets of all metric components about `p`. Variable `v` of the
    /// shape is the offset along coordinate `v`. The result is the full
    /// symmetric `(n+1) x (n+1)` matrix with the zero off-block filled in.
    pub fn metric_taylor(&self, p: &[f64], shape: &Arc<PolyShape>) -> PolyMat<f64> {
        let dim = self.dim();
        assert_eq!(shape.nvars, dim, "shape must have one variable per coordinate");
        let c = self.coords(p);
        let mut out = vec![vec![MultiPoly::zero(shape); dim]; dim];
        out[0][0] = -&self.beta.taylor(&c, shape);
        for i in 0..self.n {
            for j in i..self.n {
                let jet = self.g0[i][j].taylor(&c, shape);
                out[i + 1][j + 1] = jet.clone();
                out[j + 1][i + 1] = jet;
            }
        }
        out
    }

    /// Jets of the inverse metric about `p`.
    pub fn inverse_metric_taylor(&self, p: &[f64], shape: &Arc<PolyShape>) -> PolyMat<f64> {
        poly::mat_inverse(&self.metric_taylor(p, shape))
    }

    /// Christoffel symbols at `p`, honouring the derivative mode.
    pub fn christoffel(&self, p: &[f64]) -> Result<Christoffel> {
        match self.derivative_mode {
            DerivativeMode::Analytic => {
                let sh = poly::shape_total(self.dim(), 1);
                let jets = self.metric_taylor(p, &sh);
                let val = self.eval_metric(p)?;
                Ok(christoffel_from_first_jets(self.dim(), &jets, &val.g_inv))
            }
            DerivativeMode::FiniteDiff { h } => {
                let dim = self.dim();
                let val = self.eval_metric(p)?;
                // dg[b][(i,j)] = d_b g_ij by central difference
                let mut dg = Vec::with_capacity(dim);
                for b in 0..dim {
                    let mut pp = p.to_vec();
                    let mut pm = p.to_vec();
                    pp[b] += h;
                    pm[b] -= h;
                    let gp = self.eval_metric(&pp)?.g;
                    let gm = self.eval_metric(&pm)?.g;
                    dg.push((gp - gm) / (2.0 * h));
                }
                let mut out = Christoffel::zero(dim);
                for a in 0..dim {
                    for b in 0..dim {
                        for cc in 0..dim {
                            let mut acc = 0.0;
                            for d in 0..dim {
                                acc += val.g_inv[(a, d)]
                                    * (dg[b][(d, cc)] + dg[cc][(d, b)] - dg[d][(b, cc)]);
                            }
                            out.set(a, b, cc, 0.5 * acc);
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Jets of the Christoffel symbols about `p`:
    /// `Gamma^a_{bc} = 1/2 g^{ad} (d_b g_{dc} + d_c g_{db} - d_d g_{bc})`
    /// computed entirely in the truncated polynomial ring.
    pub fn christoffel_taylor(&self, p: &[f64], shape: &Arc<PolyShape>) -> ChristoffelJets {
        let dim = self.dim();
        let g = self.metric_taylor(p, shape);
        let ginv = poly::mat_inverse(&g);
        let mut dg = Vec::with_capacity(dim);
        for b in 0..dim {
            let mut rows = Vec::with_capacity(dim);
            for i in 0..dim {
                let row: Vec<MultiPoly<f64>> = (0..dim).map(|j| g[i][j].deriv(b)).collect();
                rows.push(row);
            }
            dg.push(rows);
        }
        let mut out = Vec::with_capacity(dim * dim * dim);
        for a in 0..dim {
            for b in 0..dim {
                for c in 0..dim {
                    let mut acc = MultiPoly::zero(shape);
                    for d in 0..dim {
                        let sum = &(&dg[b][d][c] + &dg[c][d][b]) - &dg[d][b][c];
                        acc = &acc + &ginv[a][d].mul(&sum);
                    }
                    out.push(acc.scale_re(0.5));
                }
            }
        }
        ChristoffelJets { dim, v: out }
    }

    /// Causal type of a tangent vector at `p`, with the relative null
    /// tolerance `TAU_NULL` measured against the absolute-value metric.
    pub fn causal_character(&self, p: &[f64], v: &[f64]) -> Result<CausalClass> {
        let val = self.eval_metric(p)?;
        let dim = self.dim();
        let mut q = 0.0;
        let mut scale = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                q += val.g[(i, j)] * v[i] * v[j];
                scale += val.g[(i, j)].abs() * v[i].abs() * v[j].abs();
            }
        }
        if scale == 0.0 {
            return Ok(CausalClass::Null); // the zero vector
        }
        Ok(if q.abs() <= TAU_NULL * scale {
            CausalClass::Null
        } else if q < 0.0 {
            CausalClass::Timelike
        } else {
            CausalClass::Spacelike
        })
    }

    /// Lower an index: `v -> g(v, .)`.
    pub fn flat(&self, p: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let val = self.eval_metric(p)?;
        let dim = self.dim();
        Ok((0..dim)
            .map(|i| (0..dim).map(|j| val.g[(i, j)] * v[j]).sum())
            .collect())
    }

    /// Raise an index: `xi -> g^-1(xi, .)`.
    pub fn sharp(&self, p: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        let val = self.eval_metric(p)?;
        let dim = self.dim();
        Ok((0..dim)
            .map(|i| (0..dim).map(|j| val.g_inv[(i, j)] * xi[j]).sum())
            .collect())
    }

    /// Inner product `g(u, w)` at `p`.
    pub fn inner(&self, p: &[f64], u: &[f64], w: &[f64]) -> Result<f64> {
        let val = self.eval_metric(p)?;
        let dim = self.dim();
        let mut acc = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                acc += val.g[(i, j)] * u[i] * w[j];
            }
        }
        Ok(acc)
    }

    /// Inverse inner product `g^-1(xi, eta)` at `p`.
    pub fn inner_inv(&self, p: &[f64], xi: &[f64], eta: &[f64]) -> Result<f64> {
        let val = self.eval_metric(p)?;
        let dim = self.dim();
        let mut acc = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                acc += val.g_inv[(i, j)] * xi[i] * eta[j];
            }
        }
        Ok(acc)
    }
}

/// Christoffel jets with the upper index first.
#[derive(Clone)]
pub struct ChristoffelJets {
    pub dim: usize,
    v: Vec<MultiPoly<f64>>,
}

impl ChristoffelJets {
    pub fn get(&self, a: usize, b: usize, c: usize) -> &MultiPoly<f64> {
        &self.v[(a * self.dim + b) * self.dim + c]
    }

    pub fn at_center(&self) -> Christoffel {
        let mut out = Christoffel::zero(self.dim);
        for a in 0..self.dim {
            for b in 0..self.dim {
                for c in 0..self.dim {
                    out.set(a, b, c, self.get(a, b, c).constant_term());
                }
            }
        }
        out
    }
}

fn christoffel_from_first_jets(
    dim: usize,
    g_jets: &PolyMat<f64>,
    g_inv: &DMatrix<f64>,
) -> Christoffel {
    // first derivatives are the linear coefficients of the jets
    let e_unit = |v: usize| {
        let mut e = [0u8; poly::MAX_VARS];
        e[v] = 1;
        e
    };
    let mut out = Christoffel::zero(dim);
    for a in 0..dim {
        for b in 0..dim {
            for c in 0..dim {
                let mut acc = 0.0;
                for d in 0..dim {
                    let dgdc_b = g_jets[d][c].coeff(&e_unit(b));
                    let dgdb_c = g_jets[d][b].coeff(&e_unit(c));
                    let dgbc_d = g_jets[b][c].coeff(&e_unit(d));
                    acc += g_inv[(a, d)] * (dgdc_b + dgdb_c - dgbc_d);
                }
                out.set(a, b, c, 0.5 * acc);
            }
        }
    }
    out
}

fn poly_to_expr(shape: &Arc<PolyShape>, coeffs: &[f64]) -> Expr {
    let mut acc: Option<Expr> = None;
    for (i, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let e = shape.exps[i];
        let mut term = Expr::Num(c);
        for v in 0..shape.nvars {
            for _ in 0..e[v] {
                term = Expr::Mul(Box::new(term), Box::new(Expr::Var(v)));
            }
        }
        acc = Some(match acc {
            None => term,
            Some(a) => Expr::Add(Box::new(a), Box::new(term)),
        });
    }
    acc.unwrap_or(Expr::Num(0.0))
}
