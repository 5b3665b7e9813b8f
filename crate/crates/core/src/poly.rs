//! Truncated multivariate polynomial (jet) arithmetic.
//!
//! Everything Taylor-shaped in the crate runs through [`MultiPoly`]: metric
//! expansions, Fermi chart maps, phase and amplitude jets, boundary graphs.
//! A polynomial lives in a [`PolyShape`]: a fixed number of variables
//! (at most three), a total-degree cap and optional per-variable caps.
//! Arithmetic is performed in the quotient ring where every monomial beyond
//! the caps is identified with zero, so products and compositions stay
//! exact within the retained degrees.
//!
//! Coefficients are generic over [`Scalar`] (`f64` for geometry, `Complex64`
//! for phases and amplitudes).

use num_complex::Complex64;
use std::collections::HashMap;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::sync::{Arc, Mutex, OnceLock};

pub const MAX_VARS: usize = 3;

/// Coefficient ring. Implemented for `f64` and `Complex64`.
pub trait Scalar:
    Copy
    + PartialEq
    + fmt::Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn zero() -> Self;
    fn one() -> Self;
    fn from_re(x: f64) -> Self;
    /// Construct from real and imaginary parts. Panics for `f64` when the
    /// imaginary part is nonzero.
    fn from_parts(re: f64, im: f64) -> Self;
    fn re(self) -> f64;
    fn im(self) -> f64;
    /// Modulus (absolute value) as an `f64`.
    fn modulus(self) -> f64;
    /// Principal square root. Panics for negative `f64` input.
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_re(x: f64) -> Self {
        x
    }
    fn from_parts(re: f64, im: f64) -> Self {
        assert!(im == 0.0, "imaginary part in real scalar");
        re
    }
    fn re(self) -> f64 {
        self
    }
    fn im(self) -> f64 {
        0.0
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn sqrt(self) -> Self {
        assert!(self >= 0.0, "square root of negative real");
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_re(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn from_parts(re: f64, im: f64) -> Self {
        Complex64::new(re, im)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn im(self) -> f64 {
        self.im
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn sqrt(self) -> Self {
        Complex64::sqrt(self)
    }
    fn exp(self) -> Self {
        Complex64::exp(self)
    }
}

/// Monomial basis for a fixed (nvars, caps) signature, cached globally.
///
/// Monomials are enumerated in graded lexicographic order. `index` maps a
/// packed exponent tuple to its slot, with `u16::MAX` marking truncated
/// monomials, so products can be folded with plain table lookups.
#[derive(Debug)]
pub struct PolyShape {
    pub nvars: usize,
    pub total_cap: usize,
    pub var_caps: [usize; MAX_VARS],
    pub exps: Vec<[u8; MAX_VARS]>,
    index: Vec<u16>,
    stride: usize,
}

impl PolyShape {
    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    fn pack(&self, e: &[u8; MAX_VARS]) -> usize {
        let s = self.stride;
        e[0] as usize + s * (e[1] as usize + s * e[2] as usize)
    }

    /// Slot of the monomial with exponents `e`, or `None` if truncated.
    pub fn slot(&self, e: &[u8; MAX_VARS]) -> Option<usize> {
        let total: usize = e.iter().map(|&x| x as usize).sum();
        if total > self.total_cap {
            return None;
        }
        for v in 0..MAX_VARS {
            if (e[v] as usize) > self.var_caps[v] {
                return None;
            }
        }
        let idx = self.index[self.pack(e)];
        if idx == u16::MAX {
            None
        } else {
            Some(idx as usize)
        }
    }

    pub fn total_degree(&self, slot: usize) -> usize {
        self.exps[slot].iter().map(|&x| x as usize).sum()
    }
}

type ShapeKey = (usize, usize, [usize; MAX_VARS]);

fn shape_cache() -> &'static Mutex<HashMap<ShapeKey, Arc<PolyShape>>> {
    static CACHE: OnceLock<Mutex<HashMap<ShapeKey, Arc<PolyShape>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Fetch (or build) the shared shape for `nvars` variables with the given
/// total cap and per-variable caps. Caps for variables beyond `nvars` are
/// forced to zero.
pub fn shape(nvars: usize, total_cap: usize, var_caps: &[usize]) -> Arc<PolyShape> {
    assert!(nvars >= 1 && nvars <= MAX_VARS, "1..=3 variables supported");
    assert!(total_cap <= 40, "degree cap out of range");
    let mut caps = [0usize; MAX_VARS];
    for v in 0..MAX_VARS {
        let c = if v < nvars {
            var_caps.get(v).copied().unwrap_or(total_cap)
        } else {
            0
        };
        caps[v] = c.min(total_cap);
    }
    let key = (nvars, total_cap, caps);
    let mut cache = shape_cache().lock().unwrap();
    if let Some(s) = cache.get(&key) {
        return Arc::clone(s);
    }

    let stride = total_cap + 1;
    let mut exps: Vec<[u8; MAX_VARS]> = Vec::new();
    for deg in 0..=total_cap {
        for e0 in (0..=caps[0].min(deg)).rev() {
            for e1 in (0..=caps[1].min(deg - e0)).rev() {
                let e2 = deg - e0 - e1;
                if e2 <= caps[2] {
                    exps.push([e0 as u8, e1 as u8, e2 as u8]);
                }
            }
        }
    }
    assert!(exps.len() < u16::MAX as usize, "monomial table too large");
    let mut index = vec![u16::MAX; stride * stride * stride];
    for (i, e) in exps.iter().enumerate() {
        let p = e[0] as usize + stride * (e[1] as usize + stride * e[2] as usize);
        index[p] = i as u16;
    }
    let s = Arc::new(PolyShape {
        nvars,
        total_cap,
        var_caps: caps,
        exps,
        index,
        stride,
    });
    cache.insert(key, Arc::clone(&s));
    s
}

/// Convenience: shape with no per-variable caps.
pub fn shape_total(nvars: usize, total_cap: usize) -> Arc<PolyShape> {
    shape(nvars, total_cap, &[total_cap; MAX_VARS])
}

/// A truncated polynomial over `S` in the monomial basis of its shape.
#[derive(Clone)]
pub struct MultiPoly<S: Scalar> {
    pub shape: Arc<PolyShape>,
    pub c: Vec<S>,
}

impl<S: Scalar> MultiPoly<S> {
    pub fn zero(shape: &Arc<PolyShape>) -> Self {
        MultiPoly {
            shape: Arc::clone(shape),
            c: vec![S::zero(); shape.len()],
        }
    }

    pub fn constant(shape: &Arc<PolyShape>, value: S) -> Self {
        let mut p = Self::zero(shape);
        p.c[0] = value;
        p
    }

    /// The coordinate polynomial `x_v`.
    pub fn var(shape: &Arc<PolyShape>, v: usize) -> Self {
        assert!(v < shape.nvars);
        let mut p = Self::zero(shape);
        let mut e = [0u8; MAX_VARS];
        e[v] = 1;
        let slot = shape.slot(&e).expect("variable exceeds caps");
        p.c[slot] = S::one();
        p
    }

    pub fn constant_term(&self) -> S {
        self.c[0]
    }

    pub fn coeff(&self, e: &[u8; MAX_VARS]) -> S {
        match self.shape.slot(e) {
            Some(i) => self.c[i],
            None => S::zero(),
        }
    }

    pub fn set_coeff(&mut self, e: &[u8; MAX_VARS], value: S) {
        let i = self.shape.slot(e).expect("monomial outside shape");
        self.c[i] = value;
    }

    pub fn add_coeff(&mut self, e: &[u8; MAX_VARS], value: S) {
        if let Some(i) = self.shape.slot(e) {
            self.c[i] += value;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|c| c.modulus() == 0.0)
    }

    /// Largest coefficient modulus.
    pub fn max_coeff(&self) -> f64 {
        self.c.iter().map(|c| c.modulus()).fold(0.0, f64::max)
    }

    pub fn scale(&self, k: S) -> Self {
        let mut out = self.clone();
        for c in &mut out.c {
            *c *= k;
        }
        out
    }

    pub fn scale_re(&self, k: f64) -> Self {
        self.scale(S::from_re(k))
    }

    /// Truncated product.
    pub fn mul(&self, other: &Self) -> Self {
        assert!(Arc::ptr_eq(&self.shape, &other.shape), "shape mismatch");
        let sh = &self.shape;
        let mut out = Self::zero(&self.shape);
        for (ia, &ca) in self.c.iter().enumerate() {
            if ca.modulus() == 0.0 {
                continue;
            }
            let ea = sh.exps[ia];
            for (ib, &cb) in other.c.iter().enumerate() {
                if cb.modulus() == 0.0 {
                    continue;
                }
                let eb = sh.exps[ib];
                let e = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]];
                if let Some(slot) = sh.slot(&e) {
                    out.c[slot] += ca * cb;
                }
            }
        }
        out
    }

    /// Partial derivative with respect to variable `v`.
    pub fn deriv(&self, v: usize) -> Self {
        assert!(v < self.shape.nvars);
        let sh = &self.shape;
        let mut out = Self::zero(&self.shape);
        for (i, &c) in self.c.iter().enumerate() {
            if c.modulus() == 0.0 {
                continue;
            }
            let mut e = sh.exps[i];
            if e[v] == 0 {
                continue;
            }
            let k = e[v] as f64;
            e[v] -= 1;
            let slot = sh.slot(&e).expect("derivative stays in shape");
            out.c[slot] += c * S::from_re(k);
        }
        out
    }

    /// Evaluate at a point (length `nvars`).
    pub fn eval(&self, x: &[S]) -> S {
        assert_eq!(x.len(), self.shape.nvars);
        let sh = &self.shape;
        let mut pows: [Vec<S>; MAX_VARS] = [Vec::new(), Vec::new(), Vec::new()];
        for v in 0..sh.nvars {
            let mut p = Vec::with_capacity(sh.var_caps[v] + 1);
            p.push(S::one());
            for k in 1..=sh.var_caps[v] {
                let prev = p[k - 1];
                p.push(prev * x[v]);
            }
            pows[v] = p;
        }
        let mut acc = S::zero();
        for (i, &c) in self.c.iter().enumerate() {
            if c.modulus() == 0.0 {
                continue;
            }
            let e = sh.exps[i];
            let mut term = c;
            for v in 0..sh.nvars {
                if e[v] > 0 {
                    term *= pows[v][e[v] as usize];
                }
            }
            acc += term;
        }
        acc
    }

    /// Keep only monomials whose exponents satisfy the predicate.
    pub fn filter<F: Fn(&[u8; MAX_VARS]) -> bool>(&self, keep: F) -> Self {
        let mut out = self.clone();
        for (i, c) in out.c.iter_mut().enumerate() {
            if !keep(&self.shape.exps[i]) {
                *c = S::zero();
            }
        }
        out
    }

    /// Map coefficients into another scalar type.
    pub fn map<T: Scalar, F: Fn(S) -> T>(&self, f: F) -> MultiPoly<T> {
        MultiPoly {
            shape: Arc::clone(&self.shape),
            c: self.c.iter().map(|&c| f(c)).collect(),
        }
    }

    /// Re-shape into `target`, dropping truncated monomials.
    pub fn reshape(&self, target: &Arc<PolyShape>) -> Self {
        let mut out = Self::zero(target);
        for (i, &c) in self.c.iter().enumerate() {
            if c.modulus() == 0.0 {
                continue;
            }
            if let Some(slot) = target.slot(&self.shape.exps[i]) {
                out.c[slot] += c;
            }
        }
        out
    }

    /// Compose a univariate analytic series with this polynomial:
    /// `sum_k series[k] * (self - self_0)^k` where `self_0` is the constant
    /// term and `series` holds the Taylor coefficients of the outer function
    /// at `self_0`.
    pub fn analytic(&self, series: &[S]) -> Self {
        let mut dev = self.clone();
        dev.c[0] = S::zero();
        let mut acc = Self::constant(&self.shape, *series.last().expect("empty series"));
        for k in (0..series.len() - 1).rev() {
            acc = acc.mul(&dev);
            acc.c[0] += series[k];
        }
        acc
    }

    /// Truncated reciprocal. The constant term must be nonzero.
    pub fn recip(&self) -> Self {
        let c0 = self.constant_term();
        assert!(c0.modulus() > 0.0, "reciprocal of zero constant term");
        let n = self.shape.total_cap + 1;
        let inv = S::one() / c0;
        let mut series = Vec::with_capacity(n);
        let mut cur = inv;
        for _ in 0..n {
            series.push(cur);
            cur = cur * (-inv);
        }
        self.analytic(&series)
    }

    /// Truncated square root, principal branch seeded at the constant term.
    pub fn sqrt(&self) -> Self {
        let c0 = self.constant_term();
        assert!(c0.modulus() > 0.0, "square root needs nonzero constant term");
        let n = self.shape.total_cap + 1;
        let mut series = Vec::with_capacity(n);
        let mut coef = c0.sqrt();
        series.push(coef);
        let invc = S::one() / c0;
        for k in 1..n {
            coef = coef * S::from_re((0.5 - (k as f64 - 1.0)) / k as f64) * invc;
            series.push(coef);
        }
        self.analytic(&series)
    }

    /// General composition: substitute `args[v]` for variable `v`. All args
    /// must share one shape, which becomes the shape of the result.
    pub fn compose(&self, args: &[MultiPoly<S>]) -> MultiPoly<S> {
        assert_eq!(args.len(), self.shape.nvars);
        let mut cache = PowerCache::new(args);
        self.compose_cached(&mut cache)
    }

    /// Composition re-using a power cache (cheaper when many polynomials are
    /// composed with the same argument tuple).
    pub fn compose_cached(&self, cache: &mut PowerCache<S>) -> MultiPoly<S> {
        assert_eq!(cache.args.len(), self.shape.nvars);
        let out_shape = Arc::clone(&cache.shape);
        let mut acc = MultiPoly::zero(&out_shape);
        for (i, &c) in self.c.iter().enumerate() {
            if c.modulus() == 0.0 {
                continue;
            }
            let e = self.shape.exps[i];
            let mono = cache.monomial(&e);
            for (slot, &m) in mono.c.iter().enumerate() {
                acc.c[slot] += c * m;
            }
        }
        acc
    }
}

/// Shared powers of a fixed argument tuple, used to batch compositions.
pub struct PowerCache<S: Scalar> {
    args: Vec<MultiPoly<S>>,
    shape: Arc<PolyShape>,
    memo: HashMap<[u8; MAX_VARS], Arc<MultiPoly<S>>>,
}

impl<S: Scalar> PowerCache<S> {
    pub fn new(args: &[MultiPoly<S>]) -> Self {
        assert!(!args.is_empty());
        let shape = Arc::clone(&args[0].shape);
        for a in args {
            assert!(Arc::ptr_eq(&a.shape, &shape), "argument shape mismatch");
        }
        PowerCache {
            args: args.to_vec(),
            shape,
            memo: HashMap::new(),
        }
    }

    fn monomial(&mut self, e: &[u8; MAX_VARS]) -> Arc<MultiPoly<S>> {
        if let Some(m) = self.memo.get(e) {
            return Arc::clone(m);
        }
        let value = if e.iter().all(|&x| x == 0) {
            MultiPoly::constant(&self.shape, S::one())
        } else {
            let mut v = 0;
            for i in 0..MAX_VARS {
                if e[i] > 0 {
                    v = i;
                }
            }
            let mut e_prev = *e;
            e_prev[v] -= 1;
            let prev = self.monomial(&e_prev);
            prev.mul(&self.args[v])
        };
        let value = Arc::new(value);
        self.memo.insert(*e, Arc::clone(&value));
        value
    }
}

impl<S: Scalar> Add for &MultiPoly<S> {
    type Output = MultiPoly<S>;
    fn add(self, rhs: Self) -> MultiPoly<S> {
        assert!(Arc::ptr_eq(&self.shape, &rhs.shape));
        let mut out = self.clone();
        for (a, b) in out.c.iter_mut().zip(rhs.c.iter()) {
            *a += *b;
        }
        out
    }
}

impl<S: Scalar> Sub for &MultiPoly<S> {
    type Output = MultiPoly<S>;
    fn sub(self, rhs: Self) -> MultiPoly<S> {
        assert!(Arc::ptr_eq(&self.shape, &rhs.shape));
        let mut out = self.clone();
        for (a, b) in out.c.iter_mut().zip(rhs.c.iter()) {
            *a -= *b;
        }
        out
    }
}

impl<S: Scalar> Neg for &MultiPoly<S> {
    type Output = MultiPoly<S>;
    fn neg(self) -> MultiPoly<S> {
        let mut out = self.clone();
        for a in &mut out.c {
            *a = -*a;
        }
        out
    }
}

impl<S: Scalar> fmt::Debug for MultiPoly<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, c) in self.c.iter().enumerate() {
            if c.modulus() == 0.0 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            let e = self.shape.exps[i];
            write!(f, "{:?}", c)?;
            for v in 0..self.shape.nvars {
                if e[v] > 0 {
                    write!(f, "*x{}^{}", v, e[v])?;
                }
            }
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Square matrices over the truncated polynomial ring, stored row-major.
pub type PolyMat<S> = Vec<Vec<MultiPoly<S>>>;

pub fn mat_mul<S: Scalar>(a: &PolyMat<S>, b: &PolyMat<S>) -> PolyMat<S> {
    let n = a.len();
    let sh = &a[0][0].shape;
    let mut out = vec![vec![MultiPoly::zero(sh); n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = MultiPoly::zero(sh);
            for k in 0..n {
                acc = &acc + &a[i][k].mul(&b[k][j]);
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn mat_identity<S: Scalar>(n: usize, sh: &Arc<PolyShape>) -> PolyMat<S> {
    let mut out = vec![vec![MultiPoly::zero(sh); n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        row[i] = MultiPoly::constant(sh, S::one());
    }
    out
}

pub fn mat_det<S: Scalar>(m: &PolyMat<S>) -> MultiPoly<S> {
    match m.len() {
        1 => m[0][0].clone(),
        2 => &m[0][0].mul(&m[1][1]) - &m[0][1].mul(&m[1][0]),
        3 => {
            let c0 = &m[1][1].mul(&m[2][2]) - &m[1][2].mul(&m[2][1]);
            let c1 = &m[1][0].mul(&m[2][2]) - &m[1][2].mul(&m[2][0]);
            let c2 = &m[1][0].mul(&m[2][1]) - &m[1][1].mul(&m[2][0]);
            let t0 = m[0][0].mul(&c0);
            let t1 = m[0][1].mul(&c1);
            let t2 = m[0][2].mul(&c2);
            &(&t0 - &t1) + &t2
        }
        n => panic!("determinant only implemented for n <= 3, got {n}"),
    }
}

fn const_mat_inverse<S: Scalar>(m: &[Vec<S>]) -> Vec<Vec<S>> {
    let n = m.len();
    match n {
        1 => vec![vec![S::one() / m[0][0]]],
        2 => {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            assert!(det.modulus() > 0.0, "singular 2x2 constant term");
            let inv = S::one() / det;
            vec![
                vec![m[1][1] * inv, -m[0][1] * inv],
                vec![-m[1][0] * inv, m[0][0] * inv],
            ]
        }
        3 => {
            let c = |i: usize, j: usize| m[i][j];
            let a00 = c(1, 1) * c(2, 2) - c(1, 2) * c(2, 1);
            let a01 = c(0, 2) * c(2, 1) - c(0, 1) * c(2, 2);
            let a02 = c(0, 1) * c(1, 2) - c(0, 2) * c(1, 1);
            let a10 = c(1, 2) * c(2, 0) - c(1, 0) * c(2, 2);
            let a11 = c(0, 0) * c(2, 2) - c(0, 2) * c(2, 0);
            let a12 = c(0, 2) * c(1, 0) - c(0, 0) * c(1, 2);
            let a20 = c(1, 0) * c(2, 1) - c(1, 1) * c(2, 0);
            let a21 = c(0, 1) * c(2, 0) - c(0, 0) * c(2, 1);
            let a22 = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
            let det = c(0, 0) * a00 + c(0, 1) * a10 + c(0, 2) * a20;
            assert!(det.modulus() > 0.0, "singular 3x3 constant term");
            let inv = S::one() / det;
            vec![
                vec![a00 * inv, a01 * inv, a02 * inv],
                vec![a10 * inv, a11 * inv, a12 * inv],
                vec![a20 * inv, a21 * inv, a22 * inv],
            ]
        }
        _ => panic!("inverse only implemented for n <= 3"),
    }
}

/// Inverse of a polynomial matrix whose constant term is invertible.
/// `M = M0 (I + M0^-1 dM)` with `dM` nilpotent in the truncated ring, so the
/// Neumann series terminates exactly at the degree cap.
pub fn mat_inverse<S: Scalar>(m: &PolyMat<S>) -> PolyMat<S> {
    let n = m.len();
    let sh = Arc::clone(&m[0][0].shape);
    let m0: Vec<Vec<S>> = m
        .iter()
        .map(|row| row.iter().map(|p| p.constant_term()).collect())
        .collect();
    let m0_inv = const_mat_inverse(&m0);
    let m0_inv_poly: PolyMat<S> = m0_inv
        .iter()
        .map(|row| {
            row.iter()
                .map(|&v| MultiPoly::constant(&sh, v))
                .collect::<Vec<_>>()
        })
        .collect();
    // N = -M0^-1 dM, zero constant term
    let mut dm = m.to_vec();
    for (i, row) in dm.iter_mut().enumerate() {
        for (j, p) in row.iter_mut().enumerate() {
            p.c[0] -= m0[i][j];
        }
    }
    let mut nmat = mat_mul(&m0_inv_poly, &dm);
    for row in &mut nmat {
        for p in row.iter_mut() {
            *p = -&*p;
        }
    }
    // sum_k N^k, exact at k = cap
    let mut acc = mat_identity::<S>(n, &sh);
    let mut pow = mat_identity::<S>(n, &sh);
    for _ in 0..sh.total_cap {
        pow = mat_mul(&pow, &nmat);
        if pow.iter().all(|row| row.iter().all(|p| p.is_zero())) {
            break;
        }
        for i in 0..n {
            for j in 0..n {
                acc[i][j] = &acc[i][j] + &pow[i][j];
            }
        }
    }
    mat_mul(&acc, &m0_inv_poly)
}

/// Taylor coefficients of `exp` about `center`, `n` terms.
pub fn series_exp<S: Scalar>(center: S, n: usize) -> Vec<S> {
    let e0 = center.exp();
    let mut s = Vec::with_capacity(n);
    let mut fact = 1.0;
    for k in 0..n {
        if k > 0 {
            fact *= k as f64;
        }
        s.push(e0 * S::from_re(1.0 / fact));
    }
    s
}

/// Taylor coefficients of `sin` and `cos` about `center`, `n` terms each.
pub fn series_sin_cos(center: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (s0, c0) = center.sin_cos();
    let mut sin_s = Vec::with_capacity(n);
    let mut cos_s = Vec::with_capacity(n);
    let mut fact = 1.0;
    for k in 0..n {
        if k > 0 {
            fact *= k as f64;
        }
        let (ds, dc) = match k % 4 {
            0 => (s0, c0),
            1 => (c0, -s0),
            2 => (-s0, -c0),
            _ => (-c0, s0),
        };
        sin_s.push(ds / fact);
        cos_s.push(dc / fact);
    }
    (sin_s, cos_s)
}

/// Taylor coefficients of `ln` about a positive center.
pub fn series_log(center: f64, n: usize) -> Vec<f64> {
    assert!(center > 0.0, "log series needs positive center");
    let mut s = Vec::with_capacity(n);
    s.push(center.ln());
    for k in 1..n {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        s.push(sign / (k as f64 * center.powi(k as i32)));
    }
    s
}

/// Taylor coefficients of `tanh` about `center` via f' = 1 - f^2.
pub fn series_tanh(center: f64, n: usize) -> Vec<f64> {
    let mut s = vec![0.0; n];
    s[0] = center.tanh();
    for k in 0..n.saturating_sub(1) {
        let mut sq = 0.0;
        for j in 0..=k {
            sq += s[j] * s[k - j];
        }
        let one = if k == 0 { 1.0 } else { 0.0 };
        s[k + 1] = (one - sq) / (k + 1) as f64;
    }
    s
}

/// Taylor coefficients of `x^p` about a positive center.
pub fn series_pow(center: f64, p: f64, n: usize) -> Vec<f64> {
    assert!(center > 0.0, "pow series needs positive center");
    let mut s = Vec::with_capacity(n);
    let mut c = center.powf(p);
    s.push(c);
    for k in 1..n {
        c = c * (p - (k as f64 - 1.0)) / (k as f64) / center;
        s.push(c);
    }
    s
}
