//! Forward machinery on the product spacetime: leapfrog linear wave solves
//! (forward and backward, with source), boundary-data extension into a
//! collar, the Picard iteration for the semilinear problem, Neumann traces
//! and the partial Dirichlet-to-Neumann map.
//!
//! The operator is the divergence form of the d'Alembertian for
//! g = -beta dt^2 + g0: multiplying through by w = sqrt(beta det g0),
//!
//!   w Box u = -d_t(a d_t u) + d_i(b^{ij} d_j u),   a = w / beta,
//!   b = w g0^{-1},
//!
//! discretized with centered second-order differences and time-staggered
//! a coefficients. Dirichlet values are imposed strongly on boundary
//! nodes; Neumann traces use one-sided second-order differences along the
//! unit outward conormal.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{Domain, GridField, Lattice};
use crate::spacetime::MetricSpec;

/// Truncated power series V(t,x,z) = sum_k V_k(t,x) z^k / k!, k >= 3.
#[derive(Clone)]
pub struct NonlinearitySpec {
    pub k_max: usize,
    /// (k, real samples of V_k on the lattice), ascending in k.
    terms: Vec<(usize, Vec<f64>)>,
    lattice: Arc<Lattice>,
}

impl NonlinearitySpec {
    pub fn zero(lattice: &Arc<Lattice>, k_max: usize) -> NonlinearitySpec {
        NonlinearitySpec {
            k_max,
            terms: Vec::new(),
            lattice: lattice.clone(),
        }
    }

    /// Sample coefficient expressions in the variables t, x (and y).
    pub fn from_exprs(
        lattice: &Arc<Lattice>,
        coeffs: &[(usize, &Expr)],
        k_max: usize,
    ) -> Result<NonlinearitySpec> {
        let mut spec = NonlinearitySpec::zero(lattice, k_max);
        for &(k, expr) in coeffs {
            spec.push_sampled(k, |p| {
                let q = [p[0], p[1], if p.len() > 2 { p[2] } else { 0.0 }];
                Ok(expr.eval(&q))
            })?;
        }
        Ok(spec)
    }

    pub fn from_fn(
        lattice: &Arc<Lattice>,
        k: usize,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<NonlinearitySpec> {
        let mut spec = NonlinearitySpec::zero(lattice, k);
        spec.push_sampled(k, |p| Ok(f(p)))?;
        Ok(spec)
    }

    pub fn push_sampled(
        &mut self,
        k: usize,
        f: impl Fn(&[f64]) -> Result<f64>,
    ) -> Result<()> {
        if k < 3 {
            return Err(Error::Config(format!(
                "nonlinearity coefficients start at the cubic term, got k = {k}"
            )));
        }
        if k > self.k_max {
            return Err(Error::Config(format!(
                "coefficient k = {k} beyond the truncation order {}",
                self.k_max
            )));
        }
        let lat = &self.lattice;
        let mut samples = vec![0.0; lat.len()];
        for it in 0..lat.nt {
            for iy in 0..lat.ny {
                for ix in 0..lat.nx {
                    samples[lat.idx(it, ix, iy)] = f(&lat.point(it, ix, iy))?;
                }
            }
        }
        self.terms.retain(|(kk, _)| *kk != k);
        self.terms.push((k, samples));
        self.terms.sort_by_key(|(kk, _)| *kk);
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    /// V(node, z) with the 1/k! normalization.
    pub fn eval(&self, node: usize, z: Complex64) -> Complex64 {
        let mut out = Complex64::new(0.0, 0.0);
        for (k, samples) in &self.terms {
            let mut fact = 1.0;
            for j in 2..=*k {
                fact *= j as f64;
            }
            out += z.powu(*k as u32) * (samples[node] / fact);
        }
        out
    }

    pub fn coefficient(&self, k: usize) -> Option<&[f64]> {
        self.terms
            .iter()
            .find(|(kk, _)| *kk == k)
            .map(|(_, s)| s.as_slice())
    }

    pub fn max_coefficient(&self) -> f64 {
        self.terms
            .iter()
            .flat_map(|(_, s)| s.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// One boundary node of the spatial lattice: indices, the wall it sits on
/// (axis + side) and whether it is a corner (Rect only).
#[derive(Debug, Clone, Copy)]
pub struct BoundaryNode {
    pub ix: usize,
    pub iy: usize,
    /// 0 = x lower, 1 = x upper, 2 = y lower, 3 = y upper.
    pub wall: usize,
    pub corner: bool,
}

/// Boundary nodes of a lattice, in a fixed traversal order.
pub fn boundary_nodes(lattice: &Lattice) -> Result<Vec<BoundaryNode>> {
    match lattice.domain {
        Domain::Interval { .. } => Ok(vec![
            BoundaryNode { ix: 0, iy: 0, wall: 0, corner: false },
            BoundaryNode { ix: lattice.nx - 1, iy: 0, wall: 1, corner: false },
        ]),
        Domain::Rect { .. } => {
            let (nx, ny) = (lattice.nx, lattice.ny);
            let mut out = Vec::with_capacity(2 * (nx + ny) - 4);
            for iy in 0..ny {
                let corner = iy == 0 || iy == ny - 1;
                out.push(BoundaryNode { ix: 0, iy, wall: 0, corner });
                out.push(BoundaryNode { ix: nx - 1, iy, wall: 1, corner });
            }
            for ix in 1..nx - 1 {
                out.push(BoundaryNode { ix, iy: 0, wall: 2, corner: false });
                out.push(BoundaryNode { ix, iy: ny - 1, wall: 3, corner: false });
            }
            Ok(out)
        }
        Domain::Disk { .. } => Err(Error::Unsupported(
            "the difference solver runs on interval and rectangle domains".into(),
        )),
    }
}

/// Dirichlet data on the lateral boundary: samples over (time, boundary
/// node), a region mask for the controlled window, and the number of
/// discrete vanishing time derivatives at t = 0.
#[derive(Clone)]
pub struct BoundaryData {
    pub lattice: Arc<Lattice>,
    pub nodes: Arc<Vec<BoundaryNode>>,
    /// nt x nodes.len(), row-major in time.
    pub values: Vec<Complex64>,
    /// Controlled-region mask per boundary node.
    pub gamma: Vec<bool>,
    pub s_data: usize,
}

impl BoundaryData {
    pub fn zero(lattice: &Arc<Lattice>) -> Result<BoundaryData> {
        let nodes = Arc::new(boundary_nodes(lattice)?);
        let nb = nodes.len();
        Ok(BoundaryData {
            lattice: lattice.clone(),
            nodes,
            values: vec![Complex64::new(0.0, 0.0); lattice.nt * nb],
            gamma: vec![true; nb],
            s_data: usize::MAX,
        })
    }

    /// Sample f(t, x) on boundary nodes selected by the gamma predicate;
    /// nodes outside gamma stay zero. Checks the discrete compatibility
    /// orders 0..=s_data at t = 0.
    pub fn from_fn(
        lattice: &Arc<Lattice>,
        gamma: impl Fn(&BoundaryNode, &[f64]) -> bool,
        f: impl Fn(f64, &[f64]) -> Complex64,
        s_data: usize,
    ) -> Result<BoundaryData> {
        let mut data = BoundaryData::zero(lattice)?;
        data.s_data = s_data;
        let nodes = data.nodes.clone();
        let nb = nodes.len();
        for (j, node) in nodes.iter().enumerate() {
            let p = lattice.point(0, node.ix, node.iy);
            if !gamma(node, &p[1..]) {
                data.gamma[j] = false;
                continue;
            }
            for it in 0..lattice.nt {
                data.values[it * nb + j] = f(lattice.t(it), &p[1..]);
            }
        }
        let defect = data.compatibility_defect();
        if defect > 1e-3 {
            return Err(Error::Config(format!(
                "boundary data violates {}-order compatibility at t = 0: \
                 initial difference quotients reach {defect:.3e} of their sup over time",
                s_data
            )));
        }
        Ok(data)
    }

    /// Linear combination sum c_i f_i; inputs must share the lattice.
    pub fn combine(parts: &[(f64, &BoundaryData)]) -> Result<BoundaryData> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Config("empty boundary-data combination".into()))?
            .1;
        let mut out = BoundaryData::zero(&first.lattice)?;
        out.s_data = parts.iter().map(|(_, f)| f.s_data).min().unwrap();
        for j in 0..out.gamma.len() {
            out.gamma[j] = parts.iter().any(|(_, f)| f.gamma[j]);
        }
        for (c, f) in parts {
            if f.values.len() != out.values.len() {
                return Err(Error::Dimension(
                    "boundary data on different lattices".into(),
                ));
            }
            for (o, v) in out.values.iter_mut().zip(&f.values) {
                *o += v * *c;
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, c: f64) -> BoundaryData {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= c;
        }
        out
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Scale-free compatibility measure: for each boundary node and each
    /// order l = 0..=s_data, the l-th forward difference at t = 0 relative
    /// to the sup of that difference over the whole time series. Data whose
    /// first l derivatives genuinely vanish at t = 0 score near zero; the
    /// time-step power cancels in the quotient.
    pub fn compatibility_defect(&self) -> f64 {
        if self.s_data == usize::MAX {
            return 0.0;
        }
        let nb = self.nodes.len();
        let orders = self.s_data.min(self.lattice.nt - 1);
        let mut worst = 0.0f64;
        for j in 0..nb {
            let mut row: Vec<Complex64> = (0..self.lattice.nt)
                .map(|it| self.values[it * nb + j])
                .collect();
            for _l in 0..=orders {
                let typical = row.iter().map(|v| v.norm()).fold(0.0, f64::max);
                if typical > 0.0 {
                    worst = worst.max(row[0].norm() / typical);
                }
                for i in 0..row.len() - 1 {
                    row[i] = row[i + 1] - row[i];
                }
                row.pop();
                if row.is_empty() {
                    break;
                }
            }
        }
        worst
    }
}

fn spatial_len(lattice: &Lattice) -> usize {
    lattice.nx * lattice.ny
}

/// Precomputed divergence-form coefficients of w Box on a lattice.
pub struct WaveOp {
    pub lattice: Arc<Lattice>,
    pub nodes: Arc<Vec<BoundaryNode>>,
    /// a = w/beta at t = (m + 1/2) dt for m = -1..nt-1; row index m + 1.
    a_half: Vec<f64>,
    /// b = w g0^{-1} at integer times: [xx] for n=1, [xx, yy, xy] for n=2.
    b: Vec<f64>,
    pub(crate) ncomp: usize,
    /// w = sqrt(beta det g0) at integer times.
    pub(crate) w: Vec<f64>,
    /// Spatial metric g0 (lower index) per node, for conormal traces.
    pub(crate) g0_lower: Vec<f64>,
    pub cfl: f64,
    pub collar_cells: usize,
}

impl WaveOp {
    pub fn new(spec: &MetricSpec, lattice: &Arc<Lattice>) -> Result<WaveOp> {
        let n = lattice.n();
        if spec.n != n {
            return Err(Error::Dimension(format!(
                "metric has n = {}, lattice has n = {n}",
                spec.n
            )));
        }
        let nodes = Arc::new(boundary_nodes(lattice)?);
        let ns = spatial_len(lattice);
        let ncomp = if n == 1 { 1 } else { 3 };
        let dt = lattice.dt();

        let mut a_half = vec![0.0; (lattice.nt + 1) * ns];
        let mut b = vec![0.0; lattice.nt * ns * ncomp];
        let mut w = vec![0.0; lattice.nt * ns];
        let mut g0_lower = vec![0.0; lattice.nt * ns * ncomp];
        let mut cfl2_max = 0.0f64;
        let inv_dx2 = 1.0 / (lattice.dx() * lattice.dx());
        let inv_dy2 = if n == 2 {
            1.0 / (lattice.dy() * lattice.dy())
        } else {
            0.0
        };

        for iy in 0..lattice.ny {
            for ix in 0..lattice.nx {
                let is = iy * lattice.nx + ix;
                let mut p = lattice.point(0, ix, iy);
                for row in 0..=lattice.nt {
                    p[0] = (row as f64 - 0.5) * dt;
                    let val = spec.eval_metric(&p)?;
                    a_half[row * ns + is] = val.sqrt_abs_det / val.beta;
                }
                for it in 0..lattice.nt {
                    p[0] = lattice.t(it);
                    let val = spec.eval_metric(&p)?;
                    let node = it * ns + is;
                    w[node] = val.sqrt_abs_det;
                    b[node * ncomp] = val.sqrt_abs_det * val.g_inv[(1, 1)];
                    g0_lower[node * ncomp] = val.g[(1, 1)];
                    let mut cfl2 = val.beta * val.g_inv[(1, 1)] * inv_dx2;
                    if n == 2 {
                        b[node * ncomp + 1] = val.sqrt_abs_det * val.g_inv[(2, 2)];
                        b[node * ncomp + 2] = val.sqrt_abs_det * val.g_inv[(1, 2)];
                        g0_lower[node * ncomp + 1] = val.g[(2, 2)];
                        g0_lower[node * ncomp + 2] = val.g[(1, 2)];
                        cfl2 += val.beta * val.g_inv[(2, 2)] * inv_dy2;
                    }
                    cfl2_max = cfl2_max.max(cfl2);
                }
            }
        }
        let cfl = dt * cfl2_max.sqrt();
        if cfl > 0.9 {
            return Err(Error::Config(format!(
                "CFL number {cfl:.3} exceeds 0.9; refine the time step"
            )));
        }
        Ok(WaveOp {
            lattice: lattice.clone(),
            nodes,
            a_half,
            b,
            ncomp,
            w,
            g0_lower,
            cfl,
            collar_cells: 8,
        })
    }

    fn is_boundary(&self, ix: usize, iy: usize) -> bool {
        let lat = &self.lattice;
        ix == 0
            || ix == lat.nx - 1
            || (lat.n() == 2 && (iy == 0 || iy == lat.ny - 1))
    }

    /// d_i(b^{ij} d_j u) at an interior node, centered second order.
    fn spatial_at(&self, it: usize, u: &[Complex64], ix: usize, iy: usize) -> Complex64 {
        let lat = &self.lattice;
        let nx = lat.nx;
        let ns = spatial_len(lat);
        let row = it * ns;
        let is = iy * nx + ix;
        let bx = |i: usize| self.b[(row + i) * self.ncomp];
        let inv_dx2 = 1.0 / (lat.dx() * lat.dx());
        let mut acc = ((u[is + 1] - u[is]) * (0.5 * (bx(is) + bx(is + 1)))
            - (u[is] - u[is - 1]) * (0.5 * (bx(is) + bx(is - 1))))
            * inv_dx2;
        if lat.n() == 2 {
            let by = |i: usize| self.b[(row + i) * self.ncomp + 1];
            let bxy = |i: usize| self.b[(row + i) * self.ncomp + 2];
            let inv_dy2 = 1.0 / (lat.dy() * lat.dy());
            acc += ((u[is + nx] - u[is]) * (0.5 * (by(is) + by(is + nx)))
                - (u[is] - u[is - nx]) * (0.5 * (by(is) + by(is - nx))))
                * inv_dy2;
            let inv_4dxdy = 0.25 / (lat.dx() * lat.dy());
            // d_x(bxy d_y u) + d_y(bxy d_x u), centered
            acc += ((u[is + 1 + nx] - u[is + 1 - nx]) * bxy(is + 1)
                - (u[is - 1 + nx] - u[is - 1 - nx]) * bxy(is - 1))
                * inv_4dxdy;
            acc += ((u[is + nx + 1] - u[is + nx - 1]) * bxy(is + nx)
                - (u[is - nx + 1] - u[is - nx - 1]) * bxy(is - nx))
                * inv_4dxdy;
        }
        acc
    }

    /// Discrete Box u with the solver's stencil: interior nodes of interior
    /// time rows; zero on boundary nodes and the first/last rows.
    pub fn box_field(&self, u: &GridField) -> GridField {
        let lat = &self.lattice;
        let ns = spatial_len(lat);
        let dt = lat.dt();
        let mut out = GridField::zeros(&self.lattice);
        for it in 1..lat.nt - 1 {
            let um = &u.data[(it - 1) * ns..it * ns];
            let uc = &u.data[it * ns..(it + 1) * ns];
            let up = &u.data[(it + 1) * ns..(it + 2) * ns];
            for iy in 0..lat.ny {
                for ix in 0..lat.nx {
                    if self.is_boundary(ix, iy) {
                        continue;
                    }
                    let is = iy * lat.nx + ix;
                    let ap = self.a_half[(it + 1) * ns + is];
                    let am = self.a_half[it * ns + is];
                    let dtt = ((up[is] - uc[is]) * ap - (uc[is] - um[is]) * am)
                        / (dt * dt);
                    let sp = self.spatial_at(it, uc, ix, iy);
                    out.data[it * ns + is] = (sp - dtt) / self.w[it * ns + is];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Smooth collar extension of Dirichlet data: h agrees with f on the
/// boundary, falls to zero within collar_cells, and is zero elsewhere.
pub fn extend_boundary_data(op: &WaveOp, f: &BoundaryData) -> Result<GridField> {
    let lat = &op.lattice;
    let nb = op.nodes.len();
    if f.nodes.len() != nb || f.lattice.len() != lat.len() {
        return Err(Error::Dimension("boundary data on a different lattice".into()));
    }
    let collar = op.collar_cells as f64;
    let profile = |cells: f64| crate::beam::cutoff(0.5 * cells / collar).0;

    // Rect: reject controlled nodes too close to a corner, where per-wall
    // normal extensions would overlap.
    if lat.n() == 2 {
        for (j, node) in op.nodes.iter().enumerate() {
            let active = f.gamma[j]
                && (0..lat.nt).any(|it| f.values[it * nb + j].norm() > 0.0);
            if !active {
                continue;
            }
            let (tx, ty) = (node.ix.min(lat.nx - 1 - node.ix), node.iy.min(lat.ny - 1 - node.iy));
            let tangential = if node.wall < 2 { ty } else { tx };
            if tangential < op.collar_cells {
                return Err(Error::Config(format!(
                    "controlled boundary node ({}, {}) is within the {}-cell collar of a corner",
                    node.ix, node.iy, op.collar_cells
                )));
            }
        }
    }

    let mut h = GridField::zeros(lat);
    for (j, node) in op.nodes.iter().enumerate() {
        if node.corner {
            continue;
        }
        let any = (0..lat.nt).any(|it| f.values[it * nb + j].norm() > 0.0);
        if !any {
            continue;
        }
        // walk inward along the wall normal
        let (step_x, step_y): (isize, isize) = match node.wall {
            0 => (1, 0),
            1 => (-1, 0),
            2 => (0, 1),
            _ => (0, -1),
        };
        for c in 0..=op.collar_cells {
            let p = profile(c as f64);
            if p == 0.0 {
                break;
            }
            let ix = (node.ix as isize + step_x * c as isize) as usize;
            let iy = (node.iy as isize + step_y * c as isize) as usize;
            for it in 0..lat.nt {
                h.data[lat.idx(it, ix, iy)] += f.values[it * nb + j] * p;
            }
        }
    }
    // boundary rows exactly
    for (j, node) in op.nodes.iter().enumerate() {
        for it in 0..lat.nt {
            h.data[lat.idx(it, node.ix, node.iy)] = f.values[it * nb + j];
        }
    }
    Ok(h)
}

struct TimeView {
    nt: usize,
    rev: bool,
}

impl TimeView {
    fn row(&self, m: usize) -> usize {
        if self.rev {
            self.nt - 1 - m
        } else {
            m
        }
    }
    /// a-row index for the half step between logical rows m and m+1.
    fn half(&self, m: usize) -> usize {
        if self.rev {
            self.nt - 1 - m
        } else {
            m + 1
        }
    }
}

/// March the discrete wave equation w Box u = w F with Dirichlet data f
/// and initial (or, backward, final) displacement/velocity u0, u1.
pub fn solve_linear_wave(
    op: &WaveOp,
    source: Option<&GridField>,
    f: &BoundaryData,
    u0: Option<&[Complex64]>,
    u1: Option<&[Complex64]>,
    direction: Direction,
) -> Result<GridField> {
    let lat = &op.lattice;
    let ns = spatial_len(lat);
    let nb = op.nodes.len();
    if f.nodes.len() != nb {
        return Err(Error::Dimension("boundary data on a different lattice".into()));
    }
    for (name, row) in [("u0", u0), ("u1", u1)] {
        if let Some(r) = row {
            if r.len() != ns {
                return Err(Error::Dimension(format!(
                    "{name} has {} samples, lattice has {ns} spatial nodes",
                    r.len()
                )));
            }
        }
    }
    let dt = lat.dt();
    let view = TimeView {
        nt: lat.nt,
        rev: direction == Direction::Backward,
    };
    // time sign: marching the reversed-time field through the same
    // divergence form (the equation is invariant under t -> T - t with
    // coefficients read at the reflected time)
    let zero = Complex64::new(0.0, 0.0);
    let mut prev = vec![zero; ns];
    let mut curr = vec![zero; ns];
    let mut out = GridField::zeros(lat);

    let set_boundary = |row_vals: &mut [Complex64], m: usize| {
        let it = view.row(m);
        for (j, node) in op.nodes.iter().enumerate() {
            row_vals[node.iy * lat.nx + node.ix] = f.values[it * nb + j];
        }
    };
    let src_at = |m: usize, is: usize| -> Complex64 {
        match source {
            Some(s) => s.data[view.row(m) * ns + is],
            None => zero,
        }
    };

    // row 0
    if let Some(r) = u0 {
        prev.copy_from_slice(r);
    }
    set_boundary(&mut prev, 0);
    out.data[view.row(0) * ns..view.row(0) * ns + ns].copy_from_slice(&prev);

    // row 1 by Taylor start: u1 velocity is d/dt; marching backward in
    // physical time flips its sign relative to the marching direction
    let vel_sign = if view.rev { -1.0 } else { 1.0 };
    {
        let it0 = view.row(0) * ns;
        for iy in 0..lat.ny {
            for ix in 0..lat.nx {
                let is = iy * lat.nx + ix;
                if op.is_boundary(ix, iy) {
                    continue;
                }
                let v = u1.map_or(zero, |r| r[is] * vel_sign);
                // a at the half steps ahead of and behind the start, in
                // marching time; behind is physically ahead when reversed
                let a0 = op.a_half[view.half(0) * ns + is];
                let a_in = if view.rev {
                    op.a_half[(view.half(0) + 1) * ns + is]
                } else {
                    op.a_half[(view.half(0) - 1) * ns + is]
                };
                let a_mid = 0.5 * (a0 + a_in);
                let dadt = (a0 - a_in) / dt;
                let sp = op.spatial_at(view.row(0), &prev, ix, iy);
                let wf = op.w[it0 + is] * src_at(0, is);
                let acc = (sp - wf - v * dadt) / a_mid;
                curr[is] = prev[is] + v * dt + acc * (0.5 * dt * dt);
            }
        }
    }
    set_boundary(&mut curr, 1);
    out.data[view.row(1) * ns..view.row(1) * ns + ns].copy_from_slice(&curr);

    let mut next = vec![zero; ns];
    for m in 1..lat.nt - 1 {
        let it = view.row(m);
        for iy in 0..lat.ny {
            for ix in 0..lat.nx {
                let is = iy * lat.nx + ix;
                if op.is_boundary(ix, iy) {
                    continue;
                }
                let ap = op.a_half[view.half(m) * ns + is];
                let am = op.a_half[view.half(m - 1) * ns + is];
                let sp = op.spatial_at(it, &curr, ix, iy);
                let wf = op.w[it * ns + is] * src_at(m, is);
                next[is] = curr[is]
                    + (curr[is] - prev[is]) * (am / ap)
                    + (sp - wf) * (dt * dt / ap);
            }
        }
        set_boundary(&mut next, m + 1);
        let r = view.row(m + 1) * ns;
        out.data[r..r + ns].copy_from_slice(&next);
        std::mem::swap(&mut prev, &mut curr);
        std::mem::swap(&mut curr, &mut next);
    }
    Ok(out)
}

/// Discrete energy of a homogeneous solve at each interior half step:
/// (1/2) sum a |du/dt|^2 + (1/2) <b grad u^m, grad u^{m+1}>.
pub fn energy_series(op: &WaveOp, u: &GridField) -> Vec<f64> {
    let lat = &op.lattice;
    let ns = spatial_len(lat);
    let dt = lat.dt();
    let cell = lat.cell_volume();
    let mut out = Vec::with_capacity(lat.nt - 1);
    for m in 0..lat.nt - 1 {
        let uc = &u.data[m * ns..(m + 1) * ns];
        let up = &u.data[(m + 1) * ns..(m + 2) * ns];
        let mut kin = 0.0;
        let mut pot = 0.0;
        for iy in 0..lat.ny {
            for ix in 0..lat.nx {
                let is = iy * lat.nx + ix;
                if !op.is_boundary(ix, iy) {
                    let v = (up[is] - uc[is]) / dt;
                    kin += op.a_half[(m + 1) * ns + is] * v.norm_sqr();
                }
                if ix + 1 < lat.nx {
                    let b0 = 0.5
                        * (op.b[(m * ns + is) * op.ncomp]
                            + op.b[(m * ns + is + 1) * op.ncomp]);
                    let gc = (uc[is + 1] - uc[is]) / lat.dx();
                    let gp = (up[is + 1] - up[is]) / lat.dx();
                    pot += b0 * (gc * gp.conj()).re;
                }
                if lat.n() == 2 && iy + 1 < lat.ny {
                    let b1 = 0.5
                        * (op.b[(m * ns + is) * op.ncomp + 1]
                            + op.b[(m * ns + is + lat.nx) * op.ncomp + 1]);
                    let gc = (uc[is + lat.nx] - uc[is]) / lat.dy();
                    let gp = (up[is + lat.nx] - up[is]) / lat.dy();
                    pot += b1 * (gc * gp.conj()).re;
                }
            }
        }
        out.push(0.5 * cell * (kin + pot));
    }
    out
}

#[derive(Debug, Clone)]
pub struct PicardReport {
    /// Successive-iterate update norms.
    pub updates: Vec<f64>,
    /// Ratios update[k+1]/update[k].
    pub ratios: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct PicardOpts {
    pub eps0: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOpts {
    fn default() -> Self {
        PicardOpts {
            eps0: 1e-2,
            rel_tol: 1e-10,
            max_iter: 40,
        }
    }
}

/// Contraction iteration for Box u + V(u) = 0 with lateral data f and zero
/// initial data: u = h + v where h extends f and v_{k+1} solves
/// Box v = -Box h - V(h + v_k) with zero data.
pub fn solve_semilinear(
    op: &WaveOp,
    vspec: &NonlinearitySpec,
    f: &BoundaryData,
    opts: &PicardOpts,
) -> Result<(GridField, PicardReport)> {
    let sup = f.sup();
    if sup > opts.eps0 {
        return Err(Error::SmallnessViolation {
            got: sup,
            limit: opts.eps0,
        });
    }
    let lat = &op.lattice;
    let h = extend_boundary_data(op, f)?;
    let minus_box_h = {
        let mut b = op.box_field(&h);
        for v in &mut b.data {
            *v = -*v;
        }
        b
    };
    let zero_bc = BoundaryData::zero(lat)?;
    let mut v = GridField::zeros(lat);
    let mut updates = Vec::new();
    let mut ratios = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let scale = {
        let mut s = 0.0f64;
        for x in &h.data {
            s = s.max(x.norm());
        }
        s.max(1e-300)
    };

    for k in 0..opts.max_iter {
        iterations = k + 1;
        let mut source = minus_box_h.clone();
        if !vspec.is_zero() {
            for (i, s) in source.data.iter_mut().enumerate() {
                *s -= vspec.eval(i, h.data[i] + v.data[i]);
            }
        }
        let v_next = solve_linear_wave(op, Some(&source), &zero_bc, None, None, Direction::Forward)?;
        let mut diff = 0.0f64;
        for (a, b) in v_next.data.iter().zip(&v.data) {
            diff = diff.max((a - b).norm());
        }
        v = v_next;
        if let Some(&last) = updates.last() {
            if last > 0.0 {
                let ratio = diff / last;
                ratios.push(ratio);
                if ratio >= 1.0 && diff > opts.rel_tol * scale {
                    return Err(Error::SmallnessViolation {
                        got: ratio,
                        limit: 1.0,
                    });
                }
            }
        }
        updates.push(diff);
        if vspec.is_zero() || diff <= opts.rel_tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "contraction stalled after {iterations} sweeps, last update {:.3e}",
            updates.last().copied().unwrap_or(f64::NAN)
        )));
    }
    let mut u = h;
    for (a, b) in u.data.iter_mut().zip(&v.data) {
        *a += b;
    }
    Ok((u, PicardReport { updates, ratios, iterations, converged }))
}

/// Neumann trace on masked boundary nodes: one-sided second-order
/// difference along the unit outward conormal of the spatial metric.
#[derive(Clone)]
pub struct NeumannTrace {
    pub nodes: Arc<Vec<BoundaryNode>>,
    /// nt x nodes.len(); zero outside the mask.
    pub values: Vec<Complex64>,
    pub mask: Vec<bool>,
}

impl NeumannTrace {
    pub fn sup_diff(&self, other: &NeumannTrace) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

pub fn neumann_trace(op: &WaveOp, u: &GridField, mask: &[bool]) -> Result<NeumannTrace> {
    let lat = &op.lattice;
    let nb = op.nodes.len();
    if mask.len() != nb {
        return Err(Error::Dimension(format!(
            "mask has {} entries, boundary has {nb} nodes",
            mask.len()
        )));
    }
    let ns = spatial_len(lat);
    let mut values = vec![Complex64::new(0.0, 0.0); lat.nt * nb];
    for (j, node) in op.nodes.iter().enumerate() {
        if !mask[j] {
            continue;
        }
        if node.corner {
            return Err(Error::Config(format!(
                "corner node ({}, {}) has no outward normal",
                node.ix, node.iy
            )));
        }
        // inward steps and spacing along the wall axis
        let (step, dd): (isize, f64) = match node.wall {
            0 => (1, lat.dx()),
            1 => (-(1), lat.dx()),
            2 => (lat.nx as isize, lat.dy()),
            _ => (-(lat.nx as isize), lat.dy()),
        };
        let is0 = (node.iy * lat.nx + node.ix) as isize;
        for it in 0..lat.nt {
            let base = it * ns;
            let u0 = u.data[base + is0 as usize];
            let u1 = u.data[base + (is0 + step) as usize];
            let u2 = u.data[base + (is0 + 2 * step) as usize];
            // one-sided derivative along the inward step; outward flips it
            let d_out = -(-u2 + u1 * 4.0 - u0 * 3.0) / (2.0 * dd);
            let node_idx = it * ns + is0 as usize;
            // unit outward conormal: d_nu u = g0^{dj} d_j u / sqrt(g0^{dd});
            // tangential terms vanish for diagonal g0; for the rect cross
            // term use the centered tangential derivative
            let (axis_comp, cross) = if node.wall < 2 {
                (0usize, 2usize)
            } else {
                (1usize, 2usize)
            };
            let g = |c: usize| op.g0_lower[node_idx * op.ncomp + c];
            // invert the 2x2 spatial metric at the node (n=1: scalar)
            let (gup_dd, gup_dt) = if lat.n() == 1 {
                (1.0 / g(0), 0.0)
            } else {
                let det = g(0) * g(1) - g(2) * g(2);
                let inv = [g(1) / det, g(0) / det, -g(2) / det];
                (inv[axis_comp], inv[cross])
            };
            // cross terms carry the outward orientation of the wall axis
            let sign_out = if node.wall % 2 == 0 { -1.0 } else { 1.0 };
            let mut dnu = d_out * gup_dd;
            if lat.n() == 2 && gup_dt != 0.0 {
                // centered derivative along the wall
                let tstep: isize = if node.wall < 2 { lat.nx as isize } else { 1 };
                let up = u.data[base + (is0 + tstep) as usize];
                let um = u.data[base + (is0 - tstep) as usize];
                let dtan = (up - um) / (2.0 * if node.wall < 2 { lat.dy() } else { lat.dx() });
                dnu += dtan * (sign_out * gup_dt);
            }
            values[it * nb + j] = dnu / gup_dd.sqrt();
        }
    }
    Ok(NeumannTrace {
        nodes: op.nodes.clone(),
        values,
        mask: mask.to_vec(),
    })
}

/// One partial-data sample: Dirichlet input, Neumann output on the mask.
pub struct DtNSample {
    pub trace: NeumannTrace,
    pub solution: GridField,
    pub report: PicardReport,
}

pub fn dtn_apply(
    op: &WaveOp,
    vspec: &NonlinearitySpec,
    f: &BoundaryData,
    mask: &[bool],
    opts: &PicardOpts,
) -> Result<DtNSample> {
    let (u, report) = solve_semilinear(op, vspec, f, opts)?;
    let trace = neumann_trace(op, &u, mask)?;
    Ok(DtNSample {
        trace,
        solution: u,
        report,
    })
}
