//! Higher-order linearization: mixed finite differences of the semilinear
//! solution map in the sizes of several boundary inputs, direct solves of
//! the linearized problems with the lower-order remainder polynomial, and
//! the integral identity connecting interior products to boundary traces.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::wave::{
    neumann_trace, solve_linear_wave, solve_semilinear, BoundaryData, Direction, NeumannTrace,
    NonlinearitySpec, PicardOpts, WaveOp,
};

/// Largest linearization order the stencils support.
pub const MAX_ORDER: usize = 5;

/// Mixed derivative of the solution (and optionally its Neumann trace)
/// with respect to the sizes of the boundary inputs.
pub struct LinearizedField {
    pub order: usize,
    pub field: GridField,
    /// Trace derivative on the requested mask, from the same solves.
    pub trace: Option<NeumannTrace>,
    /// Step the returned field was computed at.
    pub eps: f64,
    /// Richardson gap between the two-step results, scaled to an error
    /// estimate for the finer one; zero when richardson is off.
    pub error_bar: f64,
    /// Cancellation floor of the stencil at this step.
    pub noise_floor: f64,
    pub ill_conditioned: bool,
}

#[derive(Clone)]
pub struct MixedOpts {
    pub eps: f64,
    /// Repeat at eps/2 and keep the finer result with an error bar.
    pub richardson: bool,
    /// Also differentiate the Neumann trace on this boundary mask.
    pub trace_mask: Option<Vec<bool>>,
    pub picard: PicardOpts,
}

impl Default for MixedOpts {
    fn default() -> Self {
        MixedOpts {
            eps: 1e-2,
            richardson: true,
            trace_mask: None,
            picard: PicardOpts {
                eps0: 0.1,
                ..PicardOpts::default()
            },
        }
    }
}

struct StencilPass {
    field: GridField,
    trace: Option<Vec<Complex64>>,
    max_sup: f64,
}

fn stencil_pass(
    op: &WaveOp,
    vspec: &NonlinearitySpec,
    data: &[&BoundaryData],
    eps: f64,
    mask: Option<&[bool]>,
    picard: &PicardOpts,
) -> Result<StencilPass> {
    let m = data.len();
    let corners: Vec<usize> = (0..1usize << m).collect();
    let pieces: Vec<Result<(f64, GridField, Option<Vec<Complex64>>, f64)>> = corners
        .par_iter()
        .map(|&corner| {
            let mut parts = Vec::with_capacity(m);
            let mut parity = 1.0;
            for (i, f) in data.iter().enumerate() {
                let sign = if corner >> i & 1 == 0 { -1.0 } else { 1.0 };
                parity *= sign;
                parts.push((sign * eps, *f));
            }
            let f_corner = BoundaryData::combine(&parts)?;
            let (u, _) = solve_semilinear(op, vspec, &f_corner, picard)?;
            let tr = match mask {
                Some(mk) => Some(neumann_trace(op, &u, mk)?.values),
                None => None,
            };
            let sup = u.sup_norm();
            Ok((parity, u, tr, sup))
        })
        .collect();

    let scale = 1.0 / (2.0 * eps).powi(m as i32);
    let mut field = GridField::zeros(&op.lattice);
    let mut trace: Option<Vec<Complex64>> = None;
    let mut max_sup = 0.0f64;
    for piece in pieces {
        let (parity, u, tr, sup) = piece?;
        max_sup = max_sup.max(sup);
        for (acc, v) in field.data.iter_mut().zip(&u.data) {
            *acc += v * (parity * scale);
        }
        if let Some(tv) = tr {
            let acc = trace.get_or_insert_with(|| vec![Complex64::new(0.0, 0.0); tv.len()]);
            for (a, v) in acc.iter_mut().zip(&tv) {
                *a += v * (parity * scale);
            }
        }
    }
    Ok(StencilPass {
        field,
        trace,
        max_sup,
    })
}

/// Central product stencil over the 2^m corners of the +-eps cube, with an
/// optional second pass at eps/2 for a Richardson error bar.
pub fn mixed_derivative(
    op: &WaveOp,
    vspec: &NonlinearitySpec,
    data: &[&BoundaryData],
    opts: &MixedOpts,
) -> Result<LinearizedField> {
    let m = data.len();
    if m == 0 || m > MAX_ORDER {
        return Err(Error::Config(format!(
            "linearization order must be 1..={MAX_ORDER}, got {m}"
        )));
    }
    if opts.eps <= 0.0 {
        return Err(Error::Config("stencil step must be positive".into()));
    }
    let mask = opts.trace_mask.as_deref();
    let coarse = stencil_pass(op, vspec, data, opts.eps, mask, &opts.picard)?;
    let (pass, eps_used, error_bar) = if opts.richardson {
        let fine = stencil_pass(op, vspec, data, opts.eps / 2.0, mask, &opts.picard)?;
        let mut gap = 0.0f64;
        for (a, b) in coarse.field.data.iter().zip(&fine.field.data) {
            gap = gap.max((a - b).norm());
        }
        // second-order stencil: err(fine) ~ gap/3
        (fine, opts.eps / 2.0, gap / 3.0)
    } else {
        (coarse, opts.eps, 0.0)
    };
    let noise_floor =
        f64::EPSILON * pass.max_sup * (2f64).powi(m as i32) / (2.0 * eps_used).powi(m as i32);
    let signal = pass.field.sup_norm();
    let ill_conditioned = error_bar.max(noise_floor) > signal.max(1e-300);
    let trace = pass.trace.map(|values| NeumannTrace {
        nodes: op.nodes.clone(),
        values,
        mask: opts.trace_mask.clone().unwrap_or_default(),
    });
    Ok(LinearizedField {
        order: m,
        field: pass.field,
        trace,
        eps: eps_used,
        error_bar,
        noise_floor,
        ill_conditioned,
    })
}

/// Set partitions of {0..m-1} into exactly k nonempty blocks, each block
/// sorted, blocks ordered by smallest element.
pub fn set_partitions(m: usize, k: usize) -> Vec<Vec<Vec<usize>>> {
    fn extend(
        item: usize,
        m: usize,
        k: usize,
        blocks: &mut Vec<Vec<usize>>,
        out: &mut Vec<Vec<Vec<usize>>>,
    ) {
        if item == m {
            if blocks.len() == k {
                out.push(blocks.clone());
            }
            return;
        }
        // pruning: remaining items must be able to fill up to k blocks
        let remaining = m - item;
        if blocks.len() > k || blocks.len() + remaining < k {
            return;
        }
        for b in 0..blocks.len() {
            blocks[b].push(item);
            extend(item + 1, m, k, blocks, out);
            blocks[b].pop();
        }
        blocks.push(vec![item]);
        extend(item + 1, m, k, blocks, out);
        blocks.pop();
    }
    let mut out = Vec::new();
    if k >= 1 && k <= m {
        extend(0, m, k, &mut Vec::new(), &mut out);
    }
    out
}

/// Lower-order mixed derivatives, keyed by the sorted index subset.
pub type LowerOrder = BTreeMap<Vec<usize>, GridField>;

/// The remainder polynomial: every way the m distinct derivatives land on
/// the factors of V_k u^k / k! for 3 <= k < m, with no factor left
/// underived. Blocks of size one take the supplied first-order fields.
pub fn assemble_remainder(
    vspec: &NonlinearitySpec,
    w: &[&GridField],
    lower: &LowerOrder,
    m: usize,
) -> Result<GridField> {
    if w.len() != m {
        return Err(Error::Dimension(format!(
            "need {m} first-order fields, got {}",
            w.len()
        )));
    }
    let lattice = &w[0].lattice;
    let mut out = GridField::zeros(lattice);
    for k in 3..m {
        let Some(vk) = vspec.coefficient(k) else {
            continue;
        };
        for partition in set_partitions(m, k) {
            // product over blocks at every node
            let mut term = vec![Complex64::new(1.0, 0.0); lattice.len()];
            for block in &partition {
                let factor: &GridField = if block.len() == 1 {
                    w[block[0]]
                } else {
                    lower.get(block).ok_or_else(|| {
                        Error::Config(format!(
                            "remainder assembly for order {m} needs the lower-order field {block:?}"
                        ))
                    })?
                };
                for (t, v) in term.iter_mut().zip(&factor.data) {
                    *t *= v;
                }
            }
            for (i, (o, t)) in out.data.iter_mut().zip(&term).enumerate() {
                *o += t * vk[i];
            }
        }
    }
    Ok(out)
}

/// Solve the m-th linearized problem directly: the wave equation driven by
/// the remainder polynomial plus the top coefficient times the product of
/// the first-order fields, zero data.
pub fn direct_linearized_solution(
    op: &WaveOp,
    vspec: &NonlinearitySpec,
    w: &[&GridField],
    lower: &LowerOrder,
    m: usize,
) -> Result<GridField> {
    if m < 3 || m > MAX_ORDER {
        return Err(Error::Config(format!(
            "direct linearized solves cover orders 3..={MAX_ORDER}, got {m}"
        )));
    }
    let mut source = assemble_remainder(vspec, w, lower, m)?;
    if let Some(vm) = vspec.coefficient(m) {
        for i in 0..source.data.len() {
            let mut prod = Complex64::new(vm[i], 0.0);
            for wi in w {
                prod *= wi.data[i];
            }
            source.data[i] += prod;
        }
    }
    for v in &mut source.data {
        *v = -*v;
    }
    let zero_bc = BoundaryData::zero(&op.lattice)?;
    solve_linear_wave(op, Some(&source), &zero_bc, None, None, Direction::Forward)
}

#[derive(Debug, Clone)]
pub struct GreensCheck {
    pub lhs: Complex64,
    pub rhs: Complex64,
    pub defect: f64,
}

/// Quadrature weights of the lateral surface measure at a boundary node:
/// sqrt(beta) dt in one space dimension, sqrt(beta g_tan) dt dtau on the
/// rectangle.
fn surface_factor(op: &WaveOp, node_idx: usize, wall: usize) -> f64 {
    let g = |c: usize| op.g0_lower[node_idx * op.ncomp + c];
    let w = op.w[node_idx];
    if op.ncomp == 1 {
        // w = sqrt(beta g00)
        w / g(0).sqrt()
    } else {
        let det = g(0) * g(1) - g(2) * g(2);
        let beta = w * w / det;
        let g_tan = if wall < 2 { g(1) } else { g(0) };
        (beta * g_tan).sqrt()
    }
}

/// Both sides of the integral identity: the interior pairing of a cubic
/// coefficient difference against four fields, and the lateral pairing of
/// the corresponding Neumann-trace difference against the backward field.
/// The mask selects the measured part of the boundary; the identity is
/// exact when w0 vanishes on the complement.
pub fn greens_identity_check(
    op: &WaveOp,
    v3_diff: &[f64],
    w0: &GridField,
    w123: [&GridField; 3],
    dtn_diff: &NeumannTrace,
    mask: &[bool],
) -> Result<GreensCheck> {
    let lat = &op.lattice;
    if v3_diff.len() != lat.len() {
        return Err(Error::Dimension(
            "coefficient difference is not sampled on the solve lattice".into(),
        ));
    }
    let nb = op.nodes.len();
    if dtn_diff.values.len() != lat.nt * nb || mask.len() != nb {
        return Err(Error::Dimension(
            "trace difference does not match the boundary enumeration".into(),
        ));
    }

    let cell = lat.cell_volume() * lat.dt();
    let mut lhs = Complex64::new(0.0, 0.0);
    for it in 0..lat.nt {
        for iy in 0..lat.ny {
            for ix in 0..lat.nx {
                let i = lat.idx(it, ix, iy);
                if v3_diff[i] == 0.0 {
                    continue;
                }
                let prod = w0.data[i] * w123[0].data[i] * w123[1].data[i] * w123[2].data[i];
                lhs += prod * (v3_diff[i] * op.w[i] * lat.weight(it, ix, iy) * cell);
            }
        }
    }

    // lateral quadrature: trapezoid in time and along the wall; the sign
    // comes from the divergence theorem with the outward unit conormal and
    // the source convention box(u) + V(u) = 0
    let dt = lat.dt();
    let mut rhs = Complex64::new(0.0, 0.0);
    for (j, node) in op.nodes.iter().enumerate() {
        if !mask[j] || node.corner {
            continue;
        }
        let dtau = if lat.n() == 1 {
            1.0
        } else if node.wall < 2 {
            lat.dy()
        } else {
            lat.dx()
        };
        let wt_tau = if lat.n() == 1 {
            1.0
        } else {
            let along = if node.wall < 2 { node.iy } else { node.ix };
            let last = if node.wall < 2 { lat.ny - 1 } else { lat.nx - 1 };
            if along == 0 || along == last {
                0.5
            } else {
                1.0
            }
        };
        for it in 0..lat.nt {
            let wt_t = if it == 0 || it == lat.nt - 1 { 0.5 } else { 1.0 };
            let i = lat.idx(it, node.ix, node.iy);
            let surf = surface_factor(op, i, node.wall);
            rhs -= dtn_diff.values[it * nb + j]
                * w0.data[i]
                * (surf * wt_t * wt_tau * dt * dtau);
        }
    }

    let defect = (lhs - rhs).norm();
    Ok(GreensCheck { lhs, rhs, defect })
}
