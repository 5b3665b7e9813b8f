//! Recoverable set: the union of causal diamonds with tips on the lateral
//! boundary cylinder.
//!
//! A lattice node r belongs to the set when some boundary event strictly
//! precedes it and some boundary event strictly follows it. Both relations
//! reduce to optical arrival times: A(x) is the earliest a light front
//! released from the boundary can reach x, B(x) the latest it can leave x
//! and still catch the boundary before the final time. The fronts are
//! propagated with a Dijkstra sweep over the spatial lattice whose edge
//! delays come from the local cone widths (spatial metric over lapse),
//! re-evaluated at the departure time so slow time dependence is honoured.

use crate::error::Result;
use crate::grid::{Domain, Lattice};
use crate::spacetime::MetricSpec;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

#[derive(Debug, Clone, Copy)]
pub struct ReachOpts {
    /// Shrink applied to the diamond on both ends when masking, in time
    /// units; keeps reconstruction windows strictly inside.
    pub margin: f64,
}

impl Default for ReachOpts {
    fn default() -> Self {
        ReachOpts { margin: 0.0 }
    }
}

pub struct ReachableSet {
    pub lattice: Arc<Lattice>,
    /// Earliest boundary-front arrival per spatial cell (inf outside).
    pub a: Vec<f64>,
    /// Latest departure per spatial cell that still reaches the boundary.
    pub b: Vec<f64>,
    pub margin: f64,
}

impl ReachableSet {
    fn cell(&self, ix: usize, iy: usize) -> usize {
        iy * self.lattice.nx + ix
    }

    pub fn a_at(&self, ix: usize, iy: usize) -> f64 {
        self.a[self.cell(ix, iy)]
    }

    pub fn b_at(&self, ix: usize, iy: usize) -> f64 {
        self.b[self.cell(ix, iy)]
    }

    pub fn in_diamond(&self, t: f64, ix: usize, iy: usize) -> bool {
        let c = self.cell(ix, iy);
        t > self.a[c] + self.margin && t < self.b[c] - self.margin
    }

    pub fn node_in_diamond(&self, it: usize, ix: usize, iy: usize) -> bool {
        let t = self.lattice.dt() * it as f64;
        self.in_diamond(t, ix, iy)
    }

    /// Space-time mask over the full lattice.
    pub fn mask(&self) -> Vec<bool> {
        let lat = &self.lattice;
        let mut out = vec![false; lat.nt * lat.nx * lat.ny];
        for it in 0..lat.nt {
            for ix in 0..lat.nx {
                for iy in 0..lat.ny {
                    out[lat.idx(it, ix, iy)] = self.node_in_diamond(it, ix, iy);
                }
            }
        }
        out
    }
}

fn boundary_cells(lat: &Lattice) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    match lat.domain {
        Domain::Interval { .. } => {
            out.push((0, 0));
            out.push((lat.nx - 1, 0));
        }
        Domain::Rect { .. } => {
            for ix in 0..lat.nx {
                out.push((ix, 0));
                out.push((ix, lat.ny - 1));
            }
            for iy in 1..lat.ny - 1 {
                out.push((0, iy));
                out.push((lat.nx - 1, iy));
            }
        }
        Domain::Disk { radius } => {
            let inside = |ix: isize, iy: isize| -> bool {
                if ix < 0 || iy < 0 || ix >= lat.nx as isize || iy >= lat.ny as isize {
                    return false;
                }
                let p = lat.point(0, ix as usize, iy as usize);
                p[1] * p[1] + p[2] * p[2] <= radius * radius
            };
            for ix in 0..lat.nx as isize {
                for iy in 0..lat.ny as isize {
                    if inside(ix, iy)
                        && (!inside(ix - 1, iy)
                            || !inside(ix + 1, iy)
                            || !inside(ix, iy - 1)
                            || !inside(ix, iy + 1))
                    {
                        out.push((ix as usize, iy as usize));
                    }
                }
            }
        }
    }
    out
}

#[derive(PartialEq)]
struct Entry {
    time: f64,
    cell: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on time
        other
            .time
            .partial_cmp(&self.time)
            .unwrap_or(Ordering::Equal)
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Optical front sweep from the boundary cells. `reversed` runs in the
/// time-mirrored metric (for the latest-departure field).
fn optical_arrival(spec: &MetricSpec, lat: &Lattice, reversed: bool) -> Result<Vec<f64>> {
    let n = spec.n;
    let (nx, ny) = (lat.nx, lat.ny);
    let dx = lat.dx();
    let dy = if n == 2 { lat.dy() } else { 0.0 };
    let t_max = spec.t_max;

    let in_domain: Vec<bool> = (0..nx * ny)
        .map(|c| {
            let (ix, iy) = (c % nx, c / nx);
            let p = lat.point(0, ix, iy);
            lat.domain.contains(&p[1..])
        })
        .collect();

    let mut arrival = vec![f64::INFINITY; nx * ny];
    let mut heap = BinaryHeap::new();
    for (ix, iy) in boundary_cells(lat) {
        let c = iy * nx + ix;
        arrival[c] = 0.0;
        heap.push(Entry { time: 0.0, cell: c });
    }

    // neighbour offsets: axis plus diagonal moves
    let mut moves: Vec<(isize, isize, f64, f64)> = vec![(-1, 0, -dx, 0.0), (1, 0, dx, 0.0)];
    if n == 2 {
        moves.push((0, -1, 0.0, -dy));
        moves.push((0, 1, 0.0, dy));
        moves.push((-1, -1, -dx, -dy));
        moves.push((1, -1, dx, -dy));
        moves.push((-1, 1, -dx, dy));
        moves.push((1, 1, dx, dy));
    }

    while let Some(Entry { time, cell }) = heap.pop() {
        if time > arrival[cell] {
            continue;
        }
        let (ix, iy) = (cell % nx, cell / nx);
        let p0 = lat.point(0, ix, iy);
        for &(mx, my, wx, wy) in &moves {
            let jx = ix as isize + mx;
            let jy = iy as isize + my;
            if jx < 0 || jy < 0 || jx >= nx as isize || jy >= ny as isize {
                continue;
            }
            let nc = jy as usize * nx + jx as usize;
            if !in_domain[nc] {
                continue;
            }
            let p1 = lat.point(0, jx as usize, jy as usize);
            // optical delay at the edge midpoint, one refinement for the
            // time dependence
            let mut mid = vec![0.0; n + 1];
            for i in 1..=n {
                mid[i] = 0.5 * (p0[i] + p1[i]);
            }
            let clock = |tau: f64| if reversed { t_max - tau } else { tau };
            let mut delay = f64::INFINITY;
            let mut tau_eval = time;
            for _ in 0..2 {
                mid[0] = clock(tau_eval).clamp(0.0, t_max);
                let val = match spec.eval_metric(&mid) {
                    Ok(v) => v,
                    Err(_) => break,
                };
                let mut q = val.g[(1, 1)] * wx * wx;
                if n == 2 {
                    q += 2.0 * val.g[(1, 2)] * wx * wy + val.g[(2, 2)] * wy * wy;
                }
                delay = (q / val.beta).sqrt();
                tau_eval = time + 0.5 * delay;
            }
            if !delay.is_finite() {
                continue;
            }
            let cand = time + delay;
            if cand < arrival[nc] {
                arrival[nc] = cand;
                heap.push(Entry {
                    time: cand,
                    cell: nc,
                });
            }
        }
    }
    Ok(arrival)
}

pub fn reachable_set(
    spec: &MetricSpec,
    lattice: &Arc<Lattice>,
    opts: &ReachOpts,
) -> Result<ReachableSet> {
    let a = optical_arrival(spec, lattice, false)?;
    let depart = optical_arrival(spec, lattice, true)?;
    let b: Vec<f64> = depart.iter().map(|d| spec.t_max - d).collect();
    Ok(ReachableSet {
        lattice: lattice.clone(),
        a,
        b,
        margin: opts.margin,
    })
}
