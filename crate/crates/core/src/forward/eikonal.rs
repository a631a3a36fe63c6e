//! First-order fast marching for `|∇T| = s`, `T(x₀) = 0`.
//!
//! Works on every node of a 1D or 2D grid. Boundary nodes only use
//! neighbours inside the grid, which is the one-sided treatment of the
//! outflow boundary condition.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Travel times and the order in which nodes were accepted.
#[derive(Debug, Clone)]
pub struct FastMarching {
    pub times: DVector<f64>,
    pub accepted: Vec<usize>,
}

/// Grid of `nodes^dim` points on the unit interval or square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub dim: usize,
    pub nodes: usize,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.nodes - 1) as f64
    }

    pub fn position(&self, idx: usize) -> [usize; 2] {
        [idx % self.nodes, idx / self.nodes]
    }

    pub fn index(&self, pos: [usize; 2]) -> usize {
        pos[0] + self.nodes * pos[1]
    }

    pub fn coordinates(&self, idx: usize) -> [f64; 2] {
        let p = self.position(idx);
        [p[0] as f64 * self.spacing(), p[1] as f64 * self.spacing()]
    }

    /// Node at the domain centre (rounded down for even node counts).
    pub fn center(&self) -> usize {
        let c = (self.nodes - 1) / 2;
        if self.dim == 1 {
            c
        } else {
            self.index([c, c])
        }
    }
}

/// Godunov update from the smallest known neighbour value per axis.
fn local_update(a: &mut [f64], sh: f64) -> f64 {
    a.sort_by(f64::total_cmp);
    let mut t = a[0] + sh;
    if a.len() > 1 && a[1].is_finite() && t > a[1] {
        let (a0, a1) = (a[0], a[1]);
        let disc = 2.0 * sh * sh - (a0 - a1) * (a0 - a1);
        t = 0.5 * (a0 + a1 + disc.max(0.0).sqrt());
    }
    t
}

/// Default source initialisation radius, in grid cells.
pub const DEFAULT_INIT_RADIUS: f64 = 4.0;

/// Plain fast marching from `source` with nodal slowness `s`.
pub fn fast_marching(grid: Grid, slowness: &[f64], source: usize) -> Result<FastMarching> {
    fast_marching_with(grid, slowness, source, 0.0)
}

/// Fast marching where nodes within `init_radius` grid cells of the source
/// are initialised with the straight-ray time `|x − x₀| (s(x) + s(x₀))/2`
/// and frozen. This damps the first-order error that the point-source
/// singularity otherwise spreads over the whole domain.
pub fn fast_marching_with(
    grid: Grid,
    slowness: &[f64],
    source: usize,
    init_radius: f64,
) -> Result<FastMarching> {
    if grid.nodes < 2 || !(grid.dim == 1 || grid.dim == 2) {
        return Err(Error::InvalidMesh(format!("bad eikonal grid {grid:?}")));
    }
    let n = grid.len();
    assert_eq!(slowness.len(), n, "slowness must live on the full grid");
    if source >= n {
        return Err(Error::InvalidParameter(format!("source {source} outside grid")));
    }
    for (node, &v) in slowness.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite { node });
        }
        if v <= 0.0 {
            return Err(Error::NonPositiveSlowness { node, value: v });
        }
    }
    let h = grid.spacing();
    let mut times = DVector::from_element(n, f64::INFINITY);
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    let mut accepted = Vec::with_capacity(n);
    let mut frozen = vec![false; n];
    times[source] = 0.0;
    frozen[source] = true;
    heap.push(Reverse((Key(0.0), source)));
    if init_radius > 0.0 {
        let x0 = grid.coordinates(source);
        for i in 0..n {
            let x = grid.coordinates(i);
            let r = ((x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2)).sqrt();
            if i != source && r <= init_radius * h {
                times[i] = r * 0.5 * (slowness[i] + slowness[source]);
                frozen[i] = true;
                heap.push(Reverse((Key(times[i]), i)));
            }
        }
    }

    let neighbours = |idx: usize| {
        let p = grid.position(idx);
        let mut out = [(usize::MAX, 0usize); 4];
        let mut k = 0;
        for axis in 0..grid.dim {
            for dir in [-1i64, 1] {
                let c = p[axis] as i64 + dir;
                if c >= 0 && (c as usize) < grid.nodes {
                    let mut q = p;
                    q[axis] = c as usize;
                    out[k] = (grid.index(q), axis);
                    k += 1;
                }
            }
        }
        (out, k)
    };

    while let Some(Reverse((Key(t), idx))) = heap.pop() {
        if done[idx] || t > times[idx] {
            continue;
        }
        done[idx] = true;
        accepted.push(idx);
        let (nb, k) = neighbours(idx);
        for &(j, _) in &nb[..k] {
            if done[j] || frozen[j] {
                continue;
            }
            let mut best = [f64::INFINITY; 2];
            let (nb2, k2) = neighbours(j);
            for &(q, axis) in &nb2[..k2] {
                if done[q] {
                    best[axis] = best[axis].min(times[q]);
                }
            }
            let cand = local_update(&mut best[..grid.dim], slowness[j] * h);
            if cand < times[j] {
                times[j] = cand;
                heap.push(Reverse((Key(cand), j)));
            }
        }
    }
    Ok(FastMarching { times, accepted })
}
