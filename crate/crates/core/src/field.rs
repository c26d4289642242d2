//! Geodesic distance fields on the navigation grid and the steering
//! directions derived from them.
//!
//! Distances are shortest 8-connected path lengths (straight step = one
//! cell, diagonal step = √2 cells), i.e. a chamfer metric. This overestimates
//! Euclidean distance by up to ~8% off the grid axes and diagonals; every
//! comparison in route extraction uses the same metric.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::sync::Arc;

use glam::DVec2;

use crate::error::{Error, Result};
use crate::grid::{CellIndex, OccupancyGrid, Region, RegionId};

pub const UNREACHED: f64 = f64::INFINITY;
const NO_PRED: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Steering {
    Arrived,
    Toward(DVec2),
}

#[derive(Debug, Clone)]
pub struct DistanceField {
    pub target: RegionId,
    grid: Arc<OccupancyGrid>,
    /// Cells the field was computed on (walkable, and inside the domain if
    /// one was given).
    passable: Vec<bool>,
    is_target: Vec<bool>,
    dist: Vec<f64>,
    pred: Vec<u32>,
    /// `dist`, extended one layer into blocked/unreached cells so that
    /// bilinear interpolation is defined everywhere a walker can stand.
    padded: Vec<f64>,
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    cell: CellIndex,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then on cell index
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Distance field to `target` over all walkable cells.
pub fn compute_distance_field(grid: &Arc<OccupancyGrid>, target: &Region) -> DistanceField {
    compute_restricted(grid, target, None)
}

/// Distance field to `target` where paths may only use cells of `domain`
/// (target cells are always usable).
pub fn compute_restricted(
    grid: &Arc<OccupancyGrid>,
    target: &Region,
    domain: Option<&[bool]>,
) -> DistanceField {
    compute_weighted(grid, target, domain, None, None)
}

/// Surface clearance below which steering fields penalize a cell, meters.
pub const STEERING_CLEARANCE: f64 = 0.25;
/// Cost multiplier for moving through cells closer to a wall than
/// `STEERING_CLEARANCE`.
pub const WALL_PENALTY: f64 = 3.0;

/// Per-cell distance from the cell center to the nearest wall surface,
/// where blocked cells and the grid border count as walls (chamfer metric).
pub fn clearance(grid: &OccupancyGrid) -> Vec<f64> {
    let n = grid.len();
    let mut dist = vec![UNREACHED; n];
    let mut heap = BinaryHeap::new();
    for c in 0..n {
        let (i, j) = grid.coords(c);
        let d = if !grid.walkable[c] {
            0.0
        } else if i == 0 || j == 0 || i + 1 == grid.width || j + 1 == grid.height {
            grid.cell_size
        } else {
            continue;
        };
        dist[c] = d;
        heap.push(Entry { dist: d, cell: c });
    }
    while let Some(Entry { dist: d, cell }) = heap.pop() {
        if d > dist[cell] {
            continue;
        }
        for (nb, step) in grid.moves(cell, |_| true) {
            if d + step < dist[nb] {
                dist[nb] = d + step;
                heap.push(Entry {
                    dist: d + step,
                    cell: nb,
                });
            }
        }
    }
    dist.iter()
        .map(|&d| (d - grid.cell_size / 2.0).max(0.0))
        .collect()
}

/// Per-cell cost multipliers for steering fields.
pub fn steering_costs(grid: &OccupancyGrid) -> Vec<f64> {
    clearance(grid)
        .into_iter()
        .map(|c| {
            if c < STEERING_CLEARANCE - 1e-9 {
                WALL_PENALTY
            } else {
                1.0
            }
        })
        .collect()
}

/// Field used to steer walkers toward `target`: like
/// `compute_distance_field`, but a move costs its length times the mean
/// of its end cells' `costs`, so paths keep clear of walls where they can.
/// Values are costs, not path lengths.
///
/// With a `Downstream`, only the entry cells of the target are sources and
/// each starts at the downstream field's value instead of zero: walkers
/// head for the entry point from which the downstream field continues
/// cheapest, so a trajectory passing through the target needs no turn when
/// it switches fields.
pub fn compute_steering_field(
    grid: &Arc<OccupancyGrid>,
    target: &Region,
    costs: &[f64],
    downstream: Option<Downstream<'_>>,
) -> DistanceField {
    compute_weighted(grid, target, None, Some(costs), downstream)
}

/// Continuation of a steering field beyond its target.
#[derive(Debug, Clone, Copy)]
pub struct Downstream<'a> {
    pub field: &'a DistanceField,
    /// Target cells walkers enter through.
    pub entry: &'a [CellIndex],
}

fn compute_weighted(
    grid: &Arc<OccupancyGrid>,
    target: &Region,
    domain: Option<&[bool]>,
    costs: Option<&[f64]>,
    seeds: Option<Downstream<'_>>,
) -> DistanceField {
    let weight = |a: CellIndex, b: CellIndex, step: f64| match costs {
        Some(k) => step * 0.5 * (k[a] + k[b]),
        None => step,
    };
    let n = grid.len();
    let mut is_target = vec![false; n];
    for &c in &target.cells {
        if grid.walkable[c] {
            is_target[c] = true;
        }
    }
    let passable: Vec<bool> = (0..n)
        .map(|c| grid.walkable[c] && (is_target[c] || domain.is_none_or(|d| d[c])))
        .collect();

    let mut dist = vec![UNREACHED; n];
    let mut heap = BinaryHeap::new();
    match seeds {
        Some(s) => {
            for &c in s.entry.iter().filter(|&&c| is_target[c]) {
                dist[c] = s.field.dist(c);
                heap.push(Entry {
                    dist: dist[c],
                    cell: c,
                });
            }
        }
        None => {
            for c in (0..n).filter(|&c| is_target[c]) {
                dist[c] = 0.0;
                heap.push(Entry { dist: 0.0, cell: c });
            }
        }
    }
    while let Some(Entry { dist: d, cell }) = heap.pop() {
        if d > dist[cell] {
            continue;
        }
        for (nb, step) in grid.moves(cell, |x| passable[x]) {
            let nd = d + weight(cell, nb, step);
            if nd < dist[nb] {
                dist[nb] = nd;
                heap.push(Entry { dist: nd, cell: nb });
            }
        }
    }

    let mut pred = vec![NO_PRED; n];
    for c in 0..n {
        if is_target[c] || !dist[c].is_finite() {
            continue;
        }
        let mut best = UNREACHED;
        let mut best_cell = NO_PRED;
        for (nb, step) in grid.moves(c, |x| passable[x]) {
            let via = dist[nb] + weight(c, nb, step);
            // neighbors come in ascending index order; keep the first minimum
            if via < best - 1e-12 * via.max(1.0) {
                best = via;
                best_cell = nb as u32;
            }
        }
        pred[c] = best_cell;
    }

    let mut padded = dist.clone();
    for c in 0..n {
        if dist[c].is_finite() {
            continue;
        }
        let (i, j) = grid.coords(c);
        let mut best = UNREACHED;
        for nb in grid.neighbors(c, crate::grid::Connectivity::Eight) {
            if passable[nb] && dist[nb].is_finite() {
                let (ni, nj) = grid.coords(nb);
                let step = if ni != i && nj != j {
                    grid.cell_size * std::f64::consts::SQRT_2
                } else {
                    grid.cell_size
                };
                best = best.min(dist[nb] + weight(c, nb, step));
            }
        }
        padded[c] = best;
    }

    DistanceField {
        target: target.id,
        grid: Arc::clone(grid),
        passable,
        is_target,
        dist,
        pred,
        padded,
    }
}

/// Index of the distance band a value falls into: `floor(d / w)`.
pub fn band_index(d: f64, width: f64) -> usize {
    (d / width).floor() as usize
}

impl DistanceField {
    pub fn grid(&self) -> &Arc<OccupancyGrid> {
        &self.grid
    }

    pub fn dist(&self, cell: CellIndex) -> f64 {
        self.dist[cell]
    }

    pub fn distances(&self) -> &[f64] {
        &self.dist
    }

    pub fn is_target(&self, cell: CellIndex) -> bool {
        self.is_target[cell]
    }

    pub fn is_passable(&self, cell: CellIndex) -> bool {
        self.passable[cell]
    }

    pub fn predecessor(&self, cell: CellIndex) -> Option<CellIndex> {
        let p = self.pred[cell];
        (p != NO_PRED).then_some(p as CellIndex)
    }

    /// Cells with a finite distance.
    pub fn reached(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.dist.len()).filter(|&c| self.dist[c].is_finite())
    }

    pub fn max_finite(&self) -> f64 {
        self.reached().map(|c| self.dist[c]).fold(0.0, f64::max)
    }

    /// Reached cells with `k·w ≤ dist < (k+1)·w`.
    pub fn band(&self, k: usize, width: f64) -> Vec<CellIndex> {
        assert!(width > 0.0, "band width must be positive");
        self.reached()
            .filter(|&c| band_index(self.dist[c], width) == k)
            .collect()
    }

    /// Bilinear interpolation of the distance over cell centers. Infinite
    /// where the surrounding centers are not covered by the field.
    pub fn sample(&self, p: DVec2) -> f64 {
        let g = &*self.grid;
        let u = (p - g.origin) / g.cell_size - DVec2::splat(0.5);
        let (i0, j0) = (u.x.floor(), u.y.floor());
        let (fx, fy) = (u.x - i0, u.y - j0);
        let [a, b, c, d] = self.corners(i0 as i64, j0 as i64);
        if !(a.is_finite() && b.is_finite() && c.is_finite() && d.is_finite()) {
            return UNREACHED;
        }
        (1.0 - fx) * (1.0 - fy) * a + fx * (1.0 - fy) * b + (1.0 - fx) * fy * c + fx * fy * d
    }

    fn corners(&self, i0: i64, j0: i64) -> [f64; 4] {
        let g = &*self.grid;
        let at = |i: i64, j: i64| {
            let i = i.clamp(0, g.width as i64 - 1) as usize;
            let j = j.clamp(0, g.height as i64 - 1) as usize;
            self.padded[g.index(i, j)]
        };
        [
            at(i0, j0),
            at(i0 + 1, j0),
            at(i0, j0 + 1),
            at(i0 + 1, j0 + 1),
        ]
    }

    fn gradient(&self, p: DVec2) -> Option<DVec2> {
        let g = &*self.grid;
        let u = (p - g.origin) / g.cell_size - DVec2::splat(0.5);
        let (i0, j0) = (u.x.floor(), u.y.floor());
        let (fx, fy) = (u.x - i0, u.y - j0);
        let [a, b, c, d] = self.corners(i0 as i64, j0 as i64);
        let dx = (1.0 - fy) * (b - a) + fy * (d - c);
        let dy = (1.0 - fx) * (c - a) + fx * (d - b);
        let grad = DVec2::new(dx, dy) / g.cell_size;
        grad.is_finite().then_some(grad)
    }

    fn descends(&self, p: DVec2, dir: DVec2, here: f64) -> Option<f64> {
        let q = p + dir * (self.grid.cell_size * 0.5);
        let cell = self.grid.cell_of(q)?;
        if !self.passable[cell] || !self.dist[cell].is_finite() {
            return None;
        }
        let there = self.sample(q);
        (there < here).then_some(there)
    }

    /// Steering direction at `p`: the normalized negative gradient of the
    /// interpolated distance, falling back to the best grid neighbor when the
    /// gradient is degenerate or would not descend within half a cell.
    pub fn direction_at(&self, p: DVec2) -> Result<Steering> {
        let g = &*self.grid;
        let cell = g
            .cell_of(p)
            .filter(|&c| self.passable[c] && self.dist[c].is_finite())
            .ok_or(Error::NotNavigable { x: p.x, y: p.y })?;
        if self.is_target[cell] {
            return Ok(Steering::Arrived);
        }
        let here = self.sample(p);

        if let Some(grad) = self.gradient(p) {
            let len = grad.length();
            if len > 1e-9 {
                let dir = -grad / len;
                if self.descends(p, dir, here).is_some() {
                    return Ok(Steering::Toward(dir));
                }
            }
        }

        let pred = self.pred[cell] as CellIndex;
        let to_pred = (g.cell_center(pred) - p).normalize_or_zero();
        if to_pred != DVec2::ZERO && self.descends(p, to_pred, here).is_some() {
            return Ok(Steering::Toward(to_pred));
        }

        // exhaustive search over a fan of directions
        let mut best: Option<(f64, DVec2)> = None;
        for k in 0..32 {
            let angle = k as f64 * std::f64::consts::TAU / 32.0;
            let dir = DVec2::from_angle(angle);
            if let Some(v) = self.descends(p, dir, here) {
                if best.is_none_or(|(b, _)| v < b) {
                    best = Some((v, dir));
                }
            }
        }
        Ok(Steering::Toward(best.map_or(
            if to_pred == DVec2::ZERO {
                DVec2::X
            } else {
                to_pred
            },
            |(_, d)| d,
        )))
    }

    /// Row-major CSV of distances, top row first, `inf` for unreached cells.
    pub fn to_csv(&self) -> String {
        let g = &*self.grid;
        let mut out = String::with_capacity(g.len() * 6);
        for j in (0..g.height).rev() {
            for i in 0..g.width {
                if i > 0 {
                    out.push(',');
                }
                let d = self.dist[g.index(i, j)];
                if d.is_finite() {
                    let _ = write!(out, "{d:.4}");
                } else {
                    out.push_str("inf");
                }
            }
            out.push('\n');
        }
        out
    }
}
