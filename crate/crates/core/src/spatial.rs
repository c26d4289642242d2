//! Uniform bucket grids for neighbor and wall queries.

use glam::DVec2;

use crate::geometry::{Rect, Segment};

/// Agents bucketed by a square cell of side `cell`; rebuilt every step.
#[derive(Debug, Clone)]
pub struct NeighborGrid {
    origin: DVec2,
    cell: f64,
    nx: usize,
    ny: usize,
    starts: Vec<u32>,
    entries: Vec<u32>,
}

impl NeighborGrid {
    pub fn new(bounds: &Rect, cell: f64) -> Self {
        let size = bounds.size();
        let nx = ((size.x / cell).ceil() as usize).max(1);
        let ny = ((size.y / cell).ceil() as usize).max(1);
        NeighborGrid {
            origin: bounds.min(),
            cell,
            nx,
            ny,
            starts: vec![0; nx * ny + 1],
            entries: Vec::new(),
        }
    }

    fn bucket(&self, p: DVec2) -> (usize, usize) {
        let q = (p - self.origin) / self.cell;
        let i = (q.x.floor().max(0.0) as usize).min(self.nx - 1);
        let j = (q.y.floor().max(0.0) as usize).min(self.ny - 1);
        (i, j)
    }

    /// Counting sort of `positions` into buckets; entries within a bucket
    /// keep ascending index order.
    pub fn rebuild(&mut self, positions: &[DVec2]) {
        let n_buckets = self.nx * self.ny;
        let mut counts = vec![0u32; n_buckets + 1];
        let keys: Vec<usize> = positions
            .iter()
            .map(|&p| {
                let (i, j) = self.bucket(p);
                j * self.nx + i
            })
            .collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for k in 0..n_buckets {
            counts[k + 1] += counts[k];
        }
        self.starts.clone_from(&counts);
        let mut fill = counts;
        self.entries.resize(positions.len(), 0);
        for (idx, &k) in keys.iter().enumerate() {
            self.entries[fill[k] as usize] = idx as u32;
            fill[k] += 1;
        }
    }

    /// Indices in the 3x3 block of buckets around `p`.
    pub fn around(&self, p: DVec2, out: &mut Vec<usize>) {
        out.clear();
        let (i, j) = self.bucket(p);
        for bj in j.saturating_sub(1)..=(j + 1).min(self.ny - 1) {
            for bi in i.saturating_sub(1)..=(i + 1).min(self.nx - 1) {
                let k = bj * self.nx + bi;
                let (s, e) = (self.starts[k] as usize, self.starts[k + 1] as usize);
                out.extend(self.entries[s..e].iter().map(|&x| x as usize));
            }
        }
    }
}

/// Static wall segments, each listed in every bucket it comes within
/// `reach` of.
#[derive(Debug, Clone)]
pub struct WallIndex {
    pub segments: Vec<Segment>,
    origin: DVec2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl WallIndex {
    pub fn new(bounds: &Rect, segments: Vec<Segment>, reach: f64) -> Self {
        let cell = reach.max(0.5);
        let size = bounds.size();
        let nx = ((size.x / cell).ceil() as usize).max(1);
        let ny = ((size.y / cell).ceil() as usize).max(1);
        let origin = bounds.min();
        let mut buckets = vec![Vec::new(); nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let lo = origin + DVec2::new(i as f64, j as f64) * cell;
                let center = lo + DVec2::splat(cell / 2.0);
                let half_diag = cell * std::f64::consts::SQRT_2 / 2.0;
                for (s, seg) in segments.iter().enumerate() {
                    if seg.distance(center) <= reach + half_diag {
                        buckets[j * nx + i].push(s as u32);
                    }
                }
            }
        }
        WallIndex {
            segments,
            origin,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    pub fn near(&self, p: DVec2) -> impl Iterator<Item = &Segment> + '_ {
        let q = (p - self.origin) / self.cell;
        let i = (q.x.floor().max(0.0) as usize).min(self.nx - 1);
        let j = (q.y.floor().max(0.0) as usize).min(self.ny - 1);
        self.buckets[j * self.nx + i]
            .iter()
            .map(|&s| &self.segments[s as usize])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn neighbor_grid_finds_everything_within_one_cell() {
        let bounds = Rect::new(DVec2::ZERO, DVec2::new(20.0, 10.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<DVec2> = (0..300)
            .map(|_| DVec2::new(rng.gen_range(0.0..20.0), rng.gen_range(0.0..10.0)))
            .collect();
        let mut g = NeighborGrid::new(&bounds, 2.0);
        g.rebuild(&pts);
        let mut out = Vec::new();
        for (i, &p) in pts.iter().enumerate() {
            g.around(p, &mut out);
            for (j, &q) in pts.iter().enumerate() {
                if p.distance(q) <= 2.0 {
                    assert!(out.contains(&j), "{i} misses {j}");
                }
            }
        }
    }

    #[test]
    fn wall_index_covers_reach() {
        let bounds = Rect::new(DVec2::ZERO, DVec2::new(10.0, 10.0));
        let segs = vec![Segment::new(DVec2::new(5.0, 0.0), DVec2::new(5.0, 10.0))];
        let idx = WallIndex::new(&bounds, segs, 2.0);
        assert_eq!(idx.near(DVec2::new(3.1, 5.0)).count(), 1);
        assert_eq!(idx.near(DVec2::new(0.5, 5.0)).count(), 0);
    }
}
