//! Walkable occupancy grid, regions and connected components.

use std::collections::VecDeque;
use std::fmt;

use glam::DVec2;
use serde::{Deserialize, Serialize};

/// Linear cell index, `row * width + column`.
pub type CellIndex = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionId(pub usize);

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Origin,
    Destination,
    Intermediate,
    Measurement,
}

/// A set of walkable cells with a role.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: RegionId,
    pub kind: RegionKind,
    /// Sorted, deduplicated.
    pub cells: Vec<CellIndex>,
}

impl Region {
    pub fn new(id: RegionId, kind: RegionKind, mut cells: Vec<CellIndex>) -> Self {
        cells.sort_unstable();
        cells.dedup();
        Region { id, kind, cells }
    }

    pub fn contains(&self, cell: CellIndex) -> bool {
        self.cells.binary_search(&cell).is_ok()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn mask(&self, n_cells: usize) -> Vec<bool> {
        let mut mask = vec![false; n_cells];
        for &c in &self.cells {
            mask[c] = true;
        }
        mask
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Neighbor offsets in ascending linear-index order for an interior cell.
const OFFSETS_8: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];
const OFFSETS_4: [(i64, i64); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    /// World coordinate of the lower-left corner of cell (0, 0).
    pub origin: DVec2,
    pub walkable: Vec<bool>,
}

impl OccupancyGrid {
    pub fn new(width: usize, height: usize, cell_size: f64, origin: DVec2) -> Self {
        OccupancyGrid {
            width,
            height,
            cell_size,
            origin,
            walkable: vec![true; width * height],
        }
    }

    /// Builds a grid with unit cells from rows of `.` (walkable) and `#`
    /// (blocked); the first string is the top row.
    pub fn from_ascii(rows: &[&str], cell_size: f64) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut grid = OccupancyGrid::new(width, height, cell_size, DVec2::ZERO);
        for (r, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), width, "ragged ascii grid");
            let j = height - 1 - r;
            for (i, ch) in row.chars().enumerate() {
                grid.walkable[j * width + i] = ch != '#';
            }
        }
        grid
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> CellIndex {
        j * self.width + i
    }

    pub fn coords(&self, cell: CellIndex) -> (usize, usize) {
        (cell % self.width, cell / self.width)
    }

    pub fn cell_center(&self, cell: CellIndex) -> DVec2 {
        let (i, j) = self.coords(cell);
        self.origin + DVec2::new(i as f64 + 0.5, j as f64 + 0.5) * self.cell_size
    }

    pub fn cell_of(&self, p: DVec2) -> Option<CellIndex> {
        let q = (p - self.origin) / self.cell_size;
        if !(q.x >= 0.0 && q.y >= 0.0) {
            return None;
        }
        let (i, j) = (q.x.floor() as usize, q.y.floor() as usize);
        (i < self.width && j < self.height).then(|| self.index(i, j))
    }

    pub fn is_walkable(&self, cell: CellIndex) -> bool {
        self.walkable[cell]
    }

    pub fn walkable_at(&self, p: DVec2) -> bool {
        self.cell_of(p).is_some_and(|c| self.walkable[c])
    }

    pub fn walkable_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.len()).filter(|&c| self.walkable[c])
    }

    /// In-bounds neighbors in ascending index order.
    pub fn neighbors(
        &self,
        cell: CellIndex,
        connectivity: Connectivity,
    ) -> impl Iterator<Item = CellIndex> + '_ {
        let offsets: &'static [(i64, i64)] = match connectivity {
            Connectivity::Four => &OFFSETS_4,
            Connectivity::Eight => &OFFSETS_8,
        };
        let (i, j) = self.coords(cell);
        let (w, h) = (self.width as i64, self.height as i64);
        offsets.iter().filter_map(move |&(di, dj)| {
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            (ni >= 0 && nj >= 0 && ni < w && nj < h).then(|| (nj * w + ni) as CellIndex)
        })
    }

    /// Movement edges of the navigation graph from `cell`, restricted to
    /// cells for which `passable` holds. Diagonal steps are allowed unless
    /// both orthogonal cells they cut past are impassable. Edge lengths are
    /// in meters. Ascending neighbor index order.
    pub fn moves<'a, F>(
        &'a self,
        cell: CellIndex,
        passable: F,
    ) -> impl Iterator<Item = (CellIndex, f64)> + 'a
    where
        F: Fn(CellIndex) -> bool + 'a,
    {
        let (i, j) = self.coords(cell);
        let (w, h) = (self.width as i64, self.height as i64);
        let straight = self.cell_size;
        let diagonal = self.cell_size * std::f64::consts::SQRT_2;
        OFFSETS_8.iter().filter_map(move |&(di, dj)| {
            let (ni, nj) = (i as i64 + di, j as i64 + dj);
            if ni < 0 || nj < 0 || ni >= w || nj >= h {
                return None;
            }
            let n = (nj * w + ni) as CellIndex;
            if !passable(n) {
                return None;
            }
            if di != 0 && dj != 0 {
                let side_a = (j as i64 * w + ni) as CellIndex;
                let side_b = (nj * w + i as i64) as CellIndex;
                if !passable(side_a) && !passable(side_b) {
                    return None;
                }
                Some((n, diagonal))
            } else {
                Some((n, straight))
            }
        })
    }
}

/// Splits `cells` into connected components. Components are ordered by
/// their minimal cell index and each component's cells are sorted.
pub fn connected_components(
    grid: &OccupancyGrid,
    cells: &[CellIndex],
    connectivity: Connectivity,
) -> Vec<Vec<CellIndex>> {
    let mut sorted = cells.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    const UNSEEN: u32 = u32::MAX - 1;
    const OUTSIDE: u32 = u32::MAX;
    let mut label = vec![OUTSIDE; grid.len()];
    for &c in &sorted {
        label[c] = UNSEEN;
    }

    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    for &seed in &sorted {
        if label[seed] != UNSEEN {
            continue;
        }
        let id = components.len() as u32;
        let mut comp = Vec::new();
        label[seed] = id;
        queue.push_back(seed);
        while let Some(c) = queue.pop_front() {
            comp.push(c);
            for n in grid.neighbors(c, connectivity) {
                if label[n] == UNSEEN {
                    label[n] = id;
                    queue.push_back(n);
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}
