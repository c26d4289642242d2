//! Extraction of discrete route alternatives from the walking geometry.
//!
//! The distance field to a target is cut into bands of width `w`. Walking
//! upstream through the bands, a routing alternative shows up either as a
//! band that falls apart into several unconnected pieces (the pieces are the
//! branches), or as a single band piece touching several pieces of the band
//! below it (those lower pieces are the branches). Each branch piece becomes
//! an intermediate destination. Because it is a whole band piece, its
//! upstream boundary is an iso-distance line of the downstream field, so a
//! walker heading for it walks the same way it would walk toward the
//! downstream target and does not bend when it switches fields.
//!
//! The search recurses into every branch, scoped to the branch's
//! catchment: the cells whose shortest path downstream runs through it.
//! The result is a tree rooted at the destination; every leaf-to-root path
//! is one route.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{
    band_index, compute_distance_field, compute_restricted, compute_steering_field, steering_costs,
    DistanceField, Downstream,
};
use crate::grid::{
    connected_components, CellIndex, Connectivity, OccupancyGrid, Region, RegionId, RegionKind,
};
use crate::scenario::Layout;

/// Band pieces smaller than this are treated as rasterization noise.
pub const MIN_BRANCH_CELLS: usize = 4;
pub const DEFAULT_BAND_WIDTH: f64 = 2.0;
pub const DEFAULT_MAX_ROUTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    /// A band falls apart into several pieces.
    Diverging,
    /// One band piece borders several pieces of the band below.
    Merging,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub kind: SplitKind,
    /// Band scanned when the trigger fired.
    pub band: usize,
    /// Band the branch pieces belong to (`band` or `band - 1`).
    pub branch_band: usize,
    pub band_width: f64,
    pub branches: Vec<Vec<CellIndex>>,
}

/// All split triggers of `field`, scanning bands upstream from band 1.
pub fn split_triggers(field: &DistanceField, band_width: f64) -> Vec<Split> {
    assert!(band_width > 0.0, "band width must be positive");
    let grid = field.grid();
    let mut bands: Vec<Vec<CellIndex>> = Vec::new();
    let mut band_of = vec![usize::MAX; grid.len()];
    for c in field.reached() {
        let k = band_index(field.dist(c), band_width);
        if bands.len() <= k {
            bands.resize_with(k + 1, Vec::new);
        }
        bands[k].push(c);
        band_of[c] = k;
    }

    // component label per cell within its own band
    let mut comp_of = vec![u32::MAX; grid.len()];
    let mut prev: Vec<Vec<CellIndex>> = Vec::new();
    let mut triggers = Vec::new();
    for (k, cells) in bands.iter().enumerate() {
        let comps = connected_components(grid, cells, Connectivity::Eight);
        for (id, comp) in comps.iter().enumerate() {
            for &c in comp {
                comp_of[c] = id as u32;
            }
        }
        if k == 0 {
            prev = comps;
            continue;
        }

        let touches_below = |comp: &[CellIndex]| -> Vec<u32> {
            let mut below: Vec<u32> = comp
                .iter()
                .flat_map(|&c| grid.neighbors(c, Connectivity::Eight))
                .filter(|&n| {
                    band_of[n] == k - 1 && prev[comp_of[n] as usize].len() >= MIN_BRANCH_CELLS
                })
                .map(|n| comp_of[n])
                .collect();
            below.sort_unstable();
            below.dedup();
            below
        };

        let attached: Vec<&Vec<CellIndex>> = comps
            .iter()
            .filter(|comp| comp.len() >= MIN_BRANCH_CELLS && !touches_below(comp).is_empty())
            .collect();
        if attached.len() >= 2 {
            triggers.push(Split {
                kind: SplitKind::Diverging,
                band: k,
                branch_band: k,
                band_width,
                branches: attached.into_iter().cloned().collect(),
            });
        } else if comps
            .iter()
            .any(|comp| comp.len() >= MIN_BRANCH_CELLS && touches_below(comp).len() >= 2)
        {
            triggers.push(Split {
                kind: SplitKind::Merging,
                band: k,
                branch_band: k - 1,
                band_width,
                branches: prev
                    .iter()
                    .filter(|p| p.len() >= MIN_BRANCH_CELLS)
                    .cloned()
                    .collect(),
            });
        }
        prev = comps;
    }
    triggers
}

/// First (closest to the target) split trigger, if any.
pub fn detect_split(field: &DistanceField, band_width: f64) -> Option<Split> {
    split_triggers(field, band_width).into_iter().next()
}

/// Assigns every cell upstream of `branch_band` to the branch its
/// predecessor chain runs through. Branch cells themselves are not part of
/// any catchment; cells whose chain meets no branch stay unassigned.
pub fn catchment_partition(
    field: &DistanceField,
    branches: &[Vec<CellIndex>],
    branch_band: usize,
    band_width: f64,
) -> Vec<Vec<CellIndex>> {
    let n = field.grid().len();
    const NONE: u32 = u32::MAX;
    let mut label = vec![NONE; n];
    for (b, cells) in branches.iter().enumerate() {
        for &c in cells {
            label[c] = b as u32;
        }
    }
    let mut order: Vec<CellIndex> = field
        .reached()
        .filter(|&c| band_index(field.dist(c), band_width) > branch_band)
        .collect();
    order.sort_by(|&a, &b| field.dist(a).total_cmp(&field.dist(b)).then(a.cmp(&b)));

    let mut catchments = vec![Vec::new(); branches.len()];
    for c in order {
        let Some(p) = field.predecessor(c) else {
            continue;
        };
        let l = label[p];
        // branch cells and upstream cells carry labels; others are NONE
        if l != NONE {
            label[c] = l;
            catchments[l as usize].push(c);
        }
    }
    for c in &mut catchments {
        c.sort_unstable();
    }
    catchments
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
pub struct RouteNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: usize,
    pub region: Region,
    /// Band of the parent field the region was cut from (`None` at the root).
    pub band_index: Option<usize>,
    pub band_width: f64,
    /// Cells served by this node: everything upstream of its region whose
    /// parent-field shortest path runs through it. The whole reachable area
    /// at the root.
    pub catchment: Vec<CellIndex>,
    /// Field toward `region` restricted to `catchment ∪ region`; drives the
    /// split search below this node.
    pub field: Arc<DistanceField>,
    /// Clearance-weighted field toward `region` over the whole walkable
    /// grid; used for steering.
    pub steering: Arc<DistanceField>,
}

impl RouteNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// True if `cell` lies in this node's region or catchment.
    pub fn serves(&self, cell: CellIndex) -> bool {
        self.region.contains(cell) || self.catchment.binary_search(&cell).is_ok()
    }
}

#[derive(Debug, Clone)]
pub struct RouteGraph {
    pub grid: Arc<OccupancyGrid>,
    pub band_width: f64,
    pub nodes: Vec<RouteNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Route {
    pub id: usize,
    /// Index of the origin this route serves.
    pub origin: usize,
    /// Regions to visit, upstream to downstream, ending at the destination.
    pub segments: Vec<RegionId>,
    /// Route-graph nodes matching `segments`.
    pub nodes: Vec<NodeId>,
    /// Initial choice probability (uniform over the origin's routes).
    pub probability: f64,
    /// Geodesic length from the origin's central cell, meters.
    pub length: f64,
}

struct Pending {
    parent: Option<usize>,
    depth: usize,
    region_cells: Vec<CellIndex>,
    band_index: Option<usize>,
    catchment: Vec<CellIndex>,
    field: Arc<DistanceField>,
    steering: Arc<DistanceField>,
}

/// Builds the route tree for `destination`, recursing only into branches
/// that serve at least one origin cell.
pub fn build_route_graph(
    grid: &Arc<OccupancyGrid>,
    destination: &Region,
    origins: &[Region],
    band_width: f64,
    max_routes: usize,
) -> Result<RouteGraph> {
    if max_routes < 1 {
        return Err(Error::InvalidMaxRoutes);
    }
    if !(band_width > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "band width must be positive, got {band_width}"
        )));
    }
    let root_field = Arc::new(compute_distance_field(grid, destination));
    for o in origins {
        if o.cells.iter().any(|&c| !root_field.dist(c).is_finite()) {
            return Err(Error::OriginUnreachable(format!("region {}", o.id)));
        }
    }
    let costs = steering_costs(grid);
    let mut is_origin = vec![false; grid.len()];
    for o in origins {
        for &c in &o.cells {
            is_origin[c] = true;
        }
    }

    let mut pending = vec![Pending {
        parent: None,
        depth: 0,
        region_cells: destination.cells.clone(),
        band_index: None,
        catchment: root_field
            .reached()
            .filter(|&c| !root_field.is_target(c))
            .collect(),
        steering: Arc::new(compute_steering_field(grid, destination, &costs, None)),
        field: root_field,
    }];
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];
    let mut next = 0;
    while next < pending.len() {
        let node = &pending[next];
        let mut chosen: Option<(Split, Vec<(Vec<CellIndex>, Vec<CellIndex>)>)> = None;
        for split in split_triggers(&node.field, band_width) {
            let catchments =
                catchment_partition(&node.field, &split.branches, split.branch_band, band_width);
            let serving: Vec<(Vec<CellIndex>, Vec<CellIndex>)> = split
                .branches
                .iter()
                .cloned()
                .zip(catchments)
                .filter(|(region, catchment)| region.iter().chain(catchment).any(|&c| is_origin[c]))
                .collect();
            if serving.len() >= 2 {
                chosen = Some((split, serving));
                break;
            }
        }
        let Some((split, serving)) = chosen else {
            next += 1;
            continue;
        };

        let depth = node.depth + 1;
        let built: Vec<Pending> = serving
            .into_par_iter()
            .map(|(region_cells, catchment)| {
                let parent_steering = &pending[next].steering;
                let target =
                    Region::new(RegionId(usize::MAX), RegionKind::Intermediate, region_cells);
                let mut domain = vec![false; grid.len()];
                for &c in target.cells.iter().chain(&catchment) {
                    domain[c] = true;
                }
                let field = Arc::new(compute_restricted(grid, &target, Some(&domain)));
                let entry = entry_cells(grid, &target.cells, &catchment);
                let downstream = Downstream {
                    field: parent_steering,
                    entry: &entry,
                };
                let steering = Arc::new(compute_steering_field(
                    grid,
                    &target,
                    &costs,
                    Some(downstream),
                ));
                Pending {
                    parent: Some(next),
                    depth,
                    region_cells: target.cells,
                    band_index: Some(split.branch_band),
                    catchment,
                    field,
                    steering,
                }
            })
            .collect();
        for p in built {
            children[next].push(pending.len());
            children.push(Vec::new());
            pending.push(p);
        }
        next += 1;
    }

    prune_to(&mut children, &pending, max_routes);

    // compact surviving nodes in creation order
    let mut keep = vec![false; pending.len()];
    keep[0] = true;
    for i in 0..pending.len() {
        if keep[i] {
            for &c in &children[i] {
                keep[c] = true;
            }
        }
    }
    let mut new_id = vec![usize::MAX; pending.len()];
    let mut count = 0;
    for i in 0..pending.len() {
        if keep[i] {
            new_id[i] = count;
            count += 1;
        }
    }
    let first_free = destination
        .id
        .0
        .max(origins.iter().map(|o| o.id.0).max().unwrap_or(0))
        + 2;
    let mut nodes = Vec::with_capacity(count);
    for (i, p) in pending.into_iter().enumerate() {
        if !keep[i] {
            continue;
        }
        let id = new_id[i];
        let region = if id == 0 {
            destination.clone()
        } else {
            Region::new(
                RegionId(first_free + id - 1),
                RegionKind::Intermediate,
                p.region_cells,
            )
        };
        nodes.push(RouteNode {
            id: NodeId(id),
            parent: p.parent.map(|q| NodeId(new_id[q])),
            children: children[i].iter().map(|&c| NodeId(new_id[c])).collect(),
            depth: p.depth,
            region,
            band_index: p.band_index,
            band_width,
            catchment: p.catchment,
            field: p.field,
            steering: p.steering,
        });
    }

    Ok(RouteGraph {
        grid: Arc::clone(grid),
        band_width,
        nodes,
    })
}

/// Collapses the deepest internal nodes (highest id first on ties) until at
/// most `max_routes` leaves remain.
fn prune_to(children: &mut [Vec<usize>], pending: &[Pending], max_routes: usize) {
    loop {
        let alive = reachable_nodes(children);
        let leaves = alive.iter().filter(|&&i| children[i].is_empty()).count();
        if leaves <= max_routes {
            return;
        }
        let victim = alive
            .iter()
            .copied()
            .filter(|&i| !children[i].is_empty())
            .max_by_key(|&i| (pending[i].depth, i))
            .expect("more leaves than one implies an internal node");
        children[victim].clear();
    }
}

fn reachable_nodes(children: &[Vec<usize>]) -> Vec<usize> {
    let mut out = vec![0];
    let mut k = 0;
    while k < out.len() {
        out.extend(children[out[k]].iter().copied());
        k += 1;
    }
    out
}

impl RouteGraph {
    pub fn root(&self) -> &RouteNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &RouteNode {
        &self.nodes[id.0]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &RouteNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn node_for_region(&self, region: RegionId) -> Option<&RouteNode> {
        self.nodes.iter().find(|n| n.region.id == region)
    }

    /// Nodes from `leaf` down to the root.
    pub fn path_to_root(&self, leaf: NodeId) -> Vec<NodeId> {
        let mut path = vec![leaf];
        let mut cur = leaf;
        while let Some(p) = self.node(cur).parent {
            path.push(p);
            cur = p;
        }
        path
    }

    /// Length of the path from `start` that follows each segment's steering
    /// predecessors until its region is entered.
    pub fn chain_length(&self, start: CellIndex, nodes: &[NodeId]) -> f64 {
        let mut cell = start;
        let mut total = 0.0;
        for &id in nodes {
            let field = &self.node(id).steering;
            while !field.is_target(cell) {
                let next = field
                    .predecessor(cell)
                    .expect("finite cells have predecessor chains");
                total += self
                    .grid
                    .cell_center(cell)
                    .distance(self.grid.cell_center(next));
                cell = next;
            }
        }
        total
    }

    /// Routes available from `origin`: one per leaf serving any origin cell,
    /// ordered by leaf id. Ids start at `first_id`.
    pub fn enumerate_routes(
        &self,
        origin: &Region,
        origin_index: usize,
        first_id: usize,
    ) -> Result<Vec<Route>> {
        let leaves: Vec<&RouteNode> = self
            .leaves()
            .filter(|leaf| origin.cells.iter().any(|&c| leaf.serves(c)))
            .collect();
        if leaves.is_empty() {
            return Err(Error::NoRouteForOrigin(format!("region {}", origin.id)));
        }
        let start = central_cell(&self.grid, origin);
        let share = 1.0 / leaves.len() as f64;
        Ok(leaves
            .iter()
            .enumerate()
            .map(|(k, leaf)| {
                let nodes = self.path_to_root(leaf.id);
                Route {
                    id: first_id + k,
                    origin: origin_index,
                    segments: nodes.iter().map(|&n| self.node(n).region.id).collect(),
                    length: self.chain_length(start, &nodes),
                    nodes,
                    probability: share,
                }
            })
            .collect())
    }

    /// Per-child seam statistics: for every catchment cell `q` of a child
    /// `c` with parent field `Dp`, the deviation `|Dc(q) + off − Dp(q)|`
    /// where `off` is the smallest `Dp` on the child's upstream edge.
    pub fn seam_report(&self) -> Vec<SeamStats> {
        self.nodes
            .iter()
            .filter_map(|child| {
                let parent = self.node(child.parent?);
                let dp = &parent.field;
                let dc = &child.field;
                let grid = &self.grid;
                let in_catchment = |c: CellIndex| child.catchment.binary_search(&c).is_ok();
                let offset = child
                    .region
                    .cells
                    .iter()
                    .filter(|&&c| {
                        grid.neighbors(c, Connectivity::Eight)
                            .any(|n| in_catchment(n))
                    })
                    .map(|&c| dp.dist(c))
                    .fold(f64::INFINITY, f64::min);
                let deviations: Vec<f64> = child
                    .catchment
                    .iter()
                    .filter(|&&q| dc.dist(q).is_finite())
                    .map(|&q| (dc.dist(q) + offset - dp.dist(q)).abs())
                    .collect();
                Some(SeamStats {
                    node: child.id,
                    offset,
                    cells: deviations.len(),
                    max_deviation: deviations.iter().copied().fold(0.0, f64::max),
                    deviations,
                })
            })
            .collect()
    }

    /// Structured description of the graph and the given routes.
    pub fn export(&self, routes: &[Route]) -> RouteExport {
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeExport {
                id: n.id.0,
                region: n.region.id.0,
                parent: n.parent.map(|p| p.0),
                band_index: n.band_index,
                band_width: n.band_width,
                cells: n
                    .region
                    .cells
                    .iter()
                    .map(|&c| {
                        let (i, j) = self.grid.coords(c);
                        let p = self.grid.cell_center(c);
                        [i as f64, j as f64, round4(p.x), round4(p.y)]
                    })
                    .collect(),
            })
            .collect();
        RouteExport {
            band_width: self.band_width,
            cell_size: self.grid.cell_size,
            nodes,
            routes: routes.to_vec(),
        }
    }

    pub fn summary(&self, routes: &[Route]) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} route(s), {} node(s), band width {} m",
            routes.len(),
            self.nodes.len(),
            self.band_width
        );
        for r in routes {
            let segs: Vec<String> = r.segments.iter().map(|s| s.to_string()).collect();
            let _ = writeln!(
                out,
                "route {} (origin {}): {} segment(s) [{}], geodesic length {:.2} m",
                r.id,
                r.origin,
                r.segments.len(),
                segs.join(" -> "),
                r.length
            );
        }
        out
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Region cells with an 8-neighbor in `catchment`: the upstream edge walkers
/// enter through. All region cells if none touch it.
fn entry_cells(
    grid: &OccupancyGrid,
    region: &[CellIndex],
    catchment: &[CellIndex],
) -> Vec<CellIndex> {
    let mut upstream = vec![false; grid.len()];
    for &c in catchment {
        upstream[c] = true;
    }
    let edge: Vec<CellIndex> = region
        .iter()
        .copied()
        .filter(|&c| grid.neighbors(c, Connectivity::Eight).any(|n| upstream[n]))
        .collect();
    if edge.is_empty() {
        region.to_vec()
    } else {
        edge
    }
}

/// Origin cell closest to the region's centroid (lowest index on ties).
pub fn central_cell(grid: &OccupancyGrid, region: &Region) -> CellIndex {
    let n = region.cells.len() as f64;
    let centroid = region
        .cells
        .iter()
        .map(|&c| grid.cell_center(c))
        .fold(glam::DVec2::ZERO, |a, b| a + b)
        / n;
    let mut best = region.cells[0];
    let mut best_d = f64::INFINITY;
    for &c in &region.cells {
        let d = grid.cell_center(c).distance_squared(centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct SeamStats {
    pub node: NodeId,
    pub offset: f64,
    pub cells: usize,
    pub max_deviation: f64,
    pub deviations: Vec<f64>,
}

impl SeamStats {
    pub fn fraction_within(&self, tolerance: f64) -> f64 {
        if self.deviations.is_empty() {
            return 1.0;
        }
        let ok = self.deviations.iter().filter(|&&d| d <= tolerance).count();
        ok as f64 / self.deviations.len() as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeExport {
    pub id: usize,
    pub region: usize,
    pub parent: Option<usize>,
    pub band_index: Option<usize>,
    pub band_width: f64,
    /// `[column, row, x, y]` per region cell.
    pub cells: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RouteExport {
    pub band_width: f64,
    pub cell_size: f64,
    pub nodes: Vec<NodeExport>,
    pub routes: Vec<Route>,
}

/// Route graph plus the routes of every origin of a layout.
#[derive(Debug, Clone)]
pub struct RouteSet {
    pub graph: RouteGraph,
    pub routes: Vec<Route>,
}

impl RouteSet {
    pub fn build(layout: &Layout, band_width: f64, max_routes: usize) -> Result<RouteSet> {
        let grid = Arc::new(layout.grid.clone());
        let origin_regions: Vec<Region> = layout.origins.iter().map(|o| o.region.clone()).collect();
        let graph = build_route_graph(
            &grid,
            &layout.destination,
            &origin_regions,
            band_width,
            max_routes,
        )?;
        let mut routes = Vec::new();
        for (k, o) in layout.origins.iter().enumerate() {
            let found = graph
                .enumerate_routes(&o.region, k, routes.len())
                .map_err(|_| Error::NoRouteForOrigin(o.name.clone()))?;
            routes.extend(found);
        }
        Ok(RouteSet { graph, routes })
    }

    pub fn routes_of(&self, origin: usize) -> Vec<&Route> {
        self.routes.iter().filter(|r| r.origin == origin).collect()
    }

    /// The route with the smallest geodesic length for `origin`
    /// (lowest id on ties).
    pub fn shortest_route(&self, origin: usize) -> usize {
        self.routes_of(origin)
            .into_iter()
            .min_by(|a, b| a.length.total_cmp(&b.length).then(a.id.cmp(&b.id)))
            .map(|r| r.id)
            .expect("every origin has at least one route")
    }
}
