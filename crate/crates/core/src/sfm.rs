//! Circular social force model with route-following steering.
//!
//! Each step reads only the pre-step snapshot to compute accelerations
//! (in parallel), then commits velocities and positions serially and does
//! the segment/measurement/arrival bookkeeping at the new clock value.

use std::sync::Arc;

use glam::DVec2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DistanceField, Steering};
use crate::geometry::Rect;
use crate::grid::{OccupancyGrid, Region};
use crate::measurement::TravelTimeRecord;
use crate::routes::RouteSet;
use crate::scenario::{Layout, Scenario};
use crate::seed::{self, Purpose};
use crate::spatial::{NeighborGrid, WallIndex};

/// Placement attempts per agent before spawning gives up.
const SPAWN_ATTEMPTS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfmParams {
    /// Relaxation time, s.
    pub tau: f64,
    /// Agent repulsion strength, m/s².
    pub a_soc: f64,
    /// Agent repulsion range, m.
    pub b_soc: f64,
    pub a_wall: f64,
    pub b_wall: f64,
    pub radius: f64,
    /// Speed cap as a multiple of the desired speed.
    pub v_cap: f64,
    /// Interactions beyond this distance are dropped, m.
    pub neighbor_radius: f64,
    /// An agent whose progress along its desired direction stays below
    /// `stall_speed` (m/s) for `stall_time` (s) while an oncoming agent
    /// touches it from the front is pushed with `sidestep` (m/s²) to the
    /// right of its desired direction. Resolves head-on standoffs, which
    /// the plain circular force law can hold forever.
    pub stall_speed: f64,
    pub stall_time: f64,
    pub sidestep: f64,
}

impl Default for SfmParams {
    fn default() -> Self {
        SfmParams {
            tau: 0.5,
            a_soc: 2.0,
            b_soc: 0.3,
            a_wall: 5.0,
            b_wall: 0.1,
            radius: 0.2,
            v_cap: 1.3,
            neighbor_radius: 2.0,
            stall_speed: 0.2,
            stall_time: 1.0,
            sidestep: 2.0,
        }
    }
}

impl SfmParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("tau", self.tau),
            ("a_soc", self.a_soc),
            ("b_soc", self.b_soc),
            ("a_wall", self.a_wall),
            ("b_wall", self.b_wall),
            ("radius", self.radius),
            ("v_cap", self.v_cap),
            ("neighbor_radius", self.neighbor_radius),
            ("stall_speed", self.stall_speed),
            ("stall_time", self.stall_time),
            ("sidestep", self.sidestep),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Desired-speed distribution, m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedDistribution {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Normal, clamped to `[min, max]`.
    Normal {
        mean: f64,
        std: f64,
        min: f64,
        max: f64,
    },
}

impl Default for SpeedDistribution {
    fn default() -> Self {
        SpeedDistribution::Uniform { lo: 0.97, hi: 1.62 }
    }
}

impl SpeedDistribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SpeedDistribution::Uniform { lo, hi } => lo > 0.0 && hi >= lo && hi.is_finite(),
            SpeedDistribution::Normal {
                mean,
                std,
                min,
                max,
            } => min > 0.0 && max >= min && std >= 0.0 && mean.is_finite() && max.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid speed distribution {self:?}"
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SpeedDistribution::Uniform { lo, hi } if hi > lo => rng.gen_range(lo..hi),
            SpeedDistribution::Uniform { lo, .. } => lo,
            SpeedDistribution::Normal {
                mean,
                std,
                min,
                max,
            } => {
                let n = Normal::new(mean, std).expect("validated std");
                n.sample(rng).clamp(min, max)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: usize,
    pub position: DVec2,
    pub velocity: DVec2,
    pub v0: f64,
    pub radius: f64,
    pub route: usize,
    /// Index into the route's segment list of the current target.
    pub segment: usize,
    /// Consecutive steps spent below the stall speed.
    pub stalled: u32,
    pub timing: TravelTimeRecord,
}

/// Steering fields of one route, upstream to downstream.
#[derive(Debug, Clone)]
pub struct RoutePlan {
    pub id: usize,
    pub segments: Vec<Arc<DistanceField>>,
}

/// Static simulation context.
#[derive(Debug, Clone)]
pub struct World {
    pub grid: Arc<OccupancyGrid>,
    pub bounds: Rect,
    pub walls: WallIndex,
    /// Indexed by route id.
    pub routes: Vec<RoutePlan>,
    /// Cells of the measurement area; `None` means measurement starts at
    /// spawn.
    pub measurement: Option<Vec<bool>>,
    pub params: SfmParams,
    pub dt: f64,
    pub max_time: f64,
    /// Per route and non-final segment: the next segment's lowest value on
    /// this segment's target. A walker below it has been pushed past the
    /// target without touching it.
    overshoot: Vec<Vec<f64>>,
}

impl World {
    pub fn new(
        scenario: &Scenario,
        layout: &Layout,
        grid: Arc<OccupancyGrid>,
        routes: Vec<RoutePlan>,
        params: SfmParams,
    ) -> Result<World> {
        params.validate()?;
        for (k, r) in routes.iter().enumerate() {
            assert_eq!(r.id, k, "route plans must be indexed by id");
        }
        let overshoot = routes
            .iter()
            .map(|r| {
                r.segments
                    .windows(2)
                    .map(|w| {
                        (0..grid.len())
                            .filter(|&c| w[0].is_target(c))
                            .map(|c| w[1].dist(c))
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect()
            })
            .collect();
        Ok(World {
            overshoot,
            walls: WallIndex::new(
                &scenario.bounds,
                scenario.wall_segments(),
                params.neighbor_radius,
            ),
            measurement: layout.measurement.as_ref().map(|m| m.mask(grid.len())),
            grid,
            bounds: scenario.bounds,
            routes,
            params,
            dt: scenario.parameters.dt,
            max_time: scenario.parameters.max_time,
        })
    }

    /// World whose routes follow the extracted route graph.
    pub fn from_routes(
        scenario: &Scenario,
        layout: &Layout,
        set: &RouteSet,
        params: SfmParams,
    ) -> Result<World> {
        let plans = set
            .routes
            .iter()
            .map(|r| RoutePlan {
                id: r.id,
                segments: r
                    .nodes
                    .iter()
                    .map(|&n| set.graph.node(n).steering.clone())
                    .collect(),
            })
            .collect();
        World::new(scenario, layout, set.graph.grid.clone(), plans, params)
    }

    fn in_measurement(&self, cell: usize) -> bool {
        self.measurement.as_ref().is_none_or(|m| m[cell])
    }

    /// Whether a walker on `route` at `cell` is done with `segment`.
    fn segment_done(&self, route: usize, segment: usize, cell: usize) -> bool {
        let plan = &self.routes[route];
        plan.segments[segment].is_target(cell)
            || self.overshoot[route]
                .get(segment)
                .is_some_and(|&lim| plan.segments[segment + 1].dist(cell) < lim)
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    /// Active agents in ascending id order.
    pub agents: Vec<Agent>,
    /// Timing records of retired agents, in arrival order.
    pub arrived: Vec<TravelTimeRecord>,
    pub spawned: usize,
    pub step_count: u64,
    pub dt: f64,
    /// Moves that had to slide along, or stop at, a blocked cell.
    pub wall_contacts: u64,
    neighbors: NeighborGrid,
}

impl SimState {
    pub fn new(world: &World, mut agents: Vec<Agent>) -> SimState {
        agents.sort_by_key(|a| a.id);
        let mut state = SimState {
            spawned: agents.len(),
            agents,
            arrived: Vec::new(),
            step_count: 0,
            dt: world.dt,
            wall_contacts: 0,
            neighbors: NeighborGrid::new(&world.bounds, world.params.neighbor_radius),
        };
        state.bookkeeping(world);
        state
    }

    pub fn clock(&self) -> f64 {
        self.step_count as f64 * self.dt
    }

    pub fn positions(&self) -> Vec<DVec2> {
        self.agents.iter().map(|a| a.position).collect()
    }

    /// Measurement entry, segment advance and arrival at the current clock.
    fn bookkeeping(&mut self, world: &World) {
        let t = self.clock();
        let mut arrived = Vec::new();
        for a in &mut self.agents {
            let Some(cell) = world.grid.cell_of(a.position) else {
                continue;
            };
            if world.in_measurement(cell) {
                a.timing.enter_measurement(t);
            }
            let n = world.routes[a.route].segments.len();
            while a.segment < n && world.segment_done(a.route, a.segment, cell) {
                a.segment += 1;
            }
            if a.segment == n {
                a.timing.arrive(t);
                arrived.push(a.timing);
            }
        }
        if !arrived.is_empty() {
            self.agents.retain(|a| a.timing.arrival_time.is_none());
            self.arrived.extend(arrived);
        }
    }
}

/// Places agents in `origin` without overlap and assigns routes so that
/// route `r` gets `count` agents for each `(r, count)` in `route_counts`.
/// Route labels are shuffled over the placed positions.
#[allow(clippy::too_many_arguments)]
pub fn spawn_agents<R: Rng, S: Rng>(
    world: &World,
    origin: &Region,
    route_counts: &[(usize, usize)],
    speeds: &SpeedDistribution,
    first_id: usize,
    spawn_time: f64,
    position_rng: &mut R,
    speed_rng: &mut S,
) -> Result<Vec<Agent>> {
    speeds.validate()?;
    let n: usize = route_counts.iter().map(|&(_, c)| c).sum();
    if n == 0 {
        return Ok(Vec::new());
    }
    let r = world.params.radius;
    let cs = world.grid.cell_size;
    let mut placed: Vec<DVec2> = Vec::with_capacity(n);
    let mut attempts = 0;
    while placed.len() < n {
        if attempts == SPAWN_ATTEMPTS * n {
            let area = origin.len() as f64 * cs * cs;
            return Err(Error::Overcrowded {
                placed: placed.len(),
                requested: n,
                density: placed.len() as f64 / area,
            });
        }
        attempts += 1;
        let cell = origin.cells[position_rng.gen_range(0..origin.cells.len())];
        let lo = world.grid.cell_center(cell) - DVec2::splat(cs / 2.0);
        let p = lo + DVec2::new(position_rng.gen::<f64>(), position_rng.gen::<f64>()) * cs;
        if !world.grid.walkable_at(p) {
            continue;
        }
        if world.walls.near(p).any(|s| s.distance(p) < r) {
            continue;
        }
        if placed.iter().any(|q| q.distance_squared(p) < 4.0 * r * r) {
            continue;
        }
        placed.push(p);
    }

    let mut labels: Vec<usize> = route_counts
        .iter()
        .flat_map(|&(route, c)| std::iter::repeat(route).take(c))
        .collect();
    labels.shuffle(position_rng);

    Ok(placed
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(k, (position, route))| {
            let id = first_id + k;
            Agent {
                id,
                position,
                velocity: DVec2::ZERO,
                v0: speeds.sample(speed_rng),
                radius: r,
                route,
                segment: 0,
                stalled: 0,
                timing: TravelTimeRecord::new(id, route, spawn_time),
            }
        })
        .collect())
}

/// Initial state for one run: every origin of `layout` spawns its
/// `loads[origin]` as `(route id, count)` pairs. Positions and speeds come
/// from separate streams derived from `(master_seed, iteration, run)`.
pub fn populate(
    world: &World,
    layout: &Layout,
    loads: &[Vec<(usize, usize)>],
    speeds: &SpeedDistribution,
    master_seed: u64,
    iteration: u64,
    run: u64,
) -> Result<SimState> {
    let mut pos_rng = seed::rng(master_seed, iteration, run, Purpose::SpawnPositions);
    let mut speed_rng = seed::rng(master_seed, iteration, run, Purpose::DesiredSpeeds);
    let mut agents = Vec::new();
    for (origin, load) in layout.origins.iter().zip(loads) {
        let spawned = spawn_agents(
            world,
            &origin.region,
            load,
            speeds,
            agents.len(),
            0.0,
            &mut pos_rng,
            &mut speed_rng,
        )?;
        agents.extend(spawned);
    }
    Ok(SimState::new(world, agents))
}

/// Current segment and unit steering direction of `agent`, advancing past
/// segments whose region it already stands on. `None` once the final
/// segment is reached.
pub fn desired_direction(world: &World, agent: &Agent) -> Result<(usize, Option<DVec2>)> {
    let plan = &world.routes[agent.route];
    let mut seg = agent.segment;
    while seg < plan.segments.len() {
        match plan.segments[seg].direction_at(agent.position)? {
            Steering::Arrived => seg += 1,
            Steering::Toward(e) => return Ok((seg, Some(e))),
        }
    }
    Ok((seg, None))
}

fn acceleration(
    world: &World,
    agents: &[Agent],
    dirs: &[DVec2],
    neighbors: &NeighborGrid,
    i: usize,
    buf: &mut Vec<usize>,
    near: &mut Vec<(DVec2, f64)>,
) -> DVec2 {
    let p = &world.params;
    let a = &agents[i];
    let e = dirs[i];
    let mut acc = (a.v0 * e - a.velocity) / p.tau;

    let stalled = a.stalled as f64 * world.dt >= p.stall_time;
    let mut oncoming = false;
    neighbors.around(a.position, buf);
    near.clear();
    for &j in buf.iter() {
        if j == i {
            continue;
        }
        let b = &agents[j];
        let diff = b.position - a.position;
        let d = diff.length();
        if d > 0.0 && d < p.neighbor_radius {
            near.push((b.position, b.radius));
            oncoming |= stalled
                && d < a.radius + b.radius + p.b_soc
                && diff.dot(e) > 0.0
                && dirs[j].dot(e) < 0.0;
        }
    }
    // fixed summation order independent of agent ids
    near.sort_by(|u, v| u.0.x.total_cmp(&v.0.x).then(u.0.y.total_cmp(&v.0.y)));
    for &(q, rj) in near.iter() {
        let diff = a.position - q;
        let d = diff.length();
        acc += p.a_soc * ((a.radius + rj - d) / p.b_soc).exp() * (diff / d);
    }

    for s in world.walls.near(a.position) {
        let c = s.closest_point(a.position);
        let diff = a.position - c;
        let d = diff.length();
        if d > 0.0 && d < p.neighbor_radius {
            acc += p.a_wall * ((a.radius - d) / p.b_wall).exp() * (diff / d);
        }
    }

    if oncoming {
        // keep right
        acc += p.sidestep * DVec2::new(e.y, -e.x);
    }
    acc
}

/// Moves from `from` by `v·dt`; a move into a blocked cell keeps only the
/// axis components that stay walkable and drops the rest of the velocity.
fn slide(grid: &OccupancyGrid, from: DVec2, v: DVec2, dt: f64) -> (DVec2, DVec2, bool) {
    let to = from + v * dt;
    if grid.walkable_at(to) {
        return (to, v, false);
    }
    let along_x = DVec2::new(to.x, from.y);
    if v.x != 0.0 && grid.walkable_at(along_x) {
        return (along_x, DVec2::new(v.x, 0.0), true);
    }
    let along_y = DVec2::new(from.x, to.y);
    if v.y != 0.0 && grid.walkable_at(along_y) {
        return (along_y, DVec2::new(0.0, v.y), true);
    }
    (from, DVec2::ZERO, true)
}

/// One synchronous update.
pub fn step(world: &World, state: &mut SimState) -> Result<()> {
    let positions = state.positions();
    state.neighbors.rebuild(&positions);
    let agents = &state.agents;
    let neighbors = &state.neighbors;
    let dirs: Vec<DVec2> = agents
        .par_iter()
        .map(|a| Ok(desired_direction(world, a)?.1.unwrap_or(DVec2::ZERO)))
        .collect::<Result<_>>()?;
    let accel: Vec<DVec2> = (0..agents.len())
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(buf, near), i| acceleration(world, agents, &dirs, neighbors, i, buf, near),
        )
        .collect();

    let dt = world.dt;
    for ((a, acc), e) in state.agents.iter_mut().zip(accel).zip(dirs) {
        let mut v = a.velocity + acc * dt;
        let cap = world.params.v_cap * a.v0;
        if v.length() > cap {
            v = v.normalize() * cap;
        }
        let (pos, vel, contact) = slide(&world.grid, a.position, v, dt);
        a.position = pos;
        a.velocity = vel;
        if vel.dot(e) < world.params.stall_speed {
            a.stalled += 1;
        } else {
            a.stalled = 0;
        }
        state.wall_contacts += contact as u64;
    }
    state.step_count += 1;
    state.bookkeeping(world);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Timing records sorted by agent id.
    pub records: Vec<TravelTimeRecord>,
    pub steps: u64,
    pub wall_contacts: u64,
}

/// Steps until every agent has arrived. `observer` sees the initial state
/// and the state after every step.
pub fn run(
    world: &World,
    mut state: SimState,
    mut observer: impl FnMut(&SimState),
) -> Result<RunOutcome> {
    observer(&state);
    while !state.agents.is_empty() {
        if state.clock() >= world.max_time - 1e-9 {
            return Err(Error::TimeLimit {
                limit: world.max_time,
                remaining: state.agents.len(),
            });
        }
        step(world, &mut state)?;
        debug_assert_eq!(state.spawned, state.agents.len() + state.arrived.len());
        observer(&state);
    }
    if state.wall_contacts > 0 {
        log::debug!("{} wall-contact moves", state.wall_contacts);
    }
    let mut records = state.arrived;
    records.sort_by_key(|r| r.agent);
    Ok(RunOutcome {
        records,
        steps: state.step_count,
        wall_contacts: state.wall_contacts,
    })
}

pub const TRAJECTORY_HEADER: &str = "step,agent_id,x,y,vx,vy,segment_index\n";

/// Appends one trajectory row per active agent.
pub fn trajectory_rows(state: &SimState, out: &mut String) {
    use std::fmt::Write;
    for a in &state.agents {
        let _ = writeln!(
            out,
            "{},{},{:.4},{:.4},{:.4},{:.4},{}",
            state.step_count,
            a.id,
            a.position.x,
            a.position.y,
            a.velocity.x,
            a.velocity.y,
            a.segment
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{compute_steering_field, steering_costs};
    use crate::geometry::Polygon;
    use crate::scenario::{Origin, Parameters};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corridor() -> Scenario {
        Scenario {
            name: "corridor".into(),
            description: String::new(),
            bounds: Rect::new(DVec2::ZERO, DVec2::new(20.0, 4.0)),
            obstacles: vec![],
            origins: vec![Origin {
                name: "o".into(),
                polygon: Polygon::rect(DVec2::new(0.0, 0.0), DVec2::new(4.0, 4.0)),
                count: Some(20),
                density: None,
            }],
            destination: Polygon::rect(DVec2::new(18.0, 0.0), DVec2::new(20.0, 4.0)),
            measurement_area: None,
            parameters: Parameters::default(),
        }
    }

    fn direct_world(scenario: &Scenario) -> (Layout, World) {
        let layout = scenario.rasterize().unwrap();
        let grid = Arc::new(layout.grid.clone());
        let costs = steering_costs(&grid);
        let field = Arc::new(compute_steering_field(
            &grid,
            &layout.destination,
            &costs,
            None,
        ));
        let plan = RoutePlan {
            id: 0,
            segments: vec![field],
        };
        let world = World::new(scenario, &layout, grid, vec![plan], SfmParams::default()).unwrap();
        (layout, world)
    }

    fn lone(id: usize, position: DVec2, velocity: DVec2, v0: f64) -> Agent {
        Agent {
            id,
            position,
            velocity,
            v0,
            radius: 0.2,
            route: 0,
            segment: 0,
            stalled: 0,
            timing: TravelTimeRecord::new(id, 0, 0.0),
        }
    }

    fn accel_of(world: &World, agents: &[Agent], i: usize) -> DVec2 {
        let mut grid = NeighborGrid::new(&world.bounds, world.params.neighbor_radius);
        let pos: Vec<DVec2> = agents.iter().map(|a| a.position).collect();
        grid.rebuild(&pos);
        let dirs: Vec<DVec2> = agents
            .iter()
            .map(|a| desired_direction(world, a).unwrap().1.unwrap())
            .collect();
        acceleration(
            world,
            agents,
            &dirs,
            &grid,
            i,
            &mut Vec::new(),
            &mut Vec::new(),
        )
    }

    #[test]
    fn cruising_agent_is_in_equilibrium() {
        let (_, world) = direct_world(&corridor());
        let a = lone(0, DVec2::new(8.05, 2.0), DVec2::new(1.3, 0.0), 1.3);
        let acc = accel_of(&world, std::slice::from_ref(&a), 0);
        assert!(acc.length() < 1e-9, "{acc}");
        let mut state = SimState::new(&world, vec![a]);
        step(&world, &mut state).unwrap();
        let moved = state.agents[0].position.x - 8.05;
        assert!((moved - 0.13).abs() < 1e-9);
    }

    #[test]
    fn resting_agent_accelerates_at_v0_over_tau() {
        let (_, world) = direct_world(&corridor());
        let a = lone(0, DVec2::new(8.05, 2.0), DVec2::ZERO, 1.2);
        let acc = accel_of(&world, &[a], 0);
        assert!((acc.length() - 1.2 / 0.5).abs() < 1e-9);
        assert!(acc.normalize().abs_diff_eq(DVec2::X, 1e-9));
    }

    #[test]
    fn mirrored_pair_stays_mirror_symmetric() {
        // both walk toward the same target line from mirrored positions
        let (_, world) = direct_world(&corridor());
        let a = lone(0, DVec2::new(10.0, 1.4), DVec2::ZERO, 1.3);
        let b = lone(1, DVec2::new(10.0, 2.6), DVec2::ZERO, 1.3);
        let mut state = SimState::new(&world, vec![a, b]);
        for _ in 0..40 {
            step(&world, &mut state).unwrap();
            if state.agents.len() < 2 {
                break;
            }
            let (p, q) = (state.agents[0].position, state.agents[1].position);
            assert!((p.x - q.x).abs() < 1e-9);
            assert!((p.y - 2.0 + (q.y - 2.0)).abs() < 1e-9);
        }
    }

    fn spawned(world: &World, layout: &Layout, n: usize, seed: u64) -> Vec<Agent> {
        let mut pr = ChaCha8Rng::seed_from_u64(seed);
        let mut sr = ChaCha8Rng::seed_from_u64(seed + 1);
        spawn_agents(
            world,
            &layout.origins[0].region,
            &[(0, n)],
            &SpeedDistribution::default(),
            0,
            0.0,
            &mut pr,
            &mut sr,
        )
        .unwrap()
    }

    #[test]
    fn spawn_is_deterministic_and_non_overlapping() {
        let s = corridor();
        let (layout, world) = direct_world(&s);
        let a = spawned(&world, &layout, 20, 5);
        let b = spawned(&world, &layout, 20, 5);
        assert_eq!(a, b);
        for (i, p) in a.iter().enumerate() {
            assert!((0.97..1.62).contains(&p.v0));
            for q in &a[i + 1..] {
                assert!(p.position.distance(q.position) >= 0.4);
            }
        }
        assert!(spawned(&world, &layout, 0, 5).is_empty());
    }

    #[test]
    fn overcrowded_origin_is_an_error() {
        let s = corridor();
        let (layout, world) = direct_world(&s);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let err = spawn_agents(
            &world,
            &layout.origins[0].region,
            &[(0, 200)],
            &SpeedDistribution::default(),
            0,
            0.0,
            &mut r.clone(),
            &mut r,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Overcrowded { requested: 200, .. }));
    }

    #[test]
    fn run_conserves_agents_and_is_deterministic() {
        let s = corridor();
        let (layout, world) = direct_world(&s);
        let go = || {
            let state = SimState::new(&world, spawned(&world, &layout, 20, 9));
            let mut trace = String::new();
            let out = run(&world, state, |st| {
                assert_eq!(st.spawned, st.agents.len() + st.arrived.len());
                trajectory_rows(st, &mut trace);
            })
            .unwrap();
            (out.records, trace)
        };
        let (r1, t1) = go();
        let (r2, t2) = go();
        assert_eq!(r1.len(), 20);
        assert_eq!(r1, r2);
        assert_eq!(t1, t2);
        for r in &r1 {
            assert!(r.arrival_time.unwrap() > r.spawn_time);
            assert_eq!(r.measured(), r.global());
        }
    }

    #[test]
    fn relabeling_agents_keeps_trajectories() {
        let s = corridor();
        let (layout, world) = direct_world(&s);
        let agents = spawned(&world, &layout, 20, 3);
        let n = agents.len();
        let relabeled: Vec<Agent> = agents
            .iter()
            .map(|a| {
                let id = n - 1 - a.id;
                Agent {
                    id,
                    timing: TravelTimeRecord::new(id, 0, 0.0),
                    ..a.clone()
                }
            })
            .collect();
        let mut s1 = SimState::new(&world, agents);
        let mut s2 = SimState::new(&world, relabeled);
        for _ in 0..60 {
            step(&world, &mut s1).unwrap();
            step(&world, &mut s2).unwrap();
        }
        let key = |st: &SimState, flip: bool| {
            let mut v: Vec<(usize, DVec2, DVec2)> = st
                .agents
                .iter()
                .map(|a| {
                    let id = if flip { n - 1 - a.id } else { a.id };
                    (id, a.position, a.velocity)
                })
                .collect();
            v.sort_by_key(|x| x.0);
            v
        };
        assert_eq!(key(&s1, false), key(&s2, true));
    }

    #[test]
    fn dense_start_keeps_overlap_small() {
        let s = corridor();
        let (layout, world) = direct_world(&s);
        // 2.5 /m² on the 16 m² origin
        let mut state = SimState::new(&world, spawned(&world, &layout, 40, 4));
        let (mut depth, mut samples) = (0.0, 0usize);
        for _ in 0..100 {
            step(&world, &mut state).unwrap();
            let a = &state.agents;
            for i in 0..a.len() {
                for j in i + 1..a.len() {
                    let d = a[i].position.distance(a[j].position);
                    depth += (0.4 - d).max(0.0);
                    samples += 1;
                }
            }
        }
        let mean_pair_overlap = depth / samples.max(1) as f64;
        assert!(mean_pair_overlap < 0.1);
    }

    #[test]
    fn stays_on_walkable_cells() {
        let mut s = corridor();
        s.obstacles
            .push(Polygon::rect(DVec2::new(9.0, 1.0), DVec2::new(11.0, 3.0)));
        let (layout, world) = direct_world(&s);
        let state = SimState::new(&world, spawned(&world, &layout, 20, 2));
        run(&world, state, |st| {
            for a in &st.agents {
                assert!(world.grid.walkable_at(a.position));
            }
        })
        .unwrap();
    }
}
