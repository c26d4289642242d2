//! Iterated travel-time equilibrium: apportion agents to routes, simulate,
//! shift probability from the slowest to the fastest loaded route, repeat
//! until the loaded routes' mean measured times lie within a window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routes::RouteSet;
use crate::scenario::Layout;
use crate::sfm::{self, RunOutcome, SpeedDistribution, World};

pub const STEP_COEFF: f64 = 0.1;
/// Seconds.
pub const CONVERGENCE_WINDOW: f64 = 0.5;
pub const DEFAULT_RUNS_PER_ITERATION: usize = 5;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const CONCENTRATED_SHARE: f64 = 0.97;

/// Largest-remainder apportionment of `n` agents; ties go to the lower
/// index.
pub fn apportion(probabilities: &[f64], n: usize) -> Vec<usize> {
    let quotas: Vec<f64> = probabilities.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// One update step. `times[r]` is the mean travel time of route `r`, or
/// `None` if the route carried no load; unloaded routes are left alone.
/// Probability `min(Δp, p[max])` moves from the slowest to the fastest
/// loaded route (lowest index on ties), with
/// `Δp = step_coeff · (t_max − t_min) / (t_max + t_min)`.
pub fn update_probabilities(times: &[Option<f64>], p: &[f64], step_coeff: f64) -> Vec<f64> {
    assert_eq!(times.len(), p.len());
    let mut out = p.to_vec();
    let (mut hi, mut lo): (Option<usize>, Option<usize>) = (None, None);
    for (r, t) in times.iter().enumerate() {
        let Some(t) = *t else { continue };
        if hi.is_none_or(|h| t > times[h].unwrap()) {
            hi = Some(r);
        }
        if lo.is_none_or(|l| t < times[l].unwrap()) {
            lo = Some(r);
        }
    }
    let (Some(hi), Some(lo)) = (hi, lo) else {
        return out;
    };
    let (t_max, t_min) = (times[hi].unwrap(), times[lo].unwrap());
    if t_max == t_min {
        return out;
    }
    let dp = step_coeff * (t_max - t_min) / (t_max + t_min);
    let moved = dp.min(p[hi]);
    out[hi] -= moved;
    out[lo] += moved;
    out
}

/// True when the loaded routes' times lie within `window` of each other.
pub fn converged(times: &[f64], window: f64) -> bool {
    let max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    times.is_empty() || max - min <= window
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    Equal,
    /// `share` on one route per origin (its shortest unless `route` names
    /// one of its routes), the rest split equally.
    Concentrated {
        #[serde(default)]
        route: Option<usize>,
        share: f64,
    },
}

impl InitialCondition {
    pub fn concentrated() -> Self {
        InitialCondition::Concentrated {
            route: None,
            share: CONCENTRATED_SHARE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumConfig {
    pub step_coeff: f64,
    pub convergence_window: f64,
    pub max_iterations: usize,
    pub runs_per_iteration: usize,
    pub initial_condition: InitialCondition,
    pub master_seed: u64,
    pub speeds: SpeedDistribution,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        EquilibriumConfig {
            step_coeff: STEP_COEFF,
            convergence_window: CONVERGENCE_WINDOW,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            runs_per_iteration: DEFAULT_RUNS_PER_ITERATION,
            initial_condition: InitialCondition::Equal,
            master_seed: 0,
            speeds: SpeedDistribution::default(),
        }
    }
}

impl EquilibriumConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_coeff > 0.0 && self.step_coeff.is_finite()) {
            return Err(Error::InvalidParameter(
                "step_coeff must be positive".into(),
            ));
        }
        if !(self.convergence_window > 0.0) {
            return Err(Error::InvalidParameter(
                "convergence_window must be positive".into(),
            ));
        }
        if self.runs_per_iteration == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidParameter(
                "runs_per_iteration and max_iterations must be at least 1".into(),
            ));
        }
        if let InitialCondition::Concentrated { share, .. } = self.initial_condition {
            if !(0.0..=1.0).contains(&share) {
                return Err(Error::InvalidParameter(format!(
                    "concentrated share {share} outside [0, 1]"
                )));
            }
        }
        self.speeds.validate()
    }
}

/// Route-choice probabilities of one origin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OriginTable {
    pub origin: usize,
    pub agents: usize,
    /// Route ids, ascending.
    pub routes: Vec<usize>,
    pub probabilities: Vec<f64>,
}

impl OriginTable {
    pub fn loads(&self) -> Vec<(usize, usize)> {
        self.routes
            .iter()
            .copied()
            .zip(apportion(&self.probabilities, self.agents))
            .collect()
    }
}

pub fn initial_tables(
    layout: &Layout,
    routes: &RouteSet,
    initial: InitialCondition,
) -> Result<Vec<OriginTable>> {
    layout
        .origins
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let ids: Vec<usize> = routes.routes_of(k).iter().map(|r| r.id).collect();
            let n = ids.len();
            let probabilities = match initial {
                InitialCondition::Equal => vec![1.0 / n as f64; n],
                InitialCondition::Concentrated { route, share } => {
                    let target = route
                        .filter(|r| ids.contains(r))
                        .unwrap_or_else(|| routes.shortest_route(k));
                    if n == 1 {
                        vec![1.0]
                    } else {
                        let rest = (1.0 - share) / (n - 1) as f64;
                        ids.iter()
                            .map(|&r| if r == target { share } else { rest })
                            .collect()
                    }
                }
            };
            Ok(OriginTable {
                origin: k,
                agents: o.agents,
                routes: ids,
                probabilities,
            })
        })
        .collect()
}

/// Everything measured in one iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Probabilities the iteration was simulated with.
    pub tables: Vec<OriginTable>,
    /// `(route id, agents)` per route.
    pub counts: Vec<(usize, usize)>,
    /// Pooled mean measured time per route id; `None` when unloaded.
    pub mean_times: Vec<Option<f64>>,
    /// Pooled mean measured time over all agents.
    pub overall_mean: f64,
    /// Largest spread of loaded-route times over the origins.
    pub spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged { iteration: usize },
    MaxIterationsReached,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssignmentState {
    pub tables: Vec<OriginTable>,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub state: AssignmentState,
    pub outcome: Outcome,
    /// Runs of the final iteration, in run order.
    pub last_runs: Vec<RunOutcome>,
}

/// Runs `runs` independent simulations with the given loads; run `r` of
/// iteration `it` draws from the streams of `(seed, it, r)`.
pub fn simulate_runs(
    world: &World,
    layout: &Layout,
    tables: &[OriginTable],
    speeds: &SpeedDistribution,
    master_seed: u64,
    iteration: u64,
    runs: usize,
) -> Result<Vec<RunOutcome>> {
    let loads: Vec<Vec<(usize, usize)>> = tables.iter().map(|t| t.loads()).collect();
    (0..runs)
        .into_par_iter()
        .map(|r| {
            let state = sfm::populate(
                world,
                layout,
                &loads,
                speeds,
                master_seed,
                iteration,
                r as u64,
            )?;
            sfm::run(world, state, |_| {})
        })
        .collect()
}

/// Pooled mean measured time per route id over all runs.
pub fn route_means(runs: &[RunOutcome], n_routes: usize) -> (Vec<Option<f64>>, f64) {
    let mut sum = vec![0.0; n_routes];
    let mut cnt = vec![0usize; n_routes];
    let mut unmeasured = 0;
    for rec in runs.iter().flat_map(|r| &r.records) {
        match rec.measured() {
            Some(t) => {
                sum[rec.route] += t;
                cnt[rec.route] += 1;
            }
            None => unmeasured += 1,
        }
    }
    if unmeasured > 0 {
        log::warn!("{unmeasured} agents arrived without crossing the measurement area");
    }
    let total: usize = cnt.iter().sum();
    let overall = sum.iter().sum::<f64>() / total.max(1) as f64;
    let means = sum
        .iter()
        .zip(&cnt)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    (means, overall)
}

pub fn run_equilibrium(
    world: &World,
    layout: &Layout,
    routes: &RouteSet,
    config: &EquilibriumConfig,
) -> Result<EquilibriumResult> {
    config.validate()?;
    let n_routes = routes.routes.len();
    let mut state = AssignmentState {
        tables: initial_tables(layout, routes, config.initial_condition)?,
        iteration: 0,
        history: Vec::new(),
    };
    loop {
        state.iteration += 1;
        let it = state.iteration;
        let runs = simulate_runs(
            world,
            layout,
            &state.tables,
            &config.speeds,
            config.master_seed,
            it as u64,
            config.runs_per_iteration,
        )?;
        let (mean_times, overall_mean) = route_means(&runs, n_routes);

        let mut counts = Vec::new();
        let mut spread: f64 = 0.0;
        let mut per_table_times = Vec::new();
        for t in &state.tables {
            let loads = t.loads();
            let mut times = Vec::with_capacity(loads.len());
            for &(route, c) in &loads {
                counts.push((route, c));
                if c == 0 {
                    times.push(None);
                } else {
                    times.push(Some(
                        mean_times[route].ok_or(Error::UnfinishedRoute(route))?,
                    ));
                }
            }
            let loaded: Vec<f64> = times.iter().flatten().copied().collect();
            if !loaded.is_empty() {
                let hi = loaded.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = loaded.iter().copied().fold(f64::INFINITY, f64::min);
                spread = spread.max(hi - lo);
            }
            per_table_times.push(times);
        }
        counts.sort();
        state.history.push(IterationRecord {
            iteration: it,
            tables: state.tables.clone(),
            counts,
            mean_times,
            overall_mean,
            spread,
        });
        log::info!("iteration {it}: spread {spread:.3} s, overall mean {overall_mean:.2} s");

        if spread <= config.convergence_window {
            return Ok(EquilibriumResult {
                state,
                outcome: Outcome::Converged { iteration: it },
                last_runs: runs,
            });
        }
        for (t, times) in state.tables.iter_mut().zip(&per_table_times) {
            t.probabilities = update_probabilities(times, &t.probabilities, config.step_coeff);
        }
        if it >= config.max_iterations {
            return Ok(EquilibriumResult {
                state,
                outcome: Outcome::MaxIterationsReached,
                last_runs: runs,
            });
        }
    }
}

/// Per-iteration, per-route CSV.
pub fn history_csv(history: &[IterationRecord]) -> String {
    let mut out = String::from(
        "iteration,route_id,probability,mean_measured_travel_time,overall_mean_travel_time\n",
    );
    for rec in history {
        for t in &rec.tables {
            for (&route, &p) in t.routes.iter().zip(&t.probabilities) {
                let time = rec.mean_times[route].map_or(String::new(), |v| format!("{v:.4}"));
                out.push_str(&format!(
                    "{},{},{:.6},{},{:.4}\n",
                    rec.iteration, route, p, time, rec.overall_mean
                ));
            }
        }
    }
    out
}

pub fn outcome_line(result: &EquilibriumResult) -> String {
    let last = result.state.history.last();
    let spread = last.map_or(f64::NAN, |r| r.spread);
    match result.outcome {
        Outcome::Converged { iteration } => {
            format!("converged after {iteration} iterations (spread {spread:.3} s)")
        }
        Outcome::MaxIterationsReached => format!(
            "not converged after {} iterations (last spread {spread:.3} s)",
            result.state.iteration
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn apportion_examples() {
        assert_eq!(apportion(&[0.5, 0.5], 321), vec![161, 160]);
        assert_eq!(
            apportion(&[0.97, 0.01, 0.01, 0.01], 321),
            vec![312, 3, 3, 3]
        );
        assert_eq!(apportion(&[1.0], 5), vec![5]);
        assert_eq!(apportion(&[0.5, 0.5], 0), vec![0, 0]);
    }

    #[test]
    fn update_examples() {
        let p = update_probabilities(&[Some(100.0), Some(200.0)], &[0.5, 0.5], 0.1);
        assert_eq!(
            p,
            vec![0.5 + 0.1 * (100.0 / 300.0), 0.5 - 0.1 * (100.0 / 300.0)]
        );

        let same = update_probabilities(&[Some(150.0); 3], &[0.2, 0.3, 0.5], 0.1);
        assert_eq!(same, vec![0.2, 0.3, 0.5]);

        let clamped = update_probabilities(&[Some(100.0), Some(300.0)], &[0.98, 0.02], 0.1);
        assert_eq!(clamped, vec![1.0, 0.0]);
    }

    #[test]
    fn unloaded_routes_are_untouched() {
        let p = update_probabilities(&[Some(100.0), None, Some(120.0)], &[0.5, 0.0, 0.5], 0.1);
        assert_eq!(p[1], 0.0);
        assert!(p[0] > 0.5 && p[2] < 0.5);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let p = update_probabilities(
            &[Some(100.0), Some(100.0), Some(200.0), Some(200.0)],
            &[0.25; 4],
            0.1,
        );
        assert!(p[0] > 0.25 && p[1] == 0.25 && p[2] < 0.25 && p[3] == 0.25);
    }

    #[test]
    fn convergence_examples() {
        assert!(converged(&[163.2, 163.5, 163.6], 0.5));
        assert!(!converged(&[163.0, 163.6], 0.5));
        assert!(converged(&[170.0], 0.5));
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn update_stays_on_simplex_and_moves_monotonically(
            p in simplex(4),
            t in prop::collection::vec(10.0f64..500.0, 4),
        ) {
            let times: Vec<Option<f64>> =
                p.iter().zip(&t).map(|(&pi, &ti)| (pi > 0.0).then_some(ti)).collect();
            let q = update_probabilities(&times, &p, 0.1);
            let sum: f64 = q.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(q.iter().all(|&x| (0.0..=1.0).contains(&x)));
            let loaded: Vec<usize> = (0..4).filter(|&r| times[r].is_some()).collect();
            let hi = *loaded.iter().max_by(|&&a, &&b| t[a].total_cmp(&t[b]).then(b.cmp(&a))).unwrap();
            let lo = *loaded.iter().min_by(|&&a, &&b| t[a].total_cmp(&t[b]).then(a.cmp(&b))).unwrap();
            prop_assert!(q[hi] <= p[hi]);
            prop_assert!(q[lo] >= p[lo]);
        }

        #[test]
        fn update_is_scale_invariant(
            p in simplex(3),
            t in prop::collection::vec(10.0f64..500.0, 3),
            lambda in 0.01f64..1000.0,
        ) {
            let times: Vec<Option<f64>> = t.iter().map(|&x| Some(x)).collect();
            let scaled: Vec<Option<f64>> = t.iter().map(|&x| Some(x * lambda)).collect();
            let a = update_probabilities(&times, &p, 0.1);
            let b = update_probabilities(&scaled, &p, 0.1);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn apportion_sums_to_n(p in simplex(5), n in 0usize..2000) {
            let c = apportion(&p, n);
            prop_assert_eq!(c.iter().sum::<usize>(), n);
            for (ci, pi) in c.iter().zip(&p) {
                prop_assert!((*ci as f64 - pi * n as f64).abs() < 1.0 + 1e-9);
            }
        }
    }
}
