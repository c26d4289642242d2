//! Command-line front end: flag parsing, the reproducibility manifest and
//! file emission.
//!
//! Every invocation writes `manifest.json` next to its outputs. The manifest
//! holds the full scenario and every effective parameter, so
//! `pedroute <command> --manifest manifest.json --out other/` reproduces the
//! outputs byte for byte.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::assignment::{
    self, EquilibriumConfig, InitialCondition, OriginTable, Outcome, DEFAULT_MAX_ITERATIONS,
    DEFAULT_RUNS_PER_ITERATION,
};
use crate::measurement::{self, DensityLattice, RunStats, AVERAGING_STEPS};
use crate::routes::{RouteSet, DEFAULT_BAND_WIDTH, DEFAULT_MAX_ROUTES};
use crate::scenario::{Layout, Scenario};
use crate::sfm::{self, SfmParams, SpeedDistribution, World, TRAJECTORY_HEADER};
use crate::Error;

pub const DEFAULT_SNAPSHOT_TIMES: [f64; 2] = [50.0, 125.0];
pub const DEFAULT_REPORT_RUNS: usize = 20;
/// Density mapped to white in PGM heatmaps, agents/m².
pub const DEFAULT_MAX_DENSITY: f64 = 4.0;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "pedroute",
    version,
    about = "Route extraction, crowd simulation and travel-time equilibrium assignment"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract the route alternatives of a scenario.
    Routes(Opts),
    /// Simulate one run with the initial route split.
    Simulate(Opts),
    /// Iterate route choice until the travel times of loaded routes agree.
    Assign(Opts),
    /// Simulate one run and export density heatmaps at snapshot times.
    Density(Opts),
    /// Compare the all-on-shortest-route baseline with the equilibrium split.
    Report(Opts),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Routes,
    Simulate,
    Assign,
    Density,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Equal,
    Concentrated,
}

#[derive(Debug, Clone, Args)]
pub struct Opts {
    /// Scenario JSON file or bundled scenario name.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Re-run from a manifest written by an earlier invocation. Excludes
    /// every other parameter flag.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Distance band width for route extraction, m.
    #[arg(long)]
    pub band_width: Option<f64>,
    #[arg(long)]
    pub max_routes: Option<usize>,
    /// Initial route split.
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    #[arg(long)]
    pub runs_per_iter: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Density snapshot times, s (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub snapshot_times: Option<Vec<f64>>,
    /// Also write per-step trajectories.
    #[arg(long)]
    pub trajectories: bool,
    /// Runs per configuration in `report`.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Density shown as white in PGM heatmaps, agents/m².
    #[arg(long)]
    pub max_density: Option<f64>,
    /// Force-model override `name=value`, repeatable (e.g. `--sfm tau=0.6`).
    #[arg(long, value_name = "NAME=VALUE")]
    pub sfm: Vec<String>,
}

impl Opts {
    fn has_parameter_flags(&self) -> bool {
        self.scenario.is_some()
            || self.band_width.is_some()
            || self.max_routes.is_some()
            || self.init.is_some()
            || self.runs_per_iter.is_some()
            || self.max_iter.is_some()
            || self.seed.is_some()
            || self.snapshot_times.is_some()
            || self.trajectories
            || self.runs.is_some()
            || self.max_density.is_some()
            || !self.sfm.is_empty()
    }
}

/// Every effective parameter of one invocation; serialized as the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tool: String,
    pub version: String,
    pub command: CommandKind,
    /// What `--scenario` named.
    pub scenario_source: String,
    pub scenario: Scenario,
    pub band_width: f64,
    pub max_routes: usize,
    pub sfm: SfmParams,
    pub equilibrium: EquilibriumConfig,
    pub snapshot_times: Vec<f64>,
    pub trajectories: bool,
    pub report_runs: usize,
    pub max_density: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Domain(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl RunConfig {
    pub fn from_opts(command: CommandKind, opts: &Opts) -> Result<RunConfig, CliError> {
        if let Some(path) = &opts.manifest {
            if opts.has_parameter_flags() {
                return Err(CliError::Usage(
                    "--manifest cannot be combined with parameter flags (only --out)".into(),
                ));
            }
            let cfg = RunConfig::load(path)?;
            if cfg.command != command {
                return Err(CliError::Usage(format!(
                    "manifest {} was written by `{}`, not `{}`",
                    path.display(),
                    cfg.command.name(),
                    command.name()
                )));
            }
            return Ok(cfg);
        }

        let source = opts.scenario.clone().ok_or_else(|| {
            CliError::Usage("missing --scenario (a JSON file or a bundled scenario name)".into())
        })?;
        let scenario = Scenario::resolve(&source).map_err(scenario_error)?;
        let sfm = sfm_overrides(&opts.sfm)?;
        let equilibrium = EquilibriumConfig {
            max_iterations: opts.max_iter.unwrap_or(DEFAULT_MAX_ITERATIONS),
            runs_per_iteration: opts.runs_per_iter.unwrap_or(DEFAULT_RUNS_PER_ITERATION),
            initial_condition: match opts.init.unwrap_or(InitArg::Equal) {
                InitArg::Equal => InitialCondition::Equal,
                InitArg::Concentrated => InitialCondition::concentrated(),
            },
            master_seed: opts.seed.unwrap_or(0),
            speeds: SpeedDistribution::default(),
            ..EquilibriumConfig::default()
        };
        let cfg = RunConfig {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            scenario_source: source,
            scenario,
            band_width: opts.band_width.unwrap_or(DEFAULT_BAND_WIDTH),
            max_routes: opts.max_routes.unwrap_or(DEFAULT_MAX_ROUTES),
            sfm,
            equilibrium,
            snapshot_times: opts
                .snapshot_times
                .clone()
                .unwrap_or_else(|| DEFAULT_SNAPSHOT_TIMES.to_vec()),
            trajectories: opts.trajectories,
            report_runs: opts.runs.unwrap_or(DEFAULT_REPORT_RUNS),
            max_density: opts.max_density.unwrap_or(DEFAULT_MAX_DENSITY),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("malformed manifest {}: {e}", path.display())))?;
        if cfg.version != env!("CARGO_PKG_VERSION") {
            log::warn!(
                "manifest written by version {}, running {}",
                cfg.version,
                env!("CARGO_PKG_VERSION")
            );
        }
        cfg.scenario.validate()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.band_width > 0.0 && self.band_width.is_finite()) {
            return Err(CliError::Usage(format!(
                "--band-width must be positive, got {}",
                self.band_width
            )));
        }
        if self.max_routes == 0 {
            return Err(CliError::Usage("--max-routes must be at least 1".into()));
        }
        if self.report_runs == 0 {
            return Err(CliError::Usage("--runs must be at least 1".into()));
        }
        if !(self.max_density > 0.0) {
            return Err(CliError::Usage("--max-density must be positive".into()));
        }
        if let Some(t) = self
            .snapshot_times
            .iter()
            .find(|t| !(t.is_finite() && **t >= 0.0))
        {
            return Err(CliError::Usage(format!("invalid snapshot time {t}")));
        }
        self.sfm
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.equilibrium
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

impl CommandKind {
    pub fn name(self) -> &'static str {
        match self {
            CommandKind::Routes => "routes",
            CommandKind::Simulate => "simulate",
            CommandKind::Assign => "assign",
            CommandKind::Density => "density",
            CommandKind::Report => "report",
        }
    }
}

fn scenario_error(e: Error) -> CliError {
    match e {
        Error::UnknownScenario(_) | Error::Io { .. } | Error::Json { .. } => {
            CliError::Usage(e.to_string())
        }
        other => CliError::Domain(other),
    }
}

fn sfm_overrides(pairs: &[String]) -> Result<SfmParams, CliError> {
    let mut value = serde_json::to_value(SfmParams::default()).expect("params serialize");
    for pair in pairs {
        let (name, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--sfm expects NAME=VALUE, got `{pair}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("--sfm {name}: `{v}` is not a number")))?;
        value[name.trim()] = serde_json::json!(v);
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("--sfm: {e}")))
}

/// Files produced by one command, written only after the command succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    /// Printed to stdout.
    pub summary: String,
}

impl Outputs {
    fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so a failed write never leaves a truncated file behind.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> crate::Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: dir.join(name),
        source: e,
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(dir.join(name)).map_err(|e| io(e.error))?;
    Ok(())
}

struct Prepared {
    layout: Layout,
    routes: RouteSet,
    world: World,
}

fn prepare(cfg: &RunConfig) -> crate::Result<Prepared> {
    let layout = cfg.scenario.rasterize()?;
    let routes = RouteSet::build(&layout, cfg.band_width, cfg.max_routes)?;
    let world = World::from_routes(&cfg.scenario, &layout, &routes, cfg.sfm)?;
    Ok(Prepared {
        layout,
        routes,
        world,
    })
}

/// Every origin sends all of its agents along its shortest route.
pub fn baseline_tables(layout: &Layout, routes: &RouteSet) -> crate::Result<Vec<OriginTable>> {
    let mut tables = assignment::initial_tables(layout, routes, InitialCondition::Equal)?;
    for t in &mut tables {
        let best = routes.shortest_route(t.origin);
        t.probabilities = t.routes.iter().map(|&r| f64::from(r == best)).collect();
    }
    Ok(tables)
}

/// Per-run statistics of `runs` runs with fixed loads. Evaluation runs use
/// iteration 0 of the seed tree; assignment iterations start at 1.
pub fn evaluate(
    world: &World,
    layout: &Layout,
    tables: &[OriginTable],
    speeds: &SpeedDistribution,
    master_seed: u64,
    runs: usize,
) -> crate::Result<Vec<RunStats>> {
    let outcomes = assignment::simulate_runs(world, layout, tables, speeds, master_seed, 0, runs)?;
    Ok(outcomes
        .iter()
        .filter_map(|o| RunStats::from_records(&o.records))
        .collect())
}

fn probabilities_csv(tables: &[OriginTable]) -> String {
    let mut out = String::from("origin,route_id,probability\n");
    for t in tables {
        for (&r, &p) in t.routes.iter().zip(&t.probabilities) {
            let _ = writeln!(out, "{},{},{:.6}", t.origin, r, p);
        }
    }
    out
}

fn time_label(t: f64) -> String {
    format!("{t}").replace('.', "_")
}

pub fn execute(cfg: &RunConfig) -> crate::Result<Outputs> {
    let p = prepare(cfg)?;
    let mut out = Outputs::default();
    let eq = &cfg.equilibrium;
    match cfg.command {
        CommandKind::Routes => {
            let summary = p.routes.graph.summary(&p.routes.routes);
            let export = p.routes.graph.export(&p.routes.routes);
            let json = serde_json::to_string_pretty(&export).expect("route export serializes");
            out.add("routes.json", json + "\n");
            out.add("routes.txt", summary.clone());
            out.summary = summary;
        }
        CommandKind::Simulate => {
            let tables = assignment::initial_tables(&p.layout, &p.routes, eq.initial_condition)?;
            let loads: Vec<_> = tables.iter().map(|t| t.loads()).collect();
            let state = sfm::populate(
                &p.world,
                &p.layout,
                &loads,
                &eq.speeds,
                eq.master_seed,
                0,
                0,
            )?;
            let mut traj = String::new();
            if cfg.trajectories {
                traj.push_str(TRAJECTORY_HEADER);
            }
            let result = sfm::run(&p.world, state, |s| {
                if cfg.trajectories {
                    sfm::trajectory_rows(s, &mut traj);
                }
            })?;
            out.add(
                "travel_times.csv",
                measurement::travel_times_csv(&result.records),
            );
            if cfg.trajectories {
                out.add("trajectories.csv", traj);
            }
            let mut s = String::new();
            if let Some(st) = RunStats::from_records(&result.records) {
                let _ = writeln!(
                    s,
                    "{} agents, mean global travel time {:.2} s, last arrival {:.2} s, {} steps, {} wall contacts",
                    result.records.len(),
                    st.mean_global,
                    st.last_arrival,
                    result.steps,
                    result.wall_contacts
                );
            }
            out.add("summary.txt", s.clone());
            out.summary = s;
        }
        CommandKind::Assign => {
            let result = assignment::run_equilibrium(&p.world, &p.layout, &p.routes, eq)?;
            out.add(
                "assignment.csv",
                assignment::history_csv(&result.state.history),
            );
            out.add("probabilities.csv", probabilities_csv(&result.state.tables));
            if let Some(first) = result.last_runs.first() {
                out.add(
                    "travel_times.csv",
                    measurement::travel_times_csv(&first.records),
                );
            }
            let line = assignment::outcome_line(&result) + "\n";
            out.add("summary.txt", line.clone());
            out.summary = line;
        }
        CommandKind::Density => {
            let tables = assignment::initial_tables(&p.layout, &p.routes, eq.initial_condition)?;
            let loads: Vec<_> = tables.iter().map(|t| t.loads()).collect();
            let state = sfm::populate(
                &p.world,
                &p.layout,
                &loads,
                &eq.speeds,
                eq.master_seed,
                0,
                0,
            )?;
            let spacing = cfg.scenario.parameters.density_cell_size;
            // Each snapshot averages the AVERAGING_STEPS steps ending at its time.
            let windows: Vec<(u64, u64)> = cfg
                .snapshot_times
                .iter()
                .map(|&t| {
                    let end = (t / p.world.dt).round() as u64;
                    (end.saturating_sub(AVERAGING_STEPS as u64 - 1), end)
                })
                .collect();
            let mut lattices: Vec<DensityLattice> = windows
                .iter()
                .map(|_| DensityLattice::new(&cfg.scenario.bounds, spacing))
                .collect();
            let mut last_step = 0;
            sfm::run(&p.world, state, |s| {
                last_step = s.step_count;
                let mut positions = None;
                for (lat, &(lo, hi)) in lattices.iter_mut().zip(&windows) {
                    if (lo..=hi).contains(&s.step_count) {
                        lat.accumulate(positions.get_or_insert_with(|| s.positions()));
                    }
                }
            })?;
            let mut s = String::new();
            for ((lat, &(lo, hi)), &t) in lattices.iter_mut().zip(&windows).zip(&cfg.snapshot_times)
            {
                // Window steps after the last arrival are empty frames.
                let first_missing = lo.max(last_step + 1);
                for _ in first_missing..=hi {
                    lat.accumulate(&[]);
                }
                let map = lat.density();
                let label = time_label(t);
                out.add(format!("density_t{label}.csv"), map.to_csv());
                out.add(format!("density_t{label}.pgm"), map.to_pgm(cfg.max_density));
                let _ = writeln!(s, "t = {t} s: peak density {:.3} /m^2", map.max());
            }
            out.add("summary.txt", s.clone());
            out.summary = s;
        }
        CommandKind::Report => {
            let result = assignment::run_equilibrium(&p.world, &p.layout, &p.routes, eq)?;
            let baseline = baseline_tables(&p.layout, &p.routes)?;
            let runs = cfg.report_runs;
            let base = evaluate(
                &p.world,
                &p.layout,
                &baseline,
                &eq.speeds,
                eq.master_seed,
                runs,
            )?;
            let equi = evaluate(
                &p.world,
                &p.layout,
                &result.state.tables,
                &eq.speeds,
                eq.master_seed,
                runs,
            )?;
            let mut csv = String::from("configuration,run,mean_global_travel_time,last_arrival\n");
            for (name, stats) in [("shortest_route", &base), ("equilibrium", &equi)] {
                for (r, st) in stats.iter().enumerate() {
                    let _ = writeln!(
                        csv,
                        "{name},{r},{:.4},{:.4}",
                        st.mean_global, st.last_arrival
                    );
                }
            }
            let base_sum = measurement::summarize_runs(&base);
            let equi_sum = measurement::summarize_runs(&equi);
            for (name, s) in [("shortest route", &base_sum), ("equilibrium", &equi_sum)] {
                if s.mean_global.zero_spread() || s.last_arrival.zero_spread() {
                    log::warn!("{name}: zero spread over {runs} runs");
                }
            }
            let mut text = measurement::travel_time_table(&[
                ("shortest route", base_sum),
                ("equilibrium", equi_sum),
            ]);
            let _ = writeln!(text, "assignment {}", assignment::outcome_line(&result));
            if result.outcome == Outcome::MaxIterationsReached {
                log::warn!("the equilibrium split did not converge; reporting the last split");
            }
            out.add(
                "assignment.csv",
                assignment::history_csv(&result.state.history),
            );
            out.add("probabilities.csv", probabilities_csv(&result.state.tables));
            out.add("report_runs.csv", csv);
            out.add("report.txt", text.clone());
            out.summary = text;
        }
    }
    Ok(out)
}

/// Runs one command and writes its outputs plus the manifest into `dir`.
pub fn run_to_dir(cfg: &RunConfig, dir: &Path) -> Result<Outputs, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Usage(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })?;
    let outputs = execute(cfg)?;
    for (name, bytes) in &outputs.files {
        write_atomic(dir, name, bytes)?;
    }
    let manifest = serde_json::to_string_pretty(cfg).expect("manifest serializes") + "\n";
    write_atomic(dir, MANIFEST_FILE, manifest.as_bytes())?;
    Ok(outputs)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 domain error, 2 usage error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (kind, opts) = match &cli.command {
        Command::Routes(o) => (CommandKind::Routes, o),
        Command::Simulate(o) => (CommandKind::Simulate, o),
        Command::Assign(o) => (CommandKind::Assign, o),
        Command::Density(o) => (CommandKind::Density, o),
        Command::Report(o) => (CommandKind::Report, o),
    };
    let result = RunConfig::from_opts(kind, opts).and_then(|cfg| run_to_dir(&cfg, &opts.out));
    match result {
        Ok(outputs) => {
            print!("{}", outputs.summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(scenario: &str) -> Opts {
        Opts {
            scenario: Some(scenario.into()),
            manifest: None,
            out: "out".into(),
            band_width: None,
            max_routes: None,
            init: None,
            runs_per_iter: None,
            max_iter: None,
            seed: None,
            snapshot_times: None,
            trajectories: false,
            runs: None,
            max_density: None,
            sfm: Vec::new(),
        }
    }

    #[test]
    fn defaults_fill_the_config() {
        let cfg = RunConfig::from_opts(CommandKind::Routes, &opts("fig1_single_obstacle")).unwrap();
        assert_eq!(cfg.band_width, 2.0);
        assert_eq!(cfg.snapshot_times, vec![50.0, 125.0]);
        assert_eq!(cfg.sfm, SfmParams::default());
        assert_eq!(cfg.equilibrium.runs_per_iteration, 5);
    }

    #[test]
    fn sfm_override_and_typo() {
        let p = sfm_overrides(&["tau=0.7".into()]).unwrap();
        assert_eq!(p.tau, 0.7);
        assert!(matches!(
            sfm_overrides(&["taux=0.7".into()]),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            sfm_overrides(&["tau".into()]),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn unknown_scenario_is_a_usage_error() {
        let e = RunConfig::from_opts(CommandKind::Routes, &opts("no/such/file.json")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn manifest_round_trips() {
        let cfg = RunConfig::from_opts(CommandKind::Assign, &opts("two_corridor_asym")).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn routes_command_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::from_opts(CommandKind::Routes, &opts("fig1_single_obstacle")).unwrap();
        let out = run_to_dir(&cfg, dir.path()).unwrap();
        assert!(out.summary.starts_with("2 route(s)"));
        for f in ["routes.json", "routes.txt", MANIFEST_FILE] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let leftovers = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(leftovers, 3);
    }

    #[test]
    fn time_labels() {
        assert_eq!(time_label(50.0), "50");
        assert_eq!(time_label(12.5), "12_5");
    }
}
