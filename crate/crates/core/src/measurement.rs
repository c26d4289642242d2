//! Travel-time records, density lattices and multi-run statistics.

use std::fmt;

use glam::DVec2;
use serde::Serialize;

use crate::geometry::Rect;

/// Lattice spacing of density maps, meters.
pub const LATTICE_SPACING: f64 = 0.2;
/// Radius of the disc a lattice cell counts agents in (2.2 m diameter).
pub const SAMPLE_RADIUS: f64 = 1.1;
/// Averaging window of a density snapshot, seconds.
pub const AVERAGING_WINDOW: f64 = 1.0;
/// Simulation steps in one averaging window at dt = 0.1 s.
pub const AVERAGING_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TravelTimeRecord {
    pub agent: usize,
    pub route: usize,
    pub spawn_time: f64,
    /// First entry into the measurement area.
    pub measure_start_time: Option<f64>,
    pub arrival_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimingEvent {
    EnterMeasurement(f64),
    Arrive(f64),
}

impl TravelTimeRecord {
    pub fn new(agent: usize, route: usize, spawn_time: f64) -> Self {
        TravelTimeRecord {
            agent,
            route,
            spawn_time,
            measure_start_time: None,
            arrival_time: None,
        }
    }

    /// Only the first entry counts.
    pub fn enter_measurement(&mut self, t: f64) {
        if self.measure_start_time.is_none() {
            self.measure_start_time = Some(t);
        }
    }

    pub fn arrive(&mut self, t: f64) {
        if self.arrival_time.is_none() {
            self.arrival_time = Some(t);
        }
    }

    pub fn apply(&mut self, event: TimingEvent) {
        match event {
            TimingEvent::EnterMeasurement(t) => self.enter_measurement(t),
            TimingEvent::Arrive(t) => self.arrive(t),
        }
    }

    /// Arrival minus first measurement-area entry.
    pub fn measured(&self) -> Option<f64> {
        Some(self.arrival_time? - self.measure_start_time?)
    }

    /// Arrival minus creation.
    pub fn global(&self) -> Option<f64> {
        Some(self.arrival_time? - self.spawn_time)
    }

    /// Arrived without ever crossing the measurement area.
    pub fn unmeasured_arrival(&self) -> bool {
        self.arrival_time.is_some() && self.measure_start_time.is_none()
    }
}

/// Folds a time-ordered event stream into a record.
pub fn record_timing(
    agent: usize,
    route: usize,
    spawn_time: f64,
    events: impl IntoIterator<Item = TimingEvent>,
) -> TravelTimeRecord {
    let mut rec = TravelTimeRecord::new(agent, route, spawn_time);
    for e in events {
        rec.apply(e);
    }
    rec
}

pub fn travel_times_csv(records: &[TravelTimeRecord]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.3}"));
    let mut out = String::from("agent_id,route_id,spawn,measure_start,arrival\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{:.3},{},{}\n",
            r.agent,
            r.route,
            r.spawn_time,
            opt(r.measure_start_time),
            opt(r.arrival_time)
        ));
    }
    out
}

/// Regular lattice accumulating disc-counted densities over several steps.
#[derive(Debug, Clone)]
pub struct DensityLattice {
    pub origin: DVec2,
    pub spacing: f64,
    pub sample_radius: f64,
    pub nx: usize,
    pub ny: usize,
    frames: usize,
    counts: Vec<u32>,
}

impl DensityLattice {
    pub fn new(bounds: &Rect, spacing: f64) -> Self {
        let size = bounds.size();
        let nx = ((size.x / spacing - 1e-9).ceil() as usize).max(1);
        let ny = ((size.y / spacing - 1e-9).ceil() as usize).max(1);
        DensityLattice {
            origin: bounds.min(),
            spacing,
            sample_radius: SAMPLE_RADIUS,
            nx,
            ny,
            frames: 0,
            counts: vec![0; nx * ny],
        }
    }

    pub fn cell_center(&self, i: usize, j: usize) -> DVec2 {
        self.origin + DVec2::new(i as f64 + 0.5, j as f64 + 0.5) * self.spacing
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Adds one step's agent positions.
    pub fn accumulate(&mut self, positions: &[DVec2]) {
        let r = self.sample_radius;
        let r2 = r * r;
        for &p in positions {
            let lo = (p - self.origin - DVec2::splat(r)) / self.spacing - DVec2::splat(0.5);
            let hi = (p - self.origin + DVec2::splat(r)) / self.spacing - DVec2::splat(0.5);
            let i0 = lo.x.ceil().max(0.0) as usize;
            let j0 = lo.y.ceil().max(0.0) as usize;
            let i1 = (hi.x.floor().min(self.nx as f64 - 1.0)).max(-1.0);
            let j1 = (hi.y.floor().min(self.ny as f64 - 1.0)).max(-1.0);
            if i1 < 0.0 || j1 < 0.0 {
                continue;
            }
            for j in j0..=j1 as usize {
                for i in i0..=i1 as usize {
                    if self.cell_center(i, j).distance_squared(p) <= r2 {
                        self.counts[j * self.nx + i] += 1;
                    }
                }
            }
        }
        self.frames += 1;
    }

    /// Mean density per cell (agents/m²) over the accumulated steps.
    pub fn density(&self) -> DensityMap {
        let area = std::f64::consts::PI * self.sample_radius * self.sample_radius;
        let frames = self.frames.max(1) as f64;
        DensityMap {
            origin: self.origin,
            spacing: self.spacing,
            nx: self.nx,
            ny: self.ny,
            values: self
                .counts
                .iter()
                .map(|&c| c as f64 / area / frames)
                .collect(),
        }
    }
}

/// Averages the per-step disc densities of `frames` (one slice of agent
/// positions per step) on a lattice over `bounds`.
pub fn density_snapshot(bounds: &Rect, frames: &[Vec<DVec2>]) -> DensityMap {
    let mut lattice = DensityLattice::new(bounds, LATTICE_SPACING);
    for f in frames {
        lattice.accumulate(f);
    }
    lattice.density()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub origin: DVec2,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major from the lowest row.
    pub values: Vec<f64>,
}

impl DensityMap {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Row-major CSV, top row first.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 7);
        for j in (0..self.ny).rev() {
            let row: Vec<String> = (0..self.nx)
                .map(|i| format!("{:.4}", self.at(i, j)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Binary 8-bit PGM, top row first, `max_density` mapped to white.
    pub fn to_pgm(&self, max_density: f64) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.nx, self.ny).into_bytes();
        for j in (0..self.ny).rev() {
            for i in 0..self.nx {
                let v = (self.at(i, j) / max_density).clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
        out
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// `None` with fewer than two samples.
    pub std: Option<f64>,
}

impl Summary {
    /// A zero spread across runs means every run was identical, which
    /// points at seeds not being varied.
    pub fn zero_spread(&self) -> bool {
        self.n >= 2 && self.std == Some(0.0)
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.1} ± {:.1}", self.mean, s),
            None => write!(f, "{:.1} ± n/a", self.mean),
        }
    }
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    let mean = if n == 0 {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / n as f64
    };
    let std = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    let s = Summary { n, mean, std };
    if s.zero_spread() {
        log::warn!("{n} runs gave identical values; check that run seeds differ");
    }
    s
}

/// Per-run statistics reported in the travel-time table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunStats {
    pub mean_global: f64,
    pub last_arrival: f64,
}

impl RunStats {
    pub fn from_records(records: &[TravelTimeRecord]) -> Option<RunStats> {
        let globals: Vec<f64> = records.iter().filter_map(|r| r.global()).collect();
        if globals.is_empty() {
            return None;
        }
        Some(RunStats {
            mean_global: globals.iter().sum::<f64>() / globals.len() as f64,
            last_arrival: records
                .iter()
                .filter_map(|r| r.arrival_time)
                .fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSummary {
    pub mean_global: Summary,
    pub last_arrival: Summary,
}

pub fn summarize_runs(runs: &[RunStats]) -> RunSummary {
    let g: Vec<f64> = runs.iter().map(|r| r.mean_global).collect();
    let l: Vec<f64> = runs.iter().map(|r| r.last_arrival).collect();
    RunSummary {
        mean_global: summarize(&g),
        last_arrival: summarize(&l),
    }
}

/// Two-row table (average and last arrival) with one column per
/// configuration.
pub fn travel_time_table(columns: &[(&str, RunSummary)]) -> String {
    let mut out = String::from("statistic");
    for (name, _) in columns {
        out.push('\t');
        out.push_str(name);
    }
    out.push_str("\nAverage");
    for (_, s) in columns {
        out.push_str(&format!("\t{} s", s.mean_global));
    }
    out.push_str("\nLast");
    for (_, s) in columns {
        out.push_str(&format!("\t{} s", s.last_arrival));
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn measured_and_global_times() {
        let r = record_timing(
            0,
            0,
            0.0,
            [
                TimingEvent::EnterMeasurement(10.0),
                TimingEvent::Arrive(50.0),
            ],
        );
        assert_eq!(r.measured(), Some(40.0));
        assert_eq!(r.global(), Some(50.0));
    }

    #[test]
    fn reentry_keeps_first_start() {
        let r = record_timing(
            0,
            0,
            0.0,
            [
                TimingEvent::EnterMeasurement(10.0),
                TimingEvent::EnterMeasurement(12.0),
                TimingEvent::Arrive(50.0),
            ],
        );
        assert_eq!(r.measure_start_time, Some(10.0));
    }

    #[test]
    fn spawned_inside_measurement_area() {
        let r = record_timing(
            1,
            0,
            3.0,
            [
                TimingEvent::EnterMeasurement(3.0),
                TimingEvent::Arrive(20.0),
            ],
        );
        assert_eq!(r.measured(), r.global());
    }

    #[test]
    fn arrival_without_measurement_is_flagged() {
        let r = record_timing(0, 0, 0.0, [TimingEvent::Arrive(20.0)]);
        assert!(r.unmeasured_arrival());
        assert_eq!(r.measured(), None);
        assert_eq!(r.global(), Some(20.0));
    }

    #[test]
    fn lattice_parameters() {
        assert_eq!(LATTICE_SPACING, 0.2);
        assert_eq!(2.0 * SAMPLE_RADIUS, 2.2);
        assert_eq!(AVERAGING_WINDOW, 1.0);
        assert_eq!(AVERAGING_STEPS, 10);
    }

    #[test]
    fn single_agent_peak() {
        let bounds = Rect::new(DVec2::ZERO, DVec2::new(10.0, 10.0));
        let lattice = DensityLattice::new(&bounds, LATTICE_SPACING);
        let p = lattice.cell_center(25, 25);
        let frames = vec![vec![p]; AVERAGING_STEPS];
        let map = density_snapshot(&bounds, &frames);
        let expected = 1.0 / (std::f64::consts::PI * 1.1 * 1.1);
        assert!((map.at(25, 25) - expected).abs() < 1e-12);
        assert!((map.max() - expected).abs() < 1e-12);
        assert!((expected - 0.263).abs() < 1e-3);
    }

    #[test]
    fn empty_domain_is_zero() {
        let bounds = Rect::new(DVec2::ZERO, DVec2::new(4.0, 4.0));
        let map = density_snapshot(&bounds, &vec![Vec::new(); 10]);
        assert!(map.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn density_ignores_agent_order() {
        let bounds = Rect::new(DVec2::ZERO, DVec2::new(8.0, 6.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<DVec2> = (0..40)
            .map(|_| DVec2::new(rng.gen_range(0.0..8.0), rng.gen_range(0.0..6.0)))
            .collect();
        let mut rev = pts.clone();
        rev.reverse();
        assert_eq!(
            density_snapshot(&bounds, &[pts]),
            density_snapshot(&bounds, &[rev])
        );
    }

    #[test]
    fn two_run_summary() {
        let s = summarize(&[100.0, 110.0]);
        assert_eq!(s.mean, 105.0);
        assert!((s.std.unwrap() - 50f64.sqrt()).abs() < 1e-12);
        assert_eq!(format!("{s}"), "105.0 ± 7.1");
    }

    #[test]
    fn identical_runs_have_zero_spread() {
        let s = summarize(&[42.0, 42.0, 42.0]);
        assert_eq!(s.std, Some(0.0));
        assert!(s.zero_spread());
    }

    #[test]
    fn single_run_has_no_std() {
        let s = summarize(&[3.0]);
        assert_eq!(s.std, None);
        assert_eq!(format!("{s}"), "3.0 ± n/a");
    }

    #[test]
    fn pgm_header_and_size() {
        let bounds = Rect::new(DVec2::ZERO, DVec2::new(1.0, 0.6));
        let map = density_snapshot(&bounds, &[vec![DVec2::new(0.5, 0.3)]]);
        let pgm = map.to_pgm(4.0);
        let header = b"P5\n5 3\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm.len(), header.len() + 15);
    }
}
