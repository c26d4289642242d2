//! Scenario description, JSON loading and rasterization onto the
//! navigation grid.
//!
//! Rasterization classifies cells by their center: a cell is blocked iff its
//! center lies inside some obstacle polygon, and belongs to a named area iff
//! its center lies inside that polygon. Walls therefore need to be at least
//! two navigation cells thick to be guaranteed impassable.

use std::collections::VecDeque;
use std::path::Path;

use glam::DVec2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Polygon, Rect, Segment};
use crate::grid::{OccupancyGrid, Region, RegionId, RegionKind};

fn default_nav_cell_size() -> f64 {
    0.1
}
fn default_density_cell_size() -> f64 {
    0.2
}
fn default_dt() -> f64 {
    0.1
}
fn default_max_time() -> f64 {
    1500.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    #[serde(default = "default_nav_cell_size")]
    pub nav_cell_size: f64,
    #[serde(default = "default_density_cell_size")]
    pub density_cell_size: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Simulated time after which a run is abandoned.
    #[serde(default = "default_max_time")]
    pub max_time: f64,
}

impl Default for Parameters {
    fn default() -> Self {
        Parameters {
            nav_cell_size: default_nav_cell_size(),
            density_cell_size: default_density_cell_size(),
            dt: default_dt(),
            max_time: default_max_time(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Origin {
    pub name: String,
    pub polygon: Polygon,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Agents per square meter of polygon area.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
}

impl Origin {
    pub fn agent_count(&self) -> usize {
        match (self.count, self.density) {
            (Some(n), _) => n,
            (None, Some(d)) => (d * self.polygon.area()).round() as usize,
            (None, None) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub bounds: Rect,
    #[serde(default)]
    pub obstacles: Vec<Polygon>,
    pub origins: Vec<Origin>,
    pub destination: Polygon,
    /// Travel-time measurement starts on first entry. Without one,
    /// measurement starts at spawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_area: Option<Polygon>,
    #[serde(default)]
    pub parameters: Parameters,
}

const BUNDLED: [(&str, &str); 4] = [
    (
        "fig1_single_obstacle",
        include_str!("../scenarios/fig1_single_obstacle.json"),
    ),
    (
        "fig2_two_origins",
        include_str!("../scenarios/fig2_two_origins.json"),
    ),
    (
        "fig6_evacuation_replica",
        include_str!("../scenarios/fig6_evacuation_replica.json"),
    ),
    (
        "two_corridor_asym",
        include_str!("../scenarios/two_corridor_asym.json"),
    ),
];

impl Scenario {
    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    pub fn bundled(name: &str) -> Option<Scenario> {
        let (_, text) = BUNDLED.iter().find(|(n, _)| *n == name)?;
        let scenario: Scenario =
            serde_json::from_str(text).unwrap_or_else(|e| panic!("bundled scenario {name}: {e}"));
        Some(scenario)
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::Json {
            path: "<inline>".into(),
            source: e,
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        let scenario: Scenario = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_owned(),
            source: e,
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    /// A path to a JSON file, or the name of a bundled scenario.
    pub fn resolve(spec: &str) -> Result<Scenario> {
        let path = Path::new(spec);
        if path.is_file() {
            return Scenario::load(path);
        }
        Scenario::bundled(spec).ok_or_else(|| Error::UnknownScenario(spec.to_owned()))
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.parameters;
        let bad = |m: &str| Err(Error::InvalidScenario(m.to_owned()));
        if !(p.nav_cell_size > 0.0) {
            return bad("nav_cell_size must be positive");
        }
        if !(p.density_cell_size > 0.0) {
            return bad("density_cell_size must be positive");
        }
        if !(p.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(p.max_time > 0.0) {
            return bad("max_time must be positive");
        }
        let size = self.bounds.size();
        if !(size.x > 0.0 && size.y > 0.0) {
            return bad("bounds must have positive extent");
        }
        if self.origins.is_empty() {
            return bad("at least one origin is required");
        }
        for o in &self.origins {
            if o.count.is_some() && o.density.is_some() {
                return Err(Error::InvalidScenario(format!(
                    "origin `{}` gives both count and density",
                    o.name
                )));
            }
            if o.density.is_some_and(|d| !(d >= 0.0)) {
                return Err(Error::InvalidScenario(format!(
                    "origin `{}` has a negative density",
                    o.name
                )));
            }
        }
        Ok(())
    }

    /// Obstacle edges plus the outer boundary, used for wall forces.
    pub fn wall_segments(&self) -> Vec<Segment> {
        let mut walls: Vec<Segment> = self.bounds.edges().to_vec();
        for obstacle in &self.obstacles {
            walls.extend(obstacle.edges());
        }
        walls
    }

    pub fn rasterize(&self) -> Result<Layout> {
        self.validate()?;
        let p = &self.parameters;
        let cs = p.nav_cell_size;
        let size = self.bounds.size();
        let width = (size.x / cs - 1e-9).ceil().max(1.0) as usize;
        let height = (size.y / cs - 1e-9).ceil().max(1.0) as usize;
        let mut grid = OccupancyGrid::new(width, height, cs, self.bounds.min());
        for c in 0..grid.len() {
            let center = grid.cell_center(c);
            grid.walkable[c] = !self.obstacles.iter().any(|o| o.contains(center));
        }

        let cover = |poly: &Polygon| -> Vec<usize> {
            grid.walkable_cells()
                .filter(|&c| poly.contains(grid.cell_center(c)))
                .collect()
        };

        let destination = Region::new(
            RegionId(0),
            RegionKind::Destination,
            cover(&self.destination),
        );
        if destination.is_empty() {
            return Err(Error::EmptyDestination);
        }

        let reachable = reachable_from(&grid, &destination.cells);
        let mut origins = Vec::with_capacity(self.origins.len());
        for (k, o) in self.origins.iter().enumerate() {
            let region = Region::new(RegionId(k + 1), RegionKind::Origin, cover(&o.polygon));
            if region.is_empty() {
                return Err(Error::EmptyOrigin(o.name.clone()));
            }
            if region.cells.iter().any(|&c| !reachable[c]) {
                return Err(Error::OriginUnreachable(o.name.clone()));
            }
            origins.push(OriginArea {
                name: o.name.clone(),
                region,
                agents: o.agent_count(),
            });
        }

        let measurement = self.measurement_area.as_ref().map(|poly| {
            Region::new(
                RegionId(self.origins.len() + 1),
                RegionKind::Measurement,
                cover(poly),
            )
        });

        Ok(Layout {
            grid,
            destination,
            origins,
            measurement,
        })
    }
}

/// Walkable cells connected to `seeds` by navigation moves.
fn reachable_from(grid: &OccupancyGrid, seeds: &[usize]) -> Vec<bool> {
    let mut seen = vec![false; grid.len()];
    let mut queue = VecDeque::new();
    for &s in seeds {
        seen[s] = true;
        queue.push_back(s);
    }
    while let Some(c) = queue.pop_front() {
        for (n, _) in grid.moves(c, |x| grid.walkable[x]) {
            if !seen[n] {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    seen
}

#[derive(Debug, Clone, PartialEq)]
pub struct OriginArea {
    pub name: String,
    pub region: Region,
    pub agents: usize,
}

/// A rasterized scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub grid: OccupancyGrid,
    pub destination: Region,
    pub origins: Vec<OriginArea>,
    pub measurement: Option<Region>,
}

impl Layout {
    /// First region id not used by scenario areas.
    pub fn next_region_id(&self) -> usize {
        self.origins.len() + 2
    }

    pub fn region_area(&self, region: &Region) -> f64 {
        region.len() as f64 * self.grid.cell_size * self.grid.cell_size
    }

    pub fn in_measurement(&self, p: DVec2) -> bool {
        match &self.measurement {
            Some(m) => self.grid.cell_of(p).is_some_and(|c| m.contains(c)),
            None => true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor(obstacles: Vec<Polygon>, destination: Polygon) -> Scenario {
        Scenario {
            name: "t".into(),
            description: String::new(),
            bounds: Rect::new(DVec2::ZERO, DVec2::new(10.0, 2.0)),
            obstacles,
            origins: vec![Origin {
                name: "left".into(),
                polygon: Polygon::rect(DVec2::ZERO, DVec2::new(1.0, 2.0)),
                count: Some(3),
                density: None,
            }],
            destination,
            measurement_area: None,
            parameters: Parameters::default(),
        }
    }

    fn right_end() -> Polygon {
        Polygon::rect(DVec2::new(9.0, 0.0), DVec2::new(10.0, 2.0))
    }

    #[test]
    fn empty_rectangle_is_fully_walkable() {
        let layout = corridor(vec![], right_end()).rasterize().unwrap();
        assert_eq!((layout.grid.width, layout.grid.height), (100, 20));
        assert!(layout.grid.walkable.iter().all(|&w| w));
        assert_eq!(layout.destination.len(), 200);
    }

    #[test]
    fn unit_obstacle_blocks_exactly_its_cell_centers() {
        let obstacle = Polygon::rect(DVec2::new(4.5, 0.5), DVec2::new(5.5, 1.5));
        let layout = corridor(vec![obstacle.clone()], right_end())
            .rasterize()
            .unwrap();
        let blocked = layout.grid.walkable.iter().filter(|&&w| !w).count();
        // independent count: sweep all cell centers of the 100x20 lattice
        let mut expected = 0;
        for j in 0..20 {
            for i in 0..100 {
                let c = DVec2::new(0.05 + 0.1 * i as f64, 0.05 + 0.1 * j as f64);
                if c.x > 4.5 && c.x < 5.5 && c.y > 0.5 && c.y < 1.5 {
                    expected += 1;
                }
            }
        }
        assert_eq!(expected, 100);
        assert_eq!(blocked, expected);
    }

    #[test]
    fn destination_inside_obstacle_is_empty() {
        let obstacle = Polygon::rect(DVec2::new(8.0, 0.0), DVec2::new(10.0, 2.0));
        let err = corridor(vec![obstacle], right_end())
            .rasterize()
            .unwrap_err();
        assert!(matches!(err, Error::EmptyDestination));
    }

    #[test]
    fn sealed_origin_is_reported_by_name() {
        let wall = Polygon::rect(DVec2::new(3.0, 0.0), DVec2::new(3.5, 2.0));
        let err = corridor(vec![wall], right_end()).rasterize().unwrap_err();
        match err {
            Error::OriginUnreachable(name) => assert_eq!(name, "left"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn density_origin_counts_by_area() {
        let o = Origin {
            name: "o".into(),
            polygon: Polygon::rect(DVec2::ZERO, DVec2::new(10.7, 12.0)),
            count: None,
            density: Some(2.5),
        };
        assert_eq!(o.agent_count(), 321);
    }

    #[test]
    fn bundled_scenarios_parse_and_rasterize() {
        for name in Scenario::bundled_names() {
            let s = Scenario::bundled(name).unwrap();
            s.validate().unwrap();
            s.rasterize().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn json_round_trip() {
        let s = Scenario::bundled("fig1_single_obstacle").unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(Scenario::from_json(&text).unwrap(), s);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut s = corridor(vec![], right_end());
        s.parameters.dt = 0.0;
        assert!(matches!(s.validate(), Err(Error::InvalidScenario(_))));
    }
}
