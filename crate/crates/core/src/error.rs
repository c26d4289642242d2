use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::grid::RegionId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("empty destination: the destination polygon covers no walkable cell")]
    EmptyDestination,

    #[error("origin `{0}` covers no walkable cell")]
    EmptyOrigin(String),

    #[error("origin `{0}` is not connected to the destination on the walkable grid")]
    OriginUnreachable(String),

    #[error("unknown scenario `{0}` (not a file and not a bundled scenario name)")]
    UnknownScenario(String),

    #[error("point ({x:.3}, {y:.3}) is not on a walkable cell reached by the field")]
    NotNavigable { x: f64, y: f64 },

    #[error("max_routes must be at least 1")]
    InvalidMaxRoutes,

    #[error("origin `{0}` intersects no route catchment; try a different band width")]
    NoRouteForOrigin(String),

    #[error("could only place {placed} of {requested} agents without overlap (achieved density {density:.3} /m^2)")]
    Overcrowded {
        placed: usize,
        requested: usize,
        density: f64,
    },

    #[error("unfinished route {0}: a loaded route produced no measured travel time")]
    UnfinishedRoute(usize),

    #[error("simulation hit the time limit of {limit} s with {remaining} agents still walking")]
    TimeLimit { limit: f64, remaining: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("region {0} is unknown")]
    UnknownRegion(RegionId),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
