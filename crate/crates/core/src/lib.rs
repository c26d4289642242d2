//! Pedestrian microsimulation with automatic route extraction and iterated
//! travel-time user-equilibrium assignment.

pub mod assignment;
pub mod cli;
pub mod error;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod measurement;
pub mod routes;
pub mod scenario;
pub mod seed;
pub mod sfm;
pub mod spatial;

pub use error::{Error, Result};
