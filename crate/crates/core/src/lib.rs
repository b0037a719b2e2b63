//! Tree-valued Moran models with mutation and selection.
//!
//! The population state carries the full genealogy as a matrix of
//! most-recent-common-ancestor times, so pairwise genealogical distances
//! grow implicitly with time and a replacement is a row copy.

pub mod closedform;
pub mod dual;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod genealogy;
pub mod generator_check;
pub mod model;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
