//! Indexed Markov chains for high-frequency returns.
//!
//! Returns are discretized onto a small symmetric grid and modelled as a
//! Markov chain whose transition matrix switches with a moving-average index
//! of recent squared (or absolute) returns. The crate covers ingestion,
//! estimation at known thresholds, change-point search over the index range,
//! bootstrap testing, simulation, first-passage analysis of the index and
//! model diagnostics.

pub mod changepoint;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod first_passage;
pub mod index;
pub mod market_data;
pub mod matrix;
pub mod simulation;
pub mod testing;

pub use error::{Error, Result};
pub use matrix::{Matrix, StochasticMatrix};
