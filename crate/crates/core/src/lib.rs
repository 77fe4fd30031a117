//! Four-arm junction workbench: microsimulation, safety-constrained signal
//! control, a small neural Q-learning stack and the evaluation harness that
//! scores controllers by average stopped time per vehicle.

pub mod agent;
pub mod baselines;
pub mod config;
pub mod env;
pub mod error;
pub mod harness;
pub mod neural;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod sensing;
pub mod signal;
pub mod sim;
pub mod trace;

pub use config::{Config, DemandLevel, MovementId, Stage, Turn};
pub use error::{Error, Result};
