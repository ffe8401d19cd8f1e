//! Batch driver: run many independent scenarios, optionally in parallel.
//!
//! A single simulation is inherently sequential (each stage depends on the
//! previous one), so parallelism lives here, across scenarios. The
//! `parallel` feature (on by default) dispatches to rayon; without it the
//! same API runs the batch sequentially.

use crate::engine::{run, SimulationReport};
use crate::error::EngineError;
use crate::topology::Scenario;

/// Outcome of one batch member, in input order.
pub type BatchResult = Result<SimulationReport, EngineError>;

/// Run every scenario sequentially.
pub fn run_batch_seq(scenarios: Vec<Scenario>) -> Vec<BatchResult> {
    scenarios.into_iter().map(run).collect()
}

/// Run every scenario on the rayon thread pool.
#[cfg(feature = "parallel")]
pub fn run_batch_par(scenarios: Vec<Scenario>) -> Vec<BatchResult> {
    use rayon::prelude::*;
    scenarios.into_par_iter().map(run).collect()
}

/// Run a batch with the best available strategy for the enabled features.
pub fn run_batch(scenarios: Vec<Scenario>) -> Vec<BatchResult> {
    #[cfg(feature = "parallel")]
    {
        run_batch_par(scenarios)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_batch_seq(scenarios)
    }
}
