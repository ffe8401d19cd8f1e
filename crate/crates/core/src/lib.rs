//! Deterministic discrete-event simulator of a capacity market in which
//! network domains buy, stock and resell guaranteed-quality route capacity.
//!
//! A service destination periodically initiates a reverse cascade of offer,
//! demand, selection and choice messages; intermediate domains learn how
//! much capacity to stock and at what margin to resell it, stage after
//! stage, until the market reaches a stable state.

pub mod contracts;
pub mod engine;
pub mod error;
pub mod gen;
pub mod policies;
pub mod protocol;
pub mod scenarios;
pub mod sweep;
pub mod topology;

pub use contracts::{AvailabilityWindow, CapacityLedger, Contract};
pub use engine::{run, Engine, SimulationReport, StageRecord};
pub use error::{AmendError, EngineError, ScenarioError};
pub use topology::{parse_scenario, NetworkGraph, Scenario, TrafficMatrix};
