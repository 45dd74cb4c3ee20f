//! Event-driven model of a multi-microengine network processor.

pub mod config;
pub mod power;
pub mod sim;

pub use config::{EmissionFilter, EventKind, NpuConfig, PowerCoefficients, Role, WorkloadProfile};
pub use power::{accrue_energy, dynamic_power};
pub use sim::{run_simulation, simulate, trace_header, MeStats, NullSink, SummaryStats, TraceSink, WindowStats};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid arrivals: {0}")]
    Arrivals(String),
    #[error(transparent)]
    Dvs(#[from] crate::dvs::DvsError),
    #[error("trace output failed: {0}")]
    Io(#[from] std::io::Error),
}
