//! Statistics, exact oracles and Monte Carlo experiments.

pub mod experiments;
pub mod oracle;
pub mod plan;
pub mod stats;

use thiserror::Error;

use crate::adversary::AdversaryError;
use crate::channel::ChannelError;
use crate::protocol::ProtocolError;

pub use experiments::{
    detection_probability, evaluate_cell, intensity_ledger, leakage_vs_n, read_floor, roc_sweep,
    DetectionEstimate, LeakagePoint, RocPoint, Scenario, TradeoffPoint,
};
pub use oracle::{exact_detection_oracle, exact_pulse_alarm, OracleError};
pub use plan::{ExperimentPlan, PlanKind, SweepReport};
pub use stats::{wilson_interval, Interval, Proportion};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("invalid experiment plan: {0}")]
    Plan(String),
}
