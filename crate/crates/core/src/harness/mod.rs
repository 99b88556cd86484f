//! Monte Carlo experiments: configuration, trial execution, metrics, sweeps
//! and channel checks.

mod config;
mod experiment;
mod metrics;
mod sweep;
mod validate;

pub use config::{DetectorMode, ExperimentConfig, FrameSection, ReceiverSection, SamplingSection};
pub use experiment::{run_monte_carlo, run_trial, trial_rng, Experiment, OperatingPoint, TrialResult};
pub use metrics::{aggregate, wilson_interval, IterationMetrics, MetricsSummary};
pub use sweep::{sweep, write_sweep_csv, SweepAxis, SweepRow};
pub use validate::{validate_channels, ChannelCheck, CheckReport};

use thiserror::Error;

use crate::cir::CirError;
use crate::markov_channel::ChannelError;
use crate::observation::GridError;
use crate::receiver::ReceiverError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Cir(#[from] CirError),
    #[error(transparent)]
    Receiver(#[from] ReceiverError),
    #[error("CIR tail still above tolerance at horizon {horizon} for distance {distance} m")]
    HorizonLimit { horizon: usize, distance: f64 },
    #[error("sweep axis `{0}` has no values")]
    EmptySweep(&'static str),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}
