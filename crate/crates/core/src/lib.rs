//! Markov state-space simulation of a flow-driven molecular communication
//! channel, with a pilot-assisted receiver that jointly estimates the
//! transmitter-receiver distance and detects on-off keyed data.
//!
//! The pipeline runs in four stages:
//!
//! - [`markov_channel`]: distance-parameterized transition matrices.
//! - [`cir`]: Markov-step impulse responses and a particle-level oracle.
//! - [`observation`]: OOK framing and noisy block observations.
//! - [`receiver`]: distance initialization, decision feedback detection and
//!   iterative refinement.
//!
//! [`harness`] ties them together into Monte Carlo experiments driven by a
//! JSON configuration.

pub mod cir;
pub mod harness;
pub mod markov_channel;
pub mod observation;
pub mod receiver;

pub use cir::{impulse_response, CirTable, StateVector};
pub use markov_channel::{build_transition, ChannelMatrix, ElementaryProbs, PhysicalParams};
pub use observation::{generate_observations, ObservationFrame, SamplingGrid, SymbolFrame};
pub use receiver::{run_receiver, DetectionResult, ReceiverConfig, TemplateBank};
