//! Channel and CIR invariant checks over every distance of a configuration.

use rayon::prelude::*;
use serde::Serialize;

use super::experiment::TAIL_TOLERANCE;
use super::{Experiment, ExperimentConfig, HarnessError};
use crate::cir::mass_conservation_error;
use crate::markov_channel::build_transition;

/// Tolerance on transient mass plus cumulative outflow.
pub const MASS_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct ChannelCheck {
    pub distance: f64,
    pub receiver_index: usize,
    pub matrix_violations: Vec<String>,
    pub cir_in_unit_interval: bool,
    /// `g_i = 0` for every `i <= r - 1`.
    pub dead_time_holds: bool,
    pub mass_error: f64,
    /// `g[horizon] / max g`.
    pub tail_ratio: f64,
}

impl ChannelCheck {
    pub fn passed(&self) -> bool {
        self.matrix_violations.is_empty()
            && self.cir_in_unit_interval
            && self.dead_time_holds
            && self.mass_error <= MASS_TOLERANCE
            && self.tail_ratio < TAIL_TOLERANCE
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub horizon: usize,
    pub checks: Vec<ChannelCheck>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(ChannelCheck::passed)
    }
}

/// Builds every channel the configuration refers to and checks stochasticity,
/// CIR bounds, dead time, mass conservation and tail truncation.
pub fn validate_channels(cfg: &ExperimentConfig) -> Result<CheckReport, HarnessError> {
    let exp = Experiment::prepare(cfg.clone())?;
    let checks = exp
        .cir_tables()
        .par_iter()
        .map(|cir| {
            let cm = build_transition(&cfg.physical, cir.distance)?;
            let r = cm.receiver_index();
            let peak = cir.peak();
            Ok(ChannelCheck {
                distance: cir.distance,
                receiver_index: r,
                matrix_violations: cm.validate().violations.iter().map(ToString::to_string).collect(),
                cir_in_unit_interval: cir.g.iter().all(|g| (0.0..=1.0).contains(g)),
                dead_time_holds: cir.g.iter().take(r).all(|&g| g == 0.0),
                mass_error: mass_conservation_error(&cm, exp.horizon),
                tail_ratio: if peak > 0.0 { cir.truncation_tail / peak } else { 0.0 },
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(CheckReport {
        horizon: exp.horizon,
        checks,
    })
}
