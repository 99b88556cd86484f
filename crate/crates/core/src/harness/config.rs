//! JSON experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::markov_channel::PhysicalParams;
use crate::observation::SamplingGrid;
use crate::receiver::{same_distance, uniform_combiner, ReceiverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    /// Pilot initialization, DFE and iterative refinement.
    Isac,
    /// DFE with the templates of the true distance.
    TrueDistanceDfe,
    /// DFE with the templates of a fixed mismatched distance.
    UnawareDfe,
}

impl DetectorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorMode::Isac => "isac",
            DetectorMode::TrueDistanceDfe => "true_distance_dfe",
            DetectorMode::UnawareDfe => "unaware_dfe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    /// `T_b` (s).
    pub symbol_interval: f64,
    /// `T_s` (s).
    pub sampling_interval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSection {
    pub pilot_length: usize,
    pub data_length: usize,
    /// Molecules per bit 1.
    pub release_amplitude: f64,
    /// Explicit pilot pattern; all ones when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_bits: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release_amplitude_sweep: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_length_sweep: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSection {
    /// Candidate distances (m), strictly increasing.
    pub candidates: Vec<f64>,
    pub memory_length: usize,
    pub max_iterations: usize,
    /// Block combining weights; uniform averaging when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combiner: Option<Vec<f64>>,
}

fn default_noise() -> bool {
    true
}

/// Complete description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub physical: PhysicalParams,
    pub sampling: SamplingSection,
    pub frame: FrameSection,
    pub receiver: ReceiverSection,
    /// Ground-truth distance (m).
    pub true_distance: f64,
    /// Fixed distance assumed by the distance-unaware baseline (m).
    pub mismatched_distance: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub detector_mode: DetectorMode,
    /// Gaussian observation noise on/off.
    #[serde(default = "default_noise")]
    pub noise: bool,
    /// Starting CIR horizon in Markov steps; `(L + 1) N_s` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cir_horizon: Option<usize>,
    /// Worker threads; rayon's default pool when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// Reference setup: 7 candidates from 130 to 160 µm, truth at 150 µm,
    /// 12 s symbols with 5 retained samples, `K_p = 2`, `K_d = 1000`, `L = 2`,
    /// `T_max = 5`, 1000 trials.
    pub fn reference() -> Self {
        Self {
            physical: PhysicalParams::reference(),
            sampling: SamplingSection {
                symbol_interval: 12.0,
                sampling_interval: 2.4,
            },
            frame: FrameSection {
                pilot_length: 2,
                data_length: 1000,
                release_amplitude: 2400.0,
                pilot_bits: None,
                release_amplitude_sweep: Some(vec![800.0, 2400.0, 6000.0]),
                pilot_length_sweep: Some(vec![1, 2, 3, 4]),
            },
            receiver: ReceiverSection {
                candidates: vec![130e-6, 135e-6, 140e-6, 145e-6, 150e-6, 155e-6, 160e-6],
                memory_length: 2,
                max_iterations: 5,
                combiner: None,
            },
            true_distance: 150e-6,
            mismatched_distance: 140e-6,
            trials: 1000,
            master_seed: 2026,
            detector_mode: DetectorMode::Isac,
            noise: true,
            cir_horizon: None,
            workers: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<SamplingGrid, HarnessError> {
        Ok(SamplingGrid::new(
            self.sampling.symbol_interval,
            self.sampling.sampling_interval,
            self.physical.time_step,
        )?)
    }

    /// Pilot pattern of length `len`: the configured bits when their length
    /// matches, otherwise all ones if no bits were configured.
    pub fn pilot(&self, len: usize) -> Result<Vec<bool>, HarnessError> {
        match &self.frame.pilot_bits {
            None => Ok(vec![true; len]),
            Some(bits) if bits.len() == len => bits
                .iter()
                .map(|&b| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(HarnessError::Config(format!("pilot bit {other} is not 0 or 1"))),
                })
                .collect(),
            Some(bits) => Err(HarnessError::Config(format!(
                "pilot_bits has {} entries but pilot length {len} was requested",
                bits.len()
            ))),
        }
    }

    pub fn receiver_config(&self, pilot_length: usize) -> Result<ReceiverConfig, HarnessError> {
        let grid = self.grid()?;
        let cfg = ReceiverConfig {
            candidates: self.receiver.candidates.clone(),
            memory_length: self.receiver.memory_length,
            max_iterations: self.receiver.max_iterations,
            pilot: self.pilot(pilot_length)?,
            combiner: self
                .receiver
                .combiner
                .clone()
                .unwrap_or_else(|| uniform_combiner(grid.samples_per_symbol)),
        };
        cfg.validate()?;
        if cfg.combiner.len() != grid.samples_per_symbol {
            return Err(HarnessError::Config(format!(
                "combiner has {} weights, grid retains {} samples per symbol",
                cfg.combiner.len(),
                grid.samples_per_symbol
            )));
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.physical.validate()?;
        self.grid()?;
        self.receiver_config(self.frame.pilot_length)?;
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        if self.frame.pilot_length + self.frame.data_length == 0 {
            return Err(HarnessError::Config("frame must contain at least one symbol".into()));
        }
        check_amplitude(self.frame.release_amplitude)?;
        if !self
            .receiver
            .candidates
            .iter()
            .any(|&d| same_distance(d, self.true_distance))
        {
            return Err(HarnessError::Config(format!(
                "true distance {} m is not in the candidate set",
                self.true_distance
            )));
        }
        if self.workers == Some(0) {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_amplitude(amplitude: f64) -> Result<(), HarnessError> {
    if amplitude.is_finite() && amplitude > 0.0 {
        Ok(())
    } else {
        Err(HarnessError::Config(format!(
            "release amplitude must be positive, got {amplitude}"
        )))
    }
}
