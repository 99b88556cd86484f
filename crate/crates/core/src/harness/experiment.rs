use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::check_amplitude;
use super::metrics::aggregate;
use super::{DetectorMode, ExperimentConfig, HarnessError, MetricsSummary};
use crate::cir::{impulse_response, CirTable};
use crate::markov_channel::{build_transition, receiver_index};
use crate::observation::{generate_observations, SamplingGrid, SymbolFrame};
use crate::receiver::{dfe_detect, run_receiver, same_distance, CandidateTemplates, DetectionResult, ReceiverConfig, TemplateBank};

/// Relative size of `g[horizon]` against the CIR peak below which the
/// truncated tail is ignored.
pub const TAIL_TOLERANCE: f64 = 1e-6;

/// The horizon is extended one symbol at a time, up to this many symbols.
const MAX_HORIZON_SYMBOLS: usize = 64;

/// Per-trial random stream: ChaCha8 seeded with the master seed, stream id
/// set to the trial index.
pub fn trial_rng(master_seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial_index);
    rng
}

/// Shared, read-only state of one experiment: sampling grid and one CIR per
/// distance of interest.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub grid: SamplingGrid,
    pub horizon: usize,
    cirs: BTreeMap<usize, Arc<CirTable>>,
}

/// Templates and receiver settings for one release amplitude and pilot length.
#[derive(Debug, Clone)]
pub struct OperatingPoint {
    pub receiver: ReceiverConfig,
    pub bank: TemplateBank,
    pub true_templates: CandidateTemplates,
    pub unaware_templates: CandidateTemplates,
    pub release_amplitude: f64,
}

impl OperatingPoint {
    pub fn pilot_length(&self) -> usize {
        self.receiver.pilot.len()
    }
}

/// Outcome of one Monte Carlo trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial_index: u64,
    /// Seed of the observation noise stream.
    pub seed: u64,
    pub detection: DetectionResult,
    /// Bit errors of the decisions at each trajectory entry.
    pub bit_errors: Vec<usize>,
    /// Whether each trajectory entry equals the true distance.
    pub distance_correct: Vec<bool>,
}

impl Experiment {
    /// Validates the configuration and computes the CIR of every candidate,
    /// the true distance and the mismatched distance. The horizon starts at
    /// the configured value (or `(L + 1) N_s`) and grows by whole symbols
    /// until every tail is below [`TAIL_TOLERANCE`] of its peak.
    pub fn prepare(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let grid = config.grid()?;
        let params = &config.physical;

        let mut distances: BTreeMap<usize, f64> = BTreeMap::new();
        for &d in config
            .receiver
            .candidates
            .iter()
            .chain([&config.true_distance, &config.mismatched_distance])
        {
            let r = receiver_index(d, params.spatial_step, params.num_states)?;
            distances.entry(r).or_insert(d);
        }
        let matrices = distances
            .iter()
            .map(|(&r, &d)| Ok((r, build_transition(params, d)?)))
            .collect::<Result<Vec<_>, HarnessError>>()?;

        let start = config
            .cir_horizon
            .unwrap_or((config.receiver.memory_length + 1) * grid.steps_per_symbol);
        let limit = start.max(MAX_HORIZON_SYMBOLS * grid.steps_per_symbol);
        let mut horizon = start;
        let cirs = loop {
            let tables: Vec<(usize, CirTable)> = matrices
                .par_iter()
                .map(|(r, cm)| (*r, impulse_response(cm, horizon)))
                .collect();
            match tables.iter().find(|(_, t)| !t.tail_negligible(TAIL_TOLERANCE)) {
                None => break tables,
                Some((_, t)) if horizon + grid.steps_per_symbol > limit => {
                    return Err(HarnessError::HorizonLimit {
                        horizon,
                        distance: t.distance,
                    })
                }
                Some(_) => horizon += grid.steps_per_symbol,
            }
        };
        Ok(Self {
            grid,
            horizon,
            cirs: cirs.into_iter().map(|(r, t)| (r, Arc::new(t))).collect(),
            config,
        })
    }

    pub fn cir(&self, distance: f64) -> Option<&Arc<CirTable>> {
        let p = &self.config.physical;
        let r = receiver_index(distance, p.spatial_step, p.num_states).ok()?;
        self.cirs.get(&r)
    }

    /// All CIR tables, ordered by distance.
    pub fn cir_tables(&self) -> Vec<Arc<CirTable>> {
        self.cirs.values().cloned().collect()
    }

    fn cir_or_err(&self, distance: f64) -> Result<&Arc<CirTable>, HarnessError> {
        self.cir(distance)
            .ok_or_else(|| HarnessError::Config(format!("no CIR prepared for distance {distance} m")))
    }

    pub fn operating_point(&self, release_amplitude: f64, pilot_length: usize) -> Result<OperatingPoint, HarnessError> {
        check_amplitude(release_amplitude)?;
        let receiver = self.config.receiver_config(pilot_length)?;
        let bank = TemplateBank::build(&receiver, &self.cir_tables(), &self.grid, release_amplitude)?;
        let templates = |d: f64| -> Result<CandidateTemplates, HarnessError> {
            Ok(CandidateTemplates::new(
                Arc::clone(self.cir_or_err(d)?),
                &self.grid,
                &receiver.combiner,
                &receiver.pilot,
                release_amplitude,
            ))
        };
        Ok(OperatingPoint {
            true_templates: templates(self.config.true_distance)?,
            unaware_templates: templates(self.config.mismatched_distance)?,
            receiver,
            bank,
            release_amplitude,
        })
    }

    /// The operating point named directly by the configuration.
    pub fn default_point(&self) -> Result<OperatingPoint, HarnessError> {
        self.operating_point(self.config.frame.release_amplitude, self.config.frame.pilot_length)
    }

    /// Draws data bits, synthesizes observations at the true distance and
    /// runs the requested detector. Deterministic in `(master_seed, trial_index)`.
    pub fn run_trial(
        &self,
        point: &OperatingPoint,
        mode: DetectorMode,
        trial_index: u64,
    ) -> Result<TrialResult, HarnessError> {
        let cfg = &self.config;
        let mut rng = trial_rng(cfg.master_seed, trial_index);
        let data: Vec<bool> = (0..cfg.frame.data_length).map(|_| rng.random::<bool>()).collect();
        let noise_seed = rng.next_u64();

        let frame = SymbolFrame::new(point.receiver.pilot.clone(), data, point.release_amplitude);
        let truth = self.cir_or_err(cfg.true_distance)?;
        let obs = generate_observations(truth, &frame, &self.grid, noise_seed, cfg.noise);

        let detection = match mode {
            DetectorMode::Isac => run_receiver(&obs, &point.receiver, &point.bank)?,
            DetectorMode::TrueDistanceDfe => DetectionResult::fixed(
                point.true_templates.distance,
                dfe_detect(&obs, &point.true_templates, &point.receiver, point.release_amplitude)?,
            ),
            DetectorMode::UnawareDfe => DetectionResult::fixed(
                point.unaware_templates.distance,
                dfe_detect(&obs, &point.unaware_templates, &point.receiver, point.release_amplitude)?,
            ),
        };
        let bit_errors = detection
            .detected_bits
            .iter()
            .map(|bits| bits.iter().zip(&frame.data).filter(|(a, b)| a != b).count())
            .collect();
        let distance_correct = detection
            .distance_trajectory
            .iter()
            .map(|&d| same_distance(d, cfg.true_distance))
            .collect();
        Ok(TrialResult {
            trial_index,
            seed: noise_seed,
            detection,
            bit_errors,
            distance_correct,
        })
    }

    /// Runs every trial of the configuration at `point` and aggregates.
    pub fn run(&self, point: &OperatingPoint, mode: DetectorMode) -> Result<MetricsSummary, HarnessError> {
        let trials = self.run_trials(point, mode)?;
        let max_iteration = match mode {
            DetectorMode::Isac => point.receiver.max_iterations,
            _ => 0,
        };
        Ok(aggregate(
            &trials,
            mode,
            point.release_amplitude,
            point.pilot_length(),
            self.config.frame.data_length,
            max_iteration,
        ))
    }

    pub fn run_trials(&self, point: &OperatingPoint, mode: DetectorMode) -> Result<Vec<TrialResult>, HarnessError> {
        let trials = self.config.trials as u64;
        let job = || {
            (0..trials)
                .into_par_iter()
                .map(|i| self.run_trial(point, mode, i))
                .collect::<Result<Vec<_>, _>>()
        };
        match self.config.workers {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::Pool(e.to_string()))?
                .install(job),
            None => job(),
        }
    }
}

/// Runs one trial of `cfg` at its configured amplitude, pilot length and mode.
pub fn run_trial(cfg: &ExperimentConfig, trial_index: u64) -> Result<TrialResult, HarnessError> {
    let exp = Experiment::prepare(cfg.clone())?;
    let point = exp.default_point()?;
    exp.run_trial(&point, cfg.detector_mode, trial_index)
}

/// Full Monte Carlo run of `cfg` at its configured operating point.
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<MetricsSummary, HarnessError> {
    let exp = Experiment::prepare(cfg.clone())?;
    let point = exp.default_point()?;
    exp.run(&point, cfg.detector_mode)
}
