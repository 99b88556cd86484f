//! Pilot-assisted joint distance sensing and data detection.
//!
//! The receiver alternates between two steps over a discrete candidate set:
//! a least-squares match of observation blocks against noiseless templates to
//! pick a distance, and a decision-feedback detector that uses the block
//! responses of that distance to cancel post-cursor ISI. Pilots seed the first
//! distance estimate; detected data extends the template match in later
//! rounds.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cir::{block_responses, CirTable};
use crate::observation::{superpose_blocks, ObservationFrame, SamplingGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReceiverError {
    #[error("candidate distance set is empty")]
    EmptyCandidates,
    #[error("candidate distances must be strictly increasing (index {0})")]
    UnsortedCandidates(usize),
    #[error("maximum iteration count must be at least 1")]
    NoIterations,
    #[error("combiner has {found} weights, blocks have {expected} samples")]
    CombinerLength { expected: usize, found: usize },
    #[error("observation has {found} blocks, at least {required} required")]
    TooFewBlocks { required: usize, found: usize },
    #[error("no CIR table supplied for candidate distance {0} m")]
    MissingCir(f64),
}

/// Static receiver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    /// Candidate distances (m), strictly increasing.
    pub candidates: Vec<f64>,
    /// DFE memory `L`.
    pub memory_length: usize,
    /// Iteration cap `T_max`.
    pub max_iterations: usize,
    pub pilot: Vec<bool>,
    /// Block combining weights `c`.
    pub combiner: Vec<f64>,
}

impl ReceiverConfig {
    /// Builds a configuration with the uniform averaging combiner `(1/X) 1`.
    pub fn new(
        candidates: Vec<f64>,
        memory_length: usize,
        max_iterations: usize,
        pilot: Vec<bool>,
        samples_per_symbol: usize,
    ) -> Result<Self, ReceiverError> {
        let cfg = Self {
            candidates,
            memory_length,
            max_iterations,
            pilot,
            combiner: uniform_combiner(samples_per_symbol),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ReceiverError> {
        if self.candidates.is_empty() {
            return Err(ReceiverError::EmptyCandidates);
        }
        if let Some(i) = self.candidates.windows(2).position(|w| w[1] <= w[0]) {
            return Err(ReceiverError::UnsortedCandidates(i + 1));
        }
        if self.max_iterations == 0 {
            return Err(ReceiverError::NoIterations);
        }
        Ok(())
    }

    pub fn pilot_length(&self) -> usize {
        self.pilot.len()
    }
}

pub fn uniform_combiner(samples_per_symbol: usize) -> Vec<f64> {
    vec![1.0 / samples_per_symbol as f64; samples_per_symbol]
}

/// Everything the receiver precomputes for one candidate distance.
#[derive(Debug, Clone)]
pub struct CandidateTemplates {
    pub distance: f64,
    pub cir: Arc<CirTable>,
    /// Sampled block responses `ĝ_ℓ` for every delay inside the CIR horizon.
    pub block_responses: Vec<Vec<f64>>,
    /// Compressed coefficients `g̃_ℓ = c·ĝ_ℓ`.
    pub compressed: Vec<f64>,
    /// Noiseless means of the pilot prefix, one block per pilot symbol.
    pub pilot_templates: Vec<Vec<f64>>,
}

impl CandidateTemplates {
    pub fn new(cir: Arc<CirTable>, grid: &SamplingGrid, combiner: &[f64], pilot: &[bool], amplitude: f64) -> Self {
        let mut responses = block_responses(&cir, grid);
        if responses.is_empty() {
            responses.push(vec![0.0; grid.samples_per_symbol]);
        }
        let compressed = responses.iter().map(|g| dot(combiner, g)).collect();
        let pilot_templates = superpose_blocks(&responses, pilot, amplitude);
        Self {
            distance: cir.distance,
            cir,
            block_responses: responses,
            compressed,
            pilot_templates,
        }
    }

    /// `g̃_ℓ`, zero past the horizon.
    pub fn compressed_at(&self, delay: usize) -> f64 {
        self.compressed.get(delay).copied().unwrap_or(0.0)
    }

    /// Full-frame noiseless means `μ_m(d, a)` including all modeled ISI.
    pub fn frame_means(&self, symbols: &[bool], amplitude: f64) -> Vec<Vec<f64>> {
        superpose_blocks(&self.block_responses, symbols, amplitude)
    }
}

/// Per-candidate templates for one release amplitude and pilot pattern.
#[derive(Debug, Clone)]
pub struct TemplateBank {
    pub entries: Vec<CandidateTemplates>,
    pub grid: SamplingGrid,
    pub release_amplitude: f64,
}

impl TemplateBank {
    /// Builds templates for each configured candidate, looking up its CIR in
    /// `cirs` by receiver distance.
    pub fn build(
        cfg: &ReceiverConfig,
        cirs: &[Arc<CirTable>],
        grid: &SamplingGrid,
        release_amplitude: f64,
    ) -> Result<Self, ReceiverError> {
        cfg.validate()?;
        if cfg.combiner.len() != grid.samples_per_symbol {
            return Err(ReceiverError::CombinerLength {
                expected: grid.samples_per_symbol,
                found: cfg.combiner.len(),
            });
        }
        let entries = cfg
            .candidates
            .iter()
            .map(|&d| {
                let cir = cirs
                    .iter()
                    .find(|c| same_distance(c.distance, d))
                    .ok_or(ReceiverError::MissingCir(d))?;
                Ok(CandidateTemplates::new(
                    Arc::clone(cir),
                    grid,
                    &cfg.combiner,
                    &cfg.pilot,
                    release_amplitude,
                ))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            entries,
            grid: *grid,
            release_amplitude,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn distance(&self, candidate: usize) -> f64 {
        self.entries[candidate].distance
    }

    /// Index of the candidate at distance `d`, if any.
    pub fn position(&self, d: f64) -> Option<usize> {
        self.entries.iter().position(|e| same_distance(e.distance, d))
    }
}

/// Distances are grid multiples; compare at a fraction of a nanometre.
pub fn same_distance(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn squared_residual(blocks: &[Vec<f64>], templates: &[Vec<f64>]) -> f64 {
    blocks
        .iter()
        .zip(templates)
        .map(|(z, mu)| z.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

/// Index of the smallest cost; ties resolve to the earliest (smallest) candidate.
fn argmin(costs: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in costs.enumerate() {
        match best {
            Some((_, b)) if c >= b => {}
            _ => best = Some((i, c)),
        }
    }
    best.map(|(i, _)| i)
}

/// Least-squares match of the pilot blocks against each candidate's pilot
/// templates. Returns the winning candidate index.
pub fn pilot_distance_init(obs: &ObservationFrame, bank: &TemplateBank) -> Result<usize, ReceiverError> {
    let pilots = bank.entries.first().map_or(0, |e| e.pilot_templates.len());
    if obs.blocks.len() < pilots {
        return Err(ReceiverError::TooFewBlocks {
            required: pilots,
            found: obs.blocks.len(),
        });
    }
    let blocks = &obs.blocks[..pilots];
    argmin(bank.entries.iter().map(|e| squared_residual(blocks, &e.pilot_templates)))
        .ok_or(ReceiverError::EmptyCandidates)
}

/// Scalar decision statistic `c·z`.
pub fn compress(block: &[f64], combiner: &[f64]) -> Result<f64, ReceiverError> {
    if block.len() != combiner.len() {
        return Err(ReceiverError::CombinerLength {
            expected: block.len(),
            found: combiner.len(),
        });
    }
    Ok(dot(combiner, block))
}

/// Per-symbol view of one DFE pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DfeTrace {
    pub bits: Vec<bool>,
    /// `z̃_m - Î_m` for each data symbol.
    pub statistics: Vec<f64>,
    pub threshold: f64,
}

/// Sequential decision-feedback detection of the data symbols using the
/// compressed coefficients of one candidate.
pub fn dfe_detect(
    obs: &ObservationFrame,
    templates: &CandidateTemplates,
    cfg: &ReceiverConfig,
    amplitude: f64,
) -> Result<Vec<bool>, ReceiverError> {
    dfe_trace(obs, templates, cfg, amplitude).map(|t| t.bits)
}

pub fn dfe_trace(
    obs: &ObservationFrame,
    templates: &CandidateTemplates,
    cfg: &ReceiverConfig,
    amplitude: f64,
) -> Result<DfeTrace, ReceiverError> {
    let pilots = cfg.pilot.len();
    if obs.blocks.len() < pilots {
        return Err(ReceiverError::TooFewBlocks {
            required: pilots,
            found: obs.blocks.len(),
        });
    }
    let threshold = 0.5 * amplitude * templates.compressed_at(0);
    let isi_taps: Vec<f64> = (1..=cfg.memory_length)
        .map(|delay| amplitude * templates.compressed_at(delay))
        .collect();

    // Feedback sequence: pilots, then decisions as they are made.
    let mut feedback: Vec<bool> = cfg.pilot.clone();
    let data_len = obs.blocks.len() - pilots;
    let mut statistics = Vec::with_capacity(data_len);
    for block in &obs.blocks[pilots..] {
        let m = feedback.len();
        let z = compress(block, &cfg.combiner)?;
        let isi: f64 = isi_taps
            .iter()
            .enumerate()
            .filter(|&(l, _)| m > l && feedback[m - 1 - l])
            .map(|(_, tap)| tap)
            .sum();
        let stat = z - isi;
        feedback.push(stat >= threshold);
        statistics.push(stat);
    }
    Ok(DfeTrace {
        bits: feedback.split_off(pilots),
        statistics,
        threshold,
    })
}

/// Data-aided distance update: least-squares match of all blocks against the
/// full-frame templates of the reconstructed sequence `pilot ++ data`.
pub fn refine_distance(
    obs: &ObservationFrame,
    reconstructed: &[bool],
    bank: &TemplateBank,
) -> Result<usize, ReceiverError> {
    if obs.blocks.len() < reconstructed.len() {
        return Err(ReceiverError::TooFewBlocks {
            required: reconstructed.len(),
            found: obs.blocks.len(),
        });
    }
    let blocks = &obs.blocks[..reconstructed.len()];
    argmin(
        bank.entries
            .iter()
            .map(|e| squared_residual(blocks, &e.frame_means(reconstructed, bank.release_amplitude))),
    )
    .ok_or(ReceiverError::EmptyCandidates)
}

/// Outcome of one run of the iterative receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    /// `d̂^(0), d̂^(1), ...` in metres.
    pub distance_trajectory: Vec<f64>,
    /// `detected_bits[t]` are the data decisions made at `d̂^(t)`.
    pub detected_bits: Vec<Vec<bool>>,
    /// Refinement rounds executed.
    pub iterations_used: usize,
    pub converged: bool,
}

impl DetectionResult {
    pub fn final_distance(&self) -> f64 {
        *self.distance_trajectory.last().expect("nonempty trajectory")
    }

    pub fn final_bits(&self) -> &[bool] {
        self.detected_bits.last().map_or(&[], Vec::as_slice)
    }

    /// Single-pass detection at a fixed distance, without sensing.
    pub fn fixed(distance: f64, bits: Vec<bool>) -> Self {
        Self {
            distance_trajectory: vec![distance],
            detected_bits: vec![bits],
            iterations_used: 0,
            converged: true,
        }
    }
}

/// Alternates DFE detection and data-aided distance refinement until the
/// estimate stops changing or `T_max` rounds have run. The bits reported for
/// each trajectory entry are the DFE decisions at that distance, so the last
/// entry pairs the final distance with its own decisions.
pub fn run_receiver(
    obs: &ObservationFrame,
    cfg: &ReceiverConfig,
    bank: &TemplateBank,
) -> Result<DetectionResult, ReceiverError> {
    let amplitude = bank.release_amplitude;
    let mut trajectory = vec![pilot_distance_init(obs, bank)?];
    let mut detected = Vec::with_capacity(cfg.max_iterations + 1);
    let mut converged = false;
    let mut iterations = 0;

    for t in 0..cfg.max_iterations {
        let current = trajectory[t];
        let bits = dfe_detect(obs, &bank.entries[current], cfg, amplitude)?;
        let reconstructed: Vec<bool> = cfg.pilot.iter().chain(&bits).copied().collect();
        let next = refine_distance(obs, &reconstructed, bank)?;
        detected.push(bits);
        trajectory.push(next);
        iterations += 1;
        if next == current {
            converged = true;
            break;
        }
    }

    let last = *trajectory.last().expect("nonempty trajectory");
    let final_bits = if converged {
        detected.last().cloned().expect("at least one pass")
    } else {
        dfe_detect(obs, &bank.entries[last], cfg, amplitude)?
    };
    detected.push(final_bits);

    Ok(DetectionResult {
        distance_trajectory: trajectory.iter().map(|&c| bank.distance(c)).collect(),
        detected_bits: detected,
        iterations_used: iterations,
        converged,
    })
}
