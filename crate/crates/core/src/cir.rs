//! Markov-step channel impulse responses.
//!
//! The CIR `g_i(d)` is the expected bound fraction `i` steps after a unit
//! release into the inlet state. It is computed by repeated sparse
//! propagation of the transient state vector, never by matrix powers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::markov_channel::ChannelMatrix;
use crate::observation::SamplingGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CirError {
    #[error("state vector has {found} entries, channel has {expected} transient states")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("input amplitude must be nonnegative and finite, got {0}")]
    NegativeInput(f64),
    #[error("CIR horizon {horizon} does not cover step index {required}")]
    HorizonExceeded { required: usize, horizon: usize },
}

/// Expected molecule counts in the transient states at a given step.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub x: Vec<f64>,
    pub step_index: usize,
}

impl StateVector {
    pub fn zeros(dims: usize) -> Self {
        Self {
            x: vec![0.0; dims],
            step_index: 0,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.x.iter().sum()
    }

    /// Expected count in the bound state (output selector `h = e_N`).
    pub fn bound(&self) -> f64 {
        *self.x.last().unwrap_or(&0.0)
    }
}

/// One step of `x' = Q x + b u`, with `b` selecting the inlet state.
pub fn propagate(cm: &ChannelMatrix, state: &StateVector, input: f64) -> Result<StateVector, CirError> {
    if state.x.len() != cm.dims() {
        return Err(CirError::DimensionMismatch {
            expected: cm.dims(),
            found: state.x.len(),
        });
    }
    if !(input >= 0.0 && input.is_finite()) {
        return Err(CirError::NegativeInput(input));
    }
    let mut next = vec![0.0; cm.dims()];
    cm.mul_vec_into(&state.x, &mut next);
    next[0] += input;
    Ok(StateVector {
        x: next,
        step_index: state.step_index + 1,
    })
}

/// Impulse response of one candidate distance, truncated at `horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct CirTable {
    pub distance: f64,
    pub receiver_index: usize,
    /// `g[i]` for `i = 0..=horizon`.
    pub g: Vec<f64>,
    pub horizon: usize,
    /// `g[horizon]`; bounds the neglected tail when the response is decaying.
    pub truncation_tail: f64,
}

impl CirTable {
    /// `g_i`, treated as zero past the horizon.
    pub fn get(&self, i: usize) -> f64 {
        self.g.get(i).copied().unwrap_or(0.0)
    }

    pub fn peak(&self) -> f64 {
        self.g.iter().copied().fold(0.0, f64::max)
    }

    /// Whether the truncated tail is below `rel_tol` times the peak response.
    pub fn tail_negligible(&self, rel_tol: f64) -> bool {
        self.truncation_tail < rel_tol * self.peak()
    }
}

/// Computes `g_i = h^T Q^i b` for `i = 0..=horizon` by iterating the state
/// recursion from a unit mass at the inlet.
pub fn impulse_response(cm: &ChannelMatrix, horizon: usize) -> CirTable {
    let n = cm.dims();
    let bound = n - 1;
    let mut g = Vec::with_capacity(horizon + 1);
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    x[0] = 1.0;
    g.push(x[bound]);
    for _ in 0..horizon {
        cm.mul_vec_into(&x, &mut next);
        std::mem::swap(&mut x, &mut next);
        g.push(x[bound]);
    }
    CirTable {
        distance: cm.distance(),
        receiver_index: cm.receiver_index(),
        truncation_tail: g[horizon],
        g,
        horizon,
    }
}

/// Largest deviation from one of (transient mass + cumulative outflow) over
/// `steps` steps of a unit impulse at the inlet.
pub fn mass_conservation_error(cm: &ChannelMatrix, steps: usize) -> f64 {
    let n = cm.dims();
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    x[0] = 1.0;
    let mut absorbed = 0.0;
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        absorbed += cm.outflow(&x);
        cm.mul_vec_into(&x, &mut next);
        std::mem::swap(&mut x, &mut next);
        let total: f64 = x.iter().sum::<f64>() + absorbed;
        worst = worst.max((total - 1.0).abs());
    }
    worst
}

/// Sampled block response `[g_{ℓN_s + qM - 1}]` for `q = 1..=X`.
pub fn block_response(cir: &CirTable, delay: usize, grid: &SamplingGrid) -> Result<Vec<f64>, CirError> {
    let last = delay * grid.steps_per_symbol + grid.samples_per_symbol * grid.decimation - 1;
    if last > cir.horizon {
        return Err(CirError::HorizonExceeded {
            required: last,
            horizon: cir.horizon,
        });
    }
    Ok(sampled(cir, delay, grid, |g| g))
}

/// Block responses for every delay whose first retained sample lies inside the
/// horizon. Samples past the horizon read as zero.
pub fn block_responses(cir: &CirTable, grid: &SamplingGrid) -> Vec<Vec<f64>> {
    block_kernel(cir, grid, |g| g)
}

/// Per-delay, per-sample binomial variance terms `g (1 - g)` on the same
/// retained grid as [`block_responses`].
pub fn block_variances(cir: &CirTable, grid: &SamplingGrid) -> Vec<Vec<f64>> {
    block_kernel(cir, grid, |g| g * (1.0 - g))
}

fn block_kernel(cir: &CirTable, grid: &SamplingGrid, f: impl Fn(f64) -> f64 + Copy) -> Vec<Vec<f64>> {
    let covered = (cir.horizon + 1).saturating_sub(grid.decimation) / grid.steps_per_symbol;
    let first_sample = |delay: usize| delay * grid.steps_per_symbol + grid.decimation - 1;
    (0..=covered)
        .filter(|&delay| first_sample(delay) <= cir.horizon)
        .map(|delay| sampled(cir, delay, grid, f))
        .collect()
}

fn sampled(cir: &CirTable, delay: usize, grid: &SamplingGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
    (1..=grid.samples_per_symbol)
        .map(|q| f(cir.get(delay * grid.steps_per_symbol + q * grid.decimation - 1)))
        .collect()
}

/// Writes `(distance_m, step_index, g)` rows for each table.
pub fn write_cir_csv<W: Write>(writer: W, tables: &[CirTable]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["distance_m", "step_index", "g"])?;
    for table in tables {
        for (i, g) in table.g.iter().enumerate() {
            out.write_record([table.distance.to_string(), i.to_string(), g.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

const PARTICLE_CHUNK: usize = 1 << 16;

/// Simulates `n_molecules` independent walkers released into the inlet and
/// returns the bound-state occupancy after each of `0..=steps` transitions.
///
/// Walkers are split into fixed-size chunks, each driven by its own ChaCha
/// stream, so the result depends only on `seed`.
pub fn simulate_particles(cm: &ChannelMatrix, n_molecules: usize, steps: usize, seed: u64) -> Vec<u64> {
    let n = cm.dims();
    let absorbed = n;
    // Per column: cumulative thresholds and targets, absorbing state last.
    let moves: Vec<(Vec<f64>, Vec<usize>)> = (0..n)
        .map(|j| {
            let mut cum = Vec::new();
            let mut targets = Vec::new();
            let mut acc = 0.0;
            for (i, p) in cm.column(j) {
                acc += p;
                cum.push(acc);
                targets.push(i);
            }
            let psi = cm.psi()[j];
            if psi > 0.0 {
                acc += psi;
                cum.push(acc);
                targets.push(absorbed);
            }
            (cum, targets)
        })
        .collect();
    let bound = n - 1;

    let chunks = n_molecules.div_ceil(PARTICLE_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let size = PARTICLE_CHUNK.min(n_molecules - chunk * PARTICLE_CHUNK);
            let mut states = vec![0usize; size];
            let mut counts = vec![0u64; steps + 1];
            for count in counts.iter_mut().skip(1) {
                for s in states.iter_mut() {
                    if *s == absorbed {
                        continue;
                    }
                    let (cum, targets) = &moves[*s];
                    let u: f64 = rng.random();
                    let pick = cum.iter().position(|&c| u < c).unwrap_or(targets.len() - 1);
                    *s = targets[pick];
                    if *s == bound {
                        *count += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; steps + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov_channel::{assemble, build_transition, elementary_probs, PhysicalParams};

    fn small_chain() -> ChannelMatrix {
        let probs = elementary_probs(&PhysicalParams::reference()).unwrap();
        assemble(4, &probs, 2, 1e-6)
    }

    #[test]
    fn propagate_from_empty_and_inlet() {
        let cm = build_transition(&PhysicalParams::reference(), 150e-6).unwrap();
        let x1 = propagate(&cm, &StateVector::zeros(cm.dims()), 1.0).unwrap();
        assert_eq!(x1.x[0], 1.0);
        assert_eq!(x1.total_mass(), 1.0);
        assert_eq!(x1.step_index, 1);

        let x2 = propagate(&cm, &x1, 0.0).unwrap();
        assert!((x2.x[0] - 0.952).abs() < 1e-15);
        assert!((x2.x[1] - 0.048).abs() < 1e-15);
        assert_eq!(x2.step_index, 2);
    }

    #[test]
    fn propagate_rejects_bad_input() {
        let cm = small_chain();
        assert_eq!(
            propagate(&cm, &StateVector::zeros(3), 0.0),
            Err(CirError::DimensionMismatch { expected: 4, found: 3 })
        );
        assert!(matches!(
            propagate(&cm, &StateVector::zeros(4), -1.0),
            Err(CirError::NegativeInput(_))
        ));
    }

    #[test]
    fn mass_is_conserved_with_outflow() {
        let cm = small_chain();
        let mut state = StateVector {
            x: vec![0.3, 0.2, 0.4, 0.1],
            step_index: 0,
        };
        let mut absorbed = 0.0;
        for _ in 0..200 {
            let before = state.total_mass();
            let leak = cm.outflow(&state.x);
            state = propagate(&cm, &state, 0.0).unwrap();
            assert!((state.total_mass() + leak - before).abs() < 1e-14);
            absorbed += leak;
            assert!((state.total_mass() + absorbed - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn small_chain_second_step() {
        let cir = impulse_response(&small_chain(), 5);
        assert_eq!(cir.g[0], 0.0);
        assert_eq!(cir.g[1], 0.0);
        assert!((cir.g[2] - 2.304e-4).abs() < 1e-18);
        assert_eq!(cir.truncation_tail, cir.g[5]);
    }

    #[test]
    fn block_response_indices() {
        let cir = CirTable {
            distance: 0.0,
            receiver_index: 1,
            g: (0..40).map(|i| i as f64 / 100.0).collect(),
            horizon: 39,
            truncation_tail: 0.39,
        };
        let unit = SamplingGrid::from_steps(8, 1, 8e-4).unwrap();
        assert_eq!(
            block_response(&cir, 0, &unit).unwrap(),
            (0..8).map(|i| i as f64 / 100.0).collect::<Vec<_>>()
        );
        let grid = SamplingGrid::from_steps(10, 2, 8e-4).unwrap();
        assert_eq!(block_response(&cir, 1, &grid).unwrap(), vec![0.11, 0.13, 0.15, 0.17, 0.19]);
        assert_eq!(
            block_response(&cir, 4, &grid),
            Err(CirError::HorizonExceeded { required: 49, horizon: 39 })
        );
        // Delays 0..=3 have all samples inside; none past.
        let kernel = block_responses(&cir, &grid);
        assert_eq!(kernel.len(), 4);
        assert_eq!(kernel[3], block_response(&cir, 3, &grid).unwrap());
    }

    #[test]
    fn kernel_zero_fills_partial_delays() {
        let cir = CirTable {
            distance: 0.0,
            receiver_index: 1,
            g: vec![0.5; 15],
            horizon: 14,
            truncation_tail: 0.5,
        };
        let grid = SamplingGrid::from_steps(10, 2, 8e-4).unwrap();
        let kernel = block_responses(&cir, &grid);
        assert_eq!(kernel.len(), 2);
        assert_eq!(kernel[1], vec![0.5, 0.5, 0.0, 0.0, 0.0]);
        let var = block_variances(&cir, &grid);
        assert_eq!(var[0], vec![0.25; 5]);
    }

    #[test]
    fn reference_block_response_indices() {
        let cm = build_transition(&PhysicalParams::reference(), 150e-6).unwrap();
        let cir = impulse_response(&cm, 15000);
        let grid = SamplingGrid::new(12.0, 2.4, 8e-4).unwrap();
        let block = block_response(&cir, 0, &grid).unwrap();
        let expected: Vec<f64> = [2999, 5999, 8999, 11999, 14999].iter().map(|&i| cir.g[i]).collect();
        assert_eq!(block, expected);
        assert!(block_response(&cir, 2, &grid).is_err());
    }

    #[test]
    fn particles_zero_steps_and_determinism() {
        let cm = small_chain();
        assert_eq!(simulate_particles(&cm, 1000, 0, 7), vec![0]);
        let a = simulate_particles(&cm, 70_000, 6, 11);
        let b = simulate_particles(&cm, 70_000, 6, 11);
        assert_eq!(a, b);
        assert_eq!(a[0], 0);
        assert_eq!(a[1], 0);
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let cir = impulse_response(&small_chain(), 3);
        let mut buf = Vec::new();
        write_cir_csv(&mut buf, &[cir]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "distance_m,step_index,g");
        assert_eq!(lines.len(), 5);
        assert!(lines[3].starts_with("0.000001,2,"));
    }
}
