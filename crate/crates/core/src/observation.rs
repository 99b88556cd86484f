//! OOK framing and noisy per-symbol observation blocks.
//!
//! Bit 1 releases `N_tx` molecules at the start of its symbol interval, bit 0
//! releases nothing. The receiver keeps `X` samples per symbol, spaced `M`
//! Markov steps apart, and each sample carries independent Gaussian noise with
//! the binomial counting variance of the expected bound count.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cir::{block_responses, block_variances, CirTable};

const RATIO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("{what} = {value} is not a positive integer")]
    NotInteger { what: &'static str, value: f64 },
    #[error("steps per symbol {steps} is not a multiple of the decimation {decimation}")]
    Indivisible { steps: usize, decimation: usize },
}

/// Retained-sample grid inside one symbol interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrid {
    /// `T_b` (s).
    pub symbol_interval: f64,
    /// `T_s` (s).
    pub sampling_interval: f64,
    /// `N_s = T_b / Δt`.
    pub steps_per_symbol: usize,
    /// `M = T_s / Δt`.
    pub decimation: usize,
    /// `X = N_s / M`.
    pub samples_per_symbol: usize,
}

fn positive_ratio(what: &'static str, value: f64) -> Result<usize, GridError> {
    let rounded = value.round();
    if !value.is_finite() || rounded < 1.0 || (value - rounded).abs() > RATIO_TOL * rounded {
        return Err(GridError::NotInteger { what, value });
    }
    Ok(rounded as usize)
}

impl SamplingGrid {
    /// Derives the integer step counts from the symbol interval, the retained
    /// sampling interval and the Markov time step.
    pub fn new(symbol_interval: f64, sampling_interval: f64, time_step: f64) -> Result<Self, GridError> {
        let steps = positive_ratio("T_b / Δt", symbol_interval / time_step)?;
        let decimation = positive_ratio("T_s / Δt", sampling_interval / time_step)?;
        if steps % decimation != 0 {
            return Err(GridError::Indivisible { steps, decimation });
        }
        Ok(Self {
            symbol_interval,
            sampling_interval,
            steps_per_symbol: steps,
            decimation,
            samples_per_symbol: steps / decimation,
        })
    }

    pub fn from_steps(steps_per_symbol: usize, decimation: usize, time_step: f64) -> Result<Self, GridError> {
        Self::new(
            steps_per_symbol as f64 * time_step,
            decimation as f64 * time_step,
            time_step,
        )
    }

    /// Markov step of retained sample `q` (1-based) in symbol `m` (1-based):
    /// `k = (m - 1) N_s + q M`.
    pub fn retained_index(&self, m: usize, q: usize) -> usize {
        (m - 1) * self.steps_per_symbol + q * self.decimation
    }
}

/// Pilot prefix plus data payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolFrame {
    pub pilot: Vec<bool>,
    pub data: Vec<bool>,
    /// Molecules released per bit 1.
    pub release_amplitude: f64,
}

impl SymbolFrame {
    pub fn new(pilot: Vec<bool>, data: Vec<bool>, release_amplitude: f64) -> Self {
        Self {
            pilot,
            data,
            release_amplitude,
        }
    }

    pub fn len(&self) -> usize {
        self.pilot.len() + self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Full transmitted sequence, pilots first.
    pub fn symbols(&self) -> Vec<bool> {
        self.pilot.iter().chain(&self.data).copied().collect()
    }
}

/// Received blocks `z_1..z_K`, each with `X` retained samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub blocks: Vec<Vec<f64>>,
    pub grid: SamplingGrid,
    pub true_distance: f64,
    pub seed: u64,
}

/// Nonzero entries of the impulsive input `u_k = Σ N_tx a_m δ[k - (m-1) N_s]`.
pub fn ook_input(frame: &SymbolFrame, grid: &SamplingGrid) -> Vec<(usize, f64)> {
    frame
        .symbols()
        .iter()
        .enumerate()
        .filter(|(_, &bit)| bit)
        .map(|(m, _)| (m * grid.steps_per_symbol, frame.release_amplitude))
        .collect()
}

/// Superposes per-delay block kernels: block `m` receives
/// `Σ_ℓ N_tx a_{m-ℓ} kernel[ℓ]` over the delays the kernel covers.
pub fn superpose_blocks(kernel: &[Vec<f64>], symbols: &[bool], amplitude: f64) -> Vec<Vec<f64>> {
    let width = kernel.first().map_or(0, Vec::len);
    (0..symbols.len())
        .map(|m| {
            let mut block = vec![0.0; width];
            for (delay, response) in kernel.iter().enumerate().take(m + 1) {
                if symbols[m - delay] {
                    for (b, g) in block.iter_mut().zip(response) {
                        *b += amplitude * g;
                    }
                }
            }
            block
        })
        .collect()
}

/// Noiseless block means `μ_m(d, a)` for every symbol of the frame. CIR values
/// past the table horizon count as zero.
pub fn noiseless_block_means(cir: &CirTable, frame: &SymbolFrame, grid: &SamplingGrid) -> Vec<Vec<f64>> {
    let kernel = block_responses(cir, grid);
    let kernel = pad_kernel(kernel, grid);
    superpose_blocks(&kernel, &frame.symbols(), frame.release_amplitude)
}

fn pad_kernel(kernel: Vec<Vec<f64>>, grid: &SamplingGrid) -> Vec<Vec<f64>> {
    if kernel.is_empty() {
        vec![vec![0.0; grid.samples_per_symbol]]
    } else {
        kernel
    }
}

/// Signal-dependent variance `σ_k² = Σ_m N_tx a_m g (1 - g)` at Markov step `k`,
/// with `g = g_{k - (m-1) N_s - 1}`.
pub fn noise_variance(cir: &CirTable, frame: &SymbolFrame, grid: &SamplingGrid, step: usize) -> f64 {
    frame
        .symbols()
        .iter()
        .enumerate()
        .filter(|(_, &bit)| bit)
        .filter_map(|(m, _)| {
            let offset = m * grid.steps_per_symbol + 1;
            (step >= offset).then(|| {
                let g = cir.get(step - offset);
                frame.release_amplitude * g * (1.0 - g)
            })
        })
        .sum()
}

/// Synthesizes `z = μ + w` at every retained sample, with independent
/// `w ~ N(0, σ²)`. With `noise_on == false` the blocks are the exact means.
pub fn generate_observations(
    cir: &CirTable,
    frame: &SymbolFrame,
    grid: &SamplingGrid,
    seed: u64,
    noise_on: bool,
) -> ObservationFrame {
    let symbols = frame.symbols();
    let means = noiseless_block_means(cir, frame, grid);
    let blocks = if noise_on {
        let variances = superpose_blocks(
            &pad_kernel(block_variances(cir, grid), grid),
            &symbols,
            frame.release_amplitude,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        means
            .into_iter()
            .zip(variances)
            .map(|(mu, var)| {
                mu.into_iter()
                    .zip(var)
                    .map(|(m, v)| {
                        let w: f64 = StandardNormal.sample(&mut rng);
                        m + v.max(0.0).sqrt() * w
                    })
                    .collect()
            })
            .collect()
    } else {
        means
    };
    ObservationFrame {
        blocks,
        grid: *grid,
        true_distance: cir.distance,
        seed,
    }
}

/// Writes `(trial, symbol_index, sample_index, z)` rows, both indices 1-based.
pub fn write_observation_csv<W: Write>(writer: W, frames: &[(u64, &ObservationFrame)]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["trial", "symbol_index", "sample_index", "z"])?;
    for (trial, frame) in frames {
        for (m, block) in frame.blocks.iter().enumerate() {
            for (q, z) in block.iter().enumerate() {
                out.write_record([trial.to_string(), (m + 1).to_string(), (q + 1).to_string(), z.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cir::{block_response, impulse_response};
    use crate::markov_channel::{build_transition, PhysicalParams};
    use proptest::prelude::*;

    fn toy_cir() -> CirTable {
        // Smooth rise-and-decay profile, nonzero after step 2.
        let g: Vec<f64> = (0..60)
            .map(|i| if i < 3 { 0.0 } else { 0.3 * (-(i as f64 - 3.0) / 9.0).exp() * (1.0 - (-(i as f64 - 2.0) / 2.0).exp()) })
            .collect();
        CirTable {
            distance: 2e-6,
            receiver_index: 3,
            truncation_tail: g[59],
            horizon: 59,
            g,
        }
    }

    fn toy_grid() -> SamplingGrid {
        SamplingGrid::from_steps(10, 2, 8e-4).unwrap()
    }

    #[test]
    fn reference_grid() {
        let grid = SamplingGrid::new(12.0, 2.4, 8e-4).unwrap();
        assert_eq!(grid.steps_per_symbol, 15000);
        assert_eq!(grid.decimation, 3000);
        assert_eq!(grid.samples_per_symbol, 5);
        assert_eq!(grid.retained_index(2, 1), 18000);
    }

    #[test]
    fn grid_rejects_non_integer_ratios() {
        assert!(matches!(
            SamplingGrid::new(12.0, 2.4, 7e-4),
            Err(GridError::NotInteger { .. })
        ));
        assert_eq!(
            SamplingGrid::new(12.0, 5.0, 1.0),
            Err(GridError::Indivisible { steps: 12, decimation: 5 })
        );
    }

    #[test]
    fn ook_impulses() {
        let grid = SamplingGrid::new(12.0, 2.4, 8e-4).unwrap();
        let one = SymbolFrame::new(vec![], vec![true], 2400.0);
        assert_eq!(ook_input(&one, &grid), vec![(0, 2400.0)]);
        let frame = SymbolFrame::new(vec![true], vec![false, true], 800.0);
        assert_eq!(ook_input(&frame, &grid), vec![(0, 800.0), (30000, 800.0)]);
        let silent = SymbolFrame::new(vec![false], vec![false, false], 800.0);
        assert!(ook_input(&silent, &grid).is_empty());
    }

    #[test]
    fn block_means_superpose_delays() {
        let cir = toy_cir();
        let grid = toy_grid();
        let g0 = block_response(&cir, 0, &grid).unwrap();
        let g1 = block_response(&cir, 1, &grid).unwrap();

        let single = noiseless_block_means(&cir, &SymbolFrame::new(vec![], vec![true], 100.0), &grid);
        assert_eq!(single.len(), 1);
        for (a, b) in single[0].iter().zip(&g0) {
            assert_eq!(*a, 100.0 * b);
        }

        let both = noiseless_block_means(&cir, &SymbolFrame::new(vec![true], vec![true], 100.0), &grid);
        for q in 0..5 {
            assert!((both[1][q] - 100.0 * (g0[q] + g1[q])).abs() < 1e-12);
        }

        let tail = noiseless_block_means(&cir, &SymbolFrame::new(vec![true], vec![false], 100.0), &grid);
        for q in 0..5 {
            assert!((tail[1][q] - 100.0 * g1[q]).abs() < 1e-12);
        }
    }

    #[test]
    fn post_cursor_matches_state_space_simulation() {
        let cm = build_transition(
            &PhysicalParams {
                num_states: 12,
                ..PhysicalParams::reference()
            },
            4e-6,
        )
        .unwrap();
        let grid = SamplingGrid::from_steps(40, 8, 8e-4).unwrap();
        let cir = impulse_response(&cm, 200);
        let frame = SymbolFrame::new(vec![true], vec![false], 500.0);
        let means = noiseless_block_means(&cir, &frame, &grid);

        // x_k = Q x_{k-1} + b u_{k-1}, observed y_k = x_k[bound].
        let mut x = crate::cir::StateVector::zeros(cm.dims());
        let mut y = vec![0.0];
        for k in 1..=2 * grid.steps_per_symbol {
            let u = if k - 1 == 0 { 500.0 } else { 0.0 };
            x = crate::cir::propagate(&cm, &x, u).unwrap();
            y.push(x.bound());
        }
        for q in 1..=grid.samples_per_symbol {
            assert!((means[1][q - 1] - y[grid.retained_index(2, q)]).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_cases() {
        let cir = toy_cir();
        let grid = toy_grid();
        let silent = SymbolFrame::new(vec![false], vec![false, false], 100.0);
        for k in 0..40 {
            assert_eq!(noise_variance(&cir, &silent, &grid, k), 0.0);
        }
        let single = SymbolFrame::new(vec![], vec![true], 100.0);
        let g = cir.g[6];
        assert!((noise_variance(&cir, &single, &grid, 7) - 100.0 * g * (1.0 - g)).abs() < 1e-12);

        let certain = CirTable {
            distance: 0.0,
            receiver_index: 1,
            g: vec![1.0; 5],
            horizon: 4,
            truncation_tail: 1.0,
        };
        assert_eq!(noise_variance(&certain, &single, &grid, 3), 0.0);
    }

    #[test]
    fn noise_off_and_determinism() {
        let cir = toy_cir();
        let grid = toy_grid();
        let frame = SymbolFrame::new(vec![true, true], vec![false, true, true, false], 300.0);
        let clean = generate_observations(&cir, &frame, &grid, 5, false);
        assert_eq!(clean.blocks, noiseless_block_means(&cir, &frame, &grid));
        let a = generate_observations(&cir, &frame, &grid, 5, true);
        let b = generate_observations(&cir, &frame, &grid, 5, true);
        assert_eq!(a, b);
        assert_ne!(a.blocks, clean.blocks);
        let c = generate_observations(&cir, &frame, &grid, 6, true);
        assert_ne!(a.blocks, c.blocks);
    }

    #[test]
    fn zero_variance_samples_are_exact() {
        let cir = toy_cir();
        let grid = toy_grid();
        // First symbol silent: its block has zero mean and zero variance.
        let frame = SymbolFrame::new(vec![false], vec![true], 300.0);
        let obs = generate_observations(&cir, &frame, &grid, 1, true);
        assert_eq!(obs.blocks[0], vec![0.0; 5]);
    }

    #[test]
    fn empirical_mean_within_standard_error() {
        let cir = toy_cir();
        let grid = toy_grid();
        let frame = SymbolFrame::new(vec![true], vec![], 400.0);
        let mu = noiseless_block_means(&cir, &frame, &grid)[0][1];
        let sigma = noise_variance(&cir, &frame, &grid, grid.retained_index(1, 2)).sqrt();
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|seed| generate_observations(&cir, &frame, &grid, seed, true).blocks[0][1])
            .sum::<f64>()
            / n as f64;
        assert!((mean - mu).abs() < 4.0 * sigma / 100.0, "{mean} vs {mu}");
    }

    #[test]
    fn observation_csv_rows() {
        let cir = toy_cir();
        let grid = toy_grid();
        let frame = SymbolFrame::new(vec![true], vec![false], 300.0);
        let obs = generate_observations(&cir, &frame, &grid, 1, false);
        let mut buf = Vec::new();
        write_observation_csv(&mut buf, &[(3, &obs)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 5);
        assert!(text.lines().nth(6).unwrap().starts_with("3,2,1,"));
    }

    proptest! {
        #[test]
        fn disjoint_frames_superpose(bits in proptest::collection::vec(0u8..3, 1..12)) {
            // 0: neither, 1: first frame, 2: second frame.
            let cir = toy_cir();
            let grid = toy_grid();
            let a: Vec<bool> = bits.iter().map(|&b| b == 1).collect();
            let b: Vec<bool> = bits.iter().map(|&b| b == 2).collect();
            let both: Vec<bool> = bits.iter().map(|&b| b != 0).collect();
            let mean = |data: Vec<bool>| noiseless_block_means(&cir, &SymbolFrame::new(vec![], data, 250.0), &grid);
            let (ma, mb, mab) = (mean(a), mean(b), mean(both));
            for m in 0..bits.len() {
                for q in 0..5 {
                    prop_assert!((ma[m][q] + mb[m][q] - mab[m][q]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn variance_is_nonnegative(bits in proptest::collection::vec(any::<bool>(), 1..10), step in 0usize..120) {
            let frame = SymbolFrame::new(vec![], bits, 123.0);
            prop_assert!(noise_variance(&toy_cir(), &frame, &toy_grid(), step) >= 0.0);
        }
    }
}
