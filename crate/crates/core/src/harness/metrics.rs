//! Sensing accuracy, bit error ratio and relative BER reduction per iteration.

use serde::{Deserialize, Serialize};

use super::{DetectorMode, TrialResult};

/// Two-sided 95% normal quantile.
const Z_95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `successes` out of `n` at 95% confidence.
/// Returns `(0, 1)` when `n == 0`.
pub fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if successes as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub correct_distance: u64,
    pub p_acc: f64,
    pub p_acc_ci: (f64, f64),
    pub bit_errors: u64,
    pub ber: f64,
    pub ber_ci: (f64, f64),
    /// `(BER⁽⁰⁾ - BER⁽ᵗ⁾) / BER⁽⁰⁾`, zero when `BER⁽⁰⁾ = 0`.
    pub delta_ber: f64,
}

/// Aggregate metrics of one configuration point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub detector_mode: DetectorMode,
    pub release_amplitude: f64,
    pub pilot_length: usize,
    pub data_length: usize,
    pub trials: usize,
    pub iterations: Vec<IterationMetrics>,
    pub mean_iterations: f64,
    pub converged_fraction: f64,
}

impl MetricsSummary {
    pub fn at(&self, iteration: usize) -> &IterationMetrics {
        &self.iterations[iteration.min(self.iterations.len() - 1)]
    }
}

/// Aggregates trials into per-iteration metrics for `t = 0..=max_iteration`.
///
/// A trial whose receiver stopped before iteration `t` contributes its last
/// trajectory entry, since the estimate no longer changes after convergence.
/// All sums are over integers, so the result does not depend on trial order.
pub fn aggregate(
    trials: &[TrialResult],
    mode: DetectorMode,
    release_amplitude: f64,
    pilot_length: usize,
    data_length: usize,
    max_iteration: usize,
) -> MetricsSummary {
    let n = trials.len() as u64;
    let bits = n * data_length as u64;
    let at = |v: &[usize], t: usize| v[t.min(v.len() - 1)] as u64;

    let mut iterations: Vec<IterationMetrics> = Vec::with_capacity(max_iteration + 1);
    for t in 0..=max_iteration {
        let correct: u64 = trials
            .iter()
            .map(|tr| tr.distance_correct[t.min(tr.distance_correct.len() - 1)] as u64)
            .sum();
        let errors: u64 = trials.iter().map(|tr| at(&tr.bit_errors, t)).sum();
        let ber = if bits == 0 { 0.0 } else { errors as f64 / bits as f64 };
        let ber0 = iterations.first().map_or(ber, |m| m.ber);
        let delta_ber = if t == 0 || ber0 == 0.0 { 0.0 } else { (ber0 - ber) / ber0 };
        iterations.push(IterationMetrics {
            iteration: t,
            correct_distance: correct,
            p_acc: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            p_acc_ci: wilson_interval(correct, n),
            bit_errors: errors,
            ber,
            ber_ci: wilson_interval(errors, bits),
            delta_ber,
        });
    }

    let total_iterations: u64 = trials.iter().map(|t| t.detection.iterations_used as u64).sum();
    let converged: u64 = trials.iter().map(|t| t.detection.converged as u64).sum();
    MetricsSummary {
        detector_mode: mode,
        release_amplitude,
        pilot_length,
        data_length,
        trials: trials.len(),
        iterations,
        mean_iterations: if n == 0 { 0.0 } else { total_iterations as f64 / n as f64 },
        converged_fraction: if n == 0 { 0.0 } else { converged as f64 / n as f64 },
    }
}
