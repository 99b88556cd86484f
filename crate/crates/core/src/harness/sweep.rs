use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use super::{DetectorMode, Experiment, ExperimentConfig, HarnessError, MetricsSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Release amplitude `N_tx` over `frame.release_amplitude_sweep`.
    Ntx,
    /// Pilot length `K_p` over `frame.pilot_length_sweep`.
    Pilot,
    /// Per-iteration metrics of the iterative receiver, one block of rows per
    /// amplitude in `frame.release_amplitude_sweep`.
    Iteration,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Ntx => "ntx",
            SweepAxis::Pilot => "pilot",
            SweepAxis::Iteration => "iteration",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ntx" => Ok(SweepAxis::Ntx),
            "pilot" => Ok(SweepAxis::Pilot),
            "iteration" => Ok(SweepAxis::Iteration),
            other => Err(format!("unknown sweep axis `{other}` (expected ntx, pilot or iteration)")),
        }
    }
}

/// Metrics at one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub summary: MetricsSummary,
}

/// Runs the configured detector at each sweep value. The iteration axis always
/// uses the iterative receiver.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis) -> Result<Vec<SweepRow>, HarnessError> {
    let points: Vec<(f64, usize)> = match axis {
        SweepAxis::Ntx | SweepAxis::Iteration => cfg
            .frame
            .release_amplitude_sweep
            .as_deref()
            .unwrap_or_default()
            .iter()
            .map(|&n| (n, cfg.frame.pilot_length))
            .collect(),
        SweepAxis::Pilot => cfg
            .frame
            .pilot_length_sweep
            .as_deref()
            .unwrap_or_default()
            .iter()
            .map(|&k| (cfg.frame.release_amplitude, k))
            .collect(),
    };
    if points.is_empty() {
        return Err(HarnessError::EmptySweep(axis.as_str()));
    }
    let mode = match axis {
        SweepAxis::Iteration => DetectorMode::Isac,
        _ => cfg.detector_mode,
    };

    let exp = Experiment::prepare(cfg.clone())?;
    points
        .into_iter()
        .map(|(amplitude, pilot_length)| {
            let point = exp.operating_point(amplitude, pilot_length)?;
            let summary = exp.run(&point, mode)?;
            let value = match axis {
                SweepAxis::Pilot => pilot_length as f64,
                _ => amplitude,
            };
            Ok(SweepRow { axis, value, summary })
        })
        .collect()
}

#[derive(Serialize)]
struct CsvRecord {
    axis: &'static str,
    sweep_value: f64,
    detector_mode: &'static str,
    release_amplitude: f64,
    pilot_length: usize,
    data_length: usize,
    trials: usize,
    iteration: usize,
    p_acc: f64,
    p_acc_lo: f64,
    p_acc_hi: f64,
    ber: f64,
    ber_lo: f64,
    ber_hi: f64,
    delta_ber: f64,
    mean_iterations: f64,
    converged_fraction: f64,
}

/// One CSV row per sweep value per iteration index, with a header row.
pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for row in rows {
        let s = &row.summary;
        for it in &s.iterations {
            out.serialize(CsvRecord {
                axis: row.axis.as_str(),
                sweep_value: row.value,
                detector_mode: s.detector_mode.as_str(),
                release_amplitude: s.release_amplitude,
                pilot_length: s.pilot_length,
                data_length: s.data_length,
                trials: s.trials,
                iteration: it.iteration,
                p_acc: it.p_acc,
                p_acc_lo: it.p_acc_ci.0,
                p_acc_hi: it.p_acc_ci.1,
                ber: it.ber,
                ber_lo: it.ber_ci.0,
                ber_hi: it.ber_ci.1,
                delta_ber: it.delta_ber,
                mean_iterations: s.mean_iterations,
                converged_fraction: s.converged_fraction,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}
