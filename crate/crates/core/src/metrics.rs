//! Aggregation of episode traces into the three performance metrics:
//! per-round average simple regret (with a central-50% band), the rate of
//! runs that reach a tolerance, and the distribution of rounds needed to
//! reach it among successful runs.

use crate::bo::RunRecord;
use crate::error::{Error, Result};

/// Nearest-rank quantile of an unsorted sample: the smallest element whose
/// rank r satisfies r/n ≥ p (no interpolation).
pub fn nearest_rank_quantile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    assert!((0.0..=1.0).contains(&p), "p must lie in [0, 1]");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Metrics of one kernel family over repeated episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FamilyMetrics {
    pub family: String,
    /// Shared step axis (initialization rows use t ≤ 0).
    pub t_axis: Vec<i64>,
    /// Mean simple regret per step across repetitions.
    pub mean_regret: Vec<f64>,
    pub median_regret: Vec<f64>,
    pub q25_regret: Vec<f64>,
    pub q75_regret: Vec<f64>,
    /// Fraction of repetitions whose regret reached `tol` at some round t ≥ 1.
    pub reach_rate: f64,
    /// `(repetition index, first round within tolerance)` for each successful
    /// repetition, in repetition order.
    pub iters_to_tol: Vec<(usize, usize)>,
    pub n_rep: usize,
    pub tol: f64,
}

impl FamilyMetrics {
    pub fn mean_iters_to_tol(&self) -> Option<f64> {
        if self.iters_to_tol.is_empty() {
            return None;
        }
        let sum: usize = self.iters_to_tol.iter().map(|(_, it)| it).sum();
        Some(sum as f64 / self.iters_to_tol.len() as f64)
    }
}

/// Metrics for every family in an experiment, in configuration order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub families: Vec<FamilyMetrics>,
}

impl MetricsReport {
    pub fn family(&self, name: &str) -> Option<&FamilyMetrics> {
        self.families.iter().find(|f| f.family == name)
    }
}

/// Aggregates the traces of one family. All records must share the same step
/// axis (same initialization size and horizon).
pub fn compute_metrics(family: &str, records: &[RunRecord], tol: f64) -> Result<FamilyMetrics> {
    if records.is_empty() {
        return Err(Error::Config("metrics need at least one run record".into()));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let t_axis: Vec<i64> = records[0].steps.iter().map(|s| s.t).collect();
    for (j, r) in records.iter().enumerate() {
        let axis: Vec<i64> = r.steps.iter().map(|s| s.t).collect();
        if axis != t_axis {
            return Err(Error::Config(format!(
                "run {j} has a different step axis; records must share horizon and init size"
            )));
        }
    }

    let n_steps = t_axis.len();
    let mut mean_regret = Vec::with_capacity(n_steps);
    let mut median_regret = Vec::with_capacity(n_steps);
    let mut q25_regret = Vec::with_capacity(n_steps);
    let mut q75_regret = Vec::with_capacity(n_steps);
    for step in 0..n_steps {
        let slice: Vec<f64> = records.iter().map(|r| r.steps[step].regret).collect();
        mean_regret.push(slice.iter().sum::<f64>() / slice.len() as f64);
        median_regret.push(nearest_rank_quantile(&slice, 0.5));
        q25_regret.push(nearest_rank_quantile(&slice, 0.25));
        q75_regret.push(nearest_rank_quantile(&slice, 0.75));
    }

    let mut iters_to_tol = Vec::new();
    for (j, r) in records.iter().enumerate() {
        if let Some(rounds) = r.rounds_to(tol) {
            iters_to_tol.push((j, rounds));
        }
    }
    let reach_rate = iters_to_tol.len() as f64 / records.len() as f64;

    Ok(FamilyMetrics {
        family: family.to_string(),
        t_axis,
        mean_regret,
        median_regret,
        q25_regret,
        q75_regret,
        reach_rate,
        iters_to_tol,
        n_rep: records.len(),
        tol,
    })
}
