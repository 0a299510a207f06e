//! Average risk, backward transfer and forward transfer from a risk table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regime::MetricWeights;

/// Prediction risks of the continual trajectory.
///
/// `risk[k][t]` (0-based) is the risk of the estimator after tasks `0..=k`
/// evaluated on task `t`'s covariance, defined for `t <= k`.
/// `ridge_baseline[t]` is the single-task ridge risk on task `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTable {
    pub risk: Vec<Vec<f64>>,
    pub ridge_baseline: Vec<f64>,
}

impl RiskTable {
    pub fn tasks(&self) -> usize {
        self.risk.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.risk.len();
        if t == 0 || self.ridge_baseline.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "risk table with {t} rows and {} baselines",
                self.ridge_baseline.len()
            )));
        }
        for (k, row) in self.risk.iter().enumerate() {
            if row.len() != k + 1 {
                return Err(Error::DimensionMismatch(format!(
                    "risk row {k} has {} entries, expected {}",
                    row.len(),
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            risk: self
                .risk
                .iter()
                .map(|row| row.iter().map(|x| x * factor).collect())
                .collect(),
            ridge_baseline: self.ridge_baseline.iter().map(|x| x * factor).collect(),
        }
    }
}

/// Metric values per prefix length. `avg_risk[i]` belongs to `k = i + 1`;
/// `bwt[i]` and `fwt[i]` belong to `k = i + 2` (undefined at `k = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurves {
    pub avg_risk: Vec<f64>,
    pub bwt: Vec<f64>,
    pub fwt: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AvgRisk,
    Bwt,
    Fwt,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::AvgRisk, Metric::Bwt, Metric::Fwt];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AvgRisk => "avg_risk",
            Self::Bwt => "bwt",
            Self::Fwt => "fwt",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl MetricCurves {
    /// Value of `metric` at prefix length `k` (1-based), if defined.
    pub fn value(&self, metric: Metric, k: usize) -> Option<f64> {
        match metric {
            Metric::AvgRisk => k.checked_sub(1).and_then(|i| self.avg_risk.get(i)),
            Metric::Bwt => k.checked_sub(2).and_then(|i| self.bwt.get(i)),
            Metric::Fwt => k.checked_sub(2).and_then(|i| self.fwt.get(i)),
        }
        .copied()
    }

    /// `(metric, k)` pairs defined for these curves, sorted by metric then k.
    pub fn keys(&self) -> Vec<(Metric, usize)> {
        let t = self.avg_risk.len();
        Metric::ALL
            .into_iter()
            .flat_map(|m| {
                let start = if m == Metric::AvgRisk { 1 } else { 2 };
                (start..=t).map(move |k| (m, k))
            })
            .collect()
    }
}

fn renormalized(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Per-prefix metrics. Weights are renormalized over the tasks present in
/// each prefix.
pub fn compute_curves(table: &RiskTable, weights: &MetricWeights) -> Result<MetricCurves> {
    table.validate()?;
    weights.validate()?;
    let tasks = table.tasks();
    if weights.tasks() != tasks {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for a {tasks}-task table",
            weights.tasks()
        )));
    }
    let r = &table.risk;
    let mut curves = MetricCurves {
        avg_risk: Vec::with_capacity(tasks),
        bwt: Vec::with_capacity(tasks.saturating_sub(1)),
        fwt: Vec::with_capacity(tasks.saturating_sub(1)),
    };
    for k in 0..tasks {
        let w = renormalized(&weights.omega[..=k]);
        curves
            .avg_risk
            .push((0..=k).map(|t| w[t] * r[k][t]).sum());
        if k == 0 {
            continue;
        }
        let wb = renormalized(&weights.omega_bwt[..k]);
        curves
            .bwt
            .push((0..k).map(|t| wb[t] * (r[k][t] - r[t][t])).sum());
        // omega_fwt[i] weighs task i + 1
        let wf = renormalized(&weights.omega_fwt[..k]);
        curves.fwt.push(
            (1..=k)
                .map(|t| wf[t - 1] * (r[t][t] - table.ridge_baseline[t]))
                .sum(),
        );
    }
    Ok(curves)
}
