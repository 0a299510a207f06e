//! End-to-end experiment orchestration and the tidy CSV report.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{compute_curves, Metric, MetricCurves};
use crate::regime::{default_weights, CovarianceScenario, ExperimentConfig, LambdaMode, Regime};
use crate::simulate::{run_replications_weighted, SimConfig, SimSummary};
use crate::theory::risk_table;
use crate::tuning::{greedy_lambda, scale_lambda, LambdaSearch, TuneTrace};

/// A row is flagged when theory and simulation differ by more than this many
/// simulation standard errors.
pub const SE_MULTIPLIER: f64 = 3.0;

/// A comparison passes when at most this fraction of rows is flagged.
pub const FLAG_BUDGET: f64 = 0.05;

/// One `(scenario, k, metric)` line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub gamma: f64,
    pub n: usize,
    pub p: usize,
    #[serde(rename = "T_total")]
    pub t_total: usize,
    pub k: usize,
    pub metric: Metric,
    pub theory_value: Option<f64>,
    pub sim_mean: Option<f64>,
    pub sim_se: Option<f64>,
    #[serde(rename = "B")]
    pub b: Option<usize>,
    pub lambda_mode: LambdaMode,
    pub lambda_scale: f64,
    pub seed: u64,
}

/// CSV column order.
pub const CSV_COLUMNS: [&str; 14] = [
    "scenario",
    "gamma",
    "n",
    "p",
    "T_total",
    "k",
    "metric",
    "theory_value",
    "sim_mean",
    "sim_se",
    "B",
    "lambda_mode",
    "lambda_scale",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RiskReport {
    pub rows: Vec<ReportRow>,
}

impl RiskReport {
    fn sort(&mut self) {
        self.rows.sort_by(|a, b| (a.metric, a.k).cmp(&(b.metric, b.k)));
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(CSV_COLUMNS)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(Self { rows })
    }

    pub fn count(&self, metric: Metric) -> usize {
        self.rows.iter().filter(|r| r.metric == metric).count()
    }
}

/// Outcome of a theory-versus-simulation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub rows: usize,
    /// `(metric, k)` of rows outside `SE_MULTIPLIER` standard errors.
    pub flagged: Vec<(Metric, usize)>,
}

impl CompareSummary {
    pub fn flagged_fraction(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.flagged.len() as f64 / self.rows as f64
        }
    }

    pub fn passed(&self) -> bool {
        self.flagged_fraction() <= FLAG_BUDGET
    }
}

/// Regularizers of an experiment with the greedy trace when one was needed.
pub fn resolve_lambda(
    cfg: &ExperimentConfig,
    scenario: &CovarianceScenario,
) -> Result<(Vec<f64>, Option<TuneTrace>)> {
    let base = Regime::uniform(cfg.effective_gamma(), vec![1.0; cfg.tasks], cfg.sigma2, cfg.r2)?;
    match cfg.lambda_mode {
        LambdaMode::Fixed => Ok((vec![cfg.lambda_scale; cfg.tasks], None)),
        LambdaMode::Greedy | LambdaMode::Scaled => {
            let trace = greedy_lambda(&base, &scenario.realized(cfg.dimension()), &LambdaSearch::default())?;
            let factor = if cfg.lambda_mode == LambdaMode::Scaled {
                cfg.lambda_scale
            } else {
                1.0
            };
            Ok((scale_lambda(&trace, factor)?, Some(trace)))
        }
    }
}

/// Asymptotic metric curves for `cfg` with regularizers `lambda`, evaluated at
/// the aspect ratio `p / n` and the spectra realized at dimension `p`.
pub fn theory_curves(
    cfg: &ExperimentConfig,
    scenario: &CovarianceScenario,
    lambda: &[f64],
) -> Result<MetricCurves> {
    let regime = Regime::uniform(cfg.effective_gamma(), lambda.to_vec(), cfg.sigma2, cfg.r2)?;
    let table = risk_table(&regime, &scenario.realized(cfg.dimension())).map_err(|e| {
        Error::Config(format!("theory for scenario `{}` failed: {e}", cfg.scenario))
    })?;
    compute_curves(&table, &default_weights(cfg.tasks))
}

pub fn sim_config(cfg: &ExperimentConfig) -> SimConfig {
    SimConfig::from_gamma(cfg.n, cfg.gamma, cfg.sigma2, cfg.r2, cfg.seed, cfg.replications)
}

/// Replicated simulation of `cfg` with regularizers `lambda`.
pub fn simulation_summary(
    cfg: &ExperimentConfig,
    scenario: &CovarianceScenario,
    lambda: &[f64],
    progress: impl Fn(usize) + Sync,
) -> Result<SimSummary> {
    run_replications_weighted(
        &sim_config(cfg),
        scenario,
        lambda,
        &default_weights(cfg.tasks),
        progress,
    )
}

fn blank_row(cfg: &ExperimentConfig, metric: Metric, k: usize) -> ReportRow {
    ReportRow {
        scenario: cfg.scenario.clone(),
        gamma: cfg.gamma,
        n: cfg.n,
        p: cfg.dimension(),
        t_total: cfg.tasks,
        k,
        metric,
        theory_value: None,
        sim_mean: None,
        sim_se: None,
        b: None,
        lambda_mode: cfg.lambda_mode,
        lambda_scale: cfg.lambda_scale,
        seed: cfg.seed,
    }
}

/// Report with only the theory column filled.
pub fn theory_report(cfg: &ExperimentConfig, curves: &MetricCurves) -> RiskReport {
    let mut report = RiskReport {
        rows: curves
            .keys()
            .into_iter()
            .map(|(m, k)| ReportRow {
                theory_value: curves.value(m, k),
                ..blank_row(cfg, m, k)
            })
            .collect(),
    };
    report.sort();
    report
}

/// Report with only the simulation columns filled.
pub fn simulation_report(cfg: &ExperimentConfig, summary: &SimSummary) -> RiskReport {
    let mut report = RiskReport {
        rows: summary
            .mean
            .keys()
            .into_iter()
            .map(|(m, k)| ReportRow {
                sim_mean: summary.mean.value(m, k),
                sim_se: summary.se.value(m, k),
                b: Some(summary.replications),
                ..blank_row(cfg, m, k)
            })
            .collect(),
    };
    report.sort();
    report
}

/// Joins theory and simulation rows on `(metric, k)` and flags rows with
/// `|theory - sim_mean| > SE_MULTIPLIER * sim_se`.
pub fn join_reports(theory: &RiskReport, sim: &RiskReport) -> Result<(RiskReport, CompareSummary)> {
    let mut rows = Vec::with_capacity(theory.rows.len());
    let mut flagged = Vec::new();
    for t in &theory.rows {
        let s = sim
            .rows
            .iter()
            .find(|s| s.metric == t.metric && s.k == t.k)
            .ok_or_else(|| {
                Error::DimensionMismatch(format!("no simulation row for {} at k={}", t.metric, t.k))
            })?;
        let (Some(tv), Some(mean), Some(se)) = (t.theory_value, s.sim_mean, s.sim_se) else {
            return Err(Error::DimensionMismatch(format!(
                "incomplete row for {} at k={}",
                t.metric, t.k
            )));
        };
        if (tv - mean).abs() > SE_MULTIPLIER * se {
            flagged.push((t.metric, t.k));
        }
        rows.push(ReportRow {
            sim_mean: Some(mean),
            sim_se: Some(se),
            b: s.b,
            ..t.clone()
        });
    }
    let mut report = RiskReport { rows };
    report.sort();
    let summary = CompareSummary {
        rows: report.rows.len(),
        flagged,
    };
    Ok((report, summary))
}

/// Everything one `compare` run produces.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub lambda: Vec<f64>,
    pub theory: MetricCurves,
    pub simulation: SimSummary,
    pub report: RiskReport,
    pub summary: CompareSummary,
}

/// Theory and simulation for `cfg`, sharing the realized scenario and
/// regularizers.
pub fn compare(cfg: &ExperimentConfig, progress: impl Fn(usize) + Sync) -> Result<Comparison> {
    cfg.validate()?;
    let scenario = cfg.materialize_scenario()?;
    let (lambda, _) = resolve_lambda(cfg, &scenario)?;
    let theory = theory_curves(cfg, &scenario, &lambda)?;
    let simulation = simulation_summary(cfg, &scenario, &lambda, progress)?;
    let (report, summary) = join_reports(&theory_report(cfg, &theory), &simulation_report(cfg, &simulation))?;
    Ok(Comparison {
        lambda,
        theory,
        simulation,
        report,
        summary,
    })
}
