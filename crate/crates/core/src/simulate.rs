//! Finite-sample data generation, the continual ridge trajectory, exact
//! conditional risks and the replication harness.
//!
//! Risks are conditional on the realized designs and computed exactly: with
//! `A_t = lambda_t (S_t + lambda_t I)^{-1}` the bias after `k` steps is
//! `||Sigma_0^{1/2} A_k ... A_1 beta||^2` and the variance is
//! `sigma^2 tr(C_k Sigma_0)` where
//! `C_k = A_k C_{k-1} A_k + (A_k - A_k^2) / (lambda_k n_k)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::metrics::{compute_curves, MetricCurves, RiskTable};
use crate::regime::{default_weights, CovarianceScenario, MetricWeights};
use crate::spectral::{mp_identity_m, mp_identity_m_prime};

/// Distribution of the standardized design entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryLaw {
    #[default]
    Gaussian,
    Rademacher,
}

impl EntryLaw {
    fn draw(self, rng: &mut impl Rng) -> f64 {
        match self {
            Self::Gaussian => rng.sample(StandardNormal),
            Self::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Samples per task.
    pub n: usize,
    /// Dimension.
    pub p: usize,
    pub sigma2: f64,
    pub r2: f64,
    pub seed: u64,
    pub replications: usize,
    pub entry_law: EntryLaw,
}

impl SimConfig {
    /// `p = floor(n gamma)` with Gaussian entries.
    pub fn from_gamma(n: usize, gamma: f64, sigma2: f64, r2: f64, seed: u64, replications: usize) -> Self {
        Self {
            n,
            p: (n as f64 * gamma + 1e-9).floor() as usize,
            sigma2,
            r2,
            seed,
            replications,
            entry_law: EntryLaw::Gaussian,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 1 || self.replications < 1 {
            return Err(Error::InvalidRegime(format!(
                "need n >= 2, p >= 1, B >= 1 (got n={}, p={}, B={})",
                self.n, self.p, self.replications
            )));
        }
        ensure_positive("sigma2", self.sigma2)?;
        ensure_positive("r2", self.r2)?;
        Ok(())
    }
}

/// Seed of replication `b`: SplitMix64 of `master + (b + 1) * 0x9E3779B97F4A7C15`.
pub fn replication_seed(master: u64, b: usize) -> u64 {
    splitmix64(master.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(b as u64 + 1)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Coefficients with i.i.d. random signs and exact norm: each entry is
/// `+-r / sqrt(p)`.
pub fn sample_beta(p: usize, r2: f64, rng: &mut impl Rng) -> DVector<f64> {
    let scale = (r2 / p as f64).sqrt();
    DVector::from_fn(p, |_, _| if rng.random::<bool>() { scale } else { -scale })
}

/// `n x p` design `Z D^{1/2}` for a diagonal covariance `D`.
pub fn sample_design(n: usize, cov_diag: &[f64], law: EntryLaw, rng: &mut impl Rng) -> DMatrix<f64> {
    let p = cov_diag.len();
    let sqrt_d: Vec<f64> = cov_diag.iter().map(|d| d.sqrt()).collect();
    // draws are ordered column by column
    let mut x = DMatrix::zeros(n, p);
    for j in 0..p {
        for i in 0..n {
            x[(i, j)] = law.draw(rng) * sqrt_d[j];
        }
    }
    x
}

fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.tr_mul(x) / x.nrows() as f64
}

/// `(S + lambda I)^{-1}` of the sample covariance of `x`.
fn regularized_inverse(x: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let mut m = sample_covariance(x);
    for i in 0..m.nrows() {
        m[(i, i)] += lambda;
    }
    m.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::LinearAlgebra("regularized covariance is not positive definite".into()))
}

/// One continual ridge step: the minimizer of
/// `||X b - y||^2 / n + lambda ||b - prev||^2`, i.e.
/// `(S + lambda I)^{-1} (X^T y / n + lambda prev)`.
pub fn continual_update(
    prev: &DVector<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    ensure_positive("lambda", lambda)?;
    if x.nrows() == 0 || x.nrows() != y.len() || x.ncols() != prev.len() {
        return Err(Error::DimensionMismatch(format!(
            "design {}x{}, response {}, previous estimate {}",
            x.nrows(),
            x.ncols(),
            y.len(),
            prev.len()
        )));
    }
    let n = x.nrows() as f64;
    let mut m = sample_covariance(x);
    for i in 0..m.nrows() {
        m[(i, i)] += lambda;
    }
    let rhs = x.tr_mul(y) / n + prev * lambda;
    m.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::LinearAlgebra("regularized covariance is not positive definite".into()))
}

/// Shrinkage operator `A = lambda (S + lambda I)^{-1}` of one task together
/// with its noise contribution `(A - A^2) / (lambda n)`.
struct TaskOperator {
    a: DMatrix<f64>,
    noise: DMatrix<f64>,
}

impl TaskOperator {
    fn new(x: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        let a = regularized_inverse(x, lambda)? * lambda;
        let a2 = &a * &a;
        let noise = (&a - a2) / (lambda * x.nrows() as f64);
        Ok(Self { a, noise })
    }
}

fn weighted_square_sum(v: &DVector<f64>, diag: &[f64]) -> f64 {
    v.iter().zip(diag).map(|(x, d)| d * x * x).sum()
}

fn diag_trace(m: &DMatrix<f64>, diag: &[f64]) -> f64 {
    diag.iter().enumerate().map(|(i, d)| m[(i, i)] * d).sum()
}

/// Exact conditional bias and variance of the estimator after the tasks with
/// designs `designs`, tested on diagonal covariance `test_cov_diag`.
pub fn exact_conditional_risk(
    designs: &[DMatrix<f64>],
    beta: &DVector<f64>,
    test_cov_diag: &[f64],
    lambda: &[f64],
    sigma2: f64,
) -> Result<(f64, f64)> {
    let p = beta.len();
    if designs.is_empty() || designs.len() != lambda.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} designs and {} regularizers",
            designs.len(),
            lambda.len()
        )));
    }
    if test_cov_diag.len() != p || designs.iter().any(|x| x.ncols() != p) {
        return Err(Error::DimensionMismatch(
            "designs, beta and test covariance must share p".into(),
        ));
    }
    let mut v = beta.clone();
    let mut c = DMatrix::zeros(p, p);
    for (x, &l) in designs.iter().zip(lambda) {
        let op = TaskOperator::new(x, l)?;
        v = &op.a * v;
        c = &op.a * (c * &op.a) + op.noise;
    }
    Ok((
        weighted_square_sum(&v, test_cov_diag),
        sigma2 * diag_trace(&c, test_cov_diag),
    ))
}

/// One seeded finite-sample realization.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub beta: DVector<f64>,
    /// Realized estimates after each task, using sampled noise.
    pub estimator_path: Vec<DVector<f64>>,
    /// Conditional bias, `bias[k][t]` for `t <= k`.
    pub bias: Vec<Vec<f64>>,
    /// Conditional variance, same layout.
    pub variance: Vec<Vec<f64>>,
    /// `bias + variance` with single-task ridge baselines.
    pub risk: RiskTable,
}

/// Runs replication `replication` of `config` on `scenario` with
/// regularizers `lambda` (one per task, `lambda.len() <= scenario.tasks()`).
pub fn simulate_run(
    config: &SimConfig,
    scenario: &CovarianceScenario,
    lambda: &[f64],
    replication: usize,
) -> Result<SimRun> {
    let wrap = |e: Error| Error::Replication {
        replication,
        message: e.to_string(),
    };
    config.validate()?;
    scenario.validate()?;
    let tasks = lambda.len();
    if tasks == 0 || tasks > scenario.tasks() {
        return Err(Error::DimensionMismatch(format!(
            "{tasks} regularizers for a {}-task scenario",
            scenario.tasks()
        )));
    }
    for &l in lambda {
        ensure_positive("lambda", l)?;
    }
    let (n, p) = (config.n, config.p);
    let diags: Vec<Vec<f64>> = (0..tasks)
        .map(|t| scenario.task_diagonal(t, p))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(config.seed, replication));
    let beta = sample_beta(p, config.r2, &mut rng);
    let noise_sd = config.sigma2.sqrt();

    let mut estimate = DVector::zeros(p);
    let mut path = Vec::with_capacity(tasks);
    let mut mean_error = beta.clone();
    let mut cov = DMatrix::<f64>::zeros(p, p);
    let mut bias = Vec::with_capacity(tasks);
    let mut variance = Vec::with_capacity(tasks);
    let mut risk = Vec::with_capacity(tasks);
    let mut ridge = Vec::with_capacity(tasks);

    for k in 0..tasks {
        let x = sample_design(n, &diags[k], config.entry_law, &mut rng);
        let eps = DVector::from_fn(n, |_, _| noise_sd * rng.sample::<f64, _>(StandardNormal));
        let y = &x * &beta + eps;
        estimate = continual_update(&estimate, &x, &y, lambda[k]).map_err(wrap)?;
        path.push(estimate.clone());

        let op = TaskOperator::new(&x, lambda[k]).map_err(wrap)?;
        let ridge_error = &op.a * &beta;
        ridge.push(
            weighted_square_sum(&ridge_error, &diags[k])
                + config.sigma2 * diag_trace(&op.noise, &diags[k]),
        );
        mean_error = &op.a * mean_error;
        cov = &op.a * (cov * &op.a) + &op.noise;

        let b_row: Vec<f64> = (0..=k).map(|t| weighted_square_sum(&mean_error, &diags[t])).collect();
        let v_row: Vec<f64> = (0..=k)
            .map(|t| config.sigma2 * diag_trace(&cov, &diags[t]))
            .collect();
        risk.push(b_row.iter().zip(&v_row).map(|(b, v)| b + v).collect());
        bias.push(b_row);
        variance.push(v_row);
    }

    Ok(SimRun {
        beta,
        estimator_path: path,
        bias,
        variance,
        risk: RiskTable {
            risk,
            ridge_baseline: ridge,
        },
    })
}

/// Mean and standard error of one quantity across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// `sample_std / sqrt(B)`; zero by convention when `B = 1`.
    pub se: f64,
}

/// Mean and standard error of `values`, or `se = 0` for a single value.
pub fn mean_se(values: &[f64]) -> MeanSe {
    let b = values.len() as f64;
    let mean = values.iter().sum::<f64>() / b;
    if values.len() < 2 {
        return MeanSe { mean, se: 0.0 };
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    MeanSe {
        mean,
        se: (ss / (b - 1.0)).sqrt() / b.sqrt(),
    }
}

/// Replication summary of the empirical metric curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub mean: MetricCurves,
    pub se: MetricCurves,
    pub replications: usize,
    /// False when `B = 1` and the standard errors are placeholders.
    pub se_defined: bool,
    /// Replication-averaged risk table.
    pub mean_risk: RiskTable,
}

fn summarize(curves: &[MetricCurves], tables: &[RiskTable]) -> SimSummary {
    let pick = |f: &dyn Fn(&MetricCurves) -> &Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        let len = f(&curves[0]).len();
        (0..len)
            .map(|i| {
                let vals: Vec<f64> = curves.iter().map(|c| f(c)[i]).collect();
                let s = mean_se(&vals);
                (s.mean, s.se)
            })
            .unzip()
    };
    let (avg_m, avg_s) = pick(&|c| &c.avg_risk);
    let (bwt_m, bwt_s) = pick(&|c| &c.bwt);
    let (fwt_m, fwt_s) = pick(&|c| &c.fwt);
    let b = tables.len() as f64;
    let mut mean_risk = tables[0].scaled(0.0);
    for t in tables {
        for (row, src) in mean_risk.risk.iter_mut().zip(&t.risk) {
            for (x, y) in row.iter_mut().zip(src) {
                *x += y / b;
            }
        }
        for (x, y) in mean_risk.ridge_baseline.iter_mut().zip(&t.ridge_baseline) {
            *x += y / b;
        }
    }
    SimSummary {
        mean: MetricCurves {
            avg_risk: avg_m,
            bwt: bwt_m,
            fwt: fwt_m,
        },
        se: MetricCurves {
            avg_risk: avg_s,
            bwt: bwt_s,
            fwt: fwt_s,
        },
        replications: curves.len(),
        se_defined: curves.len() > 1,
        mean_risk,
    }
}

/// Runs `config.replications` independent replications in parallel and
/// aggregates the per-replication metric curves in replication order.
pub fn run_replications(
    config: &SimConfig,
    scenario: &CovarianceScenario,
    lambda: &[f64],
) -> Result<SimSummary> {
    run_replications_weighted(config, scenario, lambda, &default_weights(lambda.len()), |_| {})
}

/// As [`run_replications`] with explicit metric weights and a callback
/// invoked once per finished replication (in completion order).
pub fn run_replications_weighted(
    config: &SimConfig,
    scenario: &CovarianceScenario,
    lambda: &[f64],
    weights: &MetricWeights,
    progress: impl Fn(usize) + Sync,
) -> Result<SimSummary> {
    config.validate()?;
    let results: Vec<(MetricCurves, RiskTable)> = (0..config.replications)
        .into_par_iter()
        .map(|b| {
            let run = simulate_run(config, scenario, lambda, b)?;
            let curves = compute_curves(&run.risk, weights).map_err(|e| Error::Replication {
                replication: b,
                message: e.to_string(),
            })?;
            progress(b);
            Ok((curves, run.risk))
        })
        .collect::<Result<_>>()?;
    let (curves, tables): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(summarize(&curves, &tables))
}

/// Deviations of resolvent functionals from their deterministic equivalents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolventReport {
    pub n: usize,
    pub p: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub trials: usize,
    /// `max |p^{-1} tr Q - m(-lambda)|` over trials.
    pub trace_deviation: f64,
    /// `max |beta^T Q^2 beta - r^2 m'(-lambda)|` over trials (`r^2 = 1`).
    pub quadratic_deviation: f64,
}

/// Samples identity-covariance designs and compares `Q = (S + lambda I)^{-1}`
/// with `m(-lambda) I` through its normalized trace and a quadratic form in
/// a random-sign `beta` with `||beta|| = 1`.
pub fn resolvent_equivalence_report(
    n: usize,
    gamma: f64,
    lambda: f64,
    trials: usize,
    seed: u64,
) -> Result<ResolventReport> {
    ensure_positive("gamma", gamma)?;
    ensure_positive("lambda", lambda)?;
    let p = (n as f64 * gamma + 1e-9).floor() as usize;
    if n < 2 || p < 1 || trials < 1 {
        return Err(Error::InvalidRegime(format!(
            "need n >= 2, p >= 1, trials >= 1 (got n={n}, p={p}, trials={trials})"
        )));
    }
    let m = mp_identity_m(gamma, lambda);
    let m_prime = mp_identity_m_prime(gamma, lambda);
    let ones = vec![1.0; p];
    let devs: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(seed, trial));
            let beta = sample_beta(p, 1.0, &mut rng);
            let x = sample_design(n, &ones, EntryLaw::Gaussian, &mut rng);
            let q = regularized_inverse(&x, lambda)?;
            let trace = q.trace() / p as f64;
            let qb = &q * &beta;
            Ok(((trace - m).abs(), (qb.norm_squared() - m_prime).abs()))
        })
        .collect::<Result<_>>()?;
    let fold = |f: fn(&(f64, f64)) -> f64| devs.iter().map(f).fold(0.0, f64::max);
    Ok(ResolventReport {
        n,
        p,
        gamma,
        lambda,
        trials,
        trace_deviation: fold(|d| d.0),
        quadratic_deviation: fold(|d| d.1),
    })
}

/// Resolvent deviations over an `n`-grid with least-squares log-log slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub reports: Vec<ResolventReport>,
    pub trace_slope: f64,
    pub quadratic_slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`. NaN with fewer than two
/// points; zero deviations are floored at `f64::MIN_POSITIVE`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 2 || x.len() != y.len() {
        return f64::NAN;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn resolvent_convergence(
    ns: &[usize],
    gamma: f64,
    lambda: f64,
    trials: usize,
    seed: u64,
) -> Result<ConvergenceTable> {
    let reports = ns
        .iter()
        .map(|&n| resolvent_equivalence_report(n, gamma, lambda, trials, seed))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = reports.iter().map(|r| r.n as f64).collect();
    let tr: Vec<f64> = reports.iter().map(|r| r.trace_deviation).collect();
    let qf: Vec<f64> = reports.iter().map(|r| r.quadratic_deviation).collect();
    Ok(ConvergenceTable {
        trace_slope: loglog_slope(&x, &tr),
        quadratic_slope: loglog_slope(&x, &qf),
        reports,
    })
}
