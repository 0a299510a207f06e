//! Greedy oracle choice of the regularization sequence: at each step the new
//! `lambda_t` minimizes the current average asymptotic risk with all earlier
//! penalties frozen.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::regime::{CovarianceScenario, Regime};
use crate::theory::average_risk;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    pub lo: f64,
    pub hi: f64,
    /// Points of the coarse log-spaced grid.
    pub grid_points: usize,
    /// Relative bracket width at which golden-section refinement stops.
    pub rel_tol: f64,
}

impl Default for LambdaSearch {
    fn default() -> Self {
        Self {
            lo: 1e-4,
            hi: 1e3,
            grid_points: 33,
            rel_tol: 1e-6,
        }
    }
}

impl LambdaSearch {
    fn validate(&self) -> Result<()> {
        ensure_positive("lo", self.lo)?;
        ensure_positive("rel_tol", self.rel_tol)?;
        if !(self.hi > self.lo) || self.grid_points < 3 {
            return Err(Error::InvalidRegime(
                "search needs lo < hi and at least 3 grid points".into(),
            ));
        }
        Ok(())
    }

    /// Log-spaced grid from `lo` to `hi`, endpoints included.
    pub fn grid(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        let last = (self.grid_points - 1) as f64;
        let mut grid: Vec<f64> = (0..self.grid_points)
            .map(|i| (a + (b - a) * i as f64 / last).exp())
            .collect();
        grid[0] = self.lo;
        grid[self.grid_points - 1] = self.hi;
        grid
    }
}

/// Search record of one greedy step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSearch {
    /// Refinement interval around the best grid point.
    pub bracket: (f64, f64),
    pub evaluations: usize,
    /// The minimizer sits at the edge of the search interval.
    pub boundary_hit: bool,
    /// The coarse grid showed more than one local minimum.
    pub multimodal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneTrace {
    pub lambda_star: Vec<f64>,
    /// Average asymptotic risk reached at each step.
    pub objective: Vec<f64>,
    pub steps: Vec<StepSearch>,
}

/// Minimizes `objective` over `[search.lo, search.hi]`: coarse log grid, then
/// golden-section search in `ln(lambda)` on the cell pair around the lowest
/// grid point. Returns `(argmin, min, record)`.
pub fn minimize_log_scalar(
    objective: impl Fn(f64) -> Result<f64>,
    search: &LambdaSearch,
) -> Result<(f64, f64, StepSearch)> {
    search.validate()?;
    let grid = search.grid();
    let values: Vec<f64> = grid.iter().map(|&l| objective(l)).collect::<Result<_>>()?;
    let mut evaluations = grid.len();
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("grid is nonempty");
    let last = grid.len() - 1;
    let local_minima = (0..=last)
        .filter(|&i| {
            let left = i == 0 || values[i] < values[i - 1];
            let right = i == last || values[i] < values[i + 1];
            left && right
        })
        .count();

    let (mut a, mut b) = (
        grid[best.saturating_sub(1)].ln(),
        grid[(best + 1).min(last)].ln(),
    );
    let bracket = (a.exp(), b.exp());
    let tol = search.rel_tol.ln_1p();
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = objective(x1.exp())?;
    let mut f2 = objective(x2.exp())?;
    evaluations += 2;
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = objective(x1.exp())?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = objective(x2.exp())?;
        }
        evaluations += 1;
    }
    let (mut arg, mut min) = if f1 <= f2 { (x1.exp(), f1) } else { (x2.exp(), f2) };
    if values[best] < min {
        arg = grid[best];
        min = values[best];
    }
    let span = search.rel_tol * 10.0;
    let boundary_hit = arg <= search.lo * (1.0 + span) || arg >= search.hi * (1.0 - span);
    Ok((
        arg,
        min,
        StepSearch {
            bracket,
            evaluations,
            boundary_hit,
            multimodal: local_minima > 1,
        },
    ))
}

/// Greedy oracle sequence for the first `base.tasks()` tasks of `scenario`.
/// The regularizers in `base` are ignored.
pub fn greedy_lambda(
    base: &Regime,
    scenario: &CovarianceScenario,
    search: &LambdaSearch,
) -> Result<TuneTrace> {
    greedy_lambda_from(base, scenario, search, &[])
}

/// Continues a greedy sequence whose first entries are frozen at `frozen`.
pub fn greedy_lambda_from(
    base: &Regime,
    scenario: &CovarianceScenario,
    search: &LambdaSearch,
    frozen: &[f64],
) -> Result<TuneTrace> {
    let tasks = base.tasks();
    if frozen.len() > tasks {
        return Err(Error::DimensionMismatch(format!(
            "{} frozen regularizers for {tasks} tasks",
            frozen.len()
        )));
    }
    let mut trace = TuneTrace {
        lambda_star: frozen.to_vec(),
        objective: Vec::new(),
        steps: Vec::new(),
    };
    for (k, _) in frozen.iter().enumerate() {
        let prefix = Regime::new(
            base.gamma[..=k].to_vec(),
            frozen[..=k].to_vec(),
            base.sigma2,
            base.r2,
        )?;
        trace.objective.push(average_risk(&prefix, scenario)?);
        trace.steps.push(StepSearch {
            bracket: (frozen[k], frozen[k]),
            evaluations: 1,
            boundary_hit: false,
            multimodal: false,
        });
    }
    for k in frozen.len()..tasks {
        let gamma = base.gamma[..=k].to_vec();
        let objective = |lambda: f64| {
            let mut lambdas = trace.lambda_star.clone();
            lambdas.push(lambda);
            let prefix = Regime::new(gamma.clone(), lambdas, base.sigma2, base.r2)?;
            average_risk(&prefix, scenario)
        };
        let (arg, min, record) = minimize_log_scalar(objective, search)?;
        if record.boundary_hit {
            log::warn!("greedy step {}: minimizer {arg:e} on the search boundary", k + 1);
        }
        if record.multimodal {
            log::warn!("greedy step {}: objective has several grid minima", k + 1);
        }
        trace.lambda_star.push(arg);
        trace.objective.push(min);
        trace.steps.push(record);
    }
    Ok(trace)
}

/// Elementwise `lambda_star * factor`.
pub fn scale_lambda(trace: &TuneTrace, factor: f64) -> Result<Vec<f64>> {
    ensure_positive("factor", factor)?;
    Ok(trace.lambda_star.iter().map(|l| l * factor).collect())
}
