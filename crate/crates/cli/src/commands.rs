use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{bail, Context, Result};
use contridge_core::report::{self, RiskReport, FLAG_BUDGET, SE_MULTIPLIER};
use contridge_core::simulate::resolvent_convergence;
use contridge_core::tuning::{greedy_lambda, scale_lambda, LambdaSearch, TuneTrace};
use contridge_core::{ExperimentConfig, Regime, ScenarioPreset};
use serde::{Deserialize, Serialize};

use crate::args::{ExperimentArgs, RmtArgs};

/// Loads `--config` (if any) and applies flag overrides.
pub fn resolve_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let (Some(scenario), Some(tasks), Some(gamma)) = (&args.scenario, args.tasks, args.gamma) else {
                bail!("without --config, --scenario, --tasks and --gamma are required");
            };
            ExperimentConfig::new(scenario.clone(), tasks, gamma)
        }
    };
    if let Some(v) = &args.scenario {
        cfg.scenario = v.clone();
    }
    if let Some(v) = args.tasks {
        cfg.tasks = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.replications {
        cfg.replications = v;
    }
    if let Some(v) = args.lambda_mode {
        cfg.lambda_mode = v;
    }
    if let Some(v) = args.lambda_scale {
        cfg.lambda_scale = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_output(out: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn write_report(report: &RiskReport, out: Option<&Path>) -> Result<()> {
    with_output(out, |w| Ok(report.write_csv(w)?))
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    with_output(out, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn progress(total: usize) -> impl Fn(usize) + Sync {
    let done = AtomicUsize::new(0);
    move |_| {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        log::info!("replication {k}/{total} done");
    }
}

pub fn theory(args: &ExperimentArgs) -> Result<()> {
    let cfg = resolve_config(args)?;
    let scenario = cfg.materialize_scenario()?;
    let (lambda, _) = report::resolve_lambda(&cfg, &scenario)?;
    let curves = report::theory_curves(&cfg, &scenario, &lambda)?;
    write_report(&report::theory_report(&cfg, &curves), args.out.as_deref())
}

pub fn simulate(args: &ExperimentArgs) -> Result<()> {
    let cfg = resolve_config(args)?;
    let scenario = cfg.materialize_scenario()?;
    let (lambda, _) = report::resolve_lambda(&cfg, &scenario)?;
    let summary = report::simulation_summary(&cfg, &scenario, &lambda, progress(cfg.replications))?;
    if !summary.se_defined {
        log::warn!("B = 1: standard errors are reported as 0");
    }
    write_report(&report::simulation_report(&cfg, &summary), args.out.as_deref())
}

/// Returns whether the comparison passed.
pub fn compare(args: &ExperimentArgs, theory_sigma2: Option<f64>) -> Result<bool> {
    let cfg = resolve_config(args)?;
    let scenario = cfg.materialize_scenario()?;
    let (lambda, _) = report::resolve_lambda(&cfg, &scenario)?;
    let mut theory_cfg = cfg.clone();
    if let Some(s2) = theory_sigma2 {
        theory_cfg.sigma2 = s2;
        theory_cfg.validate()?;
    }
    let curves = report::theory_curves(&theory_cfg, &scenario, &lambda)?;
    let summary = report::simulation_summary(&cfg, &scenario, &lambda, progress(cfg.replications))?;
    let (joined, outcome) = report::join_reports(
        &report::theory_report(&cfg, &curves),
        &report::simulation_report(&cfg, &summary),
    )?;
    write_report(&joined, args.out.as_deref())?;
    for (metric, k) in &outcome.flagged {
        log::warn!("{metric} at k={k} outside {SE_MULTIPLIER}*SE");
    }
    let passed = outcome.passed();
    eprintln!(
        "compare {} gamma={} T={} B={}: {}/{} rows outside {SE_MULTIPLIER}*SE ({:.1}%, budget {:.0}%) -> {}",
        cfg.scenario,
        cfg.gamma,
        cfg.tasks,
        cfg.replications,
        outcome.flagged.len(),
        outcome.rows,
        100.0 * outcome.flagged_fraction(),
        100.0 * FLAG_BUDGET,
        if passed { "PASS" } else { "FAIL" },
    );
    Ok(passed)
}

/// JSON document written by `tune`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutput {
    pub config: ExperimentConfig,
    /// `lambda_star * lambda_scale`.
    pub lambda: Vec<f64>,
    pub trace: TuneTrace,
}

pub fn tune(args: &ExperimentArgs) -> Result<()> {
    let cfg = resolve_config(args)?;
    let scenario = cfg.materialize_scenario()?;
    let base = Regime::uniform(cfg.effective_gamma(), vec![1.0; cfg.tasks], cfg.sigma2, cfg.r2)?;
    let trace = greedy_lambda(&base, &scenario.realized(cfg.dimension()), &LambdaSearch::default())?;
    for (t, step) in trace.steps.iter().enumerate() {
        if step.boundary_hit {
            log::warn!("step {}: minimizer on the search boundary", t + 1);
        }
        if step.multimodal {
            log::warn!("step {}: objective not unimodal on the coarse grid", t + 1);
        }
    }
    let lambda = scale_lambda(&trace, cfg.lambda_scale)?;
    write_json(&TuneOutput { config: cfg, lambda, trace }, args.out.as_deref())
}

pub fn validate_rmt(args: &RmtArgs) -> Result<()> {
    let table = resolvent_convergence(&args.n_list, args.gamma, args.lambda, args.trials, args.seed)?;
    for r in &table.reports {
        log::info!(
            "n={} p={}: trace {:.3e}, quadratic {:.3e}",
            r.n,
            r.p,
            r.trace_deviation,
            r.quadratic_deviation
        );
    }
    write_json(&table, args.out.as_deref())
}

pub fn scenarios() -> Result<()> {
    for preset in ScenarioPreset::ALL {
        println!("{:<18}{}", preset.as_str(), preset.description());
    }
    Ok(())
}
