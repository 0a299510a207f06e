//! Experiment-wide configuration: the asymptotic regime, covariance
//! scenarios, metric weights and the on-disk experiment config.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};

/// Block fractions are kept this far away from 0 and 1 in asymptotic formulas.
pub const ASYMPTOTIC_PI_CLIP: f64 = 1e-9;

/// Eigenvalue of the non-unit block in the two-block presets.
pub const BLOCK_PRESET_DELTA: f64 = 5.0;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Asymptotic configuration of a continual ridge run over `T` tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    /// Aspect ratios `p / n_t`, one per task.
    pub gamma: Vec<f64>,
    /// Per-step ridge penalties toward the previous estimator.
    pub lambda: Vec<f64>,
    /// Noise variance.
    pub sigma2: f64,
    /// Limiting signal strength `||beta||^2`.
    pub r2: f64,
}

impl Regime {
    pub fn new(gamma: Vec<f64>, lambda: Vec<f64>, sigma2: f64, r2: f64) -> Result<Self> {
        let regime = Self {
            gamma,
            lambda,
            sigma2,
            r2,
        };
        regime.validate()?;
        Ok(regime)
    }

    /// Equal aspect ratio across all tasks.
    pub fn uniform(gamma: f64, lambda: Vec<f64>, sigma2: f64, r2: f64) -> Result<Self> {
        Self::new(vec![gamma; lambda.len()], lambda, sigma2, r2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.is_empty() {
            return Err(Error::InvalidRegime("at least one task is required".into()));
        }
        if self.gamma.len() != self.lambda.len() {
            return Err(Error::InvalidRegime(format!(
                "{} aspect ratios but {} regularizers",
                self.gamma.len(),
                self.lambda.len()
            )));
        }
        for &g in &self.gamma {
            ensure_positive("gamma", g)?;
        }
        for &l in &self.lambda {
            ensure_positive("lambda", l)?;
        }
        ensure_positive("sigma2", self.sigma2)?;
        ensure_positive("r2", self.r2)?;
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.gamma.len()
    }

    pub fn snr(&self) -> f64 {
        self.r2 / self.sigma2
    }

    /// The regime restricted to tasks `1..=k`.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.tasks() {
            return Err(Error::InvalidRegime(format!(
                "prefix length {k} outside 1..={}",
                self.tasks()
            )));
        }
        Ok(Self {
            gamma: self.gamma[..k].to_vec(),
            lambda: self.lambda[..k].to_vec(),
            sigma2: self.sigma2,
            r2: self.r2,
        })
    }

    pub fn with_lambda(&self, lambda: Vec<f64>) -> Result<Self> {
        Self::new(self.gamma.clone(), lambda, self.sigma2, self.r2)
    }
}

/// Simultaneously diagonal covariance structure of the training tasks.
///
/// Test covariances are always drawn from the training tasks themselves
/// (the metrics evaluate on `Sigma_t`), so no separate test entry is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovarianceScenario {
    /// `Sigma_t = I` for every task.
    Identity { tasks: usize },
    /// `Sigma_t = delta_t I`.
    IsotropicScales { delta: Vec<f64> },
    /// `Sigma_t = diag(delta I_{floor(pi_t p)}, I_{p - floor(pi_t p)})`.
    TwoBlock { pi: Vec<f64>, delta: f64 },
    /// Arbitrary diagonal, one `p`-vector per task.
    ExplicitDiagonal { diag: Vec<Vec<f64>> },
}

impl CovarianceScenario {
    pub fn tasks(&self) -> usize {
        match self {
            Self::Identity { tasks } => *tasks,
            Self::IsotropicScales { delta } => delta.len(),
            Self::TwoBlock { pi, .. } => pi.len(),
            Self::ExplicitDiagonal { diag } => diag.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks() == 0 {
            return Err(Error::InvalidScenario("scenario has no tasks".into()));
        }
        match self {
            Self::Identity { .. } => {}
            Self::IsotropicScales { delta } => {
                for &d in delta {
                    ensure_positive("delta", d)?;
                }
            }
            Self::TwoBlock { pi, delta } => {
                ensure_positive("delta", *delta)?;
                if *delta == 1.0 {
                    return Err(Error::InvalidScenario(
                        "two-block scenario needs delta != 1".into(),
                    ));
                }
                // Closed upper end: `pi_t = t/T` reaches 1 and is clipped on use.
                if let Some(bad) = pi.iter().find(|&&x| !(x >= 0.0 && x <= 1.0)) {
                    return Err(Error::InvalidScenario(format!(
                        "block fraction {bad} outside [0, 1]"
                    )));
                }
            }
            Self::ExplicitDiagonal { diag } => {
                let p = diag[0].len();
                if p == 0 {
                    return Err(Error::InvalidScenario("empty diagonal".into()));
                }
                for d in diag {
                    if d.len() != p {
                        return Err(Error::DimensionMismatch(format!(
                            "diagonals of length {} and {}",
                            p,
                            d.len()
                        )));
                    }
                    for &x in d {
                        ensure_positive("eigenvalue", x)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity { .. } => "identity",
            Self::IsotropicScales { .. } => "isotropic-scales",
            Self::TwoBlock { .. } => "two-block",
            Self::ExplicitDiagonal { .. } => "explicit-diagonal",
        }
    }

    /// Interval `[c, C]` containing every eigenvalue of every task covariance.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        let fold = |it: &mut dyn Iterator<Item = f64>| {
            it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x), hi.max(x))
            })
        };
        match self {
            Self::Identity { .. } => (1.0, 1.0),
            Self::IsotropicScales { delta } => fold(&mut delta.iter().copied()),
            Self::TwoBlock { delta, .. } => (delta.min(1.0), delta.max(1.0)),
            Self::ExplicitDiagonal { diag } => fold(&mut diag.iter().flatten().copied()),
        }
    }

    /// Block fractions as used by the asymptotic formulas.
    pub fn asymptotic_pi(&self) -> Option<Vec<f64>> {
        match self {
            Self::TwoBlock { pi, .. } => Some(
                pi.iter()
                    .map(|&x| x.clamp(ASYMPTOTIC_PI_CLIP, 1.0 - ASYMPTOTIC_PI_CLIP))
                    .collect(),
            ),
            _ => None,
        }
    }

    /// The scenario whose population spectra equal the ones realized at
    /// dimension `p`: block fractions become `floor(pi p) / p`, everything
    /// else is unchanged.
    pub fn realized(&self, p: usize) -> Self {
        match self {
            Self::TwoBlock { pi, delta } => Self::TwoBlock {
                pi: pi
                    .iter()
                    .map(|&x| finite_block_count(x, p) as f64 / p as f64)
                    .collect(),
                delta: *delta,
            },
            other => other.clone(),
        }
    }

    /// Diagonal of `Sigma_t` (0-based task index) at dimension `p`.
    pub fn task_diagonal(&self, task: usize, p: usize) -> Result<Vec<f64>> {
        if task >= self.tasks() {
            return Err(Error::InvalidScenario(format!(
                "task index {task} outside 0..{}",
                self.tasks()
            )));
        }
        Ok(match self {
            Self::Identity { .. } => vec![1.0; p],
            Self::IsotropicScales { delta } => vec![delta[task]; p],
            Self::TwoBlock { pi, delta } => {
                let count = finite_block_count(pi[task], p);
                let mut d = vec![1.0; p];
                d[..count].iter_mut().for_each(|x| *x = *delta);
                d
            }
            Self::ExplicitDiagonal { diag } => {
                if diag[task].len() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "explicit diagonal has length {} but p = {p}",
                        diag[task].len()
                    )));
                }
                diag[task].clone()
            }
        })
    }
}

/// Number of leading coordinates carrying the block eigenvalue at dimension
/// `p`: `floor(pi p)`, with `pi = 1` clipped to `1 - 1/p`.
pub fn finite_block_count(pi: f64, p: usize) -> usize {
    let raw = (pi * p as f64 + 1e-9).floor().max(0.0) as usize;
    raw.min(p.saturating_sub(1))
}

/// Named scenario recipes of the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioPreset {
    Identity,
    IsoRandom,
    IsoIncreasing,
    BlockRandom,
    BlockIncreasing,
}

impl ScenarioPreset {
    pub const ALL: [ScenarioPreset; 5] = [
        Self::Identity,
        Self::IsoRandom,
        Self::IsoIncreasing,
        Self::BlockRandom,
        Self::BlockIncreasing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::IsoRandom => "iso-random",
            Self::IsoIncreasing => "iso-increasing",
            Self::BlockRandom => "block-random",
            Self::BlockIncreasing => "block-increasing",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::Identity => "Sigma_t = I for all tasks",
            Self::IsoRandom => "Sigma_t = delta_t I, delta_t ~ iid U(0.5, 3.5)",
            Self::IsoIncreasing => "Sigma_t = delta_t I, delta_t = 4t/(T+1)",
            Self::BlockRandom => "two blocks {5, 1}, block fraction pi_t ~ iid U(0, 1)",
            Self::BlockIncreasing => "two blocks {5, 1}, block fraction pi_t = t/T",
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, Self::IsoRandom | Self::BlockRandom)
    }
}

impl fmt::Display for ScenarioPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// Materializes a named preset for `tasks` tasks. Random presets draw their
/// scales or fractions once from `seed`; the other presets ignore it.
pub fn scenario_preset(
    name: &str,
    tasks: usize,
    seed: u64,
) -> Result<(CovarianceScenario, String)> {
    let preset: ScenarioPreset = name.parse()?;
    if tasks < 1 {
        return Err(Error::InvalidScenario("T must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_f = tasks as f64;
    let scenario = match preset {
        ScenarioPreset::Identity => CovarianceScenario::Identity { tasks },
        ScenarioPreset::IsoRandom => CovarianceScenario::IsotropicScales {
            delta: (0..tasks).map(|_| rng.random_range(0.5..3.5)).collect(),
        },
        ScenarioPreset::IsoIncreasing => CovarianceScenario::IsotropicScales {
            delta: (1..=tasks).map(|t| 4.0 * t as f64 / (t_f + 1.0)).collect(),
        },
        ScenarioPreset::BlockRandom => CovarianceScenario::TwoBlock {
            pi: (0..tasks).map(|_| rng.random::<f64>()).collect(),
            delta: BLOCK_PRESET_DELTA,
        },
        ScenarioPreset::BlockIncreasing => CovarianceScenario::TwoBlock {
            pi: (1..=tasks).map(|t| t as f64 / t_f).collect(),
            delta: BLOCK_PRESET_DELTA,
        },
    };
    let note = if preset.is_random() {
        format!("{preset}: {} (drawn with seed {seed})", preset.description())
    } else {
        format!("{preset}: {}", preset.description())
    };
    Ok((scenario, note))
}

/// Task weights of the three generalization metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricWeights {
    /// Average-risk weights over tasks `1..=T`.
    pub omega: Vec<f64>,
    /// Backward-transfer weights over tasks `1..T`.
    pub omega_bwt: Vec<f64>,
    /// Forward-transfer weights over tasks `2..=T`.
    pub omega_fwt: Vec<f64>,
}

impl MetricWeights {
    /// Weights proportional to per-task sample sizes.
    pub fn from_sample_sizes(n: &[usize]) -> Result<Self> {
        if n.is_empty() || n.contains(&0) {
            return Err(Error::InvalidRegime(
                "sample sizes must be nonempty and positive".into(),
            ));
        }
        let normalized = |xs: &[usize]| -> Vec<f64> {
            let total: usize = xs.iter().sum();
            xs.iter().map(|&x| x as f64 / total as f64).collect()
        };
        let t = n.len();
        Ok(Self {
            omega: normalized(n),
            omega_bwt: if t >= 2 { normalized(&n[..t - 1]) } else { Vec::new() },
            omega_fwt: if t >= 2 { normalized(&n[1..]) } else { Vec::new() },
        })
    }

    pub fn tasks(&self) -> usize {
        self.omega.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.omega.len();
        let expected_tail = t.saturating_sub(1);
        if t == 0 || self.omega_bwt.len() != expected_tail || self.omega_fwt.len() != expected_tail
        {
            return Err(Error::DimensionMismatch(
                "weight sequences must have lengths T, T-1, T-1".into(),
            ));
        }
        for seq in [&self.omega, &self.omega_bwt, &self.omega_fwt] {
            if seq.is_empty() {
                continue;
            }
            if seq.iter().any(|&w| w < 0.0) {
                return Err(Error::InvalidRegime("negative metric weight".into()));
            }
            let s: f64 = seq.iter().sum();
            if (s - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::InvalidRegime(format!("weights sum to {s}, not 1")));
            }
        }
        Ok(())
    }
}

/// Uniform weights, the equal-sample-size case.
pub fn default_weights(tasks: usize) -> MetricWeights {
    let uniform = |k: usize| vec![1.0 / k as f64; k];
    MetricWeights {
        omega: uniform(tasks),
        omega_bwt: if tasks >= 2 { uniform(tasks - 1) } else { Vec::new() },
        omega_fwt: if tasks >= 2 { uniform(tasks - 1) } else { Vec::new() },
    }
}

/// How the regularization sequence of an experiment is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaMode {
    /// Greedy oracle sequence.
    Greedy,
    /// Constant `lambda_t = lambda_scale`.
    Fixed,
    /// Greedy sequence multiplied by `lambda_scale`.
    Scaled,
}

impl LambdaMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::Fixed => "fixed",
            Self::Scaled => "scaled",
        }
    }
}

impl FromStr for LambdaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "fixed" => Ok(Self::Fixed),
            "scaled" => Ok(Self::Scaled),
            other => Err(Error::Config(format!(
                "unknown lambda_mode `{other}` (expected greedy, fixed or scaled)"
            ))),
        }
    }
}

impl fmt::Display for LambdaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_n() -> usize {
    100
}
fn default_one() -> f64 {
    1.0
}
fn default_lambda_mode() -> LambdaMode {
    LambdaMode::Greedy
}
fn default_replications() -> usize {
    100
}

/// Flat experiment configuration file (TOML). Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(rename = "T")]
    pub tasks: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    pub gamma: f64,
    #[serde(default = "default_one")]
    pub sigma2: f64,
    #[serde(default = "default_one")]
    pub r2: f64,
    #[serde(default = "default_lambda_mode")]
    pub lambda_mode: LambdaMode,
    #[serde(default = "default_one")]
    pub lambda_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
}

impl ExperimentConfig {
    /// Config with every optional key at its default.
    pub fn new(scenario: impl Into<String>, tasks: usize, gamma: f64) -> Self {
        Self {
            scenario: scenario.into(),
            tasks,
            n: default_n(),
            gamma,
            sigma2: default_one(),
            r2: default_one(),
            lambda_mode: default_lambda_mode(),
            lambda_scale: default_one(),
            seed: 0,
            replications: default_replications(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.parse::<ScenarioPreset>()?;
        if self.tasks < 1 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(Error::Config("n must be at least 2".into()));
        }
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        ensure_positive("gamma", self.gamma)?;
        ensure_positive("sigma2", self.sigma2)?;
        ensure_positive("r2", self.r2)?;
        ensure_positive("lambda_scale", self.lambda_scale)?;
        if self.dimension() < 1 {
            return Err(Error::Config(format!(
                "p = floor(n * gamma) = 0 for n = {}, gamma = {}",
                self.n, self.gamma
            )));
        }
        Ok(())
    }

    /// Dimension `p = floor(n gamma)`.
    pub fn dimension(&self) -> usize {
        (self.n as f64 * self.gamma + 1e-9).floor() as usize
    }

    /// Aspect ratio actually realized at finite size, `p / n`.
    pub fn effective_gamma(&self) -> f64 {
        self.dimension() as f64 / self.n as f64
    }

    pub fn preset(&self) -> Result<ScenarioPreset> {
        self.scenario.parse()
    }

    pub fn materialize_scenario(&self) -> Result<CovarianceScenario> {
        scenario_preset(&self.scenario, self.tasks, self.seed).map(|(s, _)| s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_preset_is_unit() {
        let (s, _) = scenario_preset("identity", 3, 0).unwrap();
        assert_eq!(s, CovarianceScenario::Identity { tasks: 3 });
        assert_eq!(s.task_diagonal(2, 4).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn iso_increasing_scales() {
        let (s, _) = scenario_preset("iso-increasing", 4, 99).unwrap();
        let CovarianceScenario::IsotropicScales { delta } = s else {
            panic!("wrong kind")
        };
        for (d, want) in delta.iter().zip([0.8, 1.6, 2.4, 3.2]) {
            assert_abs_diff_eq!(*d, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn block_increasing_clips_last_fraction() {
        let (s, _) = scenario_preset("block-increasing", 5, 7).unwrap();
        let CovarianceScenario::TwoBlock { pi, delta } = &s else {
            panic!("wrong kind")
        };
        assert_eq!(*delta, 5.0);
        for (x, want) in pi.iter().zip([0.2, 0.4, 0.6, 0.8, 1.0]) {
            assert_abs_diff_eq!(*x, want, epsilon = 1e-15);
        }
        let clipped = s.asymptotic_pi().unwrap();
        assert_eq!(clipped[4], 1.0 - 1e-9);
        assert!(clipped.iter().all(|&x| x > 0.0 && x < 1.0));
        // finite p: one unit eigenvalue survives
        let d = s.task_diagonal(4, 50).unwrap();
        assert_eq!(d.iter().filter(|&&x| x == 5.0).count(), 49);
        assert_eq!(s.eigen_bounds(), (1.0, 5.0));
    }

    #[test]
    fn random_presets_are_seed_deterministic() {
        for name in ["iso-random", "block-random"] {
            let (a, _) = scenario_preset(name, 20, 11).unwrap();
            let (b, _) = scenario_preset(name, 20, 11).unwrap();
            let (c, _) = scenario_preset(name, 20, 12).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
        }
        let (s, _) = scenario_preset("iso-random", 50, 3).unwrap();
        let (lo, hi) = s.eigen_bounds();
        assert!(lo >= 0.5 && hi < 3.5);
    }

    #[test]
    fn preset_errors() {
        assert!(matches!(
            scenario_preset("nope", 3, 0),
            Err(Error::UnknownPreset(_))
        ));
        assert!(scenario_preset("identity", 0, 0).is_err());
    }

    #[test]
    fn uniform_weights() {
        let w = default_weights(1);
        assert_eq!(w.omega, vec![1.0]);
        assert!(w.omega_bwt.is_empty() && w.omega_fwt.is_empty());
        let w = default_weights(4);
        assert_eq!(w.omega, vec![0.25; 4]);
        assert_eq!(w.omega_bwt, vec![1.0 / 3.0; 3]);
        assert_eq!(w.omega_fwt, vec![1.0 / 3.0; 3]);
        for t in 1..=20 {
            default_weights(t).validate().unwrap();
        }
        assert!(default_weights(20).omega.iter().all(|&x| x == 0.05));
    }

    #[test]
    fn sample_size_weights() {
        let w = MetricWeights::from_sample_sizes(&[10, 30, 60]).unwrap();
        assert_eq!(w.omega, vec![0.1, 0.3, 0.6]);
        assert_eq!(w.omega_bwt, vec![0.25, 0.75]);
        assert_eq!(w.omega_fwt, vec![1.0 / 3.0, 2.0 / 3.0]);
        w.validate().unwrap();
    }

    #[test]
    fn regime_rejects_bad_values() {
        assert!(Regime::new(vec![], vec![], 1.0, 1.0).is_err());
        assert!(Regime::new(vec![1.0], vec![0.0], 1.0, 1.0).is_err());
        assert!(Regime::new(vec![1.0, 2.0], vec![1.0], 1.0, 1.0).is_err());
        assert!(Regime::new(vec![1.0], vec![1.0], -1.0, 1.0).is_err());
        let r = Regime::uniform(1.2, vec![1.0, 2.0, 3.0], 1.0, 2.0).unwrap();
        assert_eq!(r.prefix(2).unwrap().lambda, vec![1.0, 2.0]);
        assert!(r.prefix(0).is_err() && r.prefix(4).is_err());
        assert_eq!(r.snr(), 2.0);
    }

    #[test]
    fn config_parses_and_rejects_unknown_keys() {
        let text = r#"
scenario = "block-random"
T = 20
n = 100
gamma = 1.2
sigma2 = 1.0
r2 = 1.0
lambda_mode = "scaled"
lambda_scale = 0.05
seed = 42
replications = 100
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.tasks, 20);
        assert_eq!(cfg.lambda_mode, LambdaMode::Scaled);
        assert_eq!(cfg.dimension(), 120);
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);

        let bad = format!("{text}\nextra = 1\n");
        let err = ExperimentConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");

        let err = ExperimentConfig::from_toml_str("scenario = \"identity\"\nT = \ngamma = 1\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn config_dimension_floor() {
        let cfg = ExperimentConfig::from_toml_str("scenario = \"identity\"\nT = 1\ngamma = 0.6\n")
            .unwrap();
        assert_eq!(cfg.dimension(), 60);
        assert_eq!(cfg.effective_gamma(), 0.6);
        assert_eq!(cfg.replications, 100);
    }

    #[test]
    fn realized_block_fractions() {
        let s = CovarianceScenario::TwoBlock {
            pi: vec![0.0, 0.337, 1.0],
            delta: 5.0,
        };
        let r = s.realized(60);
        let CovarianceScenario::TwoBlock { pi, .. } = &r else { unreachable!() };
        assert_eq!(pi, &vec![0.0, 20.0 / 60.0, 59.0 / 60.0]);
        for t in 0..3 {
            assert_eq!(r.task_diagonal(t, 60).unwrap(), s.task_diagonal(t, 60).unwrap());
        }
        let id = CovarianceScenario::Identity { tasks: 2 };
        assert_eq!(id.realized(7), id);
    }
}
