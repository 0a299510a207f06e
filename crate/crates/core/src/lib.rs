//! Continual ridge regression in high dimensions.
//!
//! The crate pairs an asymptotic risk engine built on Marchenko-Pastur
//! fixed points with a seeded finite-sample simulator computing exact
//! conditional risks, so that the two can be compared curve by curve.
//!
//! - [`regime`] experiment configuration, covariance scenarios, metric weights
//! - [`spectral`] Stieltjes transforms, joint spectra, moment integrals
//! - [`theory`] asymptotic bias, variance and risk tables
//! - [`simulate`] data generation, estimator trajectories, replications
//! - [`metrics`] average risk, backward and forward transfer
//! - [`tuning`] greedy oracle regularization
//! - [`report`] theory/simulation comparison and CSV output

pub mod error;
pub mod metrics;
pub mod regime;
pub mod report;
pub mod simulate;
pub mod spectral;
pub mod theory;
pub mod tuning;

pub use error::{Error, Result};
pub use metrics::{compute_curves, Metric, MetricCurves, RiskTable};
pub use regime::{
    default_weights, scenario_preset, CovarianceScenario, ExperimentConfig, LambdaMode,
    MetricWeights, Regime, ScenarioPreset,
};
pub use spectral::{JointSpectrum, SpectralAtom, TildeM};
pub use theory::{asymptotic_risk, identity_risk_closed_form, risk_table, TheoryTableau};
