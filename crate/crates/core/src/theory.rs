//! Asymptotic bias, variance and risk of the continual ridge estimator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RiskTable;
use crate::regime::{CovarianceScenario, Regime};
use crate::spectral::{
    joint_spectrum_for, moment_integrals, mp_identity_m, mp_identity_m_prime, solve_tilde_m,
    FixedPointOptions, JointSpectrum, MomentTable, UpperTriangular,
};

/// Every intermediate of one asymptotic risk evaluation (0-based task
/// indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryTableau {
    pub tilde_m: Vec<f64>,
    pub mu: Vec<f64>,
    pub moments: MomentTable,
    pub rho: Vec<f64>,
    pub rho1: UpperTriangular,
    pub rho2: UpperTriangular,
    pub l1: Vec<f64>,
    pub l2: Vec<f64>,
    pub bias: f64,
    pub variance: f64,
    pub risk: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskDecomposition {
    pub bias: f64,
    pub variance: f64,
    pub risk: f64,
}

/// Solves the companion transform of every task from the marginals of `h`.
pub fn solve_task_transforms(
    regime: &Regime,
    h: &JointSpectrum,
    opts: &FixedPointOptions,
) -> Result<Vec<f64>> {
    if h.tasks() != regime.tasks() {
        return Err(Error::DimensionMismatch(format!(
            "spectrum has {} training coordinates, regime has {} tasks",
            h.tasks(),
            regime.tasks()
        )));
    }
    (0..regime.tasks())
        .map(|t| {
            solve_tilde_m(&h.marginal(t), regime.gamma[t], regime.lambda[t], opts).map(|m| m.value)
        })
        .collect()
}

/// Asymptotic risk of the estimator after all tasks of `regime`, tested on the
/// last coordinate of `h`, with beta-weighted distribution `g`.
pub fn asymptotic_risk(regime: &Regime, h: &JointSpectrum, g: &JointSpectrum) -> Result<TheoryTableau> {
    regime.validate()?;
    let tilde_m = solve_task_transforms(regime, h, &FixedPointOptions::default())?;
    asymptotic_risk_solved(regime, h, g, tilde_m)
}

/// As [`asymptotic_risk`] with the per-task transforms already solved.
pub fn asymptotic_risk_solved(
    regime: &Regime,
    h: &JointSpectrum,
    g: &JointSpectrum,
    tilde_m: Vec<f64>,
) -> Result<TheoryTableau> {
    let moments = moment_integrals(h, g, &tilde_m, regime)?;
    let n = regime.tasks();
    let gamma = &regime.gamma;
    let lambda = &regime.lambda;
    let mu = &moments.mu;
    let weight = |j: usize| gamma[j] * mu[j];

    let mut rho = vec![0.0; n];
    rho[n - 1] = moments.a[n - 1];
    for t in (0..n - 1).rev() {
        let mut acc = moments.a[t];
        for j in t + 1..n {
            acc += weight(j) * moments.a_tl.get(t, j) * rho[j];
        }
        rho[t] = acc;
    }

    let mut rho1 = UpperTriangular::zeros(n);
    let mut rho2 = UpperTriangular::zeros(n);
    for s in 0..n {
        rho1.set(s, s, 0.0);
        rho2.set(s, s, moments.c_tl.get(s, s));
        for t in s + 1..n {
            let mut acc1 = moments.b_tl.get(s, t);
            let mut acc2 = moments.c_tl.get(s, t);
            for j in s..t {
                let coef = weight(j) * moments.a_tl.get(j, t);
                acc1 += coef * rho1.get(s, j);
                acc2 += coef * rho2.get(s, j);
            }
            rho1.set(s, t, acc1);
            rho2.set(s, t, acc2);
        }
    }

    let mut l1 = vec![0.0; n];
    let mut l2 = vec![0.0; n];
    for t in 0..n {
        let mut acc1 = moments.b[t];
        let mut acc2 = moments.c[t];
        for j in t..n {
            let coef = weight(j) * moments.a[j];
            acc1 += coef * rho1.get(t, j);
            acc2 += coef * rho2.get(t, j);
        }
        l1[t] = acc1;
        l2[t] = acc2;
    }

    let lambda_sq_prod: f64 = lambda.iter().map(|l| l * l).product();
    let mut bracket = moments.g[0];
    for t in 0..n {
        bracket += weight(t) * rho[t] * moments.g_tl.get(0, t);
    }
    let bias = regime.r2 * lambda_sq_prod * bracket;

    let mut variance = 0.0;
    for t in 0..n {
        let tail: f64 = lambda[t + 1..].iter().map(|l| l * l).product();
        variance += gamma[t] * tail * (l1[t] - lambda[t] * l2[t]);
    }
    variance *= regime.sigma2;

    Ok(TheoryTableau {
        mu: moments.mu.clone(),
        tilde_m,
        moments,
        rho,
        rho1,
        rho2,
        l1,
        l2,
        bias,
        variance,
        risk: bias + variance,
    })
}

/// Closed form for identity covariances in every task and at test time.
///
/// Bias is `r^2 prod_t lambda_t^2 m_t'`; variance is
/// `sigma^2 sum_t gamma_t (m_t - lambda_t m_t') prod_{s>t} lambda_s^2 m_s'`,
/// with `m_t = m_{gamma_t}(-lambda_t)`.
pub fn identity_risk_closed_form(regime: &Regime) -> RiskDecomposition {
    let n = regime.tasks();
    let (gamma, lambda) = (&regime.gamma, &regime.lambda);
    let shrink: Vec<f64> = (0..n)
        .map(|t| lambda[t] * lambda[t] * mp_identity_m_prime(gamma[t], lambda[t]))
        .collect();
    let bias = regime.r2 * shrink.iter().product::<f64>();
    let mut variance = 0.0;
    for t in 0..n {
        let m = mp_identity_m(gamma[t], lambda[t]);
        let upsilon = m - lambda[t] * mp_identity_m_prime(gamma[t], lambda[t]);
        variance += gamma[t] * upsilon * shrink[t + 1..].iter().product::<f64>();
    }
    variance *= regime.sigma2;
    RiskDecomposition {
        bias,
        variance,
        risk: bias + variance,
    }
}

/// Single-task ridge risk `sigma^2 {lambda^2 m' SNR + gamma (m - lambda m')}`
/// under identity covariance.
pub fn classical_ridge_risk(gamma: f64, lambda: f64, sigma2: f64, r2: f64) -> f64 {
    let m = mp_identity_m(gamma, lambda);
    let mp = mp_identity_m_prime(gamma, lambda);
    sigma2 * (lambda * lambda * mp * (r2 / sigma2) + gamma * (m - lambda * mp))
}

/// Per-task companion transforms, which depend only on each task's own
/// marginal and parameters.
fn scenario_transforms(
    regime: &Regime,
    scenario: &CovarianceScenario,
    opts: &FixedPointOptions,
) -> Result<Vec<f64>> {
    (0..regime.tasks())
        .map(|t| {
            let h = joint_spectrum_for(scenario, &[t], t)?;
            solve_tilde_m(&h.marginal(0), regime.gamma[t], regime.lambda[t], opts).map(|m| m.value)
        })
        .collect()
}

fn check_tasks(regime: &Regime, scenario: &CovarianceScenario) -> Result<()> {
    regime.validate()?;
    scenario.validate()?;
    if regime.tasks() > scenario.tasks() {
        return Err(Error::DimensionMismatch(format!(
            "regime has {} tasks but scenario only {}",
            regime.tasks(),
            scenario.tasks()
        )));
    }
    Ok(())
}

/// Asymptotic risk of the estimator after the first `regime.tasks()` tasks
/// of `scenario`, tested on task `test_task`, with `G = H`.
pub fn scenario_risk(
    regime: &Regime,
    scenario: &CovarianceScenario,
    test_task: usize,
) -> Result<RiskDecomposition> {
    check_tasks(regime, scenario)?;
    let tilde_m = scenario_transforms(regime, scenario, &FixedPointOptions::default())?;
    prefix_entry(regime, scenario, &tilde_m, regime.tasks(), test_task)
}

fn prefix_entry(
    regime: &Regime,
    scenario: &CovarianceScenario,
    tilde_m: &[f64],
    k: usize,
    test_task: usize,
) -> Result<RiskDecomposition> {
    let sub = regime.prefix(k)?;
    let train: Vec<usize> = (0..k).collect();
    let h = joint_spectrum_for(scenario, &train, test_task)?;
    let g = h.to_weighted();
    let tab = asymptotic_risk_solved(&sub, &h, &g, tilde_m[..k].to_vec())?;
    Ok(RiskDecomposition {
        bias: tab.bias,
        variance: tab.variance,
        risk: tab.risk,
    })
}

/// Uniform average of the prefix risks on tasks `1..=k`, where `k` is the
/// number of tasks in `regime`.
pub fn average_risk(regime: &Regime, scenario: &CovarianceScenario) -> Result<f64> {
    check_tasks(regime, scenario)?;
    let k = regime.tasks();
    let tilde_m = scenario_transforms(regime, scenario, &FixedPointOptions::default())?;
    let mut total = 0.0;
    for t in 0..k {
        total += prefix_entry(regime, scenario, &tilde_m, k, t)?.risk;
    }
    Ok(total / k as f64)
}

/// Full asymptotic risk table: `risk[k][t]` for every prefix `k` and test task
/// `t <= k`, plus single-task ridge baselines (regularizer `lambda_t`).
pub fn risk_table(regime: &Regime, scenario: &CovarianceScenario) -> Result<RiskTable> {
    check_tasks(regime, scenario)?;
    let n = regime.tasks();
    let tilde_m = scenario_transforms(regime, scenario, &FixedPointOptions::default())?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|k| (0..=k).map(move |t| (k, t))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(k, t)| prefix_entry(regime, scenario, &tilde_m, k + 1, t).map(|r| r.risk))
        .collect::<Result<_>>()?;
    let mut it = values.into_iter();
    let risk = (0..n).map(|k| it.by_ref().take(k + 1).collect()).collect();

    let ridge_baseline = (0..n)
        .into_par_iter()
        .map(|t| {
            let single = Regime::new(
                vec![regime.gamma[t]],
                vec![regime.lambda[t]],
                regime.sigma2,
                regime.r2,
            )?;
            let h = joint_spectrum_for(scenario, &[t], t)?;
            asymptotic_risk_solved(&single, &h, &h.to_weighted(), vec![tilde_m[t]]).map(|r| r.risk)
        })
        .collect::<Result<_>>()?;
    Ok(RiskTable {
        risk,
        ridge_baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{block_joint_spectrum, SpectralAtom};
    use approx::assert_abs_diff_eq;

    fn identity_spectrum(t: usize) -> JointSpectrum {
        JointSpectrum::point_mass(vec![1.0; t + 1]).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn single_task_identity_golden_ratio() {
        let regime = Regime::new(vec![1.0], vec![1.0], 1.0, 1.0).unwrap();
        let h = identity_spectrum(1);
        let tab = asymptotic_risk(&regime, &h, &h).unwrap();
        let m = (5f64.sqrt() - 1.0) / 2.0;
        assert_abs_diff_eq!(tab.risk, m, epsilon = 1e-12);
        assert_abs_diff_eq!(tab.bias, 1.0 / 5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(tab.variance, 0.170_820_4, epsilon = 1e-7);
        assert_eq!(tab.risk, tab.bias + tab.variance);
    }

    #[test]
    fn single_task_matches_classical_ridge() {
        for g in [0.6, 1.2, 2.4] {
            for l in [0.1, 1.0, 10.0] {
                for (s2, r2) in [(1.0, 1.0), (0.5, 2.0)] {
                    let regime = Regime::new(vec![g], vec![l], s2, r2).unwrap();
                    let h = identity_spectrum(1);
                    let tab = asymptotic_risk(&regime, &h, &h).unwrap();
                    assert!(rel(tab.risk, classical_ridge_risk(g, l, s2, r2)) <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn two_task_identity_example() {
        let regime = Regime::new(vec![1.0, 1.0], vec![1.0, 1.0], 1.0, 1.0).unwrap();
        let closed = identity_risk_closed_form(&regime);
        assert_abs_diff_eq!(closed.bias, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(closed.variance, 0.247_213_6, epsilon = 1e-7);
        assert_abs_diff_eq!(closed.risk, 0.447_213_6, epsilon = 1e-7);
        let h = identity_spectrum(2);
        let tab = asymptotic_risk(&regime, &h, &h).unwrap();
        assert!(rel(tab.risk, closed.risk) <= 1e-10);
    }

    #[test]
    fn general_engine_matches_closed_form_mixed_parameters() {
        let regime = Regime::new(
            vec![1.2, 0.6, 2.4, 1.2, 0.6],
            vec![0.5, 2.0, 1.0, 10.0, 0.1],
            0.7,
            1.3,
        )
        .unwrap();
        let h = identity_spectrum(5);
        let tab = asymptotic_risk(&regime, &h, &h).unwrap();
        let closed = identity_risk_closed_form(&regime);
        assert!(rel(tab.bias, closed.bias) <= 1e-10);
        assert!(rel(tab.variance, closed.variance) <= 1e-10);
    }

    #[test]
    fn tableau_structure() {
        let regime = Regime::new(vec![0.6, 1.2, 2.4], vec![0.3, 1.0, 3.0], 1.0, 1.0).unwrap();
        let h = block_joint_spectrum(&[0.2, 0.5, 0.9], 0.4, 5.0).unwrap();
        let tab = asymptotic_risk(&regime, &h, &h).unwrap();
        for s in 0..3 {
            assert_eq!(tab.rho1.get(s, s), 0.0);
            assert_eq!(tab.rho2.get(s, s), tab.moments.c_tl.get(s, s));
        }
        assert_eq!(tab.rho[2], tab.moments.a[2]);
        assert!(tab.bias >= 0.0 && tab.variance >= 0.0);
        assert_eq!(tab.risk, tab.bias + tab.variance);
    }

    #[test]
    fn large_lambda_limit() {
        let regime = Regime::uniform(1.2, vec![1e8; 3], 1.0, 1.7).unwrap();
        let h = identity_spectrum(3);
        let tab = asymptotic_risk(&regime, &h, &h).unwrap();
        assert!(rel(tab.bias, 1.7) <= 1e-6);
        assert!(tab.variance.abs() <= 1e-7);
    }

    #[test]
    fn zero_weight_atom_order_is_irrelevant() {
        let regime = Regime::new(vec![1.2, 0.6], vec![0.5, 2.0], 1.0, 1.0).unwrap();
        // ties create a zero-weight atom
        let h = block_joint_spectrum(&[0.3, 0.3], 0.6, 5.0).unwrap();
        let mut atoms = h.atoms().to_vec();
        let zero = atoms.iter().position(|a| a.weight == 0.0).unwrap();
        let z = atoms.remove(zero);
        atoms.push(z);
        let moved = JointSpectrum::new(atoms, false).unwrap();
        let a = asymptotic_risk(&regime, &h, &h).unwrap();
        let b = asymptotic_risk(&regime, &moved, &moved).unwrap();
        assert_eq!(a.risk, b.risk);
        assert_eq!(a.bias, b.bias);
        let permuted: Vec<SpectralAtom> = h.atoms().iter().rev().cloned().collect();
        let c = asymptotic_risk(&regime, &JointSpectrum::new(permuted.clone(), false).unwrap(), &JointSpectrum::new(permuted, false).unwrap()).unwrap();
        assert!(rel(c.risk, a.risk) <= 1e-14);
    }

    #[test]
    fn block_spectrum_at_delta_one_is_identity() {
        let regime = Regime::new(vec![1.2, 2.4], vec![0.7, 1.9], 1.0, 1.0).unwrap();
        let h = block_joint_spectrum(&[0.2, 0.7], 0.5, 1.0).unwrap();
        let tab = asymptotic_risk(&regime, &h, &h).unwrap();
        let closed = identity_risk_closed_form(&regime);
        assert!(rel(tab.risk, closed.risk) <= 1e-10);
    }

    #[test]
    fn risk_table_identity_properties() {
        let regime = Regime::uniform(1.2, vec![1.0, 0.5, 2.0, 1.5], 1.0, 1.0).unwrap();
        let scenario = CovarianceScenario::Identity { tasks: 4 };
        let table = risk_table(&regime, &scenario).unwrap();
        for row in &table.risk {
            for &x in row {
                assert_eq!(x, row[0]);
            }
        }
        let single = Regime::new(vec![1.2], vec![1.0], 1.0, 1.0).unwrap();
        assert!(rel(table.risk[0][0], identity_risk_closed_form(&single).risk) <= 1e-8);
        assert!(rel(table.ridge_baseline[0], table.risk[0][0]) <= 1e-15);
        for t in 0..4 {
            let single = Regime::new(vec![1.2], vec![regime.lambda[t]], 1.0, 1.0).unwrap();
            assert!(rel(table.ridge_baseline[t], identity_risk_closed_form(&single).risk) <= 1e-8);
        }
    }

    #[test]
    fn risk_table_rejects_short_scenarios() {
        let regime = Regime::uniform(1.2, vec![1.0; 3], 1.0, 1.0).unwrap();
        assert!(risk_table(&regime, &CovarianceScenario::Identity { tasks: 2 }).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let regime = Regime::uniform(1.2, vec![1.0; 2], 1.0, 1.0).unwrap();
        let h = identity_spectrum(3);
        assert!(matches!(
            asymptotic_risk(&regime, &h, &h),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
