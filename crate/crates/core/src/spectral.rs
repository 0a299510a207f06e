//! Stieltjes-transform fixed points, Marchenko-Pastur closed forms, and
//! moment integrals over finitely atomic joint spectra.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::regime::{CovarianceScenario, Regime};

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One point of a joint spectrum: simultaneous eigenvalues
/// `(s_1, ..., s_T, s_0)` with probability mass `weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralAtom {
    pub s: Vec<f64>,
    pub weight: f64,
}

/// Discrete joint eigenvalue distribution over `T` training coordinates
/// followed by one test coordinate.
///
/// `is_weighted` marks the beta-weighted distribution `G` as opposed to the
/// plain joint ESD `H`; the flag is informational, both are plain measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpectrum {
    atoms: Vec<SpectralAtom>,
    is_weighted: bool,
}

impl JointSpectrum {
    pub fn new(atoms: Vec<SpectralAtom>, is_weighted: bool) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(Error::InvalidSpectrum("no atoms".into()));
        };
        let dims = first.s.len();
        if dims < 2 {
            return Err(Error::InvalidSpectrum(
                "atoms need at least one training and one test coordinate".into(),
            ));
        }
        let mut total = 0.0;
        for atom in &atoms {
            if atom.s.len() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "atom of dimension {} in a {dims}-dimensional spectrum",
                    atom.s.len()
                )));
            }
            if !(atom.weight >= 0.0 && atom.weight.is_finite()) {
                return Err(Error::InvalidSpectrum(format!(
                    "atom weight {} is not a nonnegative number",
                    atom.weight
                )));
            }
            if let Some(&bad) = atom.s.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidSpectrum(format!(
                    "eigenvalue {bad} is not positive"
                )));
            }
            total += atom.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL * atoms.len().max(1) as f64 {
            return Err(Error::InvalidSpectrum(format!(
                "atom weights sum to {total}"
            )));
        }
        Ok(Self { atoms, is_weighted })
    }

    /// All tasks and the test share the eigenvalue vector `s`.
    pub fn point_mass(s: Vec<f64>) -> Result<Self> {
        Self::new(vec![SpectralAtom { s, weight: 1.0 }], false)
    }

    /// Empirical joint ESD of simultaneously diagonal covariances: one atom per
    /// coordinate. `columns[j]` is the diagonal of the `j`-th coordinate
    /// (training tasks first, test last). With `beta`, atoms are weighted by
    /// `beta_i^2 / ||beta||^2`, giving the weighted distribution.
    pub fn from_diagonals(columns: &[Vec<f64>], beta: Option<&[f64]>) -> Result<Self> {
        let p = columns.first().map_or(0, Vec::len);
        if p == 0 || columns.iter().any(|c| c.len() != p) {
            return Err(Error::DimensionMismatch(
                "diagonals must be nonempty and share one length".into(),
            ));
        }
        let weights: Vec<f64> = match beta {
            None => vec![1.0 / p as f64; p],
            Some(b) => {
                if b.len() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "beta has length {} but p = {p}",
                        b.len()
                    )));
                }
                let norm2: f64 = b.iter().map(|x| x * x).sum();
                if norm2 <= 0.0 {
                    return Err(Error::InvalidSpectrum("beta is zero".into()));
                }
                b.iter().map(|x| x * x / norm2).collect()
            }
        };
        let atoms = (0..p)
            .map(|i| SpectralAtom {
                s: columns.iter().map(|c| c[i]).collect(),
                weight: weights[i],
            })
            .collect();
        Self::new(atoms, beta.is_some())
    }

    pub fn atoms(&self) -> &[SpectralAtom] {
        &self.atoms
    }

    pub fn is_weighted(&self) -> bool {
        self.is_weighted
    }

    /// Number of coordinates, `T + 1`.
    pub fn dims(&self) -> usize {
        self.atoms[0].s.len()
    }

    /// Number of training coordinates `T`.
    pub fn tasks(&self) -> usize {
        self.dims() - 1
    }

    /// Same measure relabeled as the weighted distribution `G`.
    pub fn to_weighted(&self) -> Self {
        Self {
            atoms: self.atoms.clone(),
            is_weighted: true,
        }
    }

    /// `(eigenvalue, weight)` pairs of one coordinate's marginal.
    pub fn marginal(&self, coord: usize) -> Vec<(f64, f64)> {
        self.atoms.iter().map(|a| (a.s[coord], a.weight)).collect()
    }
}

const RESOLUTION_FLOOR: f64 = 64.0 * f64::EPSILON;

/// Stopping rule of the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    /// Absolute residual tolerance; raised to `64 eps m` when `m` is too large
    /// for it to be representable.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
        }
    }
}

/// Companion Stieltjes transform evaluated at `z = -lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct TildeM {
    pub value: f64,
    /// `|value - F(value)|` at the returned value.
    pub residual: f64,
    pub iterations: usize,
    /// Signed steps `F(x_k) - x_k` of every iterate, in order. The residual
    /// of iterate `k` is the step's magnitude.
    pub steps: Vec<f64>,
}

fn fixed_point_map(marginal: &[(f64, f64)], gamma: f64, lambda: f64, x: f64) -> f64 {
    let integral: f64 = marginal.iter().map(|&(s, w)| w * s / (1.0 + x * s)).sum();
    1.0 / (lambda + gamma * integral)
}

/// Solves `m = 1 / (lambda + gamma * sum_k w_k s_k / (1 + m s_k))` by plain
/// iteration from `1 / (lambda + gamma * mean(s))`. The map is increasing and
/// contractive on `(0, 1/lambda)`, so the iterates rise monotonically.
pub fn solve_tilde_m(
    marginal: &[(f64, f64)],
    gamma: f64,
    lambda: f64,
    opts: &FixedPointOptions,
) -> Result<TildeM> {
    ensure_positive("gamma", gamma)?;
    ensure_positive("lambda", lambda)?;
    ensure_positive("tol", opts.tol)?;
    if marginal.is_empty() {
        return Err(Error::InvalidSpectrum("empty marginal".into()));
    }
    let mut x = fixed_point_map(marginal, gamma, lambda, 0.0);
    let mut steps = Vec::new();
    for iter in 0..opts.max_iter {
        let next = fixed_point_map(marginal, gamma, lambda, x);
        let residual = (next - x).abs();
        steps.push(next - x);
        if residual <= opts.tol.max(RESOLUTION_FLOOR * x) {
            let check = (next - fixed_point_map(marginal, gamma, lambda, next)).abs();
            return Ok(TildeM {
                value: next,
                residual: check,
                iterations: iter + 1,
                steps,
            });
        }
        x = next;
    }
    Err(Error::NoConvergence {
        gamma,
        lambda,
        iterations: opts.max_iter,
        residual: steps.last().map_or(f64::NAN, |s| s.abs()),
    })
}

/// Stieltjes transform of the sample covariance spectrum at `z = -lambda`
/// from its companion: `m = (m_tilde - (1 - gamma)/lambda) / gamma`.
pub fn companion_m(tilde_m: f64, gamma: f64, lambda: f64) -> f64 {
    (tilde_m - (1.0 - gamma) / lambda) / gamma
}

/// Marchenko-Pastur Stieltjes transform with identity population covariance
/// at `z = -lambda`. Written as `2 / (b + sqrt(b^2 + 4 gamma lambda))`, the
/// cancellation-free form of the positive quadratic root.
pub fn mp_identity_m(gamma: f64, lambda: f64) -> f64 {
    isotropic_m(1.0, gamma, lambda).0
}

/// Derivative `m'(z)` at `z = -lambda`, from implicit differentiation of the
/// defining quadratic: `m' = m^2 / (1 - gamma m^2 / (1 + gamma m)^2)`.
pub fn mp_identity_m_prime(gamma: f64, lambda: f64) -> f64 {
    let m = mp_identity_m(gamma, lambda);
    let q = gamma * m / (1.0 + gamma * m);
    m * m / (1.0 - q * q / gamma)
}

/// Closed-form `(m, m_tilde)` for `Sigma = delta I` at `z = -lambda`.
pub fn isotropic_m(delta: f64, gamma: f64, lambda: f64) -> (f64, f64) {
    let b = delta * (1.0 - gamma) + lambda;
    let m = 2.0 / (b + (b * b + 4.0 * delta * gamma * lambda).sqrt());
    (m, m * gamma + (1.0 - gamma) / lambda)
}

/// Central finite difference of `m(z)` at `z = -lambda` for a general
/// marginal, step `h = 1e-6 * max(1, lambda)`.
pub fn stieltjes_derivative_fd(
    marginal: &[(f64, f64)],
    gamma: f64,
    lambda: f64,
    opts: &FixedPointOptions,
) -> Result<f64> {
    let h = 1e-6 * lambda.max(1.0);
    // m(z) at z = -lambda + h, i.e. regularizer lambda - h
    let lo = lambda - h;
    let hi = lambda + h;
    let m_plus = companion_m(solve_tilde_m(marginal, gamma, lo, opts)?.value, gamma, lo);
    let m_minus = companion_m(solve_tilde_m(marginal, gamma, hi, opts)?.value, gamma, hi);
    Ok((m_plus - m_minus) / (2.0 * h))
}

/// Limit joint ESD of two-block covariances `diag(delta I_{pi p}, I)`.
///
/// Coordinates are `pi_train` followed by `pi_test`. Sorting all fractions
/// ascending, atom `k` has the first `k` sorted coordinates switched from
/// `delta` to 1 and weight `pi_(k+1) - pi_(k)`. All `T + 2` atoms are kept,
/// including zero-weight ones from tied fractions.
pub fn block_joint_spectrum(pi_train: &[f64], pi_test: f64, delta: f64) -> Result<JointSpectrum> {
    ensure_positive("delta", delta)?;
    let pis: Vec<f64> = pi_train.iter().copied().chain(std::iter::once(pi_test)).collect();
    if let Some(bad) = pis.iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::InvalidScenario(format!(
            "block fraction {bad} outside [0, 1]"
        )));
    }
    let dims = pis.len();
    let mut order: Vec<usize> = (0..dims).collect();
    order.sort_by(|&i, &j| pis[i].total_cmp(&pis[j]));

    let mut atoms = Vec::with_capacity(dims + 1);
    let mut s = vec![delta; dims];
    let mut prev = 0.0;
    for k in 0..=dims {
        if k > 0 {
            s[order[k - 1]] = 1.0;
        }
        let next = if k < dims { pis[order[k]] } else { 1.0 };
        atoms.push(SpectralAtom {
            s: s.clone(),
            weight: next - prev,
        });
        prev = next;
    }
    JointSpectrum::new(atoms, false)
}

/// Joint spectrum for the prefix of tasks `1..=prefix` tested on task
/// `test_task` (0-based).
pub fn scenario_spectrum(
    scenario: &CovarianceScenario,
    prefix: usize,
    test_task: usize,
) -> Result<JointSpectrum> {
    let train: Vec<usize> = (0..prefix).collect();
    joint_spectrum_for(scenario, &train, test_task)
}

/// Joint spectrum whose training coordinates are the tasks listed in
/// `train` (0-based, in order) and whose test coordinate is `test_task`.
pub fn joint_spectrum_for(
    scenario: &CovarianceScenario,
    train: &[usize],
    test_task: usize,
) -> Result<JointSpectrum> {
    scenario.validate()?;
    let tasks = scenario.tasks();
    if train.is_empty() || train.iter().chain([&test_task]).any(|&i| i >= tasks) {
        return Err(Error::DimensionMismatch(format!(
            "train tasks {train:?} / test task {test_task} invalid for {tasks} tasks"
        )));
    }
    match scenario {
        CovarianceScenario::Identity { .. } => {
            JointSpectrum::point_mass(vec![1.0; train.len() + 1])
        }
        CovarianceScenario::IsotropicScales { delta } => JointSpectrum::point_mass(
            train.iter().chain([&test_task]).map(|&i| delta[i]).collect(),
        ),
        CovarianceScenario::TwoBlock { delta, .. } => {
            let pi = scenario.asymptotic_pi().expect("two-block scenario");
            let train_pi: Vec<f64> = train.iter().map(|&i| pi[i]).collect();
            block_joint_spectrum(&train_pi, pi[test_task], *delta)
        }
        CovarianceScenario::ExplicitDiagonal { diag } => {
            let cols: Vec<Vec<f64>> = train
                .iter()
                .chain([&test_task])
                .map(|&i| diag[i].clone())
                .collect();
            JointSpectrum::from_diagonals(&cols, None)
        }
    }
}

/// Upper-triangular `T x T` table addressed by `(t, l)` with `t <= l`
/// (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperTriangular {
    n: usize,
    data: Vec<f64>,
}

impl UpperTriangular {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * (n + 1) / 2],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, t: usize, l: usize) -> f64 {
        self.data[self.offset(t, l)]
    }

    pub fn set(&mut self, t: usize, l: usize, value: f64) {
        let i = self.offset(t, l);
        self.data[i] = value;
    }

    fn add(&mut self, t: usize, l: usize, value: f64) {
        let i = self.offset(t, l);
        self.data[i] += value;
    }

    fn offset(&self, t: usize, l: usize) -> usize {
        assert!(t <= l && l < self.n, "({t}, {l}) outside upper triangle");
        t * (2 * self.n - t + 1) / 2 + (l - t)
    }
}

/// Every integral entering the asymptotic risk, for one regime and test
/// coordinate. Indices are 0-based task positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub mu: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub g: Vec<f64>,
    pub a_tl: UpperTriangular,
    pub b_tl: UpperTriangular,
    pub c_tl: UpperTriangular,
    pub g_tl: UpperTriangular,
}

/// Evaluates all moment integrals as exact weighted sums over atoms.
///
/// With `f_j(s) = lambda_j^2 (1 + m_j s_j)^2` and `h_t(s) = lambda_t (1 + m_t s_t)`:
/// `a_t = E_H[s_t s_0 / prod_{j>=t} f_j]`, `b_t = E_H[h_t s_0 / prod]`,
/// `c_t = E_H[s_0 / prod]`, `g_t = E_G[s_0 / prod]`, and the `(t, l)` tables
/// use `prod_{j=t..=l}` with `s_l` in place of `s_0`.
pub fn moment_integrals(
    h: &JointSpectrum,
    g: &JointSpectrum,
    tilde_m: &[f64],
    regime: &Regime,
) -> Result<MomentTable> {
    let t_count = regime.tasks();
    if h.tasks() != t_count || g.tasks() != t_count || tilde_m.len() != t_count {
        return Err(Error::DimensionMismatch(format!(
            "regime has {t_count} tasks, H has {}, G has {}, {} solved transforms",
            h.tasks(),
            g.tasks(),
            tilde_m.len()
        )));
    }
    let lambda = &regime.lambda;
    let gamma = &regime.gamma;

    let mu = (0..t_count)
        .map(|t| {
            let (mut first, mut second) = (0.0, 0.0);
            for atom in h.atoms() {
                let s = atom.s[t];
                let denom = lambda[t] * (1.0 + tilde_m[t] * s);
                first += atom.weight * gamma[t] * s / denom;
                second += atom.weight * gamma[t] * s * s / (denom * denom);
            }
            1.0 / ((1.0 + first).powi(2) - second)
        })
        .collect();

    let mut a = vec![0.0; t_count];
    let mut b = vec![0.0; t_count];
    let mut c = vec![0.0; t_count];
    let mut a_tl = UpperTriangular::zeros(t_count);
    let mut b_tl = UpperTriangular::zeros(t_count);
    let mut c_tl = UpperTriangular::zeros(t_count);

    let mut f = vec![0.0; t_count];
    let mut hh = vec![0.0; t_count];
    let mut suffix = vec![0.0; t_count];
    let fill = |atom: &SpectralAtom, f: &mut [f64], hh: &mut [f64], suffix: &mut [f64]| {
        for j in 0..t_count {
            hh[j] = lambda[j] * (1.0 + tilde_m[j] * atom.s[j]);
            f[j] = hh[j] * hh[j];
        }
        let mut acc = 1.0;
        for j in (0..t_count).rev() {
            acc *= f[j];
            suffix[j] = acc;
        }
    };

    for atom in h.atoms() {
        let w = atom.weight;
        let s0 = atom.s[t_count];
        fill(atom, &mut f, &mut hh, &mut suffix);
        for t in 0..t_count {
            let inv = w / suffix[t];
            a[t] += atom.s[t] * s0 * inv;
            b[t] += hh[t] * s0 * inv;
            c[t] += s0 * inv;
            let mut prod = 1.0;
            for l in t..t_count {
                prod *= f[l];
                let inv = w / prod;
                a_tl.add(t, l, atom.s[t] * atom.s[l] * inv);
                b_tl.add(t, l, hh[t] * atom.s[l] * inv);
                c_tl.add(t, l, atom.s[l] * inv);
            }
        }
    }

    let mut g_vec = vec![0.0; t_count];
    let mut g_tl = UpperTriangular::zeros(t_count);
    for atom in g.atoms() {
        let w = atom.weight;
        let s0 = atom.s[t_count];
        fill(atom, &mut f, &mut hh, &mut suffix);
        for t in 0..t_count {
            let inv = w / suffix[t];
            g_vec[t] += s0 * inv;
            let mut prod = 1.0;
            for l in t..t_count {
                prod *= f[l];
                let inv = w / prod;
                g_tl.add(t, l, atom.s[l] * inv);
            }
        }
    }

    Ok(MomentTable {
        mu,
        a,
        b,
        c,
        g: g_vec,
        a_tl,
        b_tl,
        c_tl,
        g_tl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const GOLDEN: f64 = 0.618_033_988_749_894_8;

    fn point(s: f64) -> Vec<(f64, f64)> {
        vec![(s, 1.0)]
    }

    /// Positive root of `a x^2 + b x + c = 0` for `a > 0 > c`.
    fn quadratic_root(a: f64, b: f64, c: f64) -> f64 {
        (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a)
    }

    #[test]
    fn fixed_point_identity_examples() {
        let opts = FixedPointOptions::default();
        let m = solve_tilde_m(&point(1.0), 1.0, 1.0, &opts).unwrap();
        assert_abs_diff_eq!(m.value, quadratic_root(1.0, 1.0, -1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(m.value, GOLDEN, epsilon = 1e-12);
        assert!(m.residual <= opts.tol);

        let m = solve_tilde_m(&point(1.0), 0.5, 1.0, &opts).unwrap();
        assert_abs_diff_eq!(m.value, quadratic_root(1.0, 0.5, -1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(m.value, 0.780_776_4, epsilon = 1e-7);

        let marginal = vec![(1.0, 0.3), (5.0, 0.7)];
        let m = solve_tilde_m(&marginal, 1.0, 1e8, &opts).unwrap();
        let scaled = m.value * 1e8;
        assert!(scaled > 1.0 - 1e-6 && scaled < 1.0, "{scaled}");
    }

    #[test]
    fn fixed_point_residuals_decrease() {
        let opts = FixedPointOptions::default();
        let marginal = [(1.0, 0.4), (5.0, 0.6)];
        for g in [0.6, 1.2, 2.4] {
            for l in [0.1, 1.0, 10.0] {
                let m = solve_tilde_m(&marginal, g, l, &opts).unwrap();
                assert!(m.value > 0.0 && m.value < 1.0 / l);
                assert_monotone_convergence(&m.steps);
            }
        }
        let m = solve_tilde_m(&marginal, 1.0, 1e-3, &opts).unwrap();
        assert_monotone_convergence(&m.steps);
    }

    /// Iterates rise monotonically; once the step size starts shrinking it
    /// keeps shrinking.
    fn assert_monotone_convergence(steps: &[f64]) {
        assert!(steps.iter().all(|&s| s >= 0.0), "iterates fell");
        let peak = steps
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        for w in steps[peak..].windows(2) {
            assert!(w[1] <= w[0], "residual rose after its peak: {w:?}");
        }
        assert!(steps.last().unwrap() < &steps[0]);
    }

    #[test]
    fn fixed_point_rejects_bad_inputs() {
        let opts = FixedPointOptions::default();
        assert!(solve_tilde_m(&point(1.0), 0.0, 1.0, &opts).is_err());
        assert!(solve_tilde_m(&point(1.0), 1.0, -1.0, &opts).is_err());
        let tight = FixedPointOptions {
            tol: 1e-300,
            max_iter: 5,
        };
        assert!(matches!(
            solve_tilde_m(&point(1.0), 1.0, 1.0, &tight),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn companion_examples() {
        assert_abs_diff_eq!(companion_m(0.780_776_4, 0.5, 1.0), 0.561_552_8, epsilon = 1e-7);
        assert_eq!(companion_m(0.37, 1.0, 2.0), 0.37);
        for g in [0.3, 1.0, 2.5] {
            assert_abs_diff_eq!(companion_m(1.0 / 4.0, g, 4.0), 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn identity_closed_form_examples() {
        assert_abs_diff_eq!(mp_identity_m(1.0, 1.0), GOLDEN, epsilon = 1e-15);
        assert_abs_diff_eq!(mp_identity_m(0.5, 1.0), 0.561_552_8, epsilon = 1e-7);
        for g in [0.6, 1.2, 2.4] {
            let l = 1e8;
            let x = l * mp_identity_m(g, l);
            assert!(x > 1.0 - 1e-6 && x <= 1.0, "{x}");
        }
        // residual of  z g m^2 - (1 - g - z) m + 1  at z = -lambda
        for g in [0.1, 0.6, 1.0, 1.2, 2.4, 7.0] {
            for l in [0.1, 1.0, 10.0, 1e3] {
                let m = mp_identity_m(g, l);
                let z = -l;
                let res = z * g * m * m - (1.0 - g - z) * m + 1.0;
                assert!(res.abs() <= 1e-12, "g={g} l={l} res={res}");
            }
        }
    }

    #[test]
    fn literal_closed_form_matches_stable_form() {
        for g in [0.6, 1.2, 2.4] {
            for l in [0.1, 1.0, 10.0] {
                let z: f64 = -l;
                let b = 1.0 - g - z;
                let lit = (-b + (b * b - 4.0 * g * z).sqrt()) / (-2.0 * g * z);
                assert_abs_diff_eq!(lit, mp_identity_m(g, l), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn derivative_examples() {
        assert_abs_diff_eq!(mp_identity_m_prime(1.0, 1.0), 1.0 / 5f64.sqrt(), epsilon = 1e-14);
        let h = 1e-5;
        for g in [0.6, 1.2, 2.4] {
            for l in [0.1, 1.0, 10.0] {
                // m(z) evaluated at z = -l + h and z = -l - h
                let fd = (mp_identity_m(g, l - h) - mp_identity_m(g, l + h)) / (2.0 * h);
                assert!((mp_identity_m_prime(g, l) - fd).abs() <= 1e-6, "g={g} l={l}");
            }
        }
        let l: f64 = 1e8;
        assert!((l * l * mp_identity_m_prime(1.2, l) - 1.0).abs() <= 1e-5);
    }

    #[test]
    fn finite_difference_derivative_general_marginal() {
        let opts = FixedPointOptions::default();
        let fd = stieltjes_derivative_fd(&point(1.0), 1.2, 0.5, &opts).unwrap();
        assert_abs_diff_eq!(fd, mp_identity_m_prime(1.2, 0.5), epsilon = 1e-6);
    }

    #[test]
    fn isotropic_examples() {
        let opts = FixedPointOptions::default();
        for g in [0.6, 1.2, 2.4] {
            for l in [0.1, 1.0, 10.0] {
                assert_abs_diff_eq!(isotropic_m(1.0, g, l).0, mp_identity_m(g, l), epsilon = 1e-15);
            }
        }
        let (m, mt) = isotropic_m(2.0, 1.2, 0.5);
        let solved = solve_tilde_m(&point(2.0), 1.2, 0.5, &opts).unwrap().value;
        assert_abs_diff_eq!(mt, solved, epsilon = 1e-10);
        assert_abs_diff_eq!(m, companion_m(solved, 1.2, 0.5), epsilon = 1e-10);

        let (delta, g, l) = (0.5, 0.6, 1.0);
        let (m, _) = isotropic_m(delta, g, l);
        let res = g * delta * l * m * m + (delta * (1.0 - g) + l) * m - 1.0;
        assert!(res.abs() <= 1e-12);
    }

    #[test]
    fn block_spectrum_single_task() {
        let h = block_joint_spectrum(&[0.3], 0.5, 5.0).unwrap();
        let atoms = h.atoms();
        assert_eq!(atoms.len(), 3);
        let expect = [(0.3, [5.0, 5.0]), (0.2, [1.0, 5.0]), (0.5, [1.0, 1.0])];
        for (atom, (w, s)) in atoms.iter().zip(expect) {
            assert_abs_diff_eq!(atom.weight, w, epsilon = 1e-15);
            assert_eq!(atom.s, s.to_vec());
        }
    }

    #[test]
    fn block_spectrum_matches_coordinate_enumeration() {
        // Brute force: p coordinates, coordinate i of Sigma_j is delta iff i < floor(pi_j p).
        let p = 1_000_000usize;
        let pis = [0.3, 0.5];
        let counts: Vec<usize> = pis.iter().map(|x| (x * p as f64) as usize).collect();
        let mut tally = std::collections::BTreeMap::new();
        for i in 0..p {
            let key: Vec<u8> = counts.iter().map(|&c| u8::from(i < c)).collect();
            *tally.entry(key).or_insert(0usize) += 1;
        }
        let h = block_joint_spectrum(&pis[..1], pis[1], 5.0).unwrap();
        for atom in h.atoms() {
            let key: Vec<u8> = atom.s.iter().map(|&x| u8::from(x == 5.0)).collect();
            let frac = tally.get(&key).copied().unwrap_or(0) as f64 / p as f64;
            assert_abs_diff_eq!(frac, atom.weight, epsilon = 1e-6);
        }
    }

    #[test]
    fn block_spectrum_marginals_and_ties() {
        let pis = [0.7, 0.1, 0.4, 0.4];
        let h = block_joint_spectrum(&pis, 0.9, 3.0).unwrap();
        assert_eq!(h.atoms().len(), pis.len() + 2);
        for (j, &pj) in pis.iter().chain([0.9].iter()).enumerate() {
            let mass_delta: f64 = h
                .marginal(j)
                .iter()
                .filter(|(s, _)| *s == 3.0)
                .map(|(_, w)| w)
                .sum();
            assert_abs_diff_eq!(mass_delta, pj, epsilon = 1e-15);
        }
        assert!(h.atoms().iter().any(|a| a.weight == 0.0));

        let shared = block_joint_spectrum(&[0.4, 0.4], 0.4, 5.0).unwrap();
        let nonzero = shared.atoms().iter().filter(|a| a.weight > 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn spectrum_validation() {
        assert!(JointSpectrum::new(vec![], false).is_err());
        let bad_sum = vec![SpectralAtom {
            s: vec![1.0, 1.0],
            weight: 0.5,
        }];
        assert!(JointSpectrum::new(bad_sum, false).is_err());
        let ragged = vec![
            SpectralAtom {
                s: vec![1.0, 1.0],
                weight: 0.5,
            },
            SpectralAtom {
                s: vec![1.0],
                weight: 0.5,
            },
        ];
        assert!(matches!(
            JointSpectrum::new(ragged, false),
            Err(Error::DimensionMismatch(_))
        ));
    }

    fn identity_moments(regime: &Regime) -> (MomentTable, Vec<f64>) {
        let t = regime.tasks();
        let opts = FixedPointOptions::default();
        let h = JointSpectrum::point_mass(vec![1.0; t + 1]).unwrap();
        let mt: Vec<f64> = (0..t)
            .map(|j| {
                solve_tilde_m(&h.marginal(j), regime.gamma[j], regime.lambda[j], &opts)
                    .unwrap()
                    .value
            })
            .collect();
        (moment_integrals(&h, &h.to_weighted(), &mt, regime).unwrap(), mt)
    }

    #[test]
    fn identity_moments_are_products() {
        let regime = Regime::new(vec![0.6, 1.2, 2.4], vec![0.1, 1.0, 10.0], 1.0, 1.0).unwrap();
        let (mom, mt) = identity_moments(&regime);
        let u: Vec<f64> = (0..3).map(|j| regime.lambda[j] * (1.0 + mt[j])).collect();
        for t in 0..3 {
            for l in t..3 {
                let prod: f64 = (t..=l).map(|j| u[j].powi(-2)).product();
                assert_abs_diff_eq!(mom.a_tl.get(t, l), prod, epsilon = 1e-12 * prod);
            }
            let att = mom.a_tl.get(t, t);
            assert_abs_diff_eq!(att, mom.b_tl.get(t, t) / u[t], epsilon = 1e-15 * att.max(1.0));
            assert_abs_diff_eq!(att, mom.c_tl.get(t, t), epsilon = 0.0);
        }
    }

    #[test]
    fn isotropic_moments_match_closed_forms() {
        let deltas = [0.7, 2.0, 3.1];
        let delta0 = 1.4;
        let regime = Regime::new(vec![0.6, 1.2, 2.4], vec![0.3, 1.5, 4.0], 1.0, 1.0).unwrap();
        let mut s = deltas.to_vec();
        s.push(delta0);
        let h = JointSpectrum::point_mass(s).unwrap();
        let mt: Vec<f64> = (0..3)
            .map(|j| isotropic_m(deltas[j], regime.gamma[j], regime.lambda[j]).1)
            .collect();
        let mom = moment_integrals(&h, &h, &mt, &regime).unwrap();
        let (g, l) = (&regime.gamma, &regime.lambda);
        let f = |j: usize| l[j].powi(2) * (1.0 + mt[j] * deltas[j]).powi(2);
        let rel = |x: f64, y: f64| ((x - y) / y).abs();
        for t in 0..3 {
            let mu = 1.0
                / ((1.0 + g[t] * deltas[t] / (l[t] * (1.0 + mt[t] * deltas[t]))).powi(2)
                    - g[t] * deltas[t].powi(2) / (l[t].powi(2) * (1.0 + mt[t] * deltas[t]).powi(2)));
            assert!(rel(mom.mu[t], mu) <= 1e-14);
            let tail: f64 = (t..3).map(f).product();
            let h_t = l[t] * (1.0 + mt[t] * deltas[t]);
            assert!(rel(mom.a[t], deltas[t] * delta0 / tail) <= 1e-14);
            assert!(rel(mom.b[t], h_t * delta0 / tail) <= 1e-14);
            assert!(rel(mom.c[t], delta0 / tail) <= 1e-14);
            for k in t..3 {
                let prod: f64 = (t..=k).map(f).product();
                assert!(rel(mom.a_tl.get(t, k), deltas[t] * deltas[k] / prod) <= 1e-14);
                assert!(rel(mom.b_tl.get(t, k), h_t * deltas[k] / prod) <= 1e-14);
                assert!(rel(mom.c_tl.get(t, k), deltas[k] / prod) <= 1e-14);
            }
        }
        // G = H gives g = c exactly
        assert_eq!(mom.g, mom.c);
        for t in 0..3 {
            assert_eq!(mom.g_tl.get(0, t), mom.c_tl.get(0, t));
        }
    }

    #[test]
    fn moments_dimension_mismatch() {
        let regime = Regime::new(vec![1.0, 1.0], vec![1.0, 1.0], 1.0, 1.0).unwrap();
        let h = JointSpectrum::point_mass(vec![1.0; 2]).unwrap();
        assert!(moment_integrals(&h, &h, &[0.5, 0.5], &regime).is_err());
    }

    #[test]
    fn triangular_indexing_is_dense() {
        let n = 5;
        let mut tri = UpperTriangular::zeros(n);
        let mut k = 0.0;
        for t in 0..n {
            for l in t..n {
                tri.set(t, l, k);
                k += 1.0;
            }
        }
        let mut k = 0.0;
        for t in 0..n {
            for l in t..n {
                assert_eq!(tri.get(t, l), k);
                k += 1.0;
            }
        }
    }

    #[test]
    fn block_residual_is_absolute() {
        let opts = FixedPointOptions::default();
        for pi in [1e-9, 0.05, 0.5, 0.9, 1.0 - 1e-9] {
            let h = block_joint_spectrum(&[pi], 0.5, 5.0).unwrap();
            for gamma in [0.6, 1.2, 2.4] {
                for lambda in [0.01, 0.1, 1.0, 10.0] {
                    let m = solve_tilde_m(&h.marginal(0), gamma, lambda, &opts).unwrap();
                    assert!(m.residual <= 1e-12, "pi={pi} gamma={gamma} lambda={lambda}: {}", m.residual);
                }
            }
        }
        // far below the representable scale the floor takes over instead of failing
        let m = solve_tilde_m(&[(1.0, 1.0)], 0.6, 1e-4, &opts).unwrap();
        assert!(m.residual <= 64.0 * f64::EPSILON * m.value);
    }
}
