//! Moments accounting for the subsampled Gaussian mechanism.
//!
//! Each iteration samples one of `m` trajectories and releases its clipped
//! gradient plus `N(0, h²σ²I)` noise. Its log-moment is bounded by
//!
//! ```text
//! α(λ) ≤ λ(λ+1)/(2m²) · min{4(e^{1/σ²} − 1), 2e^{1/σ²}}
//! ```
//!
//! Moments add across iterations, and the total converts to (ε, δ) through
//! `δ = min_λ exp(α(λ) − λε)`. The bound holds at every real λ ≥ 1, so
//! searching a finite grid of λ is always sound.

use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// Noise scales below this use the small-σ branch of the moment bound; the
/// calibrator never returns less.
pub fn sigma_floor() -> f64 {
    (1.0 / std::f64::consts::LN_2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }
}

/// Rényi divergence of order `alpha` between two isotropic Gaussians with
/// common scale `sigma` whose means are `distance` apart.
pub fn gaussian_renyi_divergence(distance: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("sigma must be positive, got {sigma}")));
    }
    if !(alpha >= 1.0) {
        return Err(invalid(format!("Rényi order must be at least 1, got {alpha}")));
    }
    Ok(alpha * distance * distance / (2.0 * sigma * sigma))
}

/// Upper bound on the λ-th log-moment of one subsampled Gaussian step.
pub fn per_step_moment(lambda: f64, sigma: f64, m: u64) -> f64 {
    let inv = 1.0 / (sigma * sigma);
    let large = 4.0 * inv.exp_m1();
    let small = 2.0 * inv.exp();
    let m = m as f64;
    lambda * (lambda + 1.0) / (2.0 * m * m) * large.min(small)
}

/// Integers 1..=64 followed by a geometric extension to 1024.
pub fn default_lambda_grid() -> Vec<f64> {
    lambda_grid(1)
}

/// Default grid refined `density`-fold: integer part spaced 1/density,
/// geometric part with ratio 2^(1/(8·density)).
pub fn lambda_grid(density: usize) -> Vec<f64> {
    let d = density.max(1);
    let mut grid: Vec<f64> = (d..=64 * d).map(|k| k as f64 / d as f64).collect();
    let steps = 32 * d;
    grid.extend((1..=steps).map(|k| 64.0 * 2f64.powf(k as f64 * 4.0 / steps as f64)));
    grid
}

/// Accumulated log-moment bounds over a fixed λ grid. Values are immutable
/// snapshots; composing returns a new state.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountantState {
    lambdas: Vec<f64>,
    moments: Vec<f64>,
}

impl Default for AccountantState {
    fn default() -> Self {
        Self::new(default_lambda_grid()).expect("default grid is valid")
    }
}

impl AccountantState {
    pub fn new(lambdas: Vec<f64>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.iter().any(|&l| !(l >= 1.0) || !l.is_finite()) {
            return Err(invalid("λ grid must be nonempty with every λ ≥ 1"));
        }
        let moments = vec![0.0; lambdas.len()];
        Ok(Self { lambdas, moments })
    }

    /// A state with explicit accumulated moments.
    pub fn with_moments(lambdas: Vec<f64>, moments: Vec<f64>) -> Result<Self> {
        let mut s = Self::new(lambdas)?;
        if moments.len() != s.lambdas.len() || moments.iter().any(|&a| !(a >= 0.0)) {
            return Err(invalid("need one nonnegative moment per grid point"));
        }
        s.moments = moments;
        Ok(s)
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    /// Adds `steps` identical subsampled Gaussian steps.
    pub fn compose(&self, steps: u64, sigma: f64, m: u64) -> AccountantState {
        let mut next = self.clone();
        if steps == 0 {
            return next;
        }
        for (a, &l) in next.moments.iter_mut().zip(&self.lambdas) {
            *a += steps as f64 * per_step_moment(l, sigma, m);
        }
        next
    }

    /// `min_λ exp(α(λ) − λε)`, capped at 1.
    pub fn tail_delta(&self, epsilon: f64) -> f64 {
        self.lambdas
            .iter()
            .zip(&self.moments)
            .map(|(&l, &a)| (a - l * epsilon).exp())
            .fold(1.0, f64::min)
    }

    /// Smallest ε the tail bound certifies at `delta`, with its λ.
    pub fn epsilon_for_delta(&self, delta: f64) -> (f64, f64) {
        let log_inv = (1.0 / delta).ln();
        self.lambdas
            .iter()
            .zip(&self.moments)
            .map(|(&l, &a)| ((a + log_inv) / l, l))
            .fold(
                (f64::INFINITY, f64::NAN),
                |best, cur| if cur.0 < best.0 { cur } else { best },
            )
    }
}

/// ε certified after `steps` iterations at noise `sigma` over `m` records.
pub fn achieved_epsilon(sigma: f64, m: u64, steps: u64, delta: f64, grid: &[f64]) -> (f64, f64) {
    AccountantState::new(grid.to_vec())
        .expect("grid validated by caller")
        .compose(steps, sigma, m)
        .epsilon_for_delta(delta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub sigma: f64,
    /// Smallest feasible σ before the floor is applied.
    pub unfloored_sigma: f64,
    pub epsilon: f64,
    pub lambda_star: f64,
}

/// Relative width of the bisection bracket at termination.
pub const CALIBRATION_PRECISION: f64 = 1e-3;
const SIGMA_SEARCH_MIN: f64 = 1e-3;
const SIGMA_SEARCH_MAX: f64 = 1e8;

/// Smallest σ (to relative precision 10⁻³) whose composed accountant meets
/// the budget, never below [`sigma_floor`].
pub fn calibrate_sigma(target: PrivacyBudget, m: u64, steps: u64) -> Result<Calibration> {
    calibrate_sigma_on_grid(target, m, steps, &default_lambda_grid())
}

pub fn calibrate_sigma_on_grid(target: PrivacyBudget, m: u64, steps: u64, grid: &[f64]) -> Result<Calibration> {
    PrivacyBudget::new(target.epsilon, target.delta)?;
    if m == 0 || steps == 0 {
        return Err(invalid("calibration needs m ≥ 1 and N ≥ 1"));
    }
    AccountantState::new(grid.to_vec())?;
    let eps_at = |sigma: f64| achieved_epsilon(sigma, m, steps, target.delta, grid).0;
    if eps_at(SIGMA_SEARCH_MAX) > target.epsilon {
        let lambda_max = grid.iter().copied().fold(0.0, f64::max);
        return Err(Error::Infeasible(format!(
            "ε = {} at δ = {} is below ln(1/δ)/λ_max = {:.4}, unreachable at any noise scale",
            target.epsilon,
            target.delta,
            (1.0 / target.delta).ln() / lambda_max
        )));
    }
    let (mut lo, mut hi) = (SIGMA_SEARCH_MIN, SIGMA_SEARCH_MAX);
    if eps_at(lo) <= target.epsilon {
        hi = lo;
    }
    while hi / lo > 1.0 + CALIBRATION_PRECISION {
        let mid = (lo * hi).sqrt();
        if eps_at(mid) <= target.epsilon {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let sigma = hi.max(sigma_floor());
    let (epsilon, lambda_star) = achieved_epsilon(sigma, m, steps, target.delta, grid);
    Ok(Calibration {
        sigma,
        unfloored_sigma: hi,
        epsilon,
        lambda_star,
    })
}

/// Privacy audit of a planned or completed run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditReport {
    /// ε achieved at the target δ.
    pub epsilon: f64,
    /// δ achieved at the target ε.
    pub delta: f64,
    pub sigma: f64,
    #[serde(rename = "N")]
    pub steps: u64,
    pub m: u64,
    pub lambda_star: f64,
    pub target_epsilon: f64,
    pub target_delta: f64,
    pub pass: bool,
}

impl AuditReport {
    /// Structured plain-text (TOML) rendering.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("audit report serializes")
    }
}

pub fn audit_run(sigma: f64, m: u64, steps: u64, target: PrivacyBudget) -> Result<AuditReport> {
    PrivacyBudget::new(target.epsilon, target.delta)?;
    if !(sigma > 0.0) || m == 0 {
        return Err(invalid("audit needs σ > 0 and m ≥ 1"));
    }
    let state = AccountantState::default().compose(steps, sigma, m);
    let (epsilon, lambda_star) = state.epsilon_for_delta(target.delta);
    let delta = state.tail_delta(target.epsilon);
    Ok(AuditReport {
        epsilon,
        delta,
        sigma,
        steps,
        m,
        lambda_star,
        target_epsilon: target.epsilon,
        target_delta: target.delta,
        pass: epsilon <= target.epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renyi_divergence_values() {
        for a in [1.0, 2.0, 10.0] {
            assert_eq!(gaussian_renyi_divergence(0.0, 1.3, a).unwrap(), 0.0);
        }
        assert_eq!(gaussian_renyi_divergence(1.0, 1.0, 2.0).unwrap(), 1.0);
        assert_eq!(gaussian_renyi_divergence(2.0, 1.0, 3.0).unwrap(), 6.0);
        assert!(gaussian_renyi_divergence(1.0, 0.0, 2.0).is_err());
        assert!(gaussian_renyi_divergence(1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn moment_at_branch_equality() {
        let sigma = sigma_floor();
        for &l in &[1.0, 2.0, 7.5, 100.0] {
            for &m in &[1u64, 10, 1000] {
                let want = 2.0 * l * (l + 1.0) / (m as f64 * m as f64);
                let got = per_step_moment(l, sigma, m);
                assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn moment_large_sigma_series() {
        let (l, sigma, m) = (5.0, 100.0, 50u64);
        let approx = 2.0 * l * (l + 1.0) / ((m * m) as f64 * sigma * sigma);
        let got = per_step_moment(l, sigma, m);
        assert!((got / approx - 1.0).abs() < 0.01);
    }

    #[test]
    fn moment_vanishes_with_m() {
        let a = per_step_moment(10.0, 2.0, 1_000_000_000);
        assert!(a < 1e-15);
    }

    #[test]
    fn small_sigma_uses_exponential_branch() {
        let sigma = 0.5;
        let want = 3.0 * 4.0 / 2.0 * 2.0 * 4f64.exp();
        assert!((per_step_moment(3.0, sigma, 1) - want).abs() < 1e-9);
    }

    #[test]
    fn compose_properties() {
        let s = AccountantState::default();
        assert_eq!(s.compose(0, 1.5, 100), s);
        let twice = s.compose(1, 1.5, 100).compose(1, 1.5, 100);
        let once = s.compose(2, 1.5, 100);
        assert_eq!(twice, once);
        let n = s.compose(37, 2.0, 10);
        for (a, &l) in n.moments().iter().zip(s.lambdas()) {
            assert_eq!(*a, 37.0 * per_step_moment(l, 2.0, 10));
        }
    }

    #[test]
    fn tail_delta_examples() {
        let s = AccountantState::new(vec![1.0, 2.0, 5.0]).unwrap();
        assert!((s.tail_delta(0.3) - (-1.5f64).exp()).abs() < 1e-15);
        let s = AccountantState::with_moments(vec![2.0], vec![1.0]).unwrap();
        assert!((s.tail_delta(1.0) - (-1.0f64).exp()).abs() < 1e-15);
        let s = AccountantState::with_moments(vec![1.0, 2.0, 4.0], vec![0.01, 0.04, 0.16]).unwrap();
        assert!((s.tail_delta(0.5) - (0.16f64 - 2.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn tail_delta_capped_at_one() {
        let s = AccountantState::with_moments(vec![1.0], vec![50.0]).unwrap();
        assert_eq!(s.tail_delta(0.1), 1.0);
    }

    #[test]
    fn epsilon_for_delta_examples() {
        let s = AccountantState::default();
        let (eps, l) = s.epsilon_for_delta(1e-5);
        assert_eq!(l, 1024.0);
        assert!((eps - (1e5f64).ln() / 1024.0).abs() < 1e-15);
        let s = AccountantState::with_moments(vec![10.0], vec![1.0]).unwrap();
        let (eps, _) = s.epsilon_for_delta(1e-5);
        assert!((eps - (1.0 + (1e5f64).ln()) / 10.0).abs() < 1e-15);
    }

    #[test]
    fn default_grid_shape() {
        let g = default_lambda_grid();
        assert_eq!(g[0], 1.0);
        assert_eq!(g[63], 64.0);
        assert!((g.last().unwrap() - 1024.0).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        let fine = lambda_grid(2);
        assert!(fine.len() > 2 * g.len() - 2);
    }

    #[test]
    fn calibration_monotone_in_m_and_n() {
        let b = PrivacyBudget::new(0.5, 1e-5).unwrap();
        let s1 = calibrate_sigma(b, 1000, 10_000).unwrap().unfloored_sigma;
        let s2 = calibrate_sigma(b, 2000, 10_000).unwrap().unfloored_sigma;
        let s3 = calibrate_sigma(b, 1000, 20_000).unwrap().unfloored_sigma;
        assert!(s2 < s1);
        assert!(s3 > s1);
    }

    #[test]
    fn calibrated_sigma_respects_floor_and_passes_audit() {
        let b = PrivacyBudget::new(0.1, 1e-5).unwrap();
        let cal = calibrate_sigma(b, 100_000, 100_000).unwrap();
        assert!(cal.sigma >= sigma_floor());
        let report = audit_run(cal.sigma, 100_000, 100_000, b).unwrap();
        assert!(report.pass);
        let half = audit_run(cal.unfloored_sigma / 2.0, 100_000, 100_000, b).unwrap();
        assert!(!half.pass);
    }

    #[test]
    fn halved_sigma_fails_when_floor_inactive() {
        let b = PrivacyBudget::new(0.1, 1e-5).unwrap();
        let cal = calibrate_sigma(b, 1000, 50_000).unwrap();
        assert!(cal.sigma > sigma_floor());
        assert!(audit_run(cal.sigma, 1000, 50_000, b).unwrap().pass);
        assert!(!audit_run(cal.sigma / 2.0, 1000, 50_000, b).unwrap().pass);
    }

    #[test]
    fn infeasible_budget_reported() {
        // ln(1e5)/1024 ≈ 0.0112 is the best any σ can certify.
        let b = PrivacyBudget::new(0.005, 1e-5).unwrap();
        assert!(matches!(calibrate_sigma(b, 100, 100), Err(Error::Infeasible(_))));
    }

    #[test]
    fn audit_report_is_deterministic_text() {
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let a = audit_run(3.0, 500, 2000, b).unwrap();
        assert_eq!(a, audit_run(3.0, 500, 2000, b).unwrap());
        let text = a.to_text();
        for key in ["epsilon", "delta", "sigma", "N", "m", "lambda_star", "pass"] {
            assert!(
                text.lines().any(|l| l.starts_with(&format!("{key} ="))),
                "missing {key}"
            );
        }
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(0.0, 1e-5).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn moment_monotonicity(l in 1.0f64..500.0, sigma in 0.2f64..50.0, m in 1u64..100_000) {
            let base = per_step_moment(l, sigma, m);
            prop_assert!(per_step_moment(l + 1.0, sigma, m) >= base);
            prop_assert!(per_step_moment(l, sigma * 1.1, m) <= base);
            prop_assert!(per_step_moment(l, sigma, m + 1) <= base);
        }

        #[test]
        fn simplified_bound_above_floor(l in 1.0f64..1024.0, sigma in 1.2012f64..100.0, m in 1u64..1_000_000) {
            let mf = m as f64;
            let bound = 4.0 * l * (l + 1.0) / (mf * mf * sigma * sigma);
            prop_assert!(per_step_moment(l, sigma, m) <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn tail_and_epsilon_round_trip(
            moments in proptest::collection::vec(0.0f64..20.0, 1..20),
            delta in 1e-10f64..0.5,
        ) {
            let lambdas: Vec<f64> = (1..=moments.len()).map(|k| k as f64 * 1.5).collect();
            let s = AccountantState::with_moments(lambdas, moments).unwrap();
            let (eps, _) = s.epsilon_for_delta(delta);
            prop_assert!(s.tail_delta(eps) <= delta * (1.0 + 1e-9));
        }

        #[test]
        fn tail_delta_nonincreasing_in_eps(e in 0.01f64..5.0, sigma in 0.5f64..10.0) {
            let s = AccountantState::default().compose(1000, sigma, 100);
            prop_assert!(s.tail_delta(e * 1.1) <= s.tail_delta(e));
            prop_assert!(s.epsilon_for_delta(1e-4).0 <= s.epsilon_for_delta(1e-6).0);
        }
    }
}
