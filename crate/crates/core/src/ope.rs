//! Non-private policy-evaluation math: per-trajectory statistics, the
//! primal-dual gradient of the saddle objective, GTD2 updates, exact fixed
//! points, MSPBE and LSTD.
//!
//! The saddle objective is `L(θ, w) = wᵀ(b − Aθ) − ½‖w‖²_C` with
//!
//! ```text
//! A = E[(1/τ) Σ ρ_t φ_t (φ_t − γ φ_{t+1})ᵀ]
//! b = E[(1/τ) Σ ρ_t φ_t R_t]
//! C = E[(1/τ) Σ φ_t φ_tᵀ]
//! ```
//!
//! where `φ_{t+1}` is zero after a terminal transition and τ counts the
//! transitions actually present in the trajectory.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::env::{
    generate_trajectory, importance_ratio, EnvKind, EnvSpec, FeatureMap, Policy, SparseFeatures, State, Trajectory,
};
use crate::error::{invalid, Error, Result};
use crate::seed::derive_seed;

/// Linear solves refuse matrices whose condition number exceeds this.
pub const MAX_CONDITION: f64 = 1e12;

/// Estimates (or exact values) of A, b and C.
#[derive(Debug, Clone, PartialEq)]
pub struct StatTriple {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
}

impl StatTriple {
    pub fn zeros(n: usize) -> Self {
        Self {
            a: DMatrix::zeros(n, n),
            b: DVector::zeros(n),
            c: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.dim();
        if self.a.shape() != (n, n) || self.c.shape() != (n, n) {
            return Err(invalid(format!(
                "stat triple shapes disagree: A {:?}, b {n}, C {:?}",
                self.a.shape(),
                self.c.shape()
            )));
        }
        Ok(())
    }

    fn add_assign(&mut self, other: &StatTriple) {
        self.a += &other.a;
        self.b += &other.b;
        self.c += &other.c;
    }

    fn scale(&mut self, s: f64) {
        self.a *= s;
        self.b *= s;
        self.c *= s;
    }

    /// The saddle matrix `Q = [[0, −Aᵀ], [A, C]]`.
    pub fn saddle_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut q = DMatrix::zeros(2 * n, 2 * n);
        q.view_mut((0, n), (n, n)).copy_from(&(-self.a.transpose()));
        q.view_mut((n, 0), (n, n)).copy_from(&self.a);
        q.view_mut((n, n), (n, n)).copy_from(&self.c);
        q
    }
}

/// Stacked primal/dual parameters (θ, w).
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleIterate {
    pub theta: DVector<f64>,
    pub w: DVector<f64>,
}

impl SaddleIterate {
    pub fn zeros(n: usize) -> Self {
        Self {
            theta: DVector::zeros(n),
            w: DVector::zeros(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn stacked(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_iterator(2 * n, self.theta.iter().chain(self.w.iter()).copied())
    }

    pub fn from_stacked(v: &DVector<f64>) -> Result<Self> {
        if !v.len().is_multiple_of(2) {
            return Err(invalid("stacked iterate must have even length"));
        }
        let n = v.len() / 2;
        Ok(Self {
            theta: v.rows(0, n).into_owned(),
            w: v.rows(n, n).into_owned(),
        })
    }

    pub fn norm_squared(&self) -> f64 {
        self.theta.norm_squared() + self.w.norm_squared()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(self.w.iter()).all(|x| x.is_finite())
    }

    /// `[θ; w] − β g`. The single place the saddle update is applied.
    pub fn descend(&self, beta: f64, g: &GradientVector) -> SaddleIterate {
        let n = self.dim();
        let (gp, gd) = (g.0.rows(0, n), g.0.rows(n, n));
        SaddleIterate {
            theta: DVector::from_iterator(n, self.theta.iter().zip(gp.iter()).map(|(x, d)| x - beta * d)),
            w: DVector::from_iterator(n, self.w.iter().zip(gd.iter()).map(|(x, d)| x - beta * d)),
        }
    }

    /// ‖(θ, w) − (θ*, w*)‖².
    pub fn residual_norm_sq(&self, opt: &SaddleIterate) -> f64 {
        (&self.theta - &opt.theta).norm_squared() + (&self.w - &opt.w).norm_squared()
    }
}

/// Primal gradient stacked over the negative dual gradient, length 2n.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub DVector<f64>);

impl GradientVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Per-trajectory estimates Â, b̂, Ĉ from every transition of `traj`.
pub fn estimate_stats(
    traj: &Trajectory,
    features: &FeatureMap,
    target: &Policy,
    behavior: &Policy,
    gamma: f64,
) -> Result<StatTriple> {
    let n = features.dim();
    let mut out = StatTriple::zeros(n);
    let mut phi = SparseFeatures::default();
    let mut phi_next = SparseFeatures::default();
    let mut cached: Option<State> = None;

    for tr in traj.transitions() {
        if cached != Some(tr.state) {
            features.features_into(&tr.state, &mut phi)?;
        }
        if tr.is_terminal {
            phi_next.clear();
        } else {
            features.features_into(&tr.next_state, &mut phi_next)?;
        }
        let rho = importance_ratio(target, behavior, &tr.state, tr.action)?;
        for &(i, x) in &phi.entries {
            for &(j, y) in &phi.entries {
                let xy = x * y;
                out.c[(i, j)] += xy;
                out.a[(i, j)] += rho * xy;
            }
            for &(j, y) in &phi_next.entries {
                out.a[(i, j)] -= rho * gamma * x * y;
            }
            out.b[i] += rho * x * tr.reward;
        }
        if tr.is_terminal {
            cached = None;
        } else {
            std::mem::swap(&mut phi, &mut phi_next);
            cached = Some(tr.next_state);
        }
    }
    out.scale(1.0 / traj.len() as f64);
    Ok(out)
}

/// Equal-weight mean of per-trajectory statistics. Chunked so the floating
/// point summation order is independent of thread scheduling.
pub fn mean_stats(
    dataset: &[Trajectory],
    features: &FeatureMap,
    target: &Policy,
    behavior: &Policy,
    gamma: f64,
) -> Result<StatTriple> {
    if dataset.is_empty() {
        return Err(invalid("cannot average statistics over an empty dataset"));
    }
    let partials: Vec<StatTriple> = dataset
        .par_chunks(STAT_CHUNK)
        .map(|chunk| {
            let mut acc = StatTriple::zeros(features.dim());
            for t in chunk {
                acc.add_assign(&estimate_stats(t, features, target, behavior, gamma)?);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(finish_mean(partials, dataset.len(), features.dim()))
}

const STAT_CHUNK: usize = 256;

fn finish_mean(partials: Vec<StatTriple>, count: usize, n: usize) -> StatTriple {
    let mut total = StatTriple::zeros(n);
    for p in &partials {
        total.add_assign(p);
    }
    total.scale(1.0 / count as f64);
    total
}

/// How the expectations behind A, b and C are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleMode {
    /// Exact dynamic-programming enumeration (chain only).
    Analytic,
    /// Mean of per-trajectory estimates over `size` fresh trajectories.
    MonteCarlo { size: usize, seed: u64 },
}

/// Exact (or Monte Carlo) A, b and C under the behavior policy.
pub fn exact_stats(
    env: &EnvSpec,
    features: &FeatureMap,
    target: &Policy,
    behavior: &Policy,
    mode: OracleMode,
) -> Result<StatTriple> {
    env.validate()?;
    match mode {
        OracleMode::Analytic => match &env.kind {
            EnvKind::Chain(cfg) => chain_exact_stats(
                cfg.num_states,
                cfg.stay_prob,
                env.max_episode_len,
                env.gamma,
                features,
                target,
                behavior,
            ),
            EnvKind::MountainCar => Err(Error::Unsupported(
                "analytic statistics need a finite known transition model (chain only)".into(),
            )),
        },
        OracleMode::MonteCarlo { size, seed } => {
            if size == 0 {
                return Err(invalid("Monte Carlo oracle needs at least one trajectory"));
            }
            let n = features.dim();
            let chunks: Vec<(u64, u64)> = (0..size as u64)
                .step_by(STAT_CHUNK)
                .map(|lo| (lo, (lo + STAT_CHUNK as u64).min(size as u64)))
                .collect();
            let partials: Vec<StatTriple> = chunks
                .par_iter()
                .map(|&(lo, hi)| {
                    let mut acc = StatTriple::zeros(n);
                    for i in lo..hi {
                        let traj = generate_trajectory(env, behavior, derive_seed(seed, &[i]))?;
                        acc.add_assign(&estimate_stats(&traj, features, target, behavior, env.gamma)?);
                    }
                    Ok(acc)
                })
                .collect::<Result<_>>()?;
            Ok(finish_mean(partials, size, n))
        }
    }
}

/// Enumerates the chain's trajectory distribution exactly, including the
/// per-trajectory 1/τ weighting and truncation at `max_len`.
///
/// `tail[t][s]` holds E[1/τ | the t-th transition arrived in state s]; a
/// forward pass over the surviving mass then weights every (s → s')
/// transition by P(reach s at step t) · P(s → s') · tail[t + 1][s'].
fn chain_exact_stats(
    num_states: usize,
    stay: f64,
    max_len: usize,
    gamma: f64,
    features: &FeatureMap,
    target: &Policy,
    behavior: &Policy,
) -> Result<StatTriple> {
    let last = num_states;
    let width = num_states + 2;
    let mut tail = vec![0.0f64; (max_len + 1) * width];
    for t in (1..=max_len).rev() {
        for s in 1..=last {
            tail[t * width + s] = if s == last {
                1.0 / t as f64
            } else if t == max_len {
                1.0 / max_len as f64
            } else {
                stay * tail[(t + 1) * width + s] + (1.0 - stay) * tail[(t + 1) * width + s + 1]
            };
        }
    }

    // weight[s][0] for s → s, weight[s][1] for s → s + 1
    let mut weight = vec![[0.0f64; 2]; width];
    let mut alive = vec![0.0f64; width];
    for a in alive.iter_mut().take(last).skip(1) {
        *a = 1.0 / num_states as f64;
    }
    for t in 0..max_len {
        let mut next = vec![0.0f64; width];
        for s in 1..last {
            let mass = alive[s];
            if mass == 0.0 {
                continue;
            }
            weight[s][0] += mass * stay * tail[(t + 1) * width + s];
            weight[s][1] += mass * (1.0 - stay) * tail[(t + 1) * width + s + 1];
            next[s] += mass * stay;
            if s + 1 < last {
                next[s + 1] += mass * (1.0 - stay);
            }
        }
        alive = next;
    }

    let n = features.dim();
    let mut out = StatTriple::zeros(n);
    let mut add = |s: usize, s2: usize, w: f64, reward: f64, terminal: bool| -> Result<()> {
        if w == 0.0 {
            return Ok(());
        }
        let phi = features.features(&State::Chain(s))?;
        let phi_next = if terminal {
            DVector::zeros(n)
        } else {
            features.features(&State::Chain(s2))?
        };
        let rho = importance_ratio(target, behavior, &State::Chain(s), 0)?;
        out.a += (w * rho) * &phi * (&phi - gamma * &phi_next).transpose();
        out.b += (w * rho * reward) * &phi;
        out.c += w * &phi * phi.transpose();
        Ok(())
    };
    #[allow(clippy::needless_range_loop)]
    for s in 1..last {
        add(s, s, weight[s][0], 0.0, false)?;
        let entering = s + 1 == last;
        add(s, s + 1, weight[s][1], if entering { 1.0 } else { 0.0 }, entering)?;
    }
    // Episodes that start on the absorbing state: one terminal transition, τ = 1.
    add(last, last, 1.0 / num_states as f64, 1.0, true)?;
    Ok(out)
}

/// Stacked gradient `[[0, −Âᵀ], [Â, Ĉ]]·[θ; w] − [0; b̂]`.
pub fn primal_dual_gradient(iterate: &SaddleIterate, stats: &StatTriple) -> Result<GradientVector> {
    stats.check()?;
    let n = stats.dim();
    if iterate.theta.len() != n || iterate.w.len() != n {
        return Err(invalid(format!(
            "iterate has dims ({}, {}), statistics have dim {n}",
            iterate.theta.len(),
            iterate.w.len()
        )));
    }
    let primal = -stats.a.tr_mul(&iterate.w);
    let dual = &stats.a * &iterate.theta + &stats.c * &iterate.w - &stats.b;
    Ok(GradientVector(DVector::from_iterator(
        2 * n,
        primal.iter().chain(dual.iter()).copied(),
    )))
}

/// One GTD2 update: `θ' = θ + βÂᵀw`, `w' = w + β(b̂ − Âθ − Ĉw)`, computed as
/// `[θ; w] − β·primal_dual_gradient`.
pub fn gtd2_step(iterate: &SaddleIterate, stats: &StatTriple, beta: f64) -> Result<SaddleIterate> {
    if !(beta > 0.0) {
        return Err(invalid(format!("step size must be positive, got {beta}")));
    }
    let g = primal_dual_gradient(iterate, stats)?;
    Ok(iterate.descend(beta, &g))
}

/// Ratio of extreme singular values; infinite for singular matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

fn checked_lu(m: &DMatrix<f64>, what: &'static str) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::Singular { what, condition });
    }
    Ok(m.clone().lu())
}

fn solve_refined(
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    what: &'static str,
) -> Result<DVector<f64>> {
    let mut x = lu.solve(rhs).ok_or(Error::Singular {
        what,
        condition: f64::INFINITY,
    })?;
    // one round of iterative refinement
    if let Some(dx) = lu.solve(&(rhs - m * &x)) {
        x += dx;
    }
    Ok(x)
}

/// Projected fixed point `θ* = (AᵀC⁻¹A)⁻¹AᵀC⁻¹b` and its dual
/// `w* = C⁻¹(b − Aθ*)`, the unique zero of the primal-dual gradient.
pub fn solve_fixed_point(stats: &StatTriple) -> Result<SaddleIterate> {
    stats.check()?;
    let c_lu = checked_lu(&stats.c, "C")?;
    let c_inv_a = solve_mat(&c_lu, &stats.a, "C")?;
    let c_inv_b = solve_refined(&c_lu, &stats.c, &stats.b, "C")?;
    let normal = {
        let m = stats.a.tr_mul(&c_inv_a);
        (&m + m.transpose()) * 0.5
    };
    let normal_lu = checked_lu(&normal, "AᵀC⁻¹A")?;
    let theta = solve_refined(&normal_lu, &normal, &stats.a.tr_mul(&c_inv_b), "AᵀC⁻¹A")?;
    let w = solve_refined(&c_lu, &stats.c, &(&stats.b - &stats.a * &theta), "C")?;
    Ok(SaddleIterate { theta, w })
}

fn solve_mat(
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    rhs: &DMatrix<f64>,
    what: &'static str,
) -> Result<DMatrix<f64>> {
    lu.solve(rhs).ok_or(Error::Singular {
        what,
        condition: f64::INFINITY,
    })
}

/// Mean squared projected Bellman error `(b − Aθ)ᵀC⁻¹(b − Aθ)`.
pub fn mspbe(theta: &DVector<f64>, exact: &StatTriple) -> Result<f64> {
    exact.check()?;
    if theta.len() != exact.dim() {
        return Err(invalid(format!(
            "θ has dim {}, statistics have dim {}",
            theta.len(),
            exact.dim()
        )));
    }
    let lu = checked_lu(&exact.c, "C")?;
    let r = &exact.b - &exact.a * theta;
    let x = solve_refined(&lu, &exact.c, &r, "C")?;
    Ok(r.dot(&x).max(0.0))
}

/// Reusable MSPBE evaluator: factors C once.
pub struct MspbeEvaluator {
    stats: StatTriple,
    c_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl MspbeEvaluator {
    pub fn new(exact: StatTriple) -> Result<Self> {
        exact.check()?;
        let c_lu = checked_lu(&exact.c, "C")?;
        Ok(Self { stats: exact, c_lu })
    }

    pub fn stats(&self) -> &StatTriple {
        &self.stats
    }

    pub fn eval(&self, theta: &DVector<f64>) -> f64 {
        let r = &self.stats.b - &self.stats.a * theta;
        match solve_refined(&self.c_lu, &self.stats.c, &r, "C") {
            Ok(x) => r.dot(&x).max(0.0),
            Err(_) => f64::NAN,
        }
    }
}

/// LSTD: `θ = Ā⁻¹b̄` with Ā, b̄ the equal-weight mean of per-trajectory
/// statistics.
pub fn lstd_solve(
    dataset: &[Trajectory],
    features: &FeatureMap,
    target: &Policy,
    behavior: &Policy,
    gamma: f64,
) -> Result<DVector<f64>> {
    let pooled = mean_stats(dataset, features, target, behavior, gamma)?;
    let lu = checked_lu(&pooled.a, "pooled A")?;
    solve_refined(&lu, &pooled.a, &pooled.b, "pooled A")
}
