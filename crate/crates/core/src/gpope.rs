//! Gradient-perturbed off-policy evaluation.
//!
//! Each iteration samples one trajectory uniformly (with replacement),
//! builds its statistics from all of its transitions, forms the stacked
//! primal-dual gradient, clips it to L2 norm `h`, adds `h·N(0, σ²I)` noise
//! and takes a step `[θ; w] ← [θ; w] − β_i·g̃`.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::env::{FeatureMap, Policy, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::ope::{estimate_stats, primal_dual_gradient, GradientVector, SaddleIterate, StatTriple};
use crate::seed::{rng_from_seed, rng_stream, Rng};

/// Iterates whose stacked norm exceeds this are treated as diverged.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// L2 clipping bound h; `f64::INFINITY` disables clipping.
    pub clip_bound: f64,
    /// Noise scale in units of `clip_bound`.
    pub sigma: f64,
    pub noise_enabled: bool,
}

impl NoiseConfig {
    /// No clipping, no noise: plain trajectory-sampled GTD2.
    pub fn disabled() -> Self {
        Self {
            clip_bound: f64::INFINITY,
            sigma: 0.0,
            noise_enabled: false,
        }
    }

    pub fn private(clip_bound: f64, sigma: f64) -> Self {
        Self {
            clip_bound,
            sigma,
            noise_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_bound > 0.0) {
            return Err(invalid(format!("clip bound must be positive, got {}", self.clip_bound)));
        }
        if self.noise_enabled && !(self.sigma > 0.0 && self.clip_bound.is_finite()) {
            return Err(invalid("noise needs σ > 0 and a finite clip bound"));
        }
        Ok(())
    }

    /// Per-coordinate standard deviation of the added noise, h·σ.
    pub fn noise_std(&self) -> f64 {
        if self.noise_enabled {
            self.clip_bound * self.sigma
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// β_i = η / N^k for every i.
    Constant { eta: f64, k: f64 },
    /// β_i = η / (rate · i), with `rate` standing in for λ_min(Q).
    Diminishing { eta: f64, rate: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant { eta, k } => {
                if !(eta > 0.0) {
                    return Err(invalid(format!("η must be positive, got {eta}")));
                }
                if !(k > 0.0 && k < 1.0) {
                    return Err(invalid(format!("k must lie in (0, 1), got {k}")));
                }
            }
            StepSchedule::Diminishing { eta, rate } => {
                if !(eta > 0.0) {
                    return Err(invalid(format!("η must be positive, got {eta}")));
                }
                if !(rate > 0.0) {
                    return Err(invalid(format!("rate must be positive, got {rate}")));
                }
            }
        }
        Ok(())
    }

    /// β_i for the 1-based iteration `i` of an `n`-iteration run.
    pub fn step(&self, i: usize, n: usize) -> f64 {
        match *self {
            StepSchedule::Constant { eta, k } => eta / (n as f64).powf(k),
            StepSchedule::Diminishing { eta, rate } => eta / (rate * i as f64),
        }
    }

    /// Same shape with every β multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            StepSchedule::Constant { eta, k } => StepSchedule::Constant { eta: eta * factor, k },
            StepSchedule::Diminishing { eta, rate } => StepSchedule::Diminishing {
                eta: eta * factor,
                rate,
            },
        }
    }
}

/// β_1, …, β_N.
pub fn make_schedule(spec: &StepSchedule, n: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    Ok((1..=n).map(|i| spec.step(i, n)).collect())
}

/// Rescales `g` to L2 norm at most `h`, leaving it untouched when already
/// within the bound.
pub fn clip_gradient(g: &GradientVector, h: f64) -> GradientVector {
    let norm = g.norm();
    if norm <= h {
        return g.clone();
    }
    let divisor = norm / h;
    GradientVector(g.0.map(|x| x / divisor))
}

/// Adds `h·ζ` with ζ ~ N(0, σ²I).
pub fn perturb_gradient(g: &GradientVector, h: f64, sigma: f64, rng: &mut Rng) -> GradientVector {
    let scale = h * sigma;
    GradientVector(g.0.map(|x| {
        let z: f64 = rng.sample(StandardNormal);
        x + scale * z
    }))
}

/// The data and evaluation setting a run operates on.
#[derive(Debug, Clone, Copy)]
pub struct EvalProblem<'a> {
    pub dataset: &'a [Trajectory],
    pub features: &'a FeatureMap,
    pub target: &'a Policy,
    pub behavior: &'a Policy,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    /// Defaults to (0, 0).
    pub init: Option<SaddleIterate>,
    pub schedule: StepSchedule,
    pub noise: NoiseConfig,
    pub iterations: usize,
    pub seed: u64,
    /// Iterations after which the iterate is recorded.
    pub checkpoints: Vec<usize>,
}

/// `count` evenly spaced checkpoints ending at `n`.
pub fn evenly_spaced_checkpoints(n: usize, count: usize) -> Vec<usize> {
    let count = count.max(1);
    let mut out: Vec<usize> = (1..=count).map(|k| k * n / count).filter(|&i| i > 0).collect();
    out.dedup();
    if out.last() != Some(&n) {
        out.push(n);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// (iteration, iterate after that iteration), strictly increasing.
    pub history: Vec<(usize, SaddleIterate)>,
    /// Fraction of iterations whose gradient was clipped.
    pub clipped_fraction: f64,
    pub seed: u64,
    pub final_iterate: SaddleIterate,
    /// Iteration at which the iterate diverged, if it did.
    pub diverged_at: Option<usize>,
}

/// Everything computed in one iteration, handed to run observers.
pub struct StepInfo<'a> {
    pub iteration: usize,
    pub trajectory: usize,
    pub beta: f64,
    pub iterate: &'a SaddleIterate,
    pub stats: &'a StatTriple,
    pub raw: &'a GradientVector,
    pub clipped: &'a GradientVector,
    pub perturbed: &'a GradientVector,
}

/// Runs the private saddle-point iteration. Divergence is an error.
pub fn gpope_run(problem: &EvalProblem<'_>, settings: &RunSettings) -> Result<RunRecord> {
    let record = gpope_run_observed(problem, settings, |_| {})?;
    match record.diverged_at {
        Some(iteration) => Err(Error::Diverged { iteration }),
        None => Ok(record),
    }
}

/// As [`gpope_run`], calling `observe` after every iteration. A diverged run
/// stops early and is reported through `RunRecord::diverged_at`.
pub fn gpope_run_observed<F>(problem: &EvalProblem<'_>, settings: &RunSettings, mut observe: F) -> Result<RunRecord>
where
    F: FnMut(&StepInfo<'_>),
{
    let m = problem.dataset.len();
    if m == 0 {
        return Err(invalid("dataset must contain at least one trajectory"));
    }
    if settings.iterations == 0 {
        return Err(invalid("need at least one iteration"));
    }
    settings.schedule.validate()?;
    settings.noise.validate()?;
    let n = problem.features.dim();
    let mut iterate = settings.init.clone().unwrap_or_else(|| SaddleIterate::zeros(n));
    if iterate.dim() != n || iterate.w.len() != n {
        return Err(invalid(format!("initial iterate must have dimension {n}")));
    }

    // Separate streams keep the sampled trajectory sequence identical with
    // and without noise.
    let mut sampler = rng_from_seed(settings.seed);
    let mut noise_rng = rng_stream(settings.seed, 1);
    let h = settings.noise.clip_bound;
    let mut checkpoints = settings.checkpoints.iter().copied().filter(|&c| c >= 1).peekable();
    let mut history = Vec::new();
    let mut clipped_count = 0usize;
    let mut diverged_at = None;
    let mut done = 0usize;

    for i in 1..=settings.iterations {
        let idx = sampler.gen_range(0..m);
        let stats = estimate_stats(
            &problem.dataset[idx],
            problem.features,
            problem.target,
            problem.behavior,
            problem.gamma,
        )?;
        let raw = primal_dual_gradient(&iterate, &stats)?;
        let clipped = clip_gradient(&raw, h);
        if raw.norm() > h {
            clipped_count += 1;
        }
        debug_assert!(clipped.norm() <= h * (1.0 + 1e-12));
        let perturbed = if settings.noise.noise_enabled {
            perturb_gradient(&clipped, h, settings.noise.sigma, &mut noise_rng)
        } else {
            clipped.clone()
        };
        let beta = settings.schedule.step(i, settings.iterations);
        let next = iterate.descend(beta, &perturbed);
        observe(&StepInfo {
            iteration: i,
            trajectory: idx,
            beta,
            iterate: &iterate,
            stats: &stats,
            raw: &raw,
            clipped: &clipped,
            perturbed: &perturbed,
        });
        iterate = next;
        done = i;
        if !iterate.is_finite() || iterate.norm_squared().sqrt() > DIVERGENCE_NORM {
            diverged_at = Some(i);
            break;
        }
        while checkpoints.peek().is_some_and(|&c| c <= i) {
            let c = checkpoints.next().unwrap();
            if c == i {
                history.push((i, iterate.clone()));
            }
        }
    }

    Ok(RunRecord {
        history,
        clipped_fraction: clipped_count as f64 / done as f64,
        seed: settings.seed,
        final_iterate: iterate,
        diverged_at,
    })
}
