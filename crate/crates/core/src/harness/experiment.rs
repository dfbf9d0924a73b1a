use std::sync::Arc;

use rayon::prelude::*;

use super::config::{ExperimentConfig, PrivacyPoint};
use super::csv::{ResultRow, RowStatus};
use super::oracle::{oracle_for_setting, oracle_warnings, resolve_setting, OracleCache, Setting};
use super::seeds;
use crate::diagnostics::{estimate_rate, saddle_spectrum};
use crate::env::generate_dataset;
use crate::error::{Error, Result};
use crate::gpope::{evenly_spaced_checkpoints, gpope_run_observed, EvalProblem, RunSettings};
use crate::ope::{solve_fixed_point, MspbeEvaluator, SaddleIterate, StatTriple};
use crate::privacy::{audit_run, calibrate_sigma, PrivacyBudget};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "GPOPE_WORKERS";

/// Runs exceeding this clipped fraction trigger a warning.
pub const CLIP_WARN_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub m: usize,
    pub epsilon: f64,
    pub schedule: &'static str,
    pub multiplier: f64,
    pub median_final_mspbe: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    /// Sorted by (m, privacy setting, schedule, multiplier, trial, iteration).
    pub rows: Vec<ResultRow>,
    pub warnings: Vec<String>,
    /// Best multiplier per (m, privacy, schedule); public configs only.
    pub tuning: Vec<TuningResult>,
}

/// Everything shared by the runs of one config.
pub struct Prepared {
    pub setting: Setting,
    pub oracle: Arc<StatTriple>,
    pub evaluator: MspbeEvaluator,
    pub fixed_point: Option<SaddleIterate>,
    pub rate: f64,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let setting = resolve_setting(config)?;
    let oracle = oracle_for_setting(config, &setting, OracleCache::global())?;
    let evaluator = MspbeEvaluator::new(oracle.as_ref().clone())?;
    let fixed_point = solve_fixed_point(&oracle).ok();
    let rate = config.schedule.rate.unwrap_or_else(|| estimate_rate(&oracle));
    Ok(Prepared {
        setting,
        oracle,
        evaluator,
        fixed_point,
        rate,
    })
}

/// Runs `f` on a pool sized by [`WORKERS_ENV`] when set.
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let n: usize = v
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

/// Noise level and row labels of one privacy setting at one m.
#[derive(Debug, Clone, Copy)]
struct NoisePlan {
    sigma: Option<f64>,
    epsilon: f64,
    delta: f64,
    infeasible: bool,
}

fn plan_noise(point: PrivacyPoint, m: usize, n: usize, config: &ExperimentConfig) -> Result<NoisePlan> {
    match point {
        PrivacyPoint::NoiseFree => Ok(NoisePlan {
            sigma: None,
            epsilon: f64::INFINITY,
            delta: 0.0,
            infeasible: false,
        }),
        PrivacyPoint::Explicit { sigma } => {
            let budget = PrivacyBudget::new(1.0, config.privacy.delta)?;
            let audit = audit_run(sigma, m as u64, n as u64, budget)?;
            Ok(NoisePlan {
                sigma: Some(sigma),
                epsilon: audit.epsilon,
                delta: config.privacy.delta,
                infeasible: false,
            })
        }
        PrivacyPoint::Budget { epsilon, delta } => {
            let budget = PrivacyBudget::new(epsilon, delta)?;
            match calibrate_sigma(budget, m as u64, n as u64) {
                Ok(cal) => {
                    let audit = audit_run(cal.sigma, m as u64, n as u64, budget)?;
                    if !audit.pass {
                        return Err(Error::Infeasible(format!(
                            "calibrated σ = {} fails its audit (ε = {})",
                            cal.sigma, audit.epsilon
                        )));
                    }
                    Ok(NoisePlan {
                        sigma: Some(cal.sigma),
                        epsilon,
                        delta,
                        infeasible: false,
                    })
                }
                Err(Error::Infeasible(_)) => Ok(NoisePlan {
                    sigma: None,
                    epsilon,
                    delta,
                    infeasible: true,
                }),
                Err(e) => Err(e),
            }
        }
    }
}

/// One (m, trial) dataset and every run on it.
struct Job {
    m_index: usize,
    trial: usize,
}

struct RunOutcome {
    rows: Vec<ResultRow>,
    clipped_frac: f64,
}

/// Runs every (m, privacy, schedule, trial) combination of the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_grid(config, &[1.0])
}

/// Replicates [`run_experiment`] with every step size scaled by each
/// multiplier. On public configs the best multiplier is reported.
pub fn step_size_sensitivity(config: &ExperimentConfig, multipliers: &[f64]) -> Result<ExperimentOutput> {
    if multipliers.is_empty() || multipliers.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::Config("multipliers must be positive".into()));
    }
    let mut out = run_grid(config, multipliers)?;
    if config.public {
        out.tuning = best_multipliers(&out.rows, config.run.iterations);
    } else {
        out.warnings.push(
            "step-size tuning results are only reported for public configs; set public = true on a config with fresh data"
                .into(),
        );
    }
    Ok(out)
}

fn run_grid(config: &ExperimentConfig, multipliers: &[f64]) -> Result<ExperimentOutput> {
    config.validate()?;
    let prepared = prepare(config)?;
    let mut warnings = oracle_warnings(config);
    if prepared.fixed_point.is_none() {
        warnings.push("oracle statistics have no unique fixed point; xi_norm_sq left empty".into());
    }
    let n = config.run.iterations;
    warnings.extend(step_warnings(config, &prepared, multipliers));
    let points = config.privacy.points();
    let plans: Vec<Vec<NoisePlan>> = config
        .run
        .m
        .iter()
        .map(|&m| points.iter().map(|&p| plan_noise(p, m, n, config)).collect())
        .collect::<Result<_>>()?;
    for (i, &m) in config.run.m.iter().enumerate() {
        for p in &plans[i] {
            if p.infeasible {
                warnings.push(format!("ε = {} is infeasible at m = {m}, N = {n}", p.epsilon));
            }
        }
    }

    let jobs: Vec<Job> = (0..config.run.m.len())
        .flat_map(|m_index| (0..config.run.trials).map(move |trial| Job { m_index, trial }))
        .collect();
    let results: Vec<Result<Vec<Vec<RunOutcome>>>> = with_workers(|| {
        jobs.par_iter()
            .map(|job| run_job(config, &prepared, &plans[job.m_index], multipliers, job))
            .collect()
    })?;

    // Reorder from (m, trial, combo) to (m, combo, trial).
    let combos = points.len() * config.schedule.kinds.len() * multipliers.len();
    let mut per_m: Vec<Vec<Vec<RunOutcome>>> = (0..config.run.m.len()).map(|_| Vec::new()).collect();
    for (job, res) in jobs.iter().zip(results) {
        per_m[job.m_index].push(res?.into_iter().flatten().collect());
    }
    let mut rows = Vec::new();
    let mut heavy_clipping = 0usize;
    let mut total_runs = 0usize;
    for trials in per_m.iter_mut() {
        let mut by_trial: Vec<std::vec::IntoIter<RunOutcome>> =
            trials.drain(..).map(|v: Vec<RunOutcome>| v.into_iter()).collect();
        for _ in 0..combos {
            for it in by_trial.iter_mut() {
                let outcome = it.next().expect("one outcome per combination");
                total_runs += 1;
                if outcome.clipped_frac > CLIP_WARN_FRACTION {
                    heavy_clipping += 1;
                }
                rows.extend(outcome.rows);
            }
        }
    }
    if heavy_clipping > 0 {
        warnings.push(format!(
            "{heavy_clipping} of {total_runs} runs clipped more than {}% of their gradients; consider rescaling features",
            CLIP_WARN_FRACTION * 100.0
        ));
    }
    Ok(ExperimentOutput {
        rows,
        warnings,
        tuning: Vec::new(),
    })
}

/// Flags schedules whose first step exceeds the stability limit of the
/// oracle saddle matrix.
fn step_warnings(config: &ExperimentConfig, prepared: &Prepared, multipliers: &[f64]) -> Vec<String> {
    let Ok(spectrum) = saddle_spectrum(&prepared.oracle) else {
        return Vec::new();
    };
    let limit = spectrum.max_stable_step();
    let top = multipliers.iter().copied().fold(0.0, f64::max);
    config
        .schedule
        .kinds
        .iter()
        .filter_map(|kind| {
            let beta = config.schedule.build(*kind, prepared.rate).scaled(top).step(1, config.run.iterations);
            (beta > limit).then(|| {
                format!(
                    "{} schedule starts at β = {beta:.3e}, above the stability limit {limit:.3e}; lower eta or raise schedule.rate",
                    kind.id()
                )
            })
        })
        .collect()
}

/// Outcomes indexed as [privacy][schedule × multiplier].
fn run_job(
    config: &ExperimentConfig,
    prepared: &Prepared,
    plans: &[NoisePlan],
    multipliers: &[f64],
    job: &Job,
) -> Result<Vec<Vec<RunOutcome>>> {
    let m = config.run.m[job.m_index];
    let n = config.run.iterations;
    let s = &prepared.setting;
    let data = generate_dataset(
        &s.env,
        &s.behavior,
        m,
        seeds::data(config.seed, config.public, m, job.trial),
    )?;
    let problem = EvalProblem {
        dataset: &data,
        features: &s.features,
        target: &s.target,
        behavior: &s.behavior,
        gamma: s.env.gamma,
    };
    let checkpoints = if config.run.full_history {
        (1..=n).collect()
    } else {
        evenly_spaced_checkpoints(n, config.run.checkpoints)
    };
    plans
        .iter()
        .enumerate()
        .map(|(p_index, plan)| {
            let mut out = Vec::new();
            for (k_index, kind) in config.schedule.kinds.iter().enumerate() {
                let seed = seeds::run(config.seed, config.public, m, p_index, k_index, job.trial);
                for &mult in multipliers {
                    let label = RowLabel {
                        trial: job.trial,
                        m,
                        plan: *plan,
                        schedule: kind.id(),
                        step_mult: mult,
                    };
                    if plan.infeasible {
                        out.push(RunOutcome {
                            rows: vec![label.row(0, f64::NAN, None, 0.0, RowStatus::Infeasible)],
                            clipped_frac: 0.0,
                        });
                        continue;
                    }
                    let settings = RunSettings {
                        init: None,
                        schedule: config.schedule.build(*kind, prepared.rate).scaled(mult),
                        noise: config.privacy.noise(plan.sigma),
                        iterations: n,
                        seed,
                        checkpoints: checkpoints.clone(),
                    };
                    out.push(single_run(&problem, &settings, prepared, &label)?);
                }
            }
            Ok(out)
        })
        .collect()
}

struct RowLabel {
    trial: usize,
    m: usize,
    plan: NoisePlan,
    schedule: &'static str,
    step_mult: f64,
}

impl RowLabel {
    fn row(&self, iteration: usize, mspbe: f64, xi: Option<f64>, clipped: f64, status: RowStatus) -> ResultRow {
        ResultRow {
            trial: self.trial,
            m: self.m,
            epsilon: self.plan.epsilon,
            delta: self.plan.delta,
            sigma: self.plan.sigma.unwrap_or(0.0),
            schedule: self.schedule,
            step_mult: self.step_mult,
            iteration,
            mspbe,
            xi_norm_sq: xi,
            clipped_frac: clipped,
            status,
        }
    }
}

fn single_run(
    problem: &EvalProblem<'_>,
    settings: &RunSettings,
    prepared: &Prepared,
    label: &RowLabel,
) -> Result<RunOutcome> {
    let record = gpope_run_observed(problem, settings, |_| {})?;
    let clipped = record.clipped_fraction;
    let mut rows: Vec<ResultRow> = record
        .history
        .iter()
        .map(|(i, it)| {
            let xi = prepared.fixed_point.as_ref().map(|fp| it.residual_norm_sq(fp));
            label.row(*i, prepared.evaluator.eval(&it.theta), xi, clipped, RowStatus::Ok)
        })
        .collect();
    if let Some(d) = record.diverged_at {
        let xi = prepared.fixed_point.as_ref().map(|_| f64::NAN);
        for &c in settings.checkpoints.iter().filter(|&&c| c >= d) {
            rows.push(label.row(c, f64::NAN, xi, clipped, RowStatus::Diverged));
        }
    }
    Ok(RunOutcome {
        rows,
        clipped_frac: clipped,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

type GroupKey = (usize, f64, &'static str, f64);

/// Median over trials of the final-iteration MSPBE, per group of
/// (m, epsilon, schedule, step_mult). Diverged runs count as +∞.
pub fn final_medians(rows: &[ResultRow], iterations: usize) -> Vec<(usize, f64, &'static str, f64, f64)> {
    let mut groups: Vec<(GroupKey, Vec<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.iteration == iterations) {
        let key = (r.m, r.epsilon, r.schedule, r.step_mult);
        let value = if r.status == RowStatus::Ok {
            r.mspbe
        } else {
            f64::INFINITY
        };
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(value),
            None => groups.push((key, vec![value])),
        }
    }
    groups
        .into_iter()
        .map(|((m, e, s, k), v)| (m, e, s, k, median(v)))
        .collect()
}

fn best_multipliers(rows: &[ResultRow], iterations: usize) -> Vec<TuningResult> {
    let mut best: Vec<TuningResult> = Vec::new();
    for (m, epsilon, schedule, multiplier, med) in final_medians(rows, iterations) {
        match best
            .iter_mut()
            .find(|b| b.m == m && b.epsilon == epsilon && b.schedule == schedule)
        {
            Some(b) if med < b.median_final_mspbe => {
                b.multiplier = multiplier;
                b.median_final_mspbe = med;
            }
            Some(_) => {}
            None => best.push(TuningResult {
                m,
                epsilon,
                schedule,
                multiplier,
                median_final_mspbe: med,
            }),
        }
    }
    best
}
