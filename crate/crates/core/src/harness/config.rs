use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{ChainConfig, EnvKind, EnvSpec, FeatureMap, LinearQPolicy, Policy, QPolicyMode};
use crate::error::{Error, Result};
use crate::gpope::{NoiseConfig, StepSchedule};
use crate::ope::OracleMode;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// A complete experiment description, read from a sectioned TOML file.
///
/// Only `output` and `env` are required; every other key has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Public configs draw fresh seeds and may be used to tune step sizes.
    #[serde(default)]
    pub public: bool,
    pub env: EnvConfig,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub privacy: PrivacyConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    Chain,
    MountainCar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvName,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub num_states: Option<usize>,
    #[serde(default)]
    pub stay_prob: Option<f64>,
    #[serde(default)]
    pub max_episode_len: Option<usize>,
}

impl EnvConfig {
    pub fn to_spec(&self) -> Result<EnvSpec> {
        let mut spec = match self.kind {
            EnvName::Chain => {
                let d = ChainConfig::default();
                let mut s = EnvSpec::chain();
                s.kind = EnvKind::Chain(ChainConfig {
                    num_states: self.num_states.unwrap_or(d.num_states),
                    stay_prob: self.stay_prob.unwrap_or(d.stay_prob),
                });
                s
            }
            EnvName::MountainCar => {
                if self.num_states.is_some() || self.stay_prob.is_some() {
                    return Err(config_err("num_states and stay_prob apply to the chain only"));
                }
                EnvSpec::mountain_car()
            }
        };
        if let Some(g) = self.gamma {
            spec.gamma = g;
        }
        if let Some(l) = self.max_episode_len {
            spec.max_episode_len = l;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    /// `tabular` or `fourier`; defaults to the environment's natural map.
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub order: Option<usize>,
}

pub const DEFAULT_FOURIER_ORDER: usize = 5;

impl FeatureConfig {
    pub fn to_map(&self, env: &EnvSpec) -> Result<FeatureMap> {
        let kind = self.kind.as_deref().unwrap_or(match env.kind {
            EnvKind::Chain(_) => "tabular",
            EnvKind::MountainCar => "fourier",
        });
        match (kind, &env.kind) {
            ("tabular", EnvKind::Chain(c)) => Ok(FeatureMap::tabular(c.num_states)),
            ("fourier", EnvKind::MountainCar) => Ok(FeatureMap::fourier(self.order.unwrap_or(DEFAULT_FOURIER_ORDER))),
            (k, _) => Err(config_err(format!("feature kind {k:?} does not fit this environment"))),
        }
    }
}

/// How a policy is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Uniform,
    Stationary {
        probs: Vec<f64>,
    },
    /// A linear Q policy saved by `train-policy`.
    File {
        path: PathBuf,
    },
    /// Trained on the fly with the `[training]` settings.
    Trained,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Defaults to uniform.
    #[serde(default)]
    pub target: Option<PolicySpec>,
    /// Defaults to uniform on the chain and a trained policy on mountain car.
    #[serde(default)]
    pub behavior: Option<PolicySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_epsilons")]
    pub epsilon: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Explicit noise scale; skips calibration.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default = "default_clip")]
    pub clip_bound: f64,
}

fn default_true() -> bool {
    true
}
fn default_epsilons() -> Vec<f64> {
    vec![0.1]
}
fn default_delta() -> f64 {
    1e-5
}
fn default_clip() -> f64 {
    1.0
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epsilon: default_epsilons(),
            delta: default_delta(),
            sigma: None,
            clip_bound: default_clip(),
        }
    }
}

/// One privacy setting of an experiment grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrivacyPoint {
    NoiseFree,
    Budget { epsilon: f64, delta: f64 },
    Explicit { sigma: f64 },
}

impl PrivacyConfig {
    pub fn points(&self) -> Vec<PrivacyPoint> {
        if !self.enabled {
            vec![PrivacyPoint::NoiseFree]
        } else if let Some(sigma) = self.sigma {
            vec![PrivacyPoint::Explicit { sigma }]
        } else {
            self.epsilon
                .iter()
                .map(|&epsilon| PrivacyPoint::Budget {
                    epsilon,
                    delta: self.delta,
                })
                .collect()
        }
    }

    /// Clipping is inert when privacy is off.
    pub fn noise(&self, sigma: Option<f64>) -> NoiseConfig {
        match sigma {
            Some(s) => NoiseConfig::private(self.clip_bound, s),
            None => NoiseConfig::disabled(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_m")]
    pub m: Vec<usize>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Number of evenly spaced MSPBE checkpoints.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Record every iteration instead of the checkpoint grid.
    #[serde(default)]
    pub full_history: bool,
}

fn default_m() -> Vec<usize> {
    vec![1_000, 3_000, 10_000, 30_000]
}
fn default_iterations() -> usize {
    100_000
}
fn default_trials() -> usize {
    1
}
fn default_checkpoints() -> usize {
    20
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: default_m(),
            iterations: default_iterations(),
            trials: default_trials(),
            checkpoints: default_checkpoints(),
            full_history: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Diminishing,
}

impl ScheduleKind {
    pub fn id(&self) -> &'static str {
        match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::Diminishing => "diminishing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_kinds")]
    pub kinds: Vec<ScheduleKind>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_k")]
    pub k: f64,
    /// Stand-in for λ_min(Q). Missing: estimated from the oracle statistics
    /// when possible, else 1.
    #[serde(default)]
    pub rate: Option<f64>,
    /// Constant-kind η; defaults to `eta`.
    #[serde(default)]
    pub constant_eta: Option<f64>,
    #[serde(default = "default_multipliers")]
    pub multipliers: Vec<f64>,
}

fn default_kinds() -> Vec<ScheduleKind> {
    vec![ScheduleKind::Diminishing]
}
fn default_eta() -> f64 {
    2.0
}
fn default_k() -> f64 {
    0.5
}
pub fn default_multipliers() -> Vec<f64> {
    vec![0.1, 0.3, 1.0, 3.0, 10.0]
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kinds: default_kinds(),
            eta: default_eta(),
            k: default_k(),
            rate: None,
            constant_eta: None,
            multipliers: default_multipliers(),
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self, kind: ScheduleKind, rate: f64) -> StepSchedule {
        match kind {
            ScheduleKind::Constant => StepSchedule::Constant {
                eta: self.constant_eta.unwrap_or(self.eta),
                k: self.k,
            },
            ScheduleKind::Diminishing => StepSchedule::Diminishing { eta: self.eta, rate },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Analytic on the chain, Monte Carlo otherwise.
    #[serde(default)]
    pub mode: Option<OracleKind>,
    #[serde(default)]
    pub size: Option<usize>,
    /// Defaults to a seed derived from the master seed.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Where `oracle` writes the statistics.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

pub const DEFAULT_ORACLE_SIZE: usize = 100_000;

impl OracleConfig {
    pub fn mode(&self, env: &EnvSpec, derived_seed: u64) -> OracleMode {
        let kind = self.mode.unwrap_or(match env.kind {
            EnvKind::Chain(_) => OracleKind::Analytic,
            EnvKind::MountainCar => OracleKind::MonteCarlo,
        });
        match kind {
            OracleKind::Analytic => OracleMode::Analytic,
            OracleKind::MonteCarlo => OracleMode::MonteCarlo {
                size: self.size.unwrap_or(DEFAULT_ORACLE_SIZE),
                seed: self.seed.unwrap_or(derived_seed),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_explore")]
    pub explore: f64,
    #[serde(default = "default_train_gamma")]
    pub gamma: f64,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_mode")]
    pub mode: QPolicyMode,
    #[serde(default = "default_train_len")]
    pub max_episode_len: usize,
    /// Where `train-policy` writes the policy file.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_episodes() -> usize {
    200
}
fn default_alpha() -> f64 {
    0.01
}
fn default_explore() -> f64 {
    0.1
}
fn default_train_gamma() -> f64 {
    1.0
}
fn default_order() -> usize {
    DEFAULT_FOURIER_ORDER
}
fn default_mode() -> QPolicyMode {
    QPolicyMode::Softmax { temperature: 10.0 }
}
fn default_train_len() -> usize {
    EnvSpec::MOUNTAIN_CAR_MAX_LEN
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            episodes: default_episodes(),
            alpha: default_alpha(),
            explore: default_explore(),
            gamma: default_train_gamma(),
            order: default_order(),
            mode: default_mode(),
            max_episode_len: default_train_len(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_text(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.output);
        for spec in [&mut self.policy.target, &mut self.policy.behavior]
            .into_iter()
            .flatten()
        {
            if let PolicySpec::File { path } = spec {
                fix(path);
            }
        }
        if let Some(p) = self.oracle.output.as_mut() {
            fix(p);
        }
        if let Some(p) = self.training.output.as_mut() {
            fix(p);
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.to_spec()?;
        let r = &self.run;
        if r.trials == 0 {
            return Err(config_err("trials must be at least 1"));
        }
        if r.m.is_empty() || r.m.contains(&0) {
            return Err(config_err("run.m must list dataset sizes of at least 1"));
        }
        if r.iterations == 0 {
            return Err(config_err("iterations must be at least 1"));
        }
        let p = &self.privacy;
        if p.enabled {
            if !(p.clip_bound > 0.0 && p.clip_bound.is_finite()) {
                return Err(config_err("clip_bound must be positive and finite"));
            }
            if let Some(s) = p.sigma {
                if !(s > 0.0) {
                    return Err(config_err("sigma must be positive"));
                }
            } else if p.epsilon.is_empty() || p.epsilon.iter().any(|e| !(*e > 0.0)) {
                return Err(config_err("privacy.epsilon must list positive values"));
            }
            if !(p.delta > 0.0 && p.delta < 1.0) {
                return Err(config_err("delta must lie in (0, 1)"));
            }
        }
        let s = &self.schedule;
        if s.kinds.is_empty() {
            return Err(config_err("schedule.kinds must not be empty"));
        }
        for kind in &s.kinds {
            s.build(*kind, s.rate.unwrap_or(1.0)).validate()?;
        }
        if s.multipliers.is_empty() || s.multipliers.iter().any(|m| !(*m > 0.0)) {
            return Err(config_err("schedule.multipliers must list positive values"));
        }
        if self.training.episodes == 0 {
            return Err(config_err("training.episodes must be at least 1"));
        }
        Ok(())
    }

    /// Loads or trains a policy as described by `spec`.
    pub fn resolve_policy(&self, spec: &PolicySpec, env: &EnvSpec, train_seed: u64) -> Result<Policy> {
        let policy = match spec {
            PolicySpec::Uniform => Policy::uniform(env.num_actions()),
            PolicySpec::Stationary { probs } => Policy::stationary(probs.clone())?,
            PolicySpec::File { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| config_err(format!("cannot read policy {}: {e}", path.display())))?;
                Policy::LinearQ(LinearQPolicy::from_text(&text)?)
            }
            PolicySpec::Trained => {
                if !matches!(env.kind, EnvKind::MountainCar) {
                    return Err(config_err("trained policies are only available on mountain car"));
                }
                Policy::LinearQ(super::training::train_mountain_car_policy(&self.training, train_seed)?)
            }
        };
        if policy.num_actions() != env.num_actions() {
            return Err(config_err(format!(
                "policy has {} actions, environment has {}",
                policy.num_actions(),
                env.num_actions()
            )));
        }
        Ok(policy)
    }

    pub fn target_spec(&self) -> PolicySpec {
        self.policy.target.clone().unwrap_or(PolicySpec::Uniform)
    }

    pub fn behavior_spec(&self) -> PolicySpec {
        self.policy.behavior.clone().unwrap_or(match self.env.kind {
            EnvName::Chain => PolicySpec::Uniform,
            EnvName::MountainCar => PolicySpec::Trained,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str =
        "output = \"out.csv\"\nenv = { kind = \"chain\" }\nrun = { m = [200], iterations = 500, trials = 2 }\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::from_text(MINIMAL).unwrap();
        assert_eq!(c.run.m, vec![200]);
        assert_eq!(c.run.trials, 2);
        assert_eq!(c.privacy.delta, 1e-5);
        assert_eq!(c.privacy.epsilon, vec![0.1]);
        assert_eq!(c.schedule.multipliers, vec![0.1, 0.3, 1.0, 3.0, 10.0]);
        let env = c.env.to_spec().unwrap();
        assert_eq!(env.gamma, 0.99);
        assert_eq!(c.features.to_map(&env).unwrap().dim(), 39);
    }

    #[test]
    fn round_trips_through_text() {
        let c = ExperimentConfig::from_text(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            "env = { kind = \"chain\" }",
            "output = \"x\"",
            "output = \"x\"\nenv = { kind = \"lake\" }",
            "output = \"x\"\nenv = { kind = \"chain\" }\nrun = { trials = 0 }",
            "output = \"x\"\nenv = { kind = \"chain\" }\nrun = { m = [0] }",
            "output = \"x\"\nenv = { kind = \"chain\" }\nschedule = { kinds = [\"constant\"], k = 1.5 }",
            "output = \"x\"\nenv = { kind = \"chain\" }\nprivacy = { epsilon = [-1.0] }",
            "output = \"x\"\nenv = { kind = \"chain\" }\nbogus = 3",
            "output = \"x\"\nenv = { kind = \"mountain_car\", num_states = 4 }",
        ] {
            assert!(ExperimentConfig::from_text(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn feature_kind_must_match_env() {
        let c = ExperimentConfig::from_text(
            "output = \"x\"\nenv = { kind = \"chain\" }\nfeatures = { kind = \"fourier\" }",
        )
        .unwrap();
        assert!(c.features.to_map(&c.env.to_spec().unwrap()).is_err());
    }

    #[test]
    fn privacy_points() {
        let mut p = PrivacyConfig::default();
        assert_eq!(
            p.points(),
            vec![PrivacyPoint::Budget {
                epsilon: 0.1,
                delta: 1e-5
            }]
        );
        p.sigma = Some(2.0);
        assert_eq!(p.points(), vec![PrivacyPoint::Explicit { sigma: 2.0 }]);
        p.enabled = false;
        assert_eq!(p.points(), vec![PrivacyPoint::NoiseFree]);
    }

    #[test]
    fn mountain_car_defaults() {
        let c = ExperimentConfig::from_text("output = \"x\"\nenv = { kind = \"mountain_car\" }").unwrap();
        let env = c.env.to_spec().unwrap();
        assert_eq!(c.features.to_map(&env).unwrap().dim(), 36);
        assert_eq!(c.behavior_spec(), PolicySpec::Trained);
        assert_eq!(c.target_spec(), PolicySpec::Uniform);
        assert!(matches!(
            c.oracle.mode(&env, 7),
            OracleMode::MonteCarlo { size: 100_000, seed: 7 }
        ));
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = std::env::temp_dir().join(format!("gpope-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        assert_eq!(c.output, dir.join("out.csv"));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
