use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::seeds;
use crate::env::{EnvSpec, Policy};
use crate::error::{Error, Result};
use crate::ope::{exact_stats, OracleMode, StatTriple};

/// Memoizes oracle statistics by a hash of every config field they depend
/// on.
#[derive(Default)]
pub struct OracleCache {
    entries: Mutex<HashMap<u64, Arc<StatTriple>>>,
    computed: Mutex<usize>,
}

impl OracleCache {
    pub fn global() -> &'static OracleCache {
        static CACHE: OnceLock<OracleCache> = OnceLock::new();
        CACHE.get_or_init(OracleCache::default)
    }

    /// Number of oracle evaluations actually performed.
    pub fn computations(&self) -> usize {
        *self.computed.lock().expect("oracle cache poisoned")
    }

    pub fn get_or_compute<F>(&self, key: u64, compute: F) -> Result<Arc<StatTriple>>
    where
        F: FnOnce() -> Result<StatTriple>,
    {
        if let Some(hit) = self.entries.lock().expect("oracle cache poisoned").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let stats = Arc::new(compute()?);
        *self.computed.lock().expect("oracle cache poisoned") += 1;
        let mut map = self.entries.lock().expect("oracle cache poisoned");
        Ok(Arc::clone(map.entry(key).or_insert(stats)))
    }
}

/// Hash of every config field the oracle statistics depend on.
pub fn config_hash(config: &ExperimentConfig) -> u64 {
    let key = (
        config.seed,
        &config.env,
        &config.features,
        config.target_spec(),
        config.behavior_spec(),
        (config.oracle.mode, config.oracle.size, config.oracle.seed),
        &config.training,
    );
    let mut h = DefaultHasher::new();
    format!("{key:?}").hash(&mut h);
    h.finish()
}

/// Resolved environment and policies of a config.
pub struct Setting {
    pub env: EnvSpec,
    pub features: crate::env::FeatureMap,
    pub target: Policy,
    pub behavior: Policy,
}

pub fn resolve_setting(config: &ExperimentConfig) -> Result<Setting> {
    let env = config.env.to_spec()?;
    let features = config.features.to_map(&env)?;
    let train_seed = seeds::training(config.seed);
    let target = config.resolve_policy(&config.target_spec(), &env, train_seed)?;
    let behavior = config.resolve_policy(&config.behavior_spec(), &env, train_seed)?;
    Ok(Setting {
        env,
        features,
        target,
        behavior,
    })
}

pub fn oracle_mode(config: &ExperimentConfig, env: &EnvSpec) -> OracleMode {
    config.oracle.mode(env, seeds::oracle(config.seed))
}

/// Exact A, b, C for the config: analytic on the chain, Monte Carlo with a
/// dedicated seed on mountain car. Cached process-wide.
pub fn oracle_mspbe_stats(config: &ExperimentConfig) -> Result<Arc<StatTriple>> {
    let setting = resolve_setting(config)?;
    oracle_for_setting(config, &setting, OracleCache::global())
}

pub fn oracle_for_setting(
    config: &ExperimentConfig,
    setting: &Setting,
    cache: &OracleCache,
) -> Result<Arc<StatTriple>> {
    let mode = oracle_mode(config, &setting.env);
    cache.get_or_compute(config_hash(config), || {
        exact_stats(
            &setting.env,
            &setting.features,
            &setting.target,
            &setting.behavior,
            mode,
        )
    })
}

/// Warns when the oracle's Monte Carlo seed coincides with a seed used for
/// training data.
pub fn oracle_warnings(config: &ExperimentConfig) -> Vec<String> {
    let Some(seed) = config.oracle.seed else {
        return Vec::new();
    };
    let collides = seed == config.seed
        || config
            .run
            .m
            .iter()
            .any(|&m| (0..config.run.trials).any(|t| seeds::data(config.seed, config.public, m, t) == seed));
    if collides {
        vec![format!(
            "oracle seed {seed} coincides with a data seed; oracle statistics will not be independent of the training data"
        )]
    } else {
        Vec::new()
    }
}

#[derive(Serialize, Deserialize)]
struct StatsFile {
    version: u32,
    dim: usize,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<Vec<f64>>,
}

/// Plain-text (TOML) rendering of a statistic triple, row-major.
pub fn stats_to_text(stats: &StatTriple) -> String {
    let rows = |m: &nalgebra::DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    toml::to_string(&StatsFile {
        version: 1,
        dim: stats.dim(),
        a: rows(&stats.a),
        b: stats.b.iter().copied().collect(),
        c: rows(&stats.c),
    })
    .expect("statistics serialize")
}

pub fn stats_from_text(text: &str) -> Result<StatTriple> {
    let f: StatsFile = toml::from_str(text).map_err(|e| Error::Config(format!("statistics file: {e}")))?;
    let n = f.dim;
    let bad = f.b.len() != n || f.a.len() != n || f.c.len() != n || f.a.iter().chain(&f.c).any(|r| r.len() != n);
    if bad {
        return Err(Error::Config("statistics file has inconsistent dimensions".into()));
    }
    let mat = |rows: &[Vec<f64>]| nalgebra::DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    Ok(StatTriple {
        a: mat(&f.a),
        b: nalgebra::DVector::from_vec(f.b),
        c: mat(&f.c),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_text(&format!(
            "output = \"o.csv\"\nenv = {{ kind = \"chain\", num_states = 6 }}\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn cache_computes_once_per_config() {
        let cache = OracleCache::default();
        let cfg = chain_cfg("");
        let setting = resolve_setting(&cfg).unwrap();
        let a = oracle_for_setting(&cfg, &setting, &cache).unwrap();
        let b = oracle_for_setting(&cfg, &setting, &cache).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(cache.computations(), 1);
        let other = chain_cfg("seed = 9\noracle = { mode = \"monte_carlo\", size = 50 }");
        let s2 = resolve_setting(&other).unwrap();
        oracle_for_setting(&other, &s2, &cache).unwrap();
        assert_eq!(cache.computations(), 2);
    }

    #[test]
    fn hash_ignores_run_settings() {
        let a = chain_cfg("");
        let b = chain_cfg("run = { m = [5], iterations = 3 }");
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&chain_cfg("seed = 1")));
    }

    #[test]
    fn seed_collision_warns() {
        assert!(oracle_warnings(&chain_cfg("")).is_empty());
        assert_eq!(oracle_warnings(&chain_cfg("oracle = { seed = 0 }")).len(), 1);
        let d = seeds::data(0, false, 10, 1);
        let cfg = chain_cfg(&format!("run = {{ m = [10], trials = 2 }}\noracle = {{ seed = {d} }}"));
        assert_eq!(oracle_warnings(&cfg).len(), 1);
    }

    #[test]
    fn stats_text_round_trip() {
        let cfg = chain_cfg("");
        let stats = oracle_mspbe_stats(&cfg).unwrap();
        let back = stats_from_text(&stats_to_text(&stats)).unwrap();
        assert_eq!(&back, stats.as_ref());
        assert!(stats_from_text("version = 1\ndim = 2\na = [[1.0]]\nb = [1.0]\nc = [[1.0]]").is_err());
    }
}
