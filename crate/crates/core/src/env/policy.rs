use nalgebra::DVector;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::features::{normalize_car, FourierBasis};
use super::State;
use crate::error::{invalid, Error, Result};
use crate::seed::Rng;

/// How a learned action-value function is turned into action probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum QPolicyMode {
    /// Argmax, splitting probability evenly over ties.
    Greedy,
    Softmax {
        temperature: f64,
    },
}

/// Linear action values over a Fourier basis of the mountain-car state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearQPolicy {
    pub basis: FourierBasis,
    /// One weight vector per action.
    pub weights: Vec<DVector<f64>>,
    pub mode: QPolicyMode,
}

const POLICY_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    version: u32,
    kind: String,
    order: usize,
    #[serde(flatten)]
    mode: QPolicyMode,
    weights: Vec<Vec<f64>>,
}

impl LinearQPolicy {
    pub fn zeros(order: usize, num_actions: usize, mode: QPolicyMode) -> Self {
        let basis = FourierBasis::new(order);
        let weights = vec![DVector::zeros(basis.dim()); num_actions];
        Self { basis, weights, mode }
    }

    pub fn q_values(&self, state: &State) -> Result<Vec<f64>> {
        let phi = self.encode(state)?;
        Ok(self.weights.iter().map(|w| w.dot(&phi)).collect())
    }

    pub fn encode(&self, state: &State) -> Result<DVector<f64>> {
        match state {
            State::Car { position, velocity } => self.basis.evaluate(normalize_car(*position, *velocity)?),
            State::Chain(_) => Err(invalid("linear Q policy expects mountain-car states")),
        }
    }

    pub fn probs(&self, state: &State) -> Result<Vec<f64>> {
        let q = self.q_values(state)?;
        Ok(q_to_probs(&q, self.mode))
    }

    /// Versioned plain-text (TOML) encoding: basis order and weight lists.
    pub fn to_text(&self) -> String {
        let file = PolicyFile {
            version: POLICY_FILE_VERSION,
            kind: "linear_q_fourier".into(),
            order: self.basis.order(),
            mode: self.mode,
            weights: self.weights.iter().map(|w| w.iter().copied().collect()).collect(),
        };
        toml::to_string(&file).expect("policy file serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let file: PolicyFile = toml::from_str(text).map_err(|e| Error::Config(format!("policy file: {e}")))?;
        if file.version != POLICY_FILE_VERSION {
            return Err(Error::Config(format!(
                "unsupported policy file version {}",
                file.version
            )));
        }
        if file.kind != "linear_q_fourier" {
            return Err(Error::Config(format!("unknown policy kind {:?}", file.kind)));
        }
        let basis = FourierBasis::new(file.order);
        if file.weights.is_empty() || file.weights.iter().any(|w| w.len() != basis.dim()) {
            return Err(Error::Config(format!(
                "policy weights must be nonempty lists of length {}",
                basis.dim()
            )));
        }
        Ok(Self {
            basis,
            weights: file.weights.into_iter().map(DVector::from_vec).collect(),
            mode: file.mode,
        })
    }
}

pub(crate) fn q_to_probs(q: &[f64], mode: QPolicyMode) -> Vec<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match mode {
        QPolicyMode::Greedy => {
            let ties = q.iter().filter(|&&v| v == max).count() as f64;
            q.iter().map(|&v| if v == max { 1.0 / ties } else { 0.0 }).collect()
        }
        QPolicyMode::Softmax { temperature } => {
            let e: Vec<f64> = q.iter().map(|&v| ((v - max) / temperature).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect()
        }
    }
}

/// Action-probability rule π(s, a) over a discrete action set.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Uniform {
        num_actions: usize,
    },
    /// Always takes `action`.
    Fixed {
        num_actions: usize,
        action: usize,
    },
    /// Same distribution in every state.
    Stationary {
        probs: Vec<f64>,
    },
    LinearQ(LinearQPolicy),
}

impl Policy {
    /// The chain's only policy: one action, taken with probability 1.
    pub fn single_action() -> Self {
        Policy::Uniform { num_actions: 1 }
    }

    pub fn uniform(num_actions: usize) -> Self {
        Policy::Uniform { num_actions }
    }

    pub fn stationary(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("invalid action distribution {probs:?}")));
        }
        Ok(Policy::Stationary { probs })
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Policy::Uniform { num_actions } | Policy::Fixed { num_actions, .. } => *num_actions,
            Policy::Stationary { probs } => probs.len(),
            Policy::LinearQ(q) => q.weights.len(),
        }
    }

    /// π(s, a). Actions outside the action set have probability 0.
    pub fn prob(&self, state: &State, action: usize) -> Result<f64> {
        let n = self.num_actions();
        if action >= n {
            return Ok(0.0);
        }
        Ok(match self {
            Policy::Uniform { num_actions } => 1.0 / *num_actions as f64,
            Policy::Fixed { action: a, .. } => f64::from(u8::from(*a == action)),
            Policy::Stationary { probs } => probs[action],
            Policy::LinearQ(q) => q.probs(state)?[action],
        })
    }

    pub fn sample(&self, state: &State, rng: &mut Rng) -> usize {
        match self {
            Policy::Uniform { num_actions: 1 } => 0,
            Policy::Uniform { num_actions } => rng.gen_range(0..*num_actions),
            Policy::Fixed { action, .. } => *action,
            Policy::Stationary { probs } => sample_from(probs, rng),
            Policy::LinearQ(q) => {
                let probs = q.probs(state).expect("linear Q policy evaluated on a car state");
                sample_from(&probs, rng)
            }
        }
    }
}

fn sample_from(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    // Rounding left u above the cumulative sum: pick the last supported action.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// ρ = π(s, a) / π_b(s, a).
pub fn importance_ratio(target: &Policy, behavior: &Policy, state: &State, action: usize) -> Result<f64> {
    if let (Policy::Uniform { num_actions: a }, Policy::Uniform { num_actions: b }) = (target, behavior) {
        if a == b {
            return Ok(1.0);
        }
    }
    if target == behavior {
        return Ok(1.0);
    }
    let pi = target.prob(state, action)?;
    let pb = behavior.prob(state, action)?;
    if pb > 0.0 {
        Ok(pi / pb)
    } else if pi > 0.0 {
        Err(Error::CoverageViolation {
            action,
            target_prob: pi,
        })
    } else {
        Ok(0.0)
    }
}
