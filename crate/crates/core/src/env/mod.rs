//! Benchmark MDPs, behavior/target policies, feature maps and trajectory
//! generation.

mod chain;
mod features;
mod mountain_car;
mod policy;

pub use chain::{chain_transition, ChainConfig, ChainStep};
pub use features::{FeatureMap, FourierBasis, SparseFeatures};
pub use mountain_car::{mountain_car_step, CarStep, GOAL_POSITION, MAX_POSITION, MAX_SPEED, MIN_POSITION};
pub use policy::{importance_ratio, LinearQPolicy, Policy, QPolicyMode};

use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::seed::{derive_seed, rng_from_seed, Rng};

/// An environment state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum State {
    /// Chain position, 1-based.
    Chain(usize),
    Car {
        position: f64,
        velocity: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: usize,
    pub reward: f64,
    pub next_state: State,
    pub is_terminal: bool,
}

/// Ordered transitions of one individual; the unit of privacy.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    transitions: Vec<Transition>,
}

impl Trajectory {
    /// Checks that the trajectory is nonempty, chains state to state, has
    /// finite rewards and is terminal at most at its last transition.
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        if transitions.is_empty() {
            return Err(invalid("trajectory must contain at least one transition"));
        }
        for (t, tr) in transitions.iter().enumerate() {
            if !tr.reward.is_finite() {
                return Err(invalid(format!("non-finite reward at step {t}")));
            }
            let last = t + 1 == transitions.len();
            if tr.is_terminal && !last {
                return Err(invalid(format!("terminal transition at step {t} is not last")));
            }
            if !last && tr.next_state != transitions[t + 1].state {
                return Err(invalid(format!("transition {t} does not chain into {}", t + 1)));
            }
        }
        Ok(Self { transitions })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Number of transitions, τ.
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn is_terminated(&self) -> bool {
        self.transitions.last().is_some_and(|t| t.is_terminal)
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvKind {
    Chain(ChainConfig),
    MountainCar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Discount γ in [0, 1).
    pub gamma: f64,
    pub max_episode_len: usize,
}

impl EnvSpec {
    pub const CHAIN_MAX_LEN: usize = 5_000;
    pub const MOUNTAIN_CAR_MAX_LEN: usize = 10_000;

    /// The 40-state chain with stay probability 0.5 and γ = 0.99.
    pub fn chain() -> Self {
        Self {
            kind: EnvKind::Chain(ChainConfig::default()),
            gamma: 0.99,
            max_episode_len: Self::CHAIN_MAX_LEN,
        }
    }

    pub fn mountain_car() -> Self {
        Self {
            kind: EnvKind::MountainCar,
            gamma: 0.99,
            max_episode_len: Self::MOUNTAIN_CAR_MAX_LEN,
        }
    }

    pub fn num_actions(&self) -> usize {
        match self.kind {
            EnvKind::Chain(_) => 1,
            EnvKind::MountainCar => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid(format!("discount must lie in [0, 1), got {}", self.gamma)));
        }
        if self.max_episode_len == 0 {
            return Err(invalid("max episode length must be at least 1"));
        }
        if let EnvKind::Chain(c) = &self.kind {
            c.validate()?;
        }
        Ok(())
    }
}

/// Samples one episode under `behavior`, truncated at the spec's maximum
/// length. The result is a pure function of `(env, behavior, seed)`.
pub fn generate_trajectory(env: &EnvSpec, behavior: &Policy, seed: u64) -> Result<Trajectory> {
    env.validate()?;
    if behavior.num_actions() != env.num_actions() {
        return Err(invalid(format!(
            "behavior policy has {} actions, environment has {}",
            behavior.num_actions(),
            env.num_actions()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let transitions = match &env.kind {
        EnvKind::Chain(cfg) => chain_episode(cfg, env.max_episode_len, &mut rng)?,
        EnvKind::MountainCar => car_episode(behavior, env.max_episode_len, &mut rng),
    };
    Trajectory::new(transitions)
}

/// `m` trajectories with per-index seeds derived from `seed`.
pub fn generate_dataset(env: &EnvSpec, behavior: &Policy, m: usize, seed: u64) -> Result<Vec<Trajectory>> {
    (0..m as u64)
        .map(|i| generate_trajectory(env, behavior, derive_seed(seed, &[i])))
        .collect()
}

fn chain_episode(cfg: &ChainConfig, max_len: usize, rng: &mut Rng) -> Result<Vec<Transition>> {
    let mut state = rng.gen_range(1..=cfg.num_states);
    if state == cfg.num_states {
        // Starting on the absorbing state counts as arriving there.
        return Ok(vec![Transition {
            state: State::Chain(state),
            action: 0,
            reward: 1.0,
            next_state: State::Chain(state),
            is_terminal: true,
        }]);
    }
    let mut out = Vec::new();
    while out.len() < max_len {
        let u: f64 = rng.gen();
        let step = chain_transition(state, u, cfg.stay_prob, cfg.num_states)?;
        out.push(Transition {
            state: State::Chain(state),
            action: 0,
            reward: step.reward,
            next_state: State::Chain(step.next_state),
            is_terminal: step.is_terminal,
        });
        if step.is_terminal {
            break;
        }
        state = step.next_state;
    }
    Ok(out)
}

/// Standard start distribution: position uniform in [-0.6, -0.4], at rest.
pub fn mountain_car_start(rng: &mut Rng) -> State {
    State::Car {
        position: rng.gen_range(-0.6..=-0.4),
        velocity: 0.0,
    }
}

fn car_episode(behavior: &Policy, max_len: usize, rng: &mut Rng) -> Vec<Transition> {
    let mut state = mountain_car_start(rng);
    let mut out = Vec::new();
    while out.len() < max_len {
        let State::Car { position, velocity } = state else {
            unreachable!("mountain car produced a non-car state")
        };
        let action = behavior.sample(&state, rng);
        let step = mountain_car_step(position, velocity, action);
        let next = State::Car {
            position: step.position,
            velocity: step.velocity,
        };
        out.push(Transition {
            state,
            action,
            reward: step.reward,
            next_state: next,
            is_terminal: step.is_terminal,
        });
        if step.is_terminal {
            break;
        }
        state = next;
    }
    out
}
