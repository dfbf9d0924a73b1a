//! ε-greedy Q-learning of a linear Fourier-basis policy for mountain car.

use nalgebra::DVector;
use rand::Rng as _;

use super::config::TrainingConfig;
use crate::env::{mountain_car_start, mountain_car_step, LinearQPolicy, Policy, State};
use crate::error::{invalid, Result};
use crate::seed::{rng_from_seed, Rng};

const NUM_ACTIONS: usize = 3;

fn car_parts(s: &State) -> (f64, f64) {
    match *s {
        State::Car { position, velocity } => (position, velocity),
        State::Chain(_) => unreachable!("mountain-car rollout produced a chain state"),
    }
}

fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (a, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = a;
        }
    }
    best
}

/// Trains action values with per-coefficient step sizes `α/‖c‖` (α for the
/// constant term) and returns the configured greedy or softmax policy.
pub fn train_mountain_car_policy(cfg: &TrainingConfig, seed: u64) -> Result<LinearQPolicy> {
    if cfg.episodes == 0 {
        return Err(invalid("training needs at least one episode"));
    }
    if !(cfg.alpha > 0.0) || !(0.0..=1.0).contains(&cfg.explore) || !(0.0..=1.0).contains(&cfg.gamma) {
        return Err(invalid("training needs α > 0 and exploration rate and γ in [0, 1]"));
    }
    let mut policy = LinearQPolicy::zeros(cfg.order, NUM_ACTIONS, cfg.mode);
    let rates = DVector::from_iterator(
        policy.basis.dim(),
        policy.basis.coefficients().iter().map(|c| {
            let norm = (c[0] * c[0] + c[1] * c[1]).sqrt();
            if norm == 0.0 {
                cfg.alpha
            } else {
                cfg.alpha / norm
            }
        }),
    );
    let mut rng = rng_from_seed(seed);

    for _ in 0..cfg.episodes {
        let mut state = mountain_car_start(&mut rng);
        let mut phi = policy.encode(&state)?;
        for _ in 0..cfg.max_episode_len {
            let q: Vec<f64> = policy.weights.iter().map(|w| w.dot(&phi)).collect();
            let action = if rng.gen::<f64>() < cfg.explore {
                rng.gen_range(0..NUM_ACTIONS)
            } else {
                argmax(&q)
            };
            let (x, v) = car_parts(&state);
            let step = mountain_car_step(x, v, action);
            let next = State::Car {
                position: step.position,
                velocity: step.velocity,
            };
            let next_phi = policy.encode(&next)?;
            let target = if step.is_terminal {
                step.reward
            } else {
                let best = policy
                    .weights
                    .iter()
                    .map(|w| w.dot(&next_phi))
                    .fold(f64::NEG_INFINITY, f64::max);
                step.reward + cfg.gamma * best
            };
            let td = target - q[action];
            policy.weights[action] += rates.component_mul(&phi) * td;
            if step.is_terminal {
                break;
            }
            state = next;
            phi = next_phi;
        }
    }
    if policy.weights.iter().any(|w| w.iter().any(|x| !x.is_finite())) {
        return Err(invalid("Q-learning diverged; lower the learning rate"));
    }
    Ok(policy)
}

/// Mean undiscounted return of `policy` over `episodes` rollouts capped at
/// `max_len` steps.
pub fn average_return(policy: &Policy, episodes: usize, max_len: usize, seed: u64) -> f64 {
    let mut rng: Rng = rng_from_seed(seed);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut state = mountain_car_start(&mut rng);
        for _ in 0..max_len {
            let action = policy.sample(&state, &mut rng);
            let (x, v) = car_parts(&state);
            let step = mountain_car_step(x, v, action);
            total += step.reward;
            if step.is_terminal {
                break;
            }
            state = State::Car {
                position: step.position,
                velocity: step.velocity,
            };
        }
    }
    total / episodes as f64
}
