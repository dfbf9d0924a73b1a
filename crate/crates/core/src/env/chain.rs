use crate::error::{invalid, Result};

/// Left-to-right chain: each step stays with probability `stay_prob`,
/// otherwise advances one state. The last state is absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub num_states: usize,
    pub stay_prob: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            num_states: 40,
            stay_prob: 0.5,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_states < 2 {
            return Err(invalid("chain needs at least two states"));
        }
        if !(self.stay_prob > 0.0 && self.stay_prob < 1.0) {
            return Err(invalid(format!(
                "stay probability must lie in (0, 1), got {}",
                self.stay_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainStep {
    pub next_state: usize,
    pub reward: f64,
    pub is_terminal: bool,
}

/// One chain move driven by the uniform draw `u`: stay when `u < stay_prob`,
/// advance otherwise. Entering the absorbing state pays 1.
pub fn chain_transition(state: usize, u: f64, stay_prob: f64, num_states: usize) -> Result<ChainStep> {
    if state < 1 || state > num_states {
        return Err(invalid(format!("chain state {state} outside [1, {num_states}]")));
    }
    if state == num_states {
        return Ok(ChainStep {
            next_state: state,
            reward: 0.0,
            is_terminal: true,
        });
    }
    let next_state = if u < stay_prob { state } else { state + 1 };
    let absorbed = next_state == num_states;
    Ok(ChainStep {
        next_state,
        reward: if absorbed { 1.0 } else { 0.0 },
        is_terminal: absorbed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stays_below_threshold() {
        let s = chain_transition(5, 0.3, 0.5, 40).unwrap();
        assert_eq!((s.next_state, s.reward, s.is_terminal), (5, 0.0, false));
    }

    #[test]
    fn entering_absorbing_state_pays_one() {
        let s = chain_transition(39, 0.7, 0.5, 40).unwrap();
        assert_eq!((s.next_state, s.reward, s.is_terminal), (40, 1.0, true));
    }

    #[test]
    fn absorbing_state_is_terminal() {
        for u in [0.0, 0.49, 0.5, 0.99] {
            let s = chain_transition(40, u, 0.5, 40).unwrap();
            assert_eq!((s.next_state, s.reward, s.is_terminal), (40, 0.0, true));
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(chain_transition(0, 0.1, 0.5, 40).is_err());
        assert!(chain_transition(41, 0.1, 0.5, 40).is_err());
    }

    #[test]
    fn advance_at_threshold() {
        assert_eq!(chain_transition(3, 0.5, 0.5, 40).unwrap().next_state, 4);
    }
}
