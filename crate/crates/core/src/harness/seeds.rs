//! Seed layout. Every random stream of an experiment is derived from the
//! master seed and a path naming its role, so results do not depend on
//! scheduling order. Public configs use a disjoint family.

use crate::seed::derive_seed;

const DATA: u64 = 1;
const RUN: u64 = 2;
const ORACLE: u64 = 3;
const TRAINING: u64 = 4;
const PUBLIC: u64 = 0x7075_626c_6963;

fn family(public: bool) -> u64 {
    if public {
        PUBLIC
    } else {
        0
    }
}

/// Dataset of size `m` for `trial`. Shared across privacy levels, schedules
/// and step multipliers.
pub fn data(master: u64, public: bool, m: usize, trial: usize) -> u64 {
    derive_seed(master, &[family(public), DATA, m as u64, trial as u64])
}

/// Sampling and noise streams of one run. Independent of the step
/// multiplier, so a multiplier-1 sweep point reproduces the base run.
pub fn run(master: u64, public: bool, m: usize, privacy_index: usize, schedule_index: usize, trial: usize) -> u64 {
    derive_seed(
        master,
        &[
            family(public),
            RUN,
            m as u64,
            privacy_index as u64,
            schedule_index as u64,
            trial as u64,
        ],
    )
}

pub fn oracle(master: u64) -> u64 {
    derive_seed(master, &[ORACLE])
}

pub fn training(master: u64) -> u64 {
    derive_seed(master, &[TRAINING])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn public_and_private_seeds_differ() {
        assert_ne!(data(3, true, 10, 0), data(3, false, 10, 0));
        assert_ne!(run(3, true, 10, 0, 0, 0), run(3, false, 10, 0, 0, 0));
        assert_ne!(data(3, false, 10, 0), data(3, false, 10, 1));
    }
}
