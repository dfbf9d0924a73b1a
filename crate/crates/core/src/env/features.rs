use std::f64::consts::PI;

use nalgebra::DVector;

use super::mountain_car::{MAX_POSITION, MAX_SPEED, MIN_POSITION};
use super::State;
use crate::error::{invalid, Result};

/// Sparse feature vector as (index, value) pairs. Reused across calls to
/// avoid per-transition allocation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseFeatures {
    pub entries: Vec<(usize, f64)>,
}

impl SparseFeatures {
    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn dot(&self, v: &DVector<f64>) -> f64 {
        self.entries.iter().map(|&(i, x)| x * v[i]).sum()
    }

    pub fn to_dense(&self, dim: usize) -> DVector<f64> {
        let mut out = DVector::zeros(dim);
        for &(i, x) in &self.entries {
            out[i] += x;
        }
        out
    }
}

/// Full Fourier cosine basis over the unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierBasis {
    order: usize,
    coefficients: Vec<[f64; 2]>,
}

impl FourierBasis {
    pub fn new(order: usize) -> Self {
        let coefficients = (0..=order)
            .flat_map(|i| (0..=order).map(move |j| [i as f64, j as f64]))
            .collect();
        Self { order, coefficients }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// (order + 1)^2
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficients(&self) -> &[[f64; 2]] {
        &self.coefficients
    }

    /// Evaluates cos(π⟨c, s⟩) for every coefficient vector `c`, given a
    /// state already normalized to [0, 1]².
    pub fn evaluate(&self, s: [f64; 2]) -> Result<DVector<f64>> {
        check_unit(s)?;
        Ok(DVector::from_iterator(
            self.dim(),
            self.coefficients
                .iter()
                .map(|c| (PI * (c[0] * s[0] + c[1] * s[1])).cos()),
        ))
    }

    fn evaluate_into(&self, s: [f64; 2], out: &mut SparseFeatures) -> Result<()> {
        check_unit(s)?;
        out.entries.extend(
            self.coefficients
                .iter()
                .enumerate()
                .map(|(k, c)| (k, (PI * (c[0] * s[0] + c[1] * s[1])).cos())),
        );
        Ok(())
    }
}

fn check_unit(s: [f64; 2]) -> Result<()> {
    if s.iter().all(|x| (0.0..=1.0).contains(x)) {
        Ok(())
    } else {
        Err(invalid(format!("state {s:?} is not normalized to the unit square")))
    }
}

/// Maps a mountain-car state onto [0, 1]² using its position and velocity
/// bounds.
pub fn normalize_car(position: f64, velocity: f64) -> Result<[f64; 2]> {
    let s = [
        (position - MIN_POSITION) / (MAX_POSITION - MIN_POSITION),
        (velocity + MAX_SPEED) / (2.0 * MAX_SPEED),
    ];
    check_unit(s).map(|_| s)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// One-hot over chain states. Without `include_absorbing` the absorbing
    /// (last) state maps to the zero vector and the dimension is one less
    /// than the number of states.
    Tabular { num_states: usize, include_absorbing: bool },
    /// Fourier basis over normalized mountain-car states.
    Fourier(FourierBasis),
}

impl FeatureMap {
    pub fn tabular(num_states: usize) -> Self {
        FeatureMap::Tabular {
            num_states,
            include_absorbing: false,
        }
    }

    pub fn fourier(order: usize) -> Self {
        FeatureMap::Fourier(FourierBasis::new(order))
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Tabular {
                num_states,
                include_absorbing,
            } => {
                if *include_absorbing {
                    *num_states
                } else {
                    num_states - 1
                }
            }
            FeatureMap::Fourier(b) => b.dim(),
        }
    }

    /// Appends φ(state) to `out` (which is cleared first).
    pub fn features_into(&self, state: &State, out: &mut SparseFeatures) -> Result<()> {
        out.clear();
        match (self, state) {
            (FeatureMap::Tabular { num_states, .. }, State::Chain(s)) => {
                if *s < 1 || s > num_states {
                    return Err(invalid(format!("chain state {s} outside [1, {num_states}]")));
                }
                if *s <= self.dim() {
                    out.entries.push((s - 1, 1.0));
                }
                Ok(())
            }
            (FeatureMap::Fourier(b), State::Car { position, velocity }) => {
                b.evaluate_into(normalize_car(*position, *velocity)?, out)
            }
            (map, state) => Err(invalid(format!(
                "feature map {} cannot encode state {state:?}",
                map.name()
            ))),
        }
    }

    pub fn features(&self, state: &State) -> Result<DVector<f64>> {
        let mut buf = SparseFeatures::default();
        self.features_into(state, &mut buf)?;
        Ok(buf.to_dense(self.dim()))
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureMap::Tabular { .. } => "tabular",
            FeatureMap::Fourier(_) => "fourier",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn order_five_has_36_features() {
        assert_eq!(FourierBasis::new(5).dim(), 36);
        assert_eq!(FeatureMap::fourier(5).dim(), 36);
    }

    #[test]
    fn constant_term_is_one() {
        let b = FourierBasis::new(3);
        for s in [[0.0, 0.0], [0.3, 0.9], [1.0, 1.0]] {
            assert_eq!(b.evaluate(s).unwrap()[0], 1.0);
        }
    }

    #[test]
    fn unit_coefficient_at_corner() {
        let b = FourierBasis::new(1);
        // coefficients: (0,0), (0,1), (1,0), (1,1)
        let f = b.evaluate([1.0, 0.0]).unwrap();
        assert_eq!(b.coefficients()[2], [1.0, 0.0]);
        assert_eq!(f[2], -1.0);
    }

    #[test]
    fn unnormalized_state_rejected() {
        let b = FourierBasis::new(2);
        assert!(b.evaluate([1.2, 0.0]).is_err());
        assert!(b.evaluate([f64::NAN, 0.0]).is_err());
        let map = FeatureMap::fourier(2);
        let bad = State::Car {
            position: 0.9,
            velocity: 0.0,
        };
        assert!(map.features(&bad).is_err());
    }

    #[test]
    fn tabular_absorbing_state_is_zero() {
        let map = FeatureMap::tabular(40);
        assert_eq!(map.dim(), 39);
        assert_eq!(map.features(&State::Chain(40)).unwrap().norm(), 0.0);
        let with = FeatureMap::Tabular {
            num_states: 40,
            include_absorbing: true,
        };
        assert_eq!(with.dim(), 40);
        assert_eq!(with.features(&State::Chain(40)).unwrap()[39], 1.0);
    }

    #[test]
    fn mismatched_state_kind_rejected() {
        assert!(FeatureMap::tabular(40)
            .features(&State::Car {
                position: 0.0,
                velocity: 0.0
            })
            .is_err());
        assert!(FeatureMap::fourier(3).features(&State::Chain(2)).is_err());
    }

    proptest! {
        #[test]
        fn fourier_entries_bounded(p in -1.2f64..=0.6, v in -0.07f64..=0.07) {
            let f = FeatureMap::fourier(5).features(&State::Car { position: p, velocity: v }).unwrap();
            prop_assert_eq!(f.len(), 36);
            prop_assert!(f.amax() <= 1.0);
        }

        #[test]
        fn tabular_is_one_hot(s in 1usize..40) {
            let f = FeatureMap::tabular(40).features(&State::Chain(s)).unwrap();
            prop_assert_eq!(f.len(), 39);
            prop_assert_eq!(f.norm(), 1.0);
            prop_assert_eq!(f[s - 1], 1.0);
        }
    }
}
