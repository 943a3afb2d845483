//! Seeded disturbance generation.
//!
//! The generator is SplitMix64 (Steele, Lea and Flood) with its state set to
//! the seed. Uniform doubles take the top 53 bits: `u = (z >> 11)·2⁻⁵³`, and a
//! component with bound `b` is `b·(2u − 1)`. Components are drawn in order
//! within a piece, pieces in time order.

use mhect_core::sysmodel::{BoxSet, PiecewiseSignal};
use nalgebra::DVector;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::CliResult;
use mhect_core::Error;

/// Uniform disturbance in the box `|wᵢ| ≤ bound[i]`, constant on pieces of
/// length `piece`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub bound: Bound,
    pub piece: f64,
}

/// One bound for all components or one per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bound {
    Uniform(f64),
    PerComponent(Vec<f64>),
}

impl Bound {
    fn expand(&self, dim: usize) -> CliResult<Vec<f64>> {
        let b = match self {
            Bound::Uniform(b) => vec![*b; dim],
            Bound::PerComponent(v) if v.len() == dim => v.clone(),
            Bound::PerComponent(v) => {
                return Err(Error::Config(format!("disturbance bound has {} entries, expected {dim}", v.len())).into())
            }
        };
        if b.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("disturbance bounds must be finite and non-negative".into()).into());
        }
        Ok(b)
    }
}

pub fn rng(seed: u64) -> SplitMix64 {
    SplitMix64::from_seed(seed.to_le_bytes())
}

/// Uniform double in `[0, 1)`.
pub fn unit(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Samples the disturbance on `[0, t_sim)`; the box must lie inside `w_box`.
pub fn generate_disturbance(spec: &DisturbanceSpec, w_box: &BoxSet, t_sim: f64, seed: u64) -> CliResult<PiecewiseSignal> {
    let dim = w_box.dim();
    let bound = spec.bound.expand(dim)?;
    for (i, b) in bound.iter().enumerate() {
        if -b < w_box.lower()[i] || *b > w_box.upper()[i] {
            return Err(Error::Config(format!("disturbance bound {b} on w{} exceeds the disturbance set", i + 1)).into());
        }
    }
    let pieces = PiecewiseSignal::steps_in(t_sim, spec.piece)
        .filter(|_| spec.piece > 0.0)
        .ok_or_else(|| Error::Config(format!("t_sim = {t_sim} is not a multiple of the piece length {}", spec.piece)))?;
    let mut g = rng(seed);
    let values = (0..pieces)
        .map(|_| {
            DVector::from_iterator(
                dim,
                bound.iter().map(|&b| {
                    let u = unit(&mut g);
                    if b == 0.0 {
                        0.0
                    } else {
                        b * (2.0 * u - 1.0)
                    }
                }),
            )
        })
        .collect();
    Ok(PiecewiseSignal::new(0.0, spec.piece, dim, values)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(b: f64) -> DisturbanceSpec {
        DisturbanceSpec { bound: Bound::Uniform(b), piece: 0.01 }
    }

    fn w_box() -> BoxSet {
        BoxSet::uniform(3, -0.1, 0.1).unwrap()
    }

    #[test]
    fn splitmix_reference_values() {
        // First outputs of SplitMix64 seeded with 1234567.
        let mut g = rng(1234567);
        let first: Vec<u64> = (0..3).map(|_| g.next_u64()).collect();
        assert_eq!(first, vec![6457827717110365317, 3203168211198807973, 9817491932198370423]);
    }

    #[test]
    fn samples_stay_in_the_box() {
        let w = generate_disturbance(&spec(0.1), &w_box(), 5.0, 7).unwrap();
        assert_eq!(w.len(), 500);
        assert!(w.values().iter().all(|v| v.iter().all(|x| x.abs() <= 0.1)));
    }

    #[test]
    fn zero_bound_gives_zero_signal() {
        let w = generate_disturbance(&spec(0.0), &w_box(), 1.0, 7).unwrap();
        assert!(w.values().iter().all(|v| v.iter().all(|x| *x == 0.0 && x.is_sign_positive())));
    }

    #[test]
    fn same_seed_same_signal() {
        let a = generate_disturbance(&spec(0.1), &w_box(), 1.0, 3).unwrap();
        let b = generate_disturbance(&spec(0.1), &w_box(), 1.0, 3).unwrap();
        let c = generate_disturbance(&spec(0.1), &w_box(), 1.0, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn box_outside_the_disturbance_set_is_rejected() {
        assert!(generate_disturbance(&spec(0.2), &w_box(), 1.0, 1).is_err());
        let bad = DisturbanceSpec { bound: Bound::PerComponent(vec![0.1, 0.1]), piece: 0.01 };
        assert!(generate_disturbance(&bad, &w_box(), 1.0, 1).is_err());
    }
}
