//! Per-round worker delay models.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum StragglerModel {
    None,
    /// The listed workers are late by `delay` every round.
    FixedSet { workers: Vec<usize>, delay: f64 },
    /// Each worker is late by `delay` with probability `p`, independently.
    IidBernoulli { p: f64, delay: f64 },
    /// Every worker draws `base + Exp(rate)`.
    ShiftedExponential { base: f64, rate: f64 },
}

impl StragglerModel {
    pub fn validate(&self, n: usize) -> Result<()> {
        let nonneg = |x: f64, what: &str| {
            if x.is_finite() && x >= 0.0 {
                Ok(())
            } else {
                param(format!("{what} must be finite and nonnegative, got {x}"))
            }
        };
        match self {
            StragglerModel::None => Ok(()),
            StragglerModel::FixedSet { workers, delay } => {
                nonneg(*delay, "delay")?;
                match workers.iter().find(|&&w| w >= n) {
                    Some(w) => param(format!("straggler {w} out of range for n = {n}")),
                    None => Ok(()),
                }
            }
            StragglerModel::IidBernoulli { p, delay } => {
                if !(0.0..=1.0).contains(p) {
                    return param(format!("straggler probability must lie in [0, 1], got {p}"));
                }
                nonneg(*delay, "delay")
            }
            StragglerModel::ShiftedExponential { base, rate } => {
                nonneg(*base, "base")?;
                if !(rate.is_finite() && *rate > 0.0) {
                    return param(format!("rate must be positive, got {rate}"));
                }
                Ok(())
            }
        }
    }
}

/// Delay of each of `n` workers in one round.
pub fn straggler_sample(model: &StragglerModel, n: usize, round_seed: u64) -> Result<Vec<f64>> {
    model.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
    Ok(match model {
        StragglerModel::None => vec![0.0; n],
        StragglerModel::FixedSet { workers, delay } => {
            let mut delays = vec![0.0; n];
            for &w in workers {
                delays[w] = *delay;
            }
            delays
        }
        StragglerModel::IidBernoulli { p, delay } => {
            let coin = Bernoulli::new(*p).expect("validated probability");
            (0..n).map(|_| if coin.sample(&mut rng) { *delay } else { 0.0 }).collect()
        }
        StragglerModel::ShiftedExponential { base, rate } => {
            let exp = Exp::new(*rate).expect("validated rate");
            (0..n).map(|_| base + exp.sample(&mut rng)).collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Binomial, DiscreteCDF};

    #[test]
    fn fixed_set() {
        let m = StragglerModel::FixedSet { workers: vec![0, 1], delay: 10.0 };
        assert_eq!(straggler_sample(&m, 4, 7).unwrap(), vec![10.0, 10.0, 0.0, 0.0]);
        let bad = StragglerModel::FixedSet { workers: vec![4], delay: 1.0 };
        assert!(straggler_sample(&bad, 4, 0).is_err());
    }

    #[test]
    fn bernoulli_edges_and_validation() {
        let zero = StragglerModel::IidBernoulli { p: 0.0, delay: 3.0 };
        assert!(straggler_sample(&zero, 50, 1).unwrap().iter().all(|&d| d == 0.0));
        let one = StragglerModel::IidBernoulli { p: 1.0, delay: 3.0 };
        assert!(straggler_sample(&one, 50, 1).unwrap().iter().all(|&d| d == 3.0));
        for p in [-0.1, 1.1, f64::NAN] {
            assert!(straggler_sample(&StragglerModel::IidBernoulli { p, delay: 1.0 }, 3, 0).is_err());
        }
    }

    #[test]
    fn bernoulli_count_within_binomial_window() {
        let binom = Binomial::new(0.4, 1000).unwrap();
        let outside = binom.cdf(339) + (1.0 - binom.cdf(460));
        assert!(outside < 1e-3, "window too narrow: {outside}");
        let m = StragglerModel::IidBernoulli { p: 0.4, delay: 1.0 };
        for seed in 0..20 {
            let count = straggler_sample(&m, 1000, seed).unwrap().iter().filter(|&&d| d > 0.0).count();
            assert!((340..=460).contains(&count), "seed {seed}: {count}");
        }
    }

    #[test]
    fn deterministic_per_round_seed() {
        let m = StragglerModel::ShiftedExponential { base: 1.0, rate: 2.0 };
        let a = straggler_sample(&m, 16, 99).unwrap();
        assert_eq!(a, straggler_sample(&m, 16, 99).unwrap());
        assert_ne!(a, straggler_sample(&m, 16, 100).unwrap());
        assert!(a.iter().all(|&d| d >= 1.0));
    }
}
