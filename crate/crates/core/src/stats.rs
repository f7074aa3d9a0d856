//! Random streams and ensemble statistics.
//!
//! Every path draws from its own ChaCha stream keyed by `(seed, path index)`,
//! so results never depend on how paths are scheduled across workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Random stream for path `index` under master seed `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// How ensemble sums are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Fixed-order pairwise summation; bit-reproducible.
    #[default]
    Pairwise,
    /// Work-stealing parallel sum; reproducible only up to rounding.
    Parallel,
}

impl Reduction {
    pub fn sum(self, values: &[f64]) -> f64 {
        match self {
            Reduction::Pairwise => pairwise_sum(values),
            Reduction::Parallel => values.par_iter().sum(),
        }
    }
}

pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        values.iter().sum()
    } else {
        let (l, r) = values.split_at(values.len() / 2);
        pairwise_sum(l) + pairwise_sum(r)
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_err: 0.0,
            samples: 0,
        }
    }

    /// Two-pass mean and standard error. A constant sample yields that
    /// constant with a standard error of exactly zero.
    pub fn from_samples(values: &[f64], reduction: Reduction) -> Self {
        let n = values.len();
        assert!(n > 0, "empty sample");
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if lo == hi {
            return Self {
                mean: lo,
                std_err: 0.0,
                samples: n,
            };
        }
        let mean = reduction.sum(values) / n as f64;
        if n == 1 {
            return Self {
                mean,
                std_err: f64::INFINITY,
                samples: 1,
            };
        }
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = reduction.sum(&dev) / (n - 1) as f64;
        Self {
            mean,
            std_err: (var / n as f64).sqrt(),
            samples: n,
        }
    }

    /// Standard error of a difference of two independent estimates.
    pub fn joint_se(&self, other: &Estimate) -> f64 {
        (self.std_err * self.std_err + other.std_err * other.std_err).sqrt()
    }
}

/// Ratio `mean(num) / mean(den)` of paired samples with a delta-method
/// standard error.
pub fn ratio_estimate(num: &[f64], den: &[f64], reduction: Reduction) -> Estimate {
    assert_eq!(num.len(), den.len());
    let n = num.len();
    let mn = reduction.sum(num) / n as f64;
    let md = reduction.sum(den) / n as f64;
    let r = mn / md;
    if n < 2 {
        return Estimate {
            mean: r,
            std_err: f64::INFINITY,
            samples: n,
        };
    }
    let resid: Vec<f64> = num
        .iter()
        .zip(den)
        .map(|(a, b)| {
            let e = a - r * b;
            e * e
        })
        .collect();
    let var = reduction.sum(&resid) / (n - 1) as f64;
    Estimate {
        mean: r,
        std_err: (var / n as f64).sqrt() / md.abs(),
        samples: n,
    }
}

/// Evaluates `f` on every path index in parallel; output order follows the
/// index, whatever the worker count.
pub fn per_path<T, F>(paths: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..paths as u64).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn constant_sample_has_zero_error() {
        let e = Estimate::from_samples(&[0.1; 1000], Reduction::Pairwise);
        assert_eq!(e.mean, 0.1);
        assert_eq!(e.std_err, 0.0);
    }

    #[test]
    fn mean_and_error_of_known_sample() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0], Reduction::Pairwise);
        assert_eq!(e.mean, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert!((e.std_err - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: f64 = path_rng(3, 0).random();
        let b: f64 = path_rng(3, 1).random();
        let c: f64 = path_rng(3, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn per_path_order_is_stable_across_pools() {
        let f = |i: u64| path_rng(9, i).random::<f64>();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| per_path(257, f));
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| per_path(257, f));
        assert_eq!(one, four);
        assert_eq!(pairwise_sum(&one), pairwise_sum(&four));
    }

    #[test]
    fn ratio_of_proportional_samples() {
        let den = [1.0, 2.0, 3.0];
        let num = [0.5, 1.0, 1.5];
        let r = ratio_estimate(&num, &den, Reduction::Pairwise);
        assert_eq!(r.mean, 0.5);
        assert_eq!(r.std_err, 0.0);
    }
}
