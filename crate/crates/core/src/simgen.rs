//! Synthetic data: exact Gaussian random field samples by dense Cholesky
//! and the Tukey g-and-h marginal transform.
//!
//! Random numbers come from `ChaCha8Rng` seeded with `seed_from_u64`. A
//! uniform variate is `((next_u64 >> 11) + 0.5) · 2⁻⁵³` and a standard normal
//! variate is its image under the normal quantile function.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::covkernel::{cov_block, MaternParams};
use crate::error::{Error, Result};
use crate::geometry::{validate_locations, Location};

/// Largest field that can be sampled densely.
pub const SAMPLE_LIMIT: usize = 16384;

/// Seeded stream of uniform and standard normal variates.
pub struct VariateStream {
    rng: ChaCha8Rng,
    normal: Normal,
}

impl VariateStream {
    pub fn new(seed: u64) -> Self {
        VariateStream { rng: ChaCha8Rng::seed_from_u64(seed), normal: Normal::standard() }
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u = self.uniform();
        self.normal.inverse_cdf(u)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// `n` locations drawn uniformly on the unit square.
pub fn uniform_locations(n: usize, stream: &mut VariateStream) -> Vec<Location> {
    (0..n)
        .map(|_| {
            let x = stream.uniform();
            Location::new(x, stream.uniform())
        })
        .collect()
}

/// Exact sample `Z = L w` of the field with covariance `C(θ) = L Lᵀ`.
pub fn sample_grf(locations: &[Location], params: &MaternParams, seed: u64) -> Result<Vec<f64>> {
    sample_grf_with(locations, params, &mut VariateStream::new(seed))
}

/// As [`sample_grf`], drawing from an existing stream.
pub fn sample_grf_with(locations: &[Location], params: &MaternParams, stream: &mut VariateStream) -> Result<Vec<f64>> {
    validate_locations(locations)?;
    let n = locations.len();
    if n > SAMPLE_LIMIT {
        return Err(Error::TooLarge { n, limit: SAMPLE_LIMIT });
    }
    let idx: Vec<usize> = (0..n).collect();
    let c = cov_block(&idx, &idx, locations, params)?;
    let l = crate::dense::cholesky(c)?.unpack();
    let w = DVector::from_fn(n, |_, _| stream.normal());
    Ok((l * w).as_slice().to_vec())
}

/// Parameters of the Tukey g-and-h transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TukeyParams {
    pub xi: f64,
    pub omega: f64,
    pub g: f64,
    pub h: f64,
}

/// Below this `|g|` the analytic `g → 0` limit is used.
pub const TUKEY_G_LIMIT: f64 = 1e-10;

impl TukeyParams {
    pub fn new(xi: f64, omega: f64, g: f64, h: f64) -> Result<Self> {
        let tp = TukeyParams { xi, omega, g, h };
        tp.validate()?;
        Ok(tp)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.xi, self.omega, self.g, self.h].iter().all(|v| v.is_finite());
        if !finite || self.omega <= 0.0 || self.h < 0.0 {
            return Err(Error::InvalidParams(format!(
                "Tukey g-and-h needs finite values, omega > 0 and h >= 0; got {self:?}"
            )));
        }
        Ok(())
    }

    /// `T(z) = ξ + ω (exp(g z) − 1)/g · exp(h z²/2)`.
    pub fn apply(&self, z: f64) -> f64 {
        let tail = (self.h * z * z / 2.0).exp();
        let skew = if self.g.abs() < TUKEY_G_LIMIT { z } else { (self.g * z).exp_m1() / self.g };
        self.xi + self.omega * skew * tail
    }
}

/// Elementwise Tukey g-and-h transform.
pub fn tukey_gh(z: &[f64], tp: &TukeyParams) -> Vec<f64> {
    z.iter().map(|&v| tp.apply(v)).collect()
}

/// A generated dataset with its train/test partition.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub locations: Vec<Location>,
    pub values: Vec<f64>,
    /// Indices into `locations`, ascending.
    pub train: Vec<usize>,
    /// Indices into `locations`, ascending.
    pub test: Vec<usize>,
}

/// Draws locations, a field sample, an optional Tukey transform and a
/// train/test split, in that order, from one stream.
pub fn generate(
    n: usize,
    params: &MaternParams,
    tukey: Option<&TukeyParams>,
    seed: u64,
    train_fraction: f64,
) -> Result<SyntheticData> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("train fraction must be in (0, 1], got {train_fraction}")));
    }
    if let Some(tp) = tukey {
        tp.validate()?;
    }
    let mut stream = VariateStream::new(seed);
    let locations = uniform_locations(n, &mut stream);
    let mut values = sample_grf_with(&locations, params, &mut stream)?;
    if let Some(tp) = tukey {
        values = tukey_gh(&values, tp);
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(stream.rng());
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SyntheticData { locations, values, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_point_sample() {
        let p = MaternParams::new(1.5, 0.1, 0.5, 0.5).unwrap();
        let z = sample_grf(&[Location::new(0.2, 0.7)], &p, 11).unwrap();
        let w = VariateStream::new(11).normal();
        assert!((z[0] - 2f64.sqrt() * w).abs() < 1e-15);
    }

    #[test]
    fn uniform_is_open_interval() {
        let mut s = VariateStream::new(0);
        for _ in 0..10000 {
            let u = s.uniform();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn marginal_variance_and_correlation() {
        let p = MaternParams::new(2.0, 0.3, 0.5, 0.0).unwrap();
        let locs = [Location::new(0.1, 0.1), Location::new(0.4, 0.1)];
        let reps = 10_000;
        let (mut s0, mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0, 0.0);
        for seed in 0..reps {
            let z = sample_grf(&locs, &p, seed).unwrap();
            s0 += z[0];
            s00 += z[0] * z[0];
            s11 += z[1] * z[1];
            s01 += z[0] * z[1];
        }
        let r = reps as f64;
        let (mean, var) = (s0 / r, s00 / r);
        // standard error of the mean and of the variance estimate
        assert!(mean.abs() < 3.0 * (2.0 / r).sqrt(), "{mean}");
        assert!((var - 2.0).abs() < 3.0 * 2.0 * (2.0 / r).sqrt(), "{var}");
        assert!((var - 2.0).abs() / 2.0 < 0.03);
        let corr = s01 / (s00 * s11).sqrt();
        assert!((corr - (-1f64).exp()).abs() < 0.02, "{corr}");
    }

    #[test]
    fn tukey_examples() {
        let id = TukeyParams::new(0.0, 1.0, 0.0, 0.0).unwrap();
        for z in [-3.0, -0.5, 0.0, 1.25, 4.0] {
            assert_eq!(id.apply(z), z);
        }
        for (g, h) in [(0.5, 0.1), (-0.7, 0.4), (0.0, 0.3)] {
            let tp = TukeyParams::new(1.25, 3.0, g, h).unwrap();
            assert_eq!(tp.apply(0.0), 1.25);
        }
        let tp = TukeyParams::new(1.0, 2.0, 0.2, 0.2).unwrap();
        // 1 + 2·((e^0.2 − 1)/0.2)·e^0.1, evaluated in extended precision
        assert!((tp.apply(1.0) - 3.44687889500355).abs() < 1e-12);
        assert!(TukeyParams::new(0.0, 0.0, 0.1, 0.1).is_err());
        assert!(TukeyParams::new(0.0, 1.0, 0.1, -0.1).is_err());
    }

    #[test]
    fn tukey_limit_is_continuous() {
        for i in 0..=100 {
            let z = -5.0 + 0.1 * i as f64;
            for h in [0.0, 0.2, 0.5] {
                let lim = TukeyParams::new(0.3, 1.7, 0.0, h).unwrap().apply(z);
                let t = TukeyParams::new(0.3, 1.7, 1e-12, h).unwrap().apply(z);
                assert!((t - lim).abs() <= 1e-9, "{z} {t} {lim}");
                // just above the switch the closed form differs by about g·z/2 relative
                let t = TukeyParams::new(0.3, 1.7, 1e-9, h).unwrap().apply(z);
                assert!((t - lim).abs() <= 1e-8 * lim.abs().max(1.0), "{z} {t} {lim}");
            }
        }
    }

    #[test]
    fn generate_is_deterministic_and_splits() {
        let p = MaternParams::new(1.0, 0.1, 0.5, 0.0).unwrap();
        let a = generate(100, &p, None, 7, 0.9).unwrap();
        let b = generate(100, &p, None, 7, 0.9).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.locations, b.locations);
        assert_eq!((a.train.len(), a.test.len()), (90, 10));
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert!(generate(0, &p, None, 7, 0.9).is_err());
        assert!(generate(10, &p, None, 7, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn tukey_monotone(g in -1.0f64..1.0, h in 0.0f64..0.5, xi in -2.0f64..2.0, omega in 0.1f64..3.0) {
            let tp = TukeyParams::new(xi, omega, g, h).unwrap();
            let mut prev = tp.apply(-5.0);
            for i in 1..=200 {
                let t = tp.apply(-5.0 + 0.05 * i as f64);
                prop_assert!(t > prev);
                prev = t;
            }
        }
    }
}
