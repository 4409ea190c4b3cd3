//! Kriging prediction `Ẑ₂ = C₂₁ C₁₁⁻¹ Z₁` through the H-matrix factor.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::covkernel::{MaternKernel, MaternParams};
use crate::dense;
use crate::error::{Error, Result};
use crate::geometry::{validate_locations, Location};
use crate::hmatrix::DENSE_LIMIT;
use crate::loglik::{build_tree, factor_tree, HConfig};

/// Test points per streamed block of `C₂₁`.
pub const BATCH: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionResult {
    pub values: Vec<f64>,
    /// Pointwise kriging variance when requested at small scale.
    pub variance: Option<Vec<f64>>,
    pub seconds: f64,
}

/// Kriging weights `w = C̃₁₁⁻¹ Z₁` for one training set and θ.
#[derive(Clone, Debug)]
pub struct KrigingModel {
    train: Vec<Location>,
    weights: Vec<f64>,
    kernel: MaternKernel,
}

impl KrigingModel {
    pub fn new(train: &[Location], z: &[f64], params: &MaternParams, config: &HConfig) -> Result<Self> {
        validate_locations(train)?;
        if z.len() != train.len() {
            return Err(Error::DimensionMismatch { expected: train.len(), got: z.len() });
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite observation at index {i}")));
        }
        params.validate()?;
        let tree = build_tree(train, config)?;
        let factor = factor_tree(&tree, params, config)?;
        let weights = factor.solve_factored(z)?;
        Ok(KrigingModel { train: train.to_vec(), weights, kernel: MaternKernel::new(*params) })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Conditional mean at `new`; `C₂₁` carries no nugget, even for test
    /// points that coincide with training points.
    pub fn predict(&self, new: &[Location]) -> Result<Vec<f64>> {
        validate_locations(new).or_else(|e| if new.is_empty() { Ok(()) } else { Err(e) })?;
        let out: Vec<Vec<f64>> = new
            .par_chunks(BATCH)
            .map(|batch| {
                batch
                    .iter()
                    .map(|p| self.train.iter().zip(&self.weights).map(|(t, w)| self.kernel.cov(p.dist(t)) * w).sum())
                    .collect()
            })
            .collect();
        Ok(out.concat())
    }
}

/// Predicts at `new` from observations `z` at `train`.
pub fn predict(
    train: &[Location],
    z: &[f64],
    new: &[Location],
    params: &MaternParams,
    config: &HConfig,
) -> Result<PredictionResult> {
    let start = Instant::now();
    let model = KrigingModel::new(train, z, params, config)?;
    let values = model.predict(new)?;
    Ok(PredictionResult { values, variance: None, seconds: start.elapsed().as_secs_f64() })
}

/// `diag(C₂₂ − C₂₁ C₁₁⁻¹ C₁₂)` by dense Cholesky, with `C₂₂` diagonal
/// `σ² + τ²`. Rounding below zero is clipped to zero.
pub fn kriging_variance_dense(train: &[Location], new: &[Location], params: &MaternParams) -> Result<Vec<f64>> {
    if train.len() > DENSE_LIMIT {
        return Err(Error::TooLarge { n: train.len(), limit: DENSE_LIMIT });
    }
    let chol = dense::cholesky(dense::covariance(train, params)?)?;
    let c21 = dense::cross_covariance(new, train, params)?;
    let sill = params.sill();
    Ok((0..new.len())
        .map(|i| {
            let mut v = DVector::from_iterator(train.len(), c21.row(i).iter().copied());
            chol.l_dirty().solve_lower_triangular_mut(&mut v);
            (sill - v.norm_squared()).max(0.0)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{generate, sample_grf};
    use nalgebra::DMatrix;

    fn split(n: usize, m: usize, p: &MaternParams, seed: u64) -> (Vec<Location>, Vec<f64>, Vec<Location>) {
        let d = generate(n + m, p, None, seed, 1.0).unwrap();
        let train = d.locations[..n].to_vec();
        let z = d.values[..n].to_vec();
        (train, z, d.locations[n..].to_vec())
    }

    #[test]
    fn interpolates_without_nugget() {
        let p = MaternParams::new(1.0, 0.1, 1.5, 0.0).unwrap();
        let (train, z, _) = split(200, 0, &p, 1);
        let r = predict(&train, &z, &train[..20], &p, &HConfig::with_eps(1e-10)).unwrap();
        for i in 0..20 {
            assert!((r.values[i] - z[i]).abs() < 1e-6, "{} {}", r.values[i], z[i]);
        }
        assert!(predict(&train, &z, &[], &p, &HConfig::default()).unwrap().values.is_empty());
    }

    #[test]
    fn matches_dense_oracle() {
        let p = MaternParams::new(1.0, 0.1, 0.8, 1e-3).unwrap();
        let (train, z, new) = split(512, 64, &p, 4);
        let h = predict(&train, &z, &new, &p, &HConfig::with_eps(1e-6)).unwrap().values;
        let d = dense::predict(&train, &z, &new, &p).unwrap();
        let num: f64 = h.iter().zip(&d).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = d.iter().map(|b| b * b).sum();
        assert!((num / den).sqrt() <= 1e-4, "{}", (num / den).sqrt());
    }

    #[test]
    fn linear_in_observations() {
        let p = MaternParams::new(1.0, 0.15, 0.5, 1e-2).unwrap();
        let (train, z, new) = split(300, 30, &p, 6);
        let z2 = sample_grf(&train, &p, 99).unwrap();
        let cfg = HConfig::with_eps(1e-8);
        let comb: Vec<f64> = z.iter().zip(&z2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let pa = predict(&train, &z, &new, &p, &cfg).unwrap().values;
        let pb = predict(&train, &z2, &new, &p, &cfg).unwrap().values;
        let pc = predict(&train, &comb, &new, &p, &cfg).unwrap().values;
        for i in 0..new.len() {
            assert!((pc[i] - (2.0 * pa[i] - 0.5 * pb[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_edge_cases_and_oracle() {
        let p = MaternParams::new(1.3, 0.1, 0.5, 0.0).unwrap();
        let (train, _, new) = split(128, 16, &p, 8);
        let far = [train[5], Location::new(1e6, 1e6)];
        let v = kriging_variance_dense(&train, &far, &p).unwrap();
        assert!(v[0].abs() < 1e-10);
        assert!((v[1] - 1.3).abs() < 1e-12);

        let v = kriging_variance_dense(&train, &new, &p).unwrap();
        let c = dense::covariance(&train, &p).unwrap();
        let inv = c.try_inverse().unwrap();
        let c21 = dense::cross_covariance(&new, &train, &p).unwrap();
        for i in 0..new.len() {
            let row: DMatrix<f64> = c21.rows(i, 1).into_owned();
            let q = (&row * &inv * row.transpose())[(0, 0)];
            assert!((v[i] - (1.3 - q)).abs() < 1e-10);
            assert!(v[i] >= 0.0 && v[i] <= 1.3);
        }
    }

    #[test]
    fn error_shrinks_with_eps() {
        let p = MaternParams::new(1.0, 0.2, 0.5, 1e-3).unwrap();
        let (train, z, new) = split(512, 64, &p, 12);
        let d = dense::predict(&train, &z, &new, &p).unwrap();
        let err: Vec<f64> = [1e-2, 1e-4, 1e-6]
            .iter()
            .map(|&e| {
                let h = predict(&train, &z, &new, &p, &HConfig::with_eps(e)).unwrap().values;
                h.iter().zip(&d).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        assert!(err[0] >= err[1] && err[1] >= err[2], "{err:?}");
    }
}
