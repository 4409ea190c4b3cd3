//! Prediction scores: RMSE, and the mean loss of efficiency (MLOE) and mean
//! misspecification of the mean square error (MMOM) of an approximate model.
//!
//! MLOE and MMOM use a leave-one-out design: each sampled location `s_j` is
//! predicted by simple kriging from the other `n − 1` locations. With
//! `Q = C⁻¹` the leave-one-out error is `−(Q z)_j / Q_jj`, so one column
//! `q = Q_a e_j` of the approximate model gives
//! `E_t[(Ẑ_a − Z)²] = qᵀ C_t q / q_j²`, `E_a[(Ẑ_a − Z)²] = 1 / q_j` and
//! `E_t[(Ẑ_t − Z)²] = 1 / (Q_t)_jj`.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::covkernel::MaternParams;
use crate::dense;
use crate::error::{Error, Result};
use crate::geometry::{validate_locations, Location};
use crate::hmatrix::DENSE_LIMIT;

/// Default number of evaluation locations.
pub const DEFAULT_M: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetricConfig {
    /// Evaluation locations; values above `n` are clamped to `n`.
    pub m: usize,
    pub seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { m: DEFAULT_M, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LooMetrics {
    pub mloe: f64,
    pub mmom: f64,
    /// Number of evaluation locations actually used.
    pub m: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub rmse: f64,
    pub n_t: usize,
    pub loo: Option<LooMetrics>,
}

/// `√(mean((ẑ − z)²))`.
pub fn rmse(z_hat: &[f64], z_true: &[f64]) -> Result<f64> {
    if z_hat.len() != z_true.len() {
        return Err(Error::DimensionMismatch { expected: z_true.len(), got: z_hat.len() });
    }
    if z_hat.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ss: f64 = z_hat.iter().zip(z_true).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / z_hat.len() as f64).sqrt())
}

/// Evaluation locations: `min(m, n)` indices drawn without replacement,
/// ascending.
pub fn evaluation_indices(n: usize, config: &MetricConfig) -> Vec<usize> {
    let m = config.m.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut idx = sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}

/// MLOE and MMOM of `theta_approx` against `theta_true` at `locations`.
pub fn mloe_mmom(
    locations: &[Location],
    theta_true: &MaternParams,
    theta_approx: &MaternParams,
    config: &MetricConfig,
) -> Result<LooMetrics> {
    validate_locations(locations)?;
    let n = locations.len();
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
    }
    if n < 2 {
        return Err(Error::InvalidInput("leave-one-out metrics need at least two locations".into()));
    }
    if config.m == 0 {
        return Err(Error::InvalidInput("M must be at least 1".into()));
    }
    let ct = dense::covariance(locations, theta_true)?;
    let chol_t = dense::cholesky(ct.clone())?;
    let chol_a = dense::cholesky(dense::covariance(locations, theta_approx)?)?;
    let idx = evaluation_indices(n, config);

    let terms: Vec<(f64, f64)> = idx
        .par_iter()
        .map(|&j| {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            let q = chol_a.solve(&e);
            let qj = q[j];
            let et_a = q.dot(&(&ct * &q)) / (qj * qj);
            let ea_a = 1.0 / qj;
            let mut u = e;
            chol_t.l_dirty().solve_lower_triangular_mut(&mut u);
            let et_t = 1.0 / u.norm_squared();
            (et_a / et_t - 1.0, ea_a / et_a - 1.0)
        })
        .collect();
    let m = terms.len() as f64;
    Ok(LooMetrics {
        mloe: terms.iter().map(|t| t.0).sum::<f64>() / m,
        mmom: terms.iter().map(|t| t.1).sum::<f64>() / m,
        m: terms.len(),
    })
}
