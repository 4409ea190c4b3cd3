//! Dense reference computations used as test oracles, in benchmarks, and by
//! the metrics module. All sizes are capped at [`DENSE_LIMIT`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::covkernel::{cov_block, MaternKernel, MaternParams};
use crate::error::{Error, Result};
use crate::geometry::{validate_locations, Location};
use crate::hmatrix::DENSE_LIMIT;

fn guard(n: usize) -> Result<()> {
    if n > DENSE_LIMIT {
        return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
    }
    Ok(())
}

/// Full covariance matrix `C(θ)` including the nugget on the diagonal.
pub fn covariance(locations: &[Location], params: &MaternParams) -> Result<DMatrix<f64>> {
    guard(locations.len())?;
    let idx: Vec<usize> = (0..locations.len()).collect();
    cov_block(&idx, &idx, locations, params)
}

/// Nugget-free cross covariance between two point sets.
pub fn cross_covariance(rows: &[Location], cols: &[Location], params: &MaternParams) -> Result<DMatrix<f64>> {
    params.validate()?;
    let k = MaternKernel::new(*params);
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| k.cov(rows[i].dist(&cols[j]))))
}

/// Cholesky factor of `c`, reporting the first failing pivot.
pub fn cholesky(c: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = c.nrows();
    let diag = c.diagonal();
    Cholesky::new(c).ok_or_else(|| {
        let index = (0..n).find(|&i| diag[i] <= 0.0).unwrap_or(0);
        Error::NotSpd { index, value: f64::NAN }
    })
}

/// Dense evaluation of the Gaussian log-likelihood.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseLogLik {
    pub loglik: f64,
    pub logdet: f64,
    pub quad_form: f64,
}

pub fn loglik(locations: &[Location], z: &[f64], params: &MaternParams) -> Result<DenseLogLik> {
    validate_locations(locations)?;
    if z.len() != locations.len() {
        return Err(Error::DimensionMismatch { expected: locations.len(), got: z.len() });
    }
    let chol = cholesky(covariance(locations, params)?)?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let mut v = DVector::from_column_slice(z);
    chol.l_dirty().solve_lower_triangular_mut(&mut v);
    let quad_form = v.norm_squared();
    let n = z.len() as f64;
    Ok(DenseLogLik {
        loglik: -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * quad_form,
        logdet,
        quad_form,
    })
}

/// Dense kriging mean `C21 C11⁻¹ z`.
pub fn predict(train: &[Location], z: &[f64], new: &[Location], params: &MaternParams) -> Result<Vec<f64>> {
    if z.len() != train.len() {
        return Err(Error::DimensionMismatch { expected: train.len(), got: z.len() });
    }
    let chol = cholesky(covariance(train, params)?)?;
    let w = chol.solve(&DVector::from_column_slice(z));
    let c21 = cross_covariance(new, train, params)?;
    Ok((c21 * w).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_covariance_loglik() {
        let locs = [Location::new(0.0, 0.0), Location::new(1.0, 0.0)];
        let p = MaternParams::new(1.0, 1e-3, 0.5, 0.0).unwrap();
        let r = loglik(&locs, &[1.0, 1.0], &p).unwrap();
        assert!((r.loglik - (-(2.0 * std::f64::consts::PI).ln() - 1.0)).abs() < 1e-14);
        assert!((r.loglik + 2.837877066).abs() < 1e-9);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let locs = [Location::new(0.0, 0.0), Location::new(0.0, 0.0)];
        let p = MaternParams::new(1.0, 0.1, 0.5, 0.0).unwrap();
        assert!(matches!(loglik(&locs, &[1.0, 1.0], &p), Err(Error::NotSpd { .. })));
    }
}
