//! Timing and storage of assembly and factorization across problem sizes.

use std::time::Instant;

use crate::covkernel::MaternParams;
use crate::dense;
use crate::error::{Error, Result};
use crate::hfactor::{h_cholesky, h_ldl, FactorForm};
use crate::hmatrix::{HMatrix, DENSE_LIMIT};
use crate::loglik::{build_tree, HConfig};
use crate::simgen::{uniform_locations, VariateStream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    /// Tree construction and assembly, fastest repeat.
    pub assemble_s: f64,
    /// Factorization, fastest repeat.
    pub factor_s: f64,
    /// Storage of the assembled matrix.
    pub bytes: usize,
    /// Storage of the factor.
    pub factor_bytes: usize,
    pub max_rank: usize,
    /// Relative log-determinant error against a dense factorization.
    pub logdet_err: Option<f64>,
}

impl BenchRow {
    pub fn total_s(&self) -> f64 {
        self.assemble_s + self.factor_s
    }
}

/// Benchmarks `n` uniform points drawn from `seed`. The smallest time over
/// `repeats` runs is kept; the dense check runs when `n` allows it.
pub fn bench_size(n: usize, params: &MaternParams, h: &HConfig, seed: u64, repeats: usize, dense_check: bool) -> Result<BenchRow> {
    h.validate()?;
    if repeats == 0 {
        return Err(Error::InvalidInput("at least one repeat is required".into()));
    }
    let locs = uniform_locations(n, &mut VariateStream::new(seed));
    let mut row = BenchRow {
        n,
        assemble_s: f64::INFINITY,
        factor_s: f64::INFINITY,
        bytes: 0,
        factor_bytes: 0,
        max_rank: 0,
        logdet_err: None,
    };
    let mut logdet = 0.0;
    for _ in 0..repeats {
        let t0 = Instant::now();
        let tree = build_tree(&locs, h)?;
        let c = HMatrix::assemble(&tree, params, h.mode())?;
        let t1 = Instant::now();
        let f = match h.form {
            FactorForm::Ldl => h_ldl(&c, h.eps_f())?,
            FactorForm::Cholesky => h_cholesky(&c, h.eps_f())?,
        };
        let t2 = Instant::now();
        row.assemble_s = row.assemble_s.min((t1 - t0).as_secs_f64());
        row.factor_s = row.factor_s.min((t2 - t1).as_secs_f64());
        row.bytes = c.storage_bytes().bytes;
        row.factor_bytes = f.l().storage_bytes().bytes;
        row.max_rank = c.max_rank();
        logdet = f.log_det()?;
    }
    if dense_check && n <= DENSE_LIMIT {
        let exact = dense::loglik(&locs, &vec![0.0; n], params)?.logdet;
        row.logdet_err = Some((logdet - exact).abs() / exact.abs());
    }
    Ok(row)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.25)).collect();
        assert!((loglog_slope(&x, &y) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn small_bench_row() {
        let p = MaternParams::new(1.0, 0.1, 0.5, 1e-4).unwrap();
        let r = bench_size(512, &p, &HConfig::with_eps(1e-6), 1, 2, true).unwrap();
        assert_eq!(r.n, 512);
        assert!(r.bytes > 0 && r.factor_bytes > 0 && r.total_s() > 0.0);
        assert!(r.logdet_err.unwrap() < 1e-4);
        assert!(bench_size(64, &p, &HConfig::default(), 1, 0, false).is_err());
    }
}
