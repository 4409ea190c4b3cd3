//! Gaussian log-likelihood through the H-matrix pipeline:
//! `L(θ) = −(n/2) log 2π − ½ log det C̃ − ½ zᵀ C̃⁻¹ z`.

use std::sync::Arc;
use std::time::Instant;

use crate::covkernel::MaternParams;
use crate::error::{Error, Result};
use crate::geometry::{build_block_tree, build_cluster_tree, validate_locations, BlockClusterTree, Location};
use crate::geometry::{DEFAULT_ETA, DEFAULT_LEAF_SIZE};
use crate::hfactor::{h_cholesky, h_ldl, FactorForm, FactorStatus, HFactor};
use crate::hmatrix::{ApproxMode, HMatrix};

/// H-accuracy used for fitting.
pub const DEFAULT_FIT_EPS: f64 = 1e-6;
/// H-accuracy used for coarse scans.
pub const DEFAULT_SCAN_EPS: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HConfig {
    /// Assembly accuracy `ε`.
    pub eps: f64,
    /// Factorization truncation accuracy; `None` reuses `eps`.
    pub eps_f: Option<f64>,
    pub form: FactorForm,
    pub eta: f64,
    pub leaf_size: usize,
    /// Fixed block rank; overrides `eps` for assembly when set.
    pub rank: Option<usize>,
}

impl Default for HConfig {
    fn default() -> Self {
        HConfig { eps: DEFAULT_FIT_EPS, eps_f: None, form: FactorForm::Ldl, eta: DEFAULT_ETA, leaf_size: DEFAULT_LEAF_SIZE, rank: None }
    }
}

impl HConfig {
    pub fn with_eps(eps: f64) -> Self {
        HConfig { eps, ..Default::default() }
    }

    pub fn eps_f(&self) -> f64 {
        self.eps_f.unwrap_or(self.eps)
    }

    pub fn mode(&self) -> ApproxMode {
        match self.rank {
            Some(k) => ApproxMode::FixedRank(k),
            None => ApproxMode::FixedAccuracy(self.eps),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) || !(self.eps_f() > 0.0 && self.eps_f().is_finite()) {
            return Err(Error::InvalidParams(format!("accuracy must be positive, got {} / {}", self.eps, self.eps_f())));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) || self.leaf_size == 0 {
            return Err(Error::InvalidParams(format!("invalid eta {} or leaf size {}", self.eta, self.leaf_size)));
        }
        self.mode().validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLikResult {
    pub loglik: f64,
    pub logdet: f64,
    /// `zᵀ C̃⁻¹ z`.
    pub quad_form: f64,
    pub n: usize,
    pub seconds: f64,
    pub status: FactorStatus,
}

/// Combines the parts of the log-likelihood.
pub fn combine(n: usize, logdet: f64, quad_form: f64) -> f64 {
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * quad_form
}

/// Observations with a block cluster tree built once and reused for every θ.
#[derive(Clone, Debug)]
pub struct LikelihoodProblem {
    tree: Arc<BlockClusterTree>,
    z: Vec<f64>,
    config: HConfig,
}

impl LikelihoodProblem {
    pub fn new(locations: &[Location], z: &[f64], config: HConfig) -> Result<Self> {
        validate_locations(locations)?;
        if z.len() != locations.len() {
            return Err(Error::DimensionMismatch { expected: locations.len(), got: z.len() });
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite observation at index {i}")));
        }
        config.validate()?;
        let tree = build_tree(locations, &config)?;
        Ok(LikelihoodProblem { tree, z: z.to_vec(), config })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn config(&self) -> &HConfig {
        &self.config
    }

    pub fn tree(&self) -> &Arc<BlockClusterTree> {
        &self.tree
    }

    /// Assembles and factors `C̃(θ)`.
    pub fn factor(&self, params: &MaternParams) -> Result<HFactor> {
        factor_tree(&self.tree, params, &self.config)
    }

    pub fn evaluate(&self, params: &MaternParams) -> Result<LogLikResult> {
        let start = Instant::now();
        let f = self.factor(params)?;
        let logdet = f.log_det()?;
        let v = f.forward_tree(&self.z)?;
        let quad_form = match f.d_tree() {
            Some(d) => v.iter().zip(d).map(|(vi, di)| vi * vi / di).sum(),
            None => v.norm_squared(),
        };
        let n = self.n();
        Ok(LogLikResult {
            loglik: combine(n, logdet, quad_form),
            logdet,
            quad_form,
            n,
            seconds: start.elapsed().as_secs_f64(),
            status: f.status(),
        })
    }
}

pub(crate) fn build_tree(locations: &[Location], config: &HConfig) -> Result<Arc<BlockClusterTree>> {
    let ct = Arc::new(build_cluster_tree(locations, config.leaf_size)?);
    Ok(Arc::new(build_block_tree(ct.clone(), ct, config.eta)?))
}

pub(crate) fn factor_tree(tree: &Arc<BlockClusterTree>, params: &MaternParams, config: &HConfig) -> Result<HFactor> {
    let h = HMatrix::assemble(tree, params, config.mode())?;
    match config.form {
        FactorForm::Ldl => h_ldl(&h, config.eps_f()),
        FactorForm::Cholesky => h_cholesky(&h, config.eps_f()),
    }
}

/// One-shot evaluation with default settings at accuracy `eps`.
pub fn evaluate(locations: &[Location], z: &[f64], params: &MaternParams, eps: f64) -> Result<LogLikResult> {
    LikelihoodProblem::new(locations, z, HConfig::with_eps(eps))?.evaluate(params)
}
