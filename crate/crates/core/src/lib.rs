//! Hierarchical-matrix Gaussian-process toolkit for scattered 2-D data.
//!
//! Evaluates the Gaussian log-likelihood under Matérn covariance through an
//! H-matrix LDLᵀ factorization, estimates the Matérn parameters by
//! coordinate-wise Brent maximization, predicts by kriging, and scores the
//! results against a kNN baseline.

pub mod bench;
pub mod cli;
pub mod covkernel;
pub mod dense;
pub mod error;
pub mod geometry;
pub mod hfactor;
pub mod hmatrix;
pub mod io;
pub mod knn;
pub mod krige;
pub mod linalg;
pub mod loglik;
pub mod metrics;
pub mod mle;
pub mod simgen;

pub use error::{Error, Result};
