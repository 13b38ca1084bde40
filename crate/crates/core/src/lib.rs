//! Numerical laboratory for Marčenko–Pastur analytics and the central limit
//! theorems of resolvent bilinear forms of large sample covariance matrices.

pub mod config;
pub mod ensembles;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod lss;
pub mod montecarlo;
pub mod mp;
pub mod quad;
pub mod resolvent;
pub mod rng;

pub use error::{Error, Result};
