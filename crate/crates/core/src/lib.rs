//! Tensor-neural-network eigensolver.
//!
//! Computes the leading `k` eigenpairs of separable second-order eigenvalue
//! problems by training `k` rank-`p` tensor neural networks against the
//! subspace loss `trace(B⁻¹A)` and extracting eigenpairs with a
//! Rayleigh–Ritz step. All high-dimensional integrals split into products of
//! one-dimensional Gauss quadratures.

pub mod assembly;
pub mod checkpoint;
pub mod densela;
pub mod driver;
pub mod error;
pub mod exec;
pub mod forms;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod quadrature;
pub mod reference;
pub mod subnet;
pub mod tnn;

pub use error::{Error, Result};
pub use exec::Exec;
