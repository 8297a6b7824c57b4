//! Detection and recovery of locally corrupted node attributes.
//!
//! The workflow has three stages:
//!
//! 1. [`neural`] trains a GCN autoencoder on the observed features;
//!    [`mask`] turns its entrywise reconstruction error into a mask of
//!    trusted entries.
//! 2. [`admm`] recovers the features by minimizing a masked `ℓq` fidelity
//!    plus a degree-weighted `ℓp` penalty on [`framelet`] coefficients,
//!    using an inertial ADMM whose subproblems live in [`prox`].
//! 3. [`pipeline`] wires the stages together with the [`corrupt`]
//!    generators and reports PSNR and mask recall.

pub mod admm;
pub mod corrupt;
pub mod error;
pub mod framelet;
pub mod graph;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod prox;

pub use error::{Error, Result};
