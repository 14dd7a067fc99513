pub mod certify;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod mpc_expert;
pub mod nn_policy;
pub mod spectral;
pub mod sim;
pub mod train;

pub use error::{Error, Result};

// BLAS/LAPACK for the conic solver's dense PSD cones.
use openblas_src as _;
