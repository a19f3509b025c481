//! Mean-field Landau-like dynamics on the torus: interaction kernels, the
//! mean-field PDE, the interacting particle SDE, small-N Liouville solves and
//! the relative-entropy diagnostics that compare them.

pub mod concentration;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod liouville;
pub mod meanfield;
pub mod metrics;
pub mod particles;
pub mod profile;
pub mod spectral;

pub use error::{Error, Result};
