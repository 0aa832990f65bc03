pub mod admissibility;
pub mod classical;
pub mod cli;
pub mod error;
pub mod numkit;
pub mod perturbation;
pub mod semigroup;
pub mod toeplitz;
pub mod transport;

pub use error::{Error, Result};
