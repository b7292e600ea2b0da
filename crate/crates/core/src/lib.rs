//! Fixed-marginal multivariate normal mixtures for asset returns, and the
//! retirement ruin machinery built on them.

pub mod diagnostics;
pub mod ecme;
pub mod em;
pub mod error;
pub mod exec;
pub mod grid;
pub mod lp;
pub mod selection;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
