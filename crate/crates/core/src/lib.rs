//! Selective segmentation of linear regressions: which coefficients change
//! at which break dates.

pub mod active;
pub mod error;
pub mod linalg;
pub mod regress;
pub mod selo;

pub use active::ActiveSet;
pub use error::{Error, Result};
pub use regress::{Dataset, Segmentation};
pub mod quad;
pub mod select;
pub mod bayes;
pub mod detect;
pub mod uncertainty;
