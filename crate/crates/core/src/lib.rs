//! Exact Monte Carlo simulation of squared Bessel, square-root and Wishart
//! diffusions, transform identities for their transition laws, and
//! real-world pricing under the minimal market model.

// Coefficient tables keep their published digits; `!(x > 0.0)` rejects NaN on purpose.
#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod liesym;
pub mod mlmc;
pub mod pricing;
pub mod processes;
pub mod quad;
pub mod randkit;
pub mod specfun;
pub mod stats;
pub mod wishart;

pub use error::{Error, Result};
