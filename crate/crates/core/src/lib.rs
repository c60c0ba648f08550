//! Distributed non-Bayesian learning over a network: belief updates,
//! concentration bounds and Monte Carlo checks of those bounds.

// negated comparisons reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod belief;
pub mod bounds;
pub mod error;
pub mod hypothesis;
pub mod network;
pub mod numeric;
pub mod sampling;
pub mod scenario;

pub use error::{Error, Result};
