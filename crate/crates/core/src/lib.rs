//! Robust input-output observers for populations of LTI systems.
//!
//! The crate characterizes the spread of a model population as an input
//! multiplicative uncertainty set, synthesizes one correction filter by
//! DK-iteration, and evaluates it against per-member Kalman filters on
//! simulated data.

// `!(x > y)` is used on purpose so NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dkiter;
pub mod error;
pub mod linalg;
pub mod lp;
pub mod lti;
pub mod magfit;
pub mod mu;
pub mod observer;
pub mod pipeline;
pub mod plant;
pub mod popsim;
pub mod riccati;
pub mod synthesis;
pub mod uncertainty;

pub use error::{Error, Result};
pub use lti::{FrequencyGrid, FrequencyResponse, StateSpace};
