//! Low-degree multicalibration: weight families, a boosting post-processor,
//! audits, and the moment diagnostics that follow from degree-k guarantees.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod boost;
pub mod data;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod numeric;
pub mod predictor;
pub mod synth;
pub mod weights;

pub use error::{McError, Result};
