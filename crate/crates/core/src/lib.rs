//! Successive-approximation (Picard / Feynman-Kac) solvers for the Burgers
//! equation with unbounded, strictly sublinear initial data, plus the
//! machinery to test the a priori bounds such schemes are expected to obey.

// Negated comparisons (`!(x > 0.0)`) are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod constants;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod picard;
pub mod rng;
pub mod scalar_flows;
pub mod velocity;
pub mod zones;

pub use error::{LabError, LabResult};
