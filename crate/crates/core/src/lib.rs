//! Estimating the topological entropy of finitely generated group actions on
//! the circle, and checking the fundamental-domain and distortion bounds that
//! relate it to the entropy on the non-wandering set.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ball;
pub mod circle;
pub mod error;
pub mod group;
pub mod pipeline;
pub mod quasimorphism;
pub mod scenario;
pub mod separation;
pub mod wandering;

pub use error::{Error, Result};
