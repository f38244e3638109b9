//! Conditional flow matching over activation vectors.
//!
//! The engine learns a velocity field `v(a_t, t, c, layer, position)` that
//! transports a standard Gaussian prior onto condition-specific activation
//! distributions. Once trained, the same field is used three ways:
//!
//! * **generation**: integrate a prior sample from `t = 0` to `t = 1`;
//! * **editing**: integrate an activation backward to `tau = 1 - lambda` under
//!   its source condition, then forward to `t = 1` under a target condition;
//! * **classification**: run the same backward/forward cycle under each
//!   candidate condition and pick the one that reconstructs the input best.
//!
//! All model math is `f64`. Corpus payloads are stored as `f32` and widened on
//! use. The guide in `book/` walks through each piece with runnable listings.

pub mod analysis;
pub mod classify;
pub mod corpus;
mod error;
pub mod flow;
pub mod model;
pub mod numerics;
pub mod protocol;
pub mod train;

pub use error::{Error, Result};
