//! Glauber dynamics with Kac potentials, its mesoscopic limit, and the
//! large-deviation cost of interface motion.

// `!(x > 0.0)` is the idiom here for rejecting NaN along with the bad range
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod error;
pub mod glauber;
pub mod kac;
pub mod kernel;
pub mod mesoscopic;
pub mod quad;
pub mod rng;
pub mod schedule;
pub mod snapshot;
pub mod tubelet;

pub use error::{Error, Result};
