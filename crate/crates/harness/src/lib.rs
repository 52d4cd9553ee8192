//! Experiment driver for the kac-ldp toolkit: configuration, replica-parallel
//! Monte Carlo runs, and CSV/JSON reports.

// `!(x > 0.0)` is the idiom here for rejecting NaN along with the bad range
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod config;
pub mod experiment;
pub mod record;
pub mod stats;
pub mod switching;
pub mod tube;

pub use config::ExperimentConfig;
pub use experiment::{Experiment, Registry};
pub use record::{emit_report, load_record, Format, RunRecord};
