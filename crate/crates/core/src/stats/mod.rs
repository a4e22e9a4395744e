//! Evaluation metrics and benchmark statistics.
//!
//! Everything here is a pure function over slices, so it is safe to call from
//! any thread. The classification metrics score agent-produced predictions on
//! the held-out split; the summary statistics aggregate those scores across
//! repeated runs of a method on a dataset.

mod classification;
mod summary;
mod welch;

pub use classification::{accuracy, average_precision};
pub use summary::{
    aggregate, paired_improvement, success_rate, Aggregate, PairKey, PairedComparison,
};
pub use welch::{regularized_incomplete_beta, student_t_two_sided_p, welch_t_test, WelchTest};

use thiserror::Error;

/// Errors raised by metric and statistics routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("input is empty")]
    Empty,

    #[error("length mismatch: {left} labels vs {right} predictions")]
    LengthMismatch { left: usize, right: usize },

    #[error("average precision is undefined without positive labels")]
    NoPositives,

    #[error("score at index {0} is not a finite number")]
    NonFiniteScore(usize),

    #[error("each sample needs at least 2 observations (got {left} and {right})")]
    SampleTooSmall { left: usize, right: usize },

    #[error("t statistic undefined: both samples have zero variance")]
    ZeroVariance,

    #[error("paired inputs have mismatched keys: {0}")]
    KeyMismatch(String),
}
