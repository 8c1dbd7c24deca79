// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod lstm;
pub mod metrics;
mod parallel;
pub mod pipeline;
pub mod postfilter;
pub mod psd;
pub mod scene;
pub mod signal;
pub mod stft;
pub mod wav;
pub mod wpe;

pub use error::{Error, Result};
pub use parallel::parallel_available;
