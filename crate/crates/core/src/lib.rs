// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codebook;
pub mod dsp;
pub mod error;
pub mod filters;
pub mod harmonic;
pub mod joint;
pub mod pipeline;
pub mod segmentation;
pub mod whitening;

pub use error::{Error, Result};
