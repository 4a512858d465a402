//! Music source separation with stacked Dilated GRU / dilated grouped
//! convolution blocks.

pub mod cli;
pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
