//! STFT analysis/synthesis, log-magnitude features and ratio-mask Wiener filtering.

pub mod features;
pub mod stft;
pub mod wiener;

pub use features::{features, invert_features, with_mixture_phase};
pub use stft::{istft, stft, Spectrogram, Stft, StftConfig, WindowKind};
pub use wiener::{wiener_filter, wiener_masks, WIENER_EPS};
