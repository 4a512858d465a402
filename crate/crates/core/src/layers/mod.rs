//! Dilated GRU and dilated grouped convolution layers.

pub mod conv;
pub mod gru;

pub use conv::{
    conv1d, conv_leaky, grouped_conv1d, row_norms, weight_norm, weight_norm_effective,
    weight_normed_conv, ConvGeometry, GroupedConvParams,
};
pub use gru::{
    dilated_gru, dilated_gru_forward, dilated_gru_forward_with_threads,
    dilated_gru_parallel_forward, DilatedGruParams, GruConfig, GruDirectionParams, GruState,
};
