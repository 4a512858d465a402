//! Block composition and the full network.

pub mod checkpoint;
pub mod config;
pub mod net;

pub use checkpoint::{truncate_blocks, Checkpoint, TrainingMeta};
pub use config::{BlockVariant, LayerSpec, ModelConfig, SOURCES};
pub use net::{d2_block, d2_block_forward, BlockTrace, D2BlockParams, D2Net};
