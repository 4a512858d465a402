//! Audio files, the synthetic corpus, augmentation and training batches.

pub mod batch;
pub mod corpus;
pub mod wav;

pub use batch::{make_batches, plan_clips, Batch, Batches, ClipRef, TrainConfig};
pub use corpus::{load_corpus, load_track, shuffle_augment, split_validation, synth_corpus, SourceSet, SYNTH_RATE};
pub use wav::{load_wav, save_wav, Audio, WavFormat};
