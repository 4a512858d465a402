//! Separation metrics and track aggregation.

pub mod metrics;
pub mod report;

pub use metrics::{bss_decompose, decompose, median, sdr, BssScores, Decomposition, SDR_CAP, SILENCE};
pub use report::{aggregate, score_track, Report, SourceScores, SourceSummary, TrackScores, METRICS};
