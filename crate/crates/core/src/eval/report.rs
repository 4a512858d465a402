use std::fmt::Write as _;

use serde::Serialize;

use crate::data::SourceSet;
use crate::error::{Error, Result};
use crate::eval::metrics::{bss_decompose, median, sdr};

pub const METRICS: [&str; 4] = ["SDR", "SIR", "SAR", "ISR"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SourceScores {
    pub source: String,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub isr: f64,
    pub regularized: bool,
}

impl SourceScores {
    pub fn metric(&self, name: &str) -> f64 {
        match name {
            "SDR" => self.sdr,
            "SIR" => self.sir,
            "SAR" => self.sar,
            "ISR" => self.isr,
            _ => f64::NAN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrackScores {
    pub track: String,
    pub sources: Vec<SourceScores>,
}

/// Scores one track; `estimates[source][channel][sample]` in the track's
/// source order. Undefined metrics (silent reference) are NaN.
pub fn score_track(track: &SourceSet, estimates: &[Vec<Vec<f64>>], frame: usize) -> Result<TrackScores> {
    if estimates.len() != track.stems.len() {
        return Err(Error::shape("score_track", &[track.stems.len()], &[estimates.len()]));
    }
    let sources = track
        .names
        .iter()
        .enumerate()
        .map(|(s, name)| {
            let value = sdr(&track.stems[s], &estimates[s], frame)?.unwrap_or(f64::NAN);
            let b = bss_decompose(&track.stems, s, &estimates[s], frame)?;
            Ok(SourceScores {
                source: name.clone(),
                sdr: value,
                sir: b.sir,
                sar: b.sar,
                isr: b.isr,
                regularized: b.regularized,
            })
        })
        .collect::<Result<_>>()?;
    Ok(TrackScores {
        track: track.track.clone(),
        sources,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SourceSummary {
    pub source: String,
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
    pub isr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub medians: Vec<SourceSummary>,
    pub tracks: Vec<TrackScores>,
}

/// Per-source medians over tracks, NaN entries excluded.
pub fn aggregate(tracks: &[TrackScores]) -> Result<Report> {
    let first = tracks.first().ok_or_else(|| Error::invalid("no tracks to aggregate"))?;
    let names: Vec<&str> = first.sources.iter().map(|s| s.source.as_str()).collect();
    if tracks
        .iter()
        .any(|t| t.sources.iter().map(|s| s.source.as_str()).ne(names.iter().copied()))
    {
        return Err(Error::invalid("tracks were scored on different source lists"));
    }
    let medians = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let m = |metric: &str| median(&tracks.iter().map(|t| t.sources[i].metric(metric)).collect::<Vec<_>>());
            SourceSummary {
                source: name.to_string(),
                sdr: m("SDR"),
                sir: m("SIR"),
                sar: m("SAR"),
                isr: m("ISR"),
            }
        })
        .collect();
    Ok(Report {
        medians,
        tracks: tracks.to_vec(),
    })
}

impl Report {
    pub fn median_sdr(&self, source: &str) -> Option<f64> {
        self.medians.iter().find(|m| m.source == source).map(|m| m.sdr)
    }

    /// `track<TAB>source<TAB>metric<TAB>value` rows with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("track\tsource\tmetric\tvalue\n");
        for t in &self.tracks {
            for s in &t.sources {
                for m in METRICS {
                    let _ = writeln!(out, "{}\t{}\t{m}\t{}", t.track, s.source, s.metric(m));
                }
            }
        }
        out
    }

    /// Summary object; NaN medians become `null`.
    pub fn to_json(&self) -> String {
        let medians: serde_json::Map<String, serde_json::Value> = self
            .medians
            .iter()
            .map(|m| {
                let v = serde_json::json!({
                    "SDR": finite(m.sdr), "SIR": finite(m.sir), "SAR": finite(m.sar), "ISR": finite(m.isr)
                });
                (m.source.clone(), v)
            })
            .collect();
        let regularized = self.tracks.iter().flat_map(|t| &t.sources).any(|s| s.regularized);
        serde_json::to_string_pretty(&serde_json::json!({
            "tracks": self.tracks.len(),
            "medians": medians,
            "regularized_projection": regularized,
        }))
        .expect("json encoding")
    }

    /// Tracks by sources matrix of SDR values.
    pub fn heatmap_tsv(&self) -> String {
        let mut out = String::from("track");
        for m in &self.medians {
            let _ = write!(out, "\t{}", m.source);
        }
        out.push('\n');
        for t in &self.tracks {
            out.push_str(&t.track);
            for s in &t.sources {
                let _ = write!(out, "\t{}", s.sdr);
            }
            out.push('\n');
        }
        out
    }
}

fn finite(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}
