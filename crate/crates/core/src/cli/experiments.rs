use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cli::separate::separate_channels;
use crate::data::SourceSet;
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::eval::{aggregate, median, score_track, Report};
use crate::model::{truncate_blocks, Checkpoint, D2Net, ModelConfig};
use crate::numerics::Tensor;

/// Scores the network on every track of `corpus`, one-second frames.
pub fn evaluate_model(net: &D2Net<f32>, stft: &StftConfig, corpus: &[SourceSet], workers: usize) -> Result<Report> {
    let scores = corpus
        .iter()
        .map(|t| {
            let est = separate_channels(net, stft, &t.mixture(), workers)?;
            score_track(t, &est, t.sample_rate as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(&scores)
}

/// Scores the unprocessed mixture as every source's estimate.
pub fn evaluate_mixture_baseline(corpus: &[SourceSet]) -> Result<Report> {
    let scores = corpus
        .iter()
        .map(|t| {
            let mix = t.mixture().channels;
            score_track(t, &vec![mix; t.stems.len()], t.sample_rate as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate(&scores)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub dilation: usize,
    pub workers: usize,
    pub frames: usize,
    pub runs: usize,
    pub median_ms: f64,
    pub std_ms: f64,
}

/// Wall time of full forward passes for every (dilation, workers, frames)
/// cell; every block's GRU gets the same dilation.
pub fn bench(
    base: &ModelConfig,
    dilations: &[usize],
    workers: &[usize],
    frames: &[usize],
    runs: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if runs == 0 {
        return Err(Error::invalid("need at least one timed run"));
    }
    let mut rows = Vec::new();
    for &t in frames {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[base.freq_bins, t], |_| rng.gen_range(0.0f32..3.0));
        let mut cells = Vec::new();
        for &d in dilations {
            let cfg = ModelConfig {
                gru_dilations: vec![d; base.num_blocks],
                ..base.clone()
            };
            let net = D2Net::<f32>::init(cfg, seed)?;
            for &w in workers {
                net.forward(&x, w)?;
                cells.push((d, w, net.clone(), Vec::with_capacity(runs)));
            }
        }
        // round-robin so slow drift of the host hits every setting alike
        for _ in 0..runs {
            for (_, w, net, times) in cells.iter_mut() {
                let t0 = Instant::now();
                net.forward(&x, *w)?;
                times.push(t0.elapsed().as_secs_f64() * 1e3);
            }
        }
        for (d, w, _, mut times) in cells {
            let mean = times.iter().sum::<f64>() / runs as f64;
            let var = times.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / runs as f64;
            times.sort_by(f64::total_cmp);
            rows.push(BenchRow {
                dilation: d,
                workers: w,
                frames: t,
                runs,
                median_ms: median(&times),
                std_ms: var.sqrt(),
            });
        }
    }
    Ok(rows)
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut s = String::from("frames\tdilation\tworkers\truns\tmedian_ms\tstd_ms\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.3}\t{:.3}",
            r.frames, r.dilation, r.workers, r.runs, r.median_ms, r.std_ms
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub keep: usize,
    pub source: String,
    /// Median over tracks.
    pub sdr: f64,
    /// Mean over tracks of the estimate's RMS.
    pub rms: f64,
}

/// Separates the corpus with the first `keep` blocks of the checkpoint for
/// every requested `keep`, without retraining.
pub fn ablate(checkpoint: &Checkpoint, corpus: &[SourceSet], keeps: &[usize], workers: usize) -> Result<Vec<AblationRow>> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty evaluation corpus"));
    }
    let mut rows = Vec::new();
    for &keep in keeps {
        let net = truncate_blocks(checkpoint, keep)?;
        let mut scores = Vec::new();
        let mut rms = vec![0.0; net.config().num_sources()];
        for t in corpus {
            let est = separate_channels(&net, &checkpoint.stft, &t.mixture(), workers)?;
            for (acc, e) in rms.iter_mut().zip(&est) {
                let n: usize = e.iter().map(Vec::len).sum();
                let energy: f64 = e.iter().flatten().map(|v| v * v).sum();
                *acc += (energy / n.max(1) as f64).sqrt() / corpus.len() as f64;
            }
            scores.push(score_track(t, &est, t.sample_rate as usize)?);
        }
        let report = aggregate(&scores)?;
        for (m, r) in report.medians.iter().zip(rms) {
            rows.push(AblationRow {
                keep,
                source: m.source.clone(),
                sdr: m.sdr,
                rms: r,
            });
        }
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("keep\tsource\tsdr_db\trms\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{:.4}\t{:.6}", r.keep, r.source, r.sdr, r.rms);
    }
    s
}
