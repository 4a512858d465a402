use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::corpus::SourceSet;
use crate::dsp::{features, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub clip_seconds: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// 5-second clips in batches of 20, 50 epochs.
    pub fn desk() -> Self {
        Self::for_clip(5.0)
    }

    /// Batch size chosen so `batch_size * clip_seconds` stays at 100 s.
    pub fn for_clip(clip_seconds: f64) -> Self {
        TrainConfig {
            clip_seconds,
            batch_size: ((100.0 / clip_seconds).round() as usize).max(1),
            epochs: 50,
            validation_fraction: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_seconds > 0.0) || self.batch_size == 0 {
            return Err(Error::invalid("clip length and batch size must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid(format!("validation fraction {}", self.validation_fraction)));
        }
        Ok(())
    }
}

/// One channel of one subclip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipRef {
    pub track: usize,
    pub channel: usize,
    pub start: usize,
    pub len: usize,
}

/// Mixture features `[B x D x T]` and targets `[B x S x D x T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub mix: Tensor<f32>,
    pub targets: Tensor<f32>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.mix.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.mix.shape()[2]
    }

    /// Example `b` as (`[D x T]`, `[S*D x T]`).
    pub fn example(&self, b: usize) -> (Tensor<f32>, Tensor<f32>) {
        let (d, t) = (self.mix.shape()[1], self.mix.shape()[2]);
        let s = self.targets.shape()[1];
        let m = &self.mix.data()[b * d * t..(b + 1) * d * t];
        let y = &self.targets.data()[b * s * d * t..(b + 1) * s * d * t];
        (
            Tensor::new(&[d, t], m.to_vec()).expect("batch geometry"),
            Tensor::new(&[s * d, t], y.to_vec()).expect("batch geometry"),
        )
    }
}

/// Cuts every track channel into consecutive clips of `clip_seconds`;
/// tracks shorter than that contribute one clip of their full length.
pub fn plan_clips(corpus: &[SourceSet], stft: &StftConfig, cfg: &TrainConfig) -> Result<Vec<ClipRef>> {
    cfg.validate()?;
    let clip = (cfg.clip_seconds * stft.sample_rate as f64).round() as usize;
    if clip < stft.window_size {
        return Err(Error::invalid(format!(
            "clip of {clip} samples is shorter than the {}-sample window",
            stft.window_size
        )));
    }
    let mut clips = Vec::new();
    for (i, t) in corpus.iter().enumerate() {
        if t.sample_rate != stft.sample_rate {
            return Err(Error::invalid(format!(
                "track {} is {} Hz, STFT expects {} Hz",
                t.track, t.sample_rate, stft.sample_rate
            )));
        }
        let len = t.len();
        if len < stft.window_size {
            return Err(Error::invalid(format!("track {} is shorter than one window", t.track)));
        }
        for channel in 0..t.num_channels() {
            if len < clip {
                clips.push(ClipRef { track: i, channel, start: 0, len });
            } else {
                clips.extend((0..len / clip).map(|k| ClipRef {
                    track: i,
                    channel,
                    start: k * clip,
                    len: clip,
                }));
            }
        }
    }
    Ok(clips)
}

/// Lazily featurized batches; clip order is shuffled by `seed` and
/// clips of unequal length never share a batch.
pub struct Batches<'a> {
    corpus: &'a [SourceSet],
    engine: Stft,
    groups: std::vec::IntoIter<Vec<ClipRef>>,
}

impl<'a> Batches<'a> {
    fn featurize(&self, group: &[ClipRef]) -> Result<Batch> {
        let mut mix = Vec::new();
        let mut targets = Vec::new();
        let mut dims = None;
        for c in group {
            let track = &self.corpus[c.track];
            let range = c.start..c.start + c.len;
            let stems: Vec<Vec<f64>> = track.stems.iter().map(|s| s[c.channel][range.clone()].to_vec()).collect();
            let mut m = vec![0.0; c.len];
            for s in &stems {
                m.iter_mut().zip(s).for_each(|(a, v)| *a += v);
            }
            let fm = features::<f32>(&self.engine.analyse(&[m])?).remove(0);
            dims = Some((fm.shape()[0], fm.shape()[1]));
            mix.extend_from_slice(fm.data());
            for s in stems {
                targets.extend_from_slice(features::<f32>(&self.engine.analyse(&[s])?)[0].data());
            }
        }
        let (d, t) = dims.ok_or_else(|| Error::invalid("empty batch"))?;
        let b = group.len();
        let s = self.corpus[group[0].track].stems.len();
        Ok(Batch {
            mix: Tensor::new(&[b, d, t], mix)?,
            targets: Tensor::new(&[b, s, d, t], targets)?,
        })
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let group = self.groups.next()?;
        Some(self.featurize(&group))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.groups.len();
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches<'_> {}

pub fn make_batches<'a>(
    corpus: &'a [SourceSet],
    stft: &StftConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Batches<'a>> {
    let mut clips = plan_clips(corpus, stft, cfg)?;
    clips.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut by_len: Vec<(usize, Vec<ClipRef>)> = Vec::new();
    for c in clips {
        match by_len.iter_mut().find(|(l, _)| *l == c.len) {
            Some((_, v)) => v.push(c),
            None => by_len.push((c.len, vec![c])),
        }
    }
    let groups: Vec<Vec<ClipRef>> = by_len
        .into_iter()
        .flat_map(|(_, v)| v.chunks(cfg.batch_size).map(<[ClipRef]>::to_vec).collect::<Vec<_>>())
        .collect();
    Ok(Batches {
        corpus,
        engine: Stft::new(*stft)?,
        groups: groups.into_iter(),
    })
}
