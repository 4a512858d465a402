use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::wav::{load_wav, Audio};
use crate::error::{Error, Result};
use crate::model::SOURCES;

/// Synthetic corpus sample rate.
pub const SYNTH_RATE: u32 = 8000;

/// One track's stems. The mixture is their sample-wise sum.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceSet {
    pub track: String,
    pub sample_rate: u32,
    pub names: Vec<String>,
    /// `stems[source][channel][sample]`.
    pub stems: Vec<Vec<Vec<f64>>>,
}

impl SourceSet {
    pub fn new(track: impl Into<String>, sample_rate: u32, sources: Vec<(String, Vec<Vec<f64>>)>) -> Result<Self> {
        let track = track.into();
        let first = sources
            .first()
            .ok_or_else(|| Error::invalid(format!("track {track} has no sources")))?;
        let (channels, len) = (first.1.len(), first.1.first().map_or(0, Vec::len));
        for (name, stem) in &sources {
            if stem.len() != channels || stem.iter().any(|c| c.len() != len) {
                return Err(Error::invalid(format!(
                    "track {track}: source {name} differs in length or channel count"
                )));
            }
        }
        let (names, stems) = sources.into_iter().unzip();
        Ok(SourceSet {
            track,
            sample_rate,
            names,
            stems,
        })
    }

    pub fn len(&self) -> usize {
        self.stems.first().and_then(|s| s.first()).map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_channels(&self) -> usize {
        self.stems.first().map_or(0, Vec::len)
    }

    pub fn mixture(&self) -> Audio {
        let mut channels = vec![vec![0.0; self.len()]; self.num_channels()];
        for stem in &self.stems {
            for (acc, c) in channels.iter_mut().zip(stem) {
                acc.iter_mut().zip(c).for_each(|(a, v)| *a += v);
            }
        }
        Audio {
            sample_rate: self.sample_rate,
            channels,
        }
    }

    pub fn source(&self, name: &str) -> Option<&[Vec<f64>]> {
        self.names.iter().position(|n| n == name).map(|i| self.stems[i].as_slice())
    }
}

/// Loads `<dir>/<source>.wav` for every standard source name.
pub fn load_track(dir: impl AsRef<Path>) -> Result<SourceSet> {
    let dir = dir.as_ref();
    let mut rate = None;
    let mut sources = Vec::new();
    for name in SOURCES {
        let audio = load_wav(dir.join(format!("{name}.wav")))?;
        if *rate.get_or_insert(audio.sample_rate) != audio.sample_rate {
            return Err(Error::invalid(format!("{}: sources differ in sample rate", dir.display())));
        }
        sources.push((name.to_string(), audio.channels));
    }
    let track = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    SourceSet::new(track, rate.unwrap_or(0), sources)
}

/// Every subdirectory of `root` as a track, in name order.
pub fn load_corpus(root: impl AsRef<Path>) -> Result<Vec<SourceSet>> {
    let root = root.as_ref();
    let mut dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!("{}: no track directories", root.display())));
    }
    dirs.iter().map(load_track).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Splits `len` samples into notes of random length in `[lo, hi)` seconds.
fn segments(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let n = (rng.gen_range(lo..hi) * SYNTH_RATE as f64) as usize;
        let end = (start + n.max(1)).min(len);
        out.push((start, end));
        start = end;
    }
    out
}

/// 10 ms linear fade in and out.
fn envelope(i: usize, n: usize) -> f64 {
    let ramp = (0.01 * SYNTH_RATE as f64) as usize;
    let a = (i as f64 / ramp as f64).min(1.0);
    let r = ((n - i) as f64 / ramp as f64).min(1.0);
    a.min(r)
}

fn vocals(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let sr = SYNTH_RATE as f64;
    let mut out = vec![0.0; len];
    for (s, e) in segments(rng, len, 0.3, 1.0) {
        if rng.gen_bool(0.15) {
            continue;
        }
        let f0 = rng.gen_range(330.0..660.0);
        let rate = rng.gen_range(4.5..6.5);
        let depth = rng.gen_range(0.01..0.03);
        let mut phase = 0.0;
        for i in s..e {
            let t = (i - s) as f64 / sr;
            let f = f0 * (1.0 + depth * (2.0 * PI * rate * t).sin());
            phase += 2.0 * PI * f / sr;
            let mut v = 0.0;
            let mut h = 1;
            while h as f64 * f0 * 1.05 < 0.45 * sr && h <= 8 {
                v += (h as f64 * phase).sin() / h as f64;
                h += 1;
            }
            out[i] = v * envelope(i - s, e - s);
        }
    }
    out
}

fn bass(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let sr = SYNTH_RATE as f64;
    let mut out = vec![0.0; len];
    for (s, e) in segments(rng, len, 0.25, 0.8) {
        let f0: f64 = rng.gen_range(41.0..110.0);
        for i in s..e {
            let ph = 2.0 * PI * f0 * (i - s) as f64 / sr;
            let second = if 2.0 * f0 < 200.0 { 0.35 * (2.0 * ph).sin() } else { 0.0 };
            out[i] = (ph.sin() + second) * envelope(i - s, e - s);
        }
    }
    out
}

fn other(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let sr = SYNTH_RATE as f64;
    let mut out = vec![0.0; len];
    for (s, e) in segments(rng, len, 0.5, 1.5) {
        let root: f64 = rng.gen_range(200.0..330.0);
        let third = if rng.gen_bool(0.5) { 4.0 } else { 3.0 };
        let tones = [root, root * 2f64.powf(third / 12.0), root * 2f64.powf(7.0 / 12.0)];
        for i in s..e {
            let t = (i - s) as f64 / sr;
            let v: f64 = tones
                .iter()
                .map(|f| (2.0 * PI * f * t).sin() + 0.25 * (4.0 * PI * f * t).sin())
                .sum();
            out[i] = v * envelope(i - s, e - s);
        }
    }
    out
}

/// Band-pass biquad (constant 0 dB peak gain).
fn bandpass(x: &[f64], centre: f64, q: f64) -> Vec<f64> {
    let w0 = 2.0 * PI * centre / SYNTH_RATE as f64;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
            (x2, x1, y2, y1) = (x1, v, y1, y);
            y
        })
        .collect()
}

fn drums(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let sr = SYNTH_RATE as f64;
    let beat = 60.0 / rng.gen_range(100.0..140.0);
    let mut noise = vec![0.0; len];
    let mut t = rng.gen_range(0.0..beat);
    while ((t * sr) as usize) < len {
        let start = (t * sr) as usize;
        let tau = rng.gen_range(0.03..0.07);
        let gain = rng.gen_range(0.5..1.0);
        for i in start..len.min(start + (6.0 * tau * sr) as usize) {
            let dt = (i - start) as f64 / sr;
            noise[i] += gain * (-dt / tau).exp() * rng.gen_range(-1.0..1.0);
        }
        t += beat * if rng.gen_bool(0.25) { 0.5 } else { 1.0 };
    }
    bandpass(&noise, rng.gen_range(1500.0..2500.0), 1.2)
}

/// Deterministic desk-scale corpus of mono 8 kHz tracks with four
/// spectrally distinct sources.
pub fn synth_corpus(seed: u64, n_tracks: usize, seconds: f64) -> Result<Vec<SourceSet>> {
    if n_tracks < 2 {
        return Err(Error::invalid("synthetic corpus needs at least 2 tracks"));
    }
    if !(seconds > 0.0) {
        return Err(Error::invalid(format!("track length {seconds} s")));
    }
    let len = (seconds * SYNTH_RATE as f64).round() as usize;
    (0..n_tracks)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let generators: [fn(&mut ChaCha8Rng, usize) -> Vec<f64>; 4] = [vocals, drums, bass, other];
            let sources = SOURCES
                .iter()
                .zip(generators)
                .map(|(name, gen)| {
                    let mut x = gen(&mut rng, len);
                    let level = 0.1 * rng.gen_range(0.5..1.0) / rms(&x).max(1e-12);
                    x.iter_mut().for_each(|v| *v *= level);
                    (name.to_string(), vec![x])
                })
                .collect();
            SourceSet::new(format!("synth{k:03}"), SYNTH_RATE, sources)
        })
        .collect()
}

/// Remixes the corpus: each source's track order is permuted independently,
/// then stems are cut to the shortest member of each new set.
pub fn shuffle_augment(corpus: &[SourceSet], epoch_seed: u64) -> Result<Vec<SourceSet>> {
    let Some(first) = corpus.first() else {
        return Ok(Vec::new());
    };
    if corpus
        .iter()
        .any(|t| t.names != first.names || t.sample_rate != first.sample_rate || t.num_channels() != first.num_channels())
    {
        return Err(Error::invalid("tracks differ in sources, sample rate or channels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let orders: Vec<Vec<usize>> = first
        .names
        .iter()
        .map(|_| {
            let mut o: Vec<usize> = (0..corpus.len()).collect();
            o.shuffle(&mut rng);
            o
        })
        .collect();
    (0..corpus.len())
        .map(|i| {
            let picks: Vec<&SourceSet> = orders.iter().map(|o| &corpus[o[i]]).collect();
            let len = picks.iter().map(|t| t.len()).min().unwrap_or(0);
            let sources = first
                .names
                .iter()
                .enumerate()
                .map(|(s, name)| {
                    let stem = picks[s].stems[s].iter().map(|c| c[..len].to_vec()).collect();
                    (name.clone(), stem)
                })
                .collect();
            SourceSet::new(format!("mix{i:03}"), first.sample_rate, sources)
        })
        .collect()
}

/// Whole-track split: the last `round(n * fraction)` tracks (at least one,
/// leaving at least one for training) validate.
pub fn split_validation(n_tracks: usize, fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_tracks < 2 {
        return Err(Error::invalid("need at least 2 tracks to hold out validation data"));
    }
    let n_val = ((n_tracks as f64 * fraction).round() as usize).clamp(1, n_tracks - 1);
    let cut = n_tracks - n_val;
    Ok(((0..cut).collect(), (cut..n_tracks).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::wav::{save_wav, WavFormat};
    use crate::dsp::{stft, StftConfig};

    fn centroid(x: &[f64]) -> f64 {
        let s = stft(x, StftConfig::desk()).unwrap();
        let hz = SYNTH_RATE as f64 / 128.0;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..s.bins {
            for m in 0..s.frames {
                let p = s.at(0, k, m).norm_sqr();
                num += k as f64 * hz * p;
                den += p;
            }
        }
        num / den
    }

    #[test]
    fn synthesis_is_deterministic() {
        let a = synth_corpus(3, 3, 2.0).unwrap();
        assert_eq!(a, synth_corpus(3, 3, 2.0).unwrap());
        assert_ne!(a, synth_corpus(4, 3, 2.0).unwrap());
        assert_eq!(a[0].len(), 16_000);
        assert_ne!(a[0].stems, a[1].stems);
        assert!(synth_corpus(3, 1, 2.0).is_err());
    }

    #[test]
    fn centroids_are_ordered() {
        let corpus = synth_corpus(5, 6, 4.0).unwrap();
        let mean = |name: &str| {
            corpus.iter().map(|t| centroid(&t.source(name).unwrap()[0])).sum::<f64>() / corpus.len() as f64
        };
        let (b, o, v, d) = (mean("bass"), mean("other"), mean("vocals"), mean("drums"));
        assert!(b < 200.0, "bass {b}");
        assert!(b < o && o < v, "bass {b}, other {o}, vocals {v}");
        assert!(d > v, "drums {d}");
    }

    #[test]
    fn mixture_is_exact_sum() {
        let t = &synth_corpus(1, 2, 1.0).unwrap()[0];
        let m = t.mixture();
        for i in 0..t.len() {
            let s = t.stems[0][0][i] + t.stems[1][0][i] + t.stems[2][0][i] + t.stems[3][0][i];
            assert_eq!(m.channels[0][i], s);
        }
    }

    #[test]
    fn folder_layout_loads() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = synth_corpus(2, 2, 0.5).unwrap();
        for t in &corpus {
            let d = dir.path().join(&t.track);
            std::fs::create_dir(&d).unwrap();
            for (name, stem) in t.names.iter().zip(&t.stems) {
                let a = Audio {
                    sample_rate: t.sample_rate,
                    channels: stem.clone(),
                };
                save_wav(d.join(format!("{name}.wav")), &a, WavFormat::Float32).unwrap();
            }
        }
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        for (l, t) in loaded.iter().zip(&corpus) {
            assert_eq!(l.names, SOURCES);
            let m = l.mixture();
            for i in 0..l.len() {
                let s: f64 = l.stems.iter().map(|s| s[0][i]).sum();
                assert_eq!(m.channels[0][i], s);
                assert!((l.stems[0][0][i] - t.stems[0][0][i]).abs() < 1e-7);
            }
        }
        std::fs::remove_file(dir.path().join("synth000/bass.wav")).unwrap();
        assert!(load_corpus(dir.path()).is_err());
    }

    #[test]
    fn single_track_shuffle_is_identity() {
        let c = synth_corpus(1, 2, 0.5).unwrap();
        let one = vec![c[0].clone()];
        let s = shuffle_augment(&one, 9).unwrap();
        assert_eq!(s[0].stems, one[0].stems);
    }

    #[test]
    fn shuffle_permutes_each_source() {
        let c = synth_corpus(1, 10, 0.25).unwrap();
        let mut moved = false;
        for epoch in 0..5 {
            let s = shuffle_augment(&c, epoch).unwrap();
            for src in 0..4 {
                let mut before: Vec<_> = c.iter().map(|t| t.stems[src].clone()).collect();
                let mut after: Vec<_> = s.iter().map(|t| t.stems[src].clone()).collect();
                moved |= before != after;
                before.sort_by(|a, b| a.partial_cmp(b).unwrap());
                after.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(before, after);
            }
            for t in &s {
                let m = t.mixture();
                for i in 0..t.len() {
                    assert_eq!(m.channels[0][i], t.stems.iter().map(|s| s[0][i]).sum::<f64>());
                }
            }
        }
        assert!(moved);
    }

    #[test]
    fn validation_split_is_disjoint() {
        let (train, val) = split_validation(20, 0.1).unwrap();
        assert_eq!(val, vec![18, 19]);
        assert_eq!(train.len(), 18);
        assert_eq!(split_validation(3, 0.1).unwrap().1, vec![2]);
        assert_eq!(split_validation(2, 0.9).unwrap().0, vec![0]);
        assert!(split_validation(1, 0.1).is_err());
    }
}
