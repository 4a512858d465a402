use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WindowKind {
    /// Periodic Hann window.
    Hann,
}

impl WindowKind {
    pub fn samples(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("hann")
    }
}

impl FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(WindowKind::Hann),
            _ => Err(Error::invalid(format!("unknown window `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
}

impl StftConfig {
    /// 128-sample window, 3/4 overlap, 8 kHz.
    pub fn desk() -> Self {
        StftConfig {
            window_size: 128,
            hop: 32,
            window: WindowKind::Hann,
            sample_rate: 8000,
        }
    }

    /// 4096-sample window, 3/4 overlap, 44.1 kHz.
    pub fn paper() -> Self {
        StftConfig {
            window_size: 4096,
            hop: 1024,
            window: WindowKind::Hann,
            sample_rate: 44100,
        }
    }

    pub fn bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Frames produced for `len` samples: `ceil(len / hop)`.
    pub fn frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 || self.window_size % 2 != 0 {
            return Err(Error::invalid(format!(
                "window size {} must be even and at least 2",
                self.window_size
            )));
        }
        if self.hop == 0 || self.hop > self.window_size {
            return Err(Error::invalid(format!(
                "hop {} must lie in 1..={}",
                self.hop, self.window_size
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        Ok(())
    }

    /// Spread (max - min) of the squared-window overlap-add sum over one
    /// hop period; zero for a perfectly COLA configuration.
    pub fn cola_deviation(&self) -> f64 {
        let w = self.window.samples(self.window_size);
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| {
                (n..self.window_size)
                    .step_by(self.hop)
                    .map(|i| w[i] * w[i])
                    .sum()
            })
            .collect();
        let max = sums.iter().copied().fold(f64::MIN, f64::max);
        let min = sums.iter().copied().fold(f64::MAX, f64::min);
        max - min
    }

    pub fn check_cola(&self) -> Result<()> {
        self.validate()?;
        let dev = self.cola_deviation();
        if dev > 1e-9 {
            return Err(Error::invalid(format!(
                "window {} with hop {} violates COLA (deviation {dev:e})",
                self.window_size, self.hop
            )));
        }
        Ok(())
    }
}

/// One-sided complex spectrogram, `[D x T]` per channel (row-major, bin-major).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub config: StftConfig,
    pub bins: usize,
    pub frames: usize,
    /// Length of the analysed signal, restored by [`istft`].
    pub num_samples: usize,
    pub channels: Vec<Vec<Complex64>>,
}

impl Spectrogram {
    pub fn zeros(config: StftConfig, frames: usize, num_samples: usize, channels: usize) -> Self {
        let bins = config.bins();
        Spectrogram {
            config,
            bins,
            frames,
            num_samples,
            channels: vec![vec![Complex64::new(0.0, 0.0); bins * frames]; channels],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn at(&self, channel: usize, bin: usize, frame: usize) -> Complex64 {
        self.channels[channel][bin * self.frames + frame]
    }

    /// `|X|` per channel, `[D x T]`.
    pub fn magnitudes(&self) -> Vec<Vec<f64>> {
        self.channels
            .iter()
            .map(|c| c.iter().map(|z| z.norm()).collect())
            .collect()
    }

    pub fn same_geometry(&self, other: &Spectrogram) -> bool {
        self.config == other.config
            && self.bins == other.bins
            && self.frames == other.frames
            && self.num_samples == other.num_samples
            && self.channels.len() == other.channels.len()
    }

    /// Element-wise sum; geometries must agree.
    pub fn add(&self, other: &Spectrogram) -> Result<Spectrogram> {
        if !self.same_geometry(other) {
            return Err(Error::shape(
                "spectrogram add",
                &[self.channels.len(), self.bins, self.frames],
                &[other.channels.len(), other.bins, other.frames],
            ));
        }
        let mut out = self.clone();
        for (a, b) in out.channels.iter_mut().zip(&other.channels) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(out)
    }
}

/// Reusable analysis/synthesis engine for one configuration.
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Stft {
            config,
            window: config.window.samples(config.window_size),
            forward: planner.plan_fft_forward(config.window_size),
            inverse: planner.plan_fft_inverse(config.window_size),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// Start sample of frame `m`; frames are centred on `m * hop`.
    fn frame_start(&self, m: usize) -> isize {
        (m * self.config.hop) as isize - (self.config.window_size / 2) as isize
    }

    fn analyse_channel(&self, wave: &[f64], frames: usize) -> Vec<Complex64> {
        let n = self.config.window_size;
        let bins = self.config.bins();
        let mut out = vec![Complex64::new(0.0, 0.0); bins * frames];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for m in 0..frames {
            let start = self.frame_start(m);
            for (j, slot) in buf.iter_mut().enumerate() {
                let idx = start + j as isize;
                let s = if idx >= 0 && (idx as usize) < wave.len() {
                    wave[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex64::new(s * self.window[j], 0.0);
            }
            self.forward.process(&mut buf);
            for k in 0..bins {
                out[k * frames + m] = buf[k];
            }
        }
        out
    }

    pub fn analyse(&self, channels: &[Vec<f64>]) -> Result<Spectrogram> {
        let len = channels.first().map_or(0, Vec::len);
        if len == 0 {
            return Err(Error::invalid("cannot analyse an empty signal"));
        }
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::invalid("channels differ in length"));
        }
        let frames = self.config.frames(len);
        Ok(Spectrogram {
            config: self.config,
            bins: self.config.bins(),
            frames,
            num_samples: len,
            channels: channels.iter().map(|c| self.analyse_channel(c, frames)).collect(),
        })
    }

    pub fn synthesise(&self, spec: &Spectrogram) -> Result<Vec<Vec<f64>>> {
        self.config.check_cola()?;
        if spec.config != self.config || spec.bins != self.config.bins() {
            return Err(Error::invalid("spectrogram was produced with a different STFT configuration"));
        }
        let n = self.config.window_size;
        let len = spec.num_samples;
        let mut envelope = vec![0.0; len];
        for m in 0..spec.frames {
            let start = self.frame_start(m);
            for j in 0..n {
                let idx = start + j as isize;
                if idx >= 0 && (idx as usize) < len {
                    envelope[idx as usize] += self.window[j] * self.window[j];
                }
            }
        }
        let floor = 1e-10 * envelope.iter().copied().fold(0.0, f64::max);

        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut result = Vec::with_capacity(spec.channels.len());
        for channel in &spec.channels {
            let mut out = vec![0.0; len];
            for m in 0..spec.frames {
                for k in 0..spec.bins {
                    buf[k] = channel[k * spec.frames + m];
                }
                // Hermitian completion; DC and Nyquist must be real for a real frame
                buf[0].im = 0.0;
                buf[n / 2].im = 0.0;
                for k in 1..n / 2 {
                    buf[n - k] = buf[k].conj();
                }
                self.inverse.process(&mut buf);
                let start = self.frame_start(m);
                for j in 0..n {
                    let idx = start + j as isize;
                    if idx >= 0 && (idx as usize) < len {
                        out[idx as usize] += buf[j].re / n as f64 * self.window[j];
                    }
                }
            }
            for (o, &e) in out.iter_mut().zip(&envelope) {
                *o = if e > floor { *o / e } else { 0.0 };
            }
            result.push(out);
        }
        Ok(result)
    }
}

/// Single-channel analysis.
pub fn stft(wave: &[f64], config: StftConfig) -> Result<Spectrogram> {
    Stft::new(config)?.analyse(std::slice::from_ref(&wave.to_vec()))
}

/// Overlap-add synthesis with squared-window normalization; returns one
/// waveform per channel of exactly `spec.num_samples` samples.
pub fn istft(spec: &Spectrogram) -> Result<Vec<Vec<f64>>> {
    Stft::new(spec.config)?.synthesise(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn frame_count_for_three_minutes() {
        let cfg = StftConfig::paper();
        assert_eq!(cfg.frames(3 * 60 * 44_100), 7_752);
        assert_eq!(cfg.bins(), 2049);
        assert_eq!(StftConfig::desk().frames(5 * 8000), 1250);
    }

    #[test]
    fn hann_three_quarter_overlap_is_cola() {
        for cfg in [StftConfig::desk(), StftConfig::paper()] {
            assert!(cfg.cola_deviation() < 1e-10);
            cfg.check_cola().unwrap();
        }
        let half = StftConfig {
            hop: 64,
            ..StftConfig::desk()
        };
        assert!(half.check_cola().is_err());
    }

    #[test]
    fn zero_signal_zero_spectrum() {
        let s = stft(&vec![0.0; 500], StftConfig::desk()).unwrap();
        assert!(s.channels[0].iter().all(|z| z.norm() == 0.0));
        assert_eq!(istft(&s).unwrap()[0], vec![0.0; 500]);
        assert!(stft(&[], StftConfig::desk()).is_err());
    }

    #[test]
    fn dc_and_nyquist_are_real() {
        let s = stft(&noise(1, 900), StftConfig::desk()).unwrap();
        for m in 0..s.frames {
            assert_eq!(s.at(0, 0, m).im, 0.0);
            assert!(s.at(0, 64, m).im.abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_reconstructs_signal() {
        let x = noise(2, 4001);
        let y = istft(&stft(&x, StftConfig::desk()).unwrap()).unwrap().remove(0);
        assert_eq!(y.len(), x.len());
        let err: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm < 1e-6, "{}", err / norm);
    }

    #[test]
    fn synthesis_is_linear() {
        let cfg = StftConfig::desk();
        let a = stft(&noise(3, 777), cfg).unwrap();
        let b = stft(&noise(4, 777), cfg).unwrap();
        let sum = istft(&a.add(&b).unwrap()).unwrap().remove(0);
        let (ya, yb) = (istft(&a).unwrap().remove(0), istft(&b).unwrap().remove(0));
        for i in 0..777 {
            assert!((sum[i] - ya[i] - yb[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn bin_centred_sinusoid_concentrates_energy() {
        let cfg = StftConfig::desk();
        let m = 10;
        let f = m as f64 * cfg.sample_rate as f64 / cfg.window_size as f64;
        let x: Vec<f64> = (0..4000)
            .map(|n| (2.0 * PI * f * n as f64 / cfg.sample_rate as f64).sin())
            .collect();
        let s = stft(&x, cfg).unwrap();
        for frame in 4..s.frames - 4 {
            let total: f64 = (0..s.bins).map(|k| s.at(0, k, frame).norm_sqr()).sum();
            let near: f64 = (m - 1..=m + 1).map(|k| s.at(0, k, frame).norm_sqr()).sum();
            assert!(near / total >= 0.99, "frame {frame}: {}", near / total);
        }
    }

    /// Applies the adjoint of the one-sided STFT straight from the DFT sum.
    fn adjoint_by_definition(spec: &Spectrogram) -> Vec<f64> {
        let cfg = spec.config;
        let n = cfg.window_size;
        let w = cfg.window.samples(n);
        let mut out = vec![0.0; spec.num_samples];
        for m in 0..spec.frames {
            let start = (m * cfg.hop) as isize - (n / 2) as isize;
            for j in 0..n {
                let idx = start + j as isize;
                if idx < 0 || idx as usize >= out.len() {
                    continue;
                }
                let mut acc = 0.0;
                for k in 0..spec.bins {
                    let phase = 2.0 * PI * (k * j) as f64 / n as f64;
                    acc += (spec.at(0, k, m) * Complex64::new(phase.cos(), phase.sin())).re;
                }
                out[idx as usize] += w[j] * acc;
            }
        }
        out
    }

    #[test]
    fn analysis_matches_dft_adjoint() {
        let cfg = StftConfig {
            window_size: 16,
            hop: 4,
            ..StftConfig::desk()
        };
        let x = noise(5, 61);
        let sx = stft(&x, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut y = sx.clone();
        for z in &mut y.channels[0] {
            *z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let lhs: f64 = sx.channels[0]
            .iter()
            .zip(&y.channels[0])
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        let rhs: f64 = x.iter().zip(adjoint_by_definition(&y)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
