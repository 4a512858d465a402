use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

/// Multichannel audio, one buffer per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Audio {
    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Self {
        Audio {
            sample_rate,
            channels: vec![samples],
        }
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }
}

fn wav_err(path: &Path, source: hound::Error) -> Error {
    match source {
        hound::Error::IoError(e) => Error::io(path, e),
        source => Error::Wav {
            path: path.to_path_buf(),
            source,
        },
    }
}

/// Reads 16-bit PCM or 32-bit float WAV with one or two channels.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::Unsupported(format!(
            "{}: {} channels (1 or 2 supported)",
            path.display(),
            spec.channels
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(Error::Unsupported(format!(
                "{}: {bits}-bit {fmt:?} samples",
                path.display()
            )))
        }
    }
    .map_err(|e| wav_err(path, e))?;
    let n = spec.channels as usize;
    let channels = (0..n)
        .map(|c| interleaved.iter().skip(c).step_by(n).copied().collect())
        .collect();
    Ok(Audio {
        sample_rate: spec.sample_rate,
        channels,
    })
}

pub fn save_wav(path: impl AsRef<Path>, audio: &Audio, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    if !(1..=2).contains(&audio.channels.len()) {
        return Err(Error::Unsupported(format!("{} channels", audio.channels.len())));
    }
    let len = audio.len();
    if audio.channels.iter().any(|c| c.len() != len) {
        return Err(Error::invalid("channels differ in length"));
    }
    let spec = WavSpec {
        channels: audio.channels.len() as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for i in 0..len {
        for c in &audio.channels {
            let r = match format {
                WavFormat::Pcm16 => writer.write_sample((c[i] * 32768.0).round().clamp(-32768.0, 32767.0) as i16),
                WavFormat::Float32 => writer.write_sample(c[i] as f32),
            };
            r.map_err(|e| wav_err(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stereo(len: usize) -> Audio {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Audio {
            sample_rate: 44_100,
            channels: (0..2).map(|_| (0..len).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect()).collect(),
        }
    }

    #[test]
    fn float_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let a = stereo(1000);
        save_wav(&p, &a, WavFormat::Float32).unwrap();
        assert_eq!(load_wav(&p).unwrap(), a);
    }

    #[test]
    fn pcm16_error_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let mut a = stereo(1000);
        a.channels[0][0] = -1.0;
        save_wav(&p, &a, WavFormat::Pcm16).unwrap();
        let b = load_wav(&p).unwrap();
        for (x, y) in a.channels.iter().flatten().zip(b.channels.iter().flatten()) {
            assert!((x - y).abs() <= 2f64.powi(-15), "{x} {y}");
        }
    }

    #[test]
    fn one_second_has_rate_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        save_wav(&p, &Audio::mono(44_100, vec![0.25; 44_100]), WavFormat::Pcm16).unwrap();
        let a = load_wav(&p).unwrap();
        assert_eq!(a.len(), 44_100);
        assert_eq!(a.num_channels(), 1);
        assert_eq!(a.duration_seconds(), 1.0);
    }

    #[test]
    fn malformed_and_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.wav");
        std::fs::write(&p, b"RIFF not really a wave file").unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Wav { .. })));
        assert!(matches!(load_wav(dir.path().join("missing.wav")), Err(Error::Io { .. })));

        let spec = WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: SampleFormat::Int,
        };
        let q = dir.path().join("u8.wav");
        let mut w = WavWriter::create(&q, spec).unwrap();
        w.write_sample(3i8).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&q), Err(Error::Unsupported(_))));
    }
}
