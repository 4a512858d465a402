use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::TrainConfig;
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::model::{BlockVariant, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::invalid(format!("unknown preset `{s}` (desk or paper)"))),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

/// Everything a command needs; defaults are the desk preset.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub stft: StftConfig,
    pub train: TrainConfig,
    pub learning_rate: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub workers: usize,
    pub synth: bool,
    pub synth_tracks: usize,
    pub synth_seconds: f64,
    /// Seed of the held-out synthetic evaluation corpus.
    pub eval_seed: u64,
    pub eval_tracks: usize,
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::invalid(format!("bad value `{v}` for {key}")))
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (model, stft, learning_rate) = match preset {
            Preset::Desk => (ModelConfig::desk(), StftConfig::desk(), 1e-3),
            Preset::Paper => (ModelConfig::paper(), StftConfig::paper(), 1e-4),
        };
        let mut train = TrainConfig::desk();
        if preset == Preset::Paper {
            train.epochs = 500;
        }
        RunConfig {
            preset,
            model,
            stft,
            train,
            learning_rate,
            clip_norm: Some(5.0),
            workers: 1,
            synth: false,
            synth_tracks: 20,
            synth_seconds: 30.0,
            eval_seed: 1_000_003,
            eval_tracks: 10,
            corpus: None,
            out: PathBuf::from("d2net.ckpt"),
        }
    }

    /// Sets the block count, extending dilation lists with their defaults
    /// (conv `2^(b+1)`, GRU the last listed value) or truncating them.
    pub fn set_blocks(&mut self, n: usize) {
        let m = &mut self.model;
        m.conv_dilations.truncate(n);
        while m.conv_dilations.len() < n {
            m.conv_dilations.push(1 << (m.conv_dilations.len() + 1));
        }
        let last = m.gru_dilations.last().copied().unwrap_or(2);
        m.gru_dilations.resize(n, last);
        m.gru_dilations.truncate(n);
        m.num_blocks = n;
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "preset" => {
                // a preset resets everything else
                *self = Self::preset(parse(key, v)?);
            }
            "channels" => self.model.channels = parse(key, v)?,
            "blocks" => self.set_blocks(parse(key, v)?),
            "conv_dilations" => self.model.conv_dilations = parse_list(key, v)?,
            "gru_dilations" => self.model.gru_dilations = parse_list(key, v)?,
            "gru_dilation" => {
                let k = parse(key, v)?;
                self.model.gru_dilations = vec![k; self.model.num_blocks];
            }
            "groups" => self.model.groups = parse(key, v)?,
            "kernel" => self.model.kernel = parse(key, v)?,
            "block_variant" => self.model.block_variant = v.parse::<BlockVariant>()?,
            "window_size" => {
                self.stft.window_size = parse(key, v)?;
                self.model.freq_bins = self.stft.bins();
            }
            "hop" => self.stft.hop = parse(key, v)?,
            "sample_rate" => self.stft.sample_rate = parse(key, v)?,
            "clip_seconds" => {
                let secs: f64 = parse(key, v)?;
                let keep = (self.train.epochs, self.train.validation_fraction, self.train.seed);
                self.train = TrainConfig::for_clip(secs);
                (self.train.epochs, self.train.validation_fraction, self.train.seed) = keep;
            }
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "validation_fraction" => self.train.validation_fraction = parse(key, v)?,
            "seed" => self.train.seed = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "clip_norm" => {
                let c: f64 = parse(key, v)?;
                self.clip_norm = (c > 0.0).then_some(c);
            }
            "workers" => self.workers = parse(key, v)?,
            "synth" => self.synth = parse(key, v)?,
            "synth_tracks" => self.synth_tracks = parse(key, v)?,
            "synth_seconds" => self.synth_seconds = parse(key, v)?,
            "eval_seed" => self.eval_seed = parse(key, v)?,
            "eval_tracks" => self.eval_tracks = parse(key, v)?,
            "corpus" => self.corpus = (!v.is_empty()).then(|| PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            other => return Err(Error::invalid(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` text file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let _ = writeln!(s, "preset={}", self.preset);
        let _ = writeln!(s, "channels={}", m.channels);
        let _ = writeln!(s, "blocks={}", m.num_blocks);
        let _ = writeln!(s, "conv_dilations={}", list(&m.conv_dilations));
        let _ = writeln!(s, "gru_dilations={}", list(&m.gru_dilations));
        let _ = writeln!(s, "groups={}", m.groups);
        let _ = writeln!(s, "kernel={}", m.kernel);
        let _ = writeln!(s, "block_variant={}", m.block_variant);
        let _ = writeln!(s, "window_size={}", self.stft.window_size);
        let _ = writeln!(s, "hop={}", self.stft.hop);
        let _ = writeln!(s, "sample_rate={}", self.stft.sample_rate);
        let _ = writeln!(s, "clip_seconds={}", self.train.clip_seconds);
        let _ = writeln!(s, "batch_size={}", self.train.batch_size);
        let _ = writeln!(s, "epochs={}", self.train.epochs);
        let _ = writeln!(s, "validation_fraction={}", self.train.validation_fraction);
        let _ = writeln!(s, "seed={}", self.train.seed);
        let _ = writeln!(s, "learning_rate={}", self.learning_rate);
        let _ = writeln!(s, "clip_norm={}", self.clip_norm.unwrap_or(0.0));
        let _ = writeln!(s, "workers={}", self.workers);
        let _ = writeln!(s, "synth={}", self.synth);
        let _ = writeln!(s, "synth_tracks={}", self.synth_tracks);
        let _ = writeln!(s, "synth_seconds={}", self.synth_seconds);
        let _ = writeln!(s, "eval_seed={}", self.eval_seed);
        let _ = writeln!(s, "eval_tracks={}", self.eval_tracks);
        let _ = writeln!(s, "corpus={}", self.corpus.as_ref().map_or(String::new(), |p| p.display().to_string()));
        let _ = writeln!(s, "out={}", self.out.display());
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.stft.validate()?;
        self.train.validate()?;
        if self.model.freq_bins != self.stft.bins() {
            return Err(Error::invalid(format!(
                "model expects {} bins, STFT window {} gives {}",
                self.model.freq_bins,
                self.stft.window_size,
                self.stft.bins()
            )));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("blocks", "3").unwrap();
        cfg.set("gru_dilations", "2,4,8").unwrap();
        cfg.set("block_variant", "residual").unwrap();
        cfg.set("clip_norm", "0").unwrap();
        cfg.set("corpus", "/data/x").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
        assert_eq!(back.model.conv_dilations, vec![2, 4, 8]);
        assert_eq!(back.clip_norm, None);
    }

    #[test]
    fn presets_and_clip_settings() {
        let paper = RunConfig::preset(Preset::Paper);
        paper.validate().unwrap();
        assert_eq!(paper.model.freq_bins, 2049);
        assert_eq!(paper.learning_rate, 1e-4);
        let mut c = RunConfig::default();
        c.set("epochs", "7").unwrap();
        c.set("clip_seconds", "20").unwrap();
        assert_eq!((c.train.batch_size, c.train.epochs), (5, 7));
        c.set("preset", "paper").unwrap();
        assert_eq!(c, paper);
    }

    #[test]
    fn errors() {
        let mut c = RunConfig::default();
        assert!(c.set("nope", "1").is_err());
        assert!(c.set("epochs", "x").is_err());
        assert!(c.apply_text("epochs 3").is_err());
        c.set("window_size", "256").unwrap();
        assert_eq!(c.model.freq_bins, 129);
        c.set("gru_dilations", "2").unwrap();
        assert!(c.validate().is_err());
        c.apply_text("# comment\ngru_dilation=4 # trailing\n").unwrap();
        assert_eq!(c.model.gru_dilations, vec![4, 4]);
    }
}
