use std::fmt::Write as _;
use std::path::Path;

use crate::dsp::{StftConfig, WindowKind};
use crate::error::{Error, Result};
use crate::model::{D2Net, ModelConfig};
use crate::numerics::Tensor;

const MAGIC: &str = "D2NET-CHECKPOINT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub val_loss: f64,
    pub seed: u64,
}

/// Architecture, STFT geometry, weights and training metadata.
///
/// On disk: a text manifest of `key=value` lines terminated by `END\n`,
/// then every parameter as little-endian f32 in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub stft: StftConfig,
    pub params: Vec<(String, Tensor<f32>)>,
    pub meta: TrainingMeta,
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        reason: reason.into(),
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(format!("bad value `{v}` for {key}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x)).collect()
}

impl Checkpoint {
    pub fn new(net: &D2Net<f32>, stft: StftConfig, meta: TrainingMeta) -> Self {
        Checkpoint {
            model: net.config().clone(),
            stft,
            params: net
                .named_params()
                .map(|(n, t)| {
                    let mut t = t.clone();
                    t.clear_grad();
                    t.set_requires_grad(false);
                    (n.to_string(), t)
                })
                .collect(),
            meta,
        }
    }

    pub fn network(&self) -> Result<D2Net<f32>> {
        D2Net::from_params(self.model.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut head = String::new();
        let _ = writeln!(head, "{MAGIC}");
        let _ = writeln!(head, "model.freq_bins={}", m.freq_bins);
        let _ = writeln!(head, "model.channels={}", m.channels);
        let _ = writeln!(head, "model.num_blocks={}", m.num_blocks);
        let _ = writeln!(head, "model.conv_dilations={}", join(&m.conv_dilations));
        let _ = writeln!(head, "model.gru_dilations={}", join(&m.gru_dilations));
        let _ = writeln!(head, "model.groups={}", m.groups);
        let _ = writeln!(head, "model.kernel={}", m.kernel);
        let _ = writeln!(head, "model.sources={}", m.sources.join(","));
        let _ = writeln!(head, "model.block_variant={}", m.block_variant);
        let _ = writeln!(head, "stft.window_size={}", self.stft.window_size);
        let _ = writeln!(head, "stft.hop={}", self.stft.hop);
        let _ = writeln!(head, "stft.window={}", self.stft.window);
        let _ = writeln!(head, "stft.sample_rate={}", self.stft.sample_rate);
        let _ = writeln!(head, "meta.epoch={}", self.meta.epoch);
        let _ = writeln!(head, "meta.val_loss={:?}", self.meta.val_loss);
        let _ = writeln!(head, "meta.seed={}", self.meta.seed);
        let mut offset = 0;
        for (name, t) in &self.params {
            let shape = t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join("x");
            let _ = writeln!(head, "param={name} {shape} {offset} {}", t.numel());
            offset += t.numel();
        }
        let _ = writeln!(head, "END");
        let mut bytes = head.into_bytes();
        bytes.reserve(offset * 4);
        for (_, t) in &self.params {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let end = bytes
            .windows(4)
            .position(|w| w == b"END\n")
            .ok_or_else(|| bad("missing END marker"))?;
        let head = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("manifest is not UTF-8"))?;
        let body = &bytes[end + 4..];
        let mut lines = head.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing header line"));
        }
        let mut kv = std::collections::HashMap::new();
        let mut entries = Vec::new();
        for line in lines {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("bad line `{line}`")))?;
            if k == "param" {
                let f: Vec<&str> = v.split(' ').collect();
                if f.len() != 4 {
                    return Err(bad(format!("bad parameter line `{line}`")));
                }
                let shape = f[1]
                    .split('x')
                    .map(|d| parse::<usize>("param shape", d))
                    .collect::<Result<Vec<_>>>()?;
                let offset: usize = parse("param offset", f[2])?;
                let len: usize = parse("param length", f[3])?;
                entries.push((f[0].to_string(), shape, offset, len));
            } else if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(bad(format!("duplicate key {k}")));
            }
        }
        let get = |k: &str| kv.get(k).map(String::as_str).ok_or_else(|| bad(format!("missing key {k}")));

        let model = ModelConfig {
            freq_bins: parse("model.freq_bins", get("model.freq_bins")?)?,
            channels: parse("model.channels", get("model.channels")?)?,
            num_blocks: parse("model.num_blocks", get("model.num_blocks")?)?,
            conv_dilations: parse_list("model.conv_dilations", get("model.conv_dilations")?)?,
            gru_dilations: parse_list("model.gru_dilations", get("model.gru_dilations")?)?,
            groups: parse("model.groups", get("model.groups")?)?,
            kernel: parse("model.kernel", get("model.kernel")?)?,
            sources: get("model.sources")?.split(',').map(str::to_string).collect(),
            block_variant: get("model.block_variant")?.parse()?,
        };
        let stft = StftConfig {
            window_size: parse("stft.window_size", get("stft.window_size")?)?,
            hop: parse("stft.hop", get("stft.hop")?)?,
            window: get("stft.window")?.parse::<WindowKind>()?,
            sample_rate: parse("stft.sample_rate", get("stft.sample_rate")?)?,
        };
        let meta = TrainingMeta {
            epoch: parse("meta.epoch", get("meta.epoch")?)?,
            val_loss: parse("meta.val_loss", get("meta.val_loss")?)?,
            seed: parse("meta.seed", get("meta.seed")?)?,
        };

        let total: usize = entries.iter().map(|e| e.3).sum();
        if body.len() != total * 4 {
            return Err(bad(format!("expected {} data bytes, found {}", total * 4, body.len())));
        }
        let mut params = Vec::with_capacity(entries.len());
        let mut expected_offset = 0;
        for (name, shape, offset, len) in entries {
            if offset != expected_offset || shape.iter().product::<usize>() != len {
                return Err(bad(format!("inconsistent layout for `{name}`")));
            }
            expected_offset += len;
            let data = body[offset * 4..(offset + len) * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push((name, Tensor::new(&shape, data)?));
        }
        let ckpt = Checkpoint {
            model,
            stft,
            params,
            meta,
        };
        // full structural check: names, multiplicity, shapes
        ckpt.network()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Network built from the first `keep` blocks of a checkpoint, no retraining.
pub fn truncate_blocks(checkpoint: &Checkpoint, keep: usize) -> Result<D2Net<f32>> {
    checkpoint.network()?.truncated(keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BlockVariant;

    fn sample(variant: BlockVariant) -> Checkpoint {
        let cfg = ModelConfig {
            block_variant: variant,
            ..ModelConfig::desk()
        };
        let net = D2Net::<f32>::init(cfg, 9).unwrap();
        Checkpoint::new(
            &net,
            StftConfig::desk(),
            TrainingMeta {
                epoch: 17,
                val_loss: 0.1 + 0.2,
                seed: 42,
            },
        )
    }

    #[test]
    fn byte_identical_round_trip() {
        for v in BlockVariant::ALL {
            let ck = sample(v);
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample(BlockVariant::DgruDgconv);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(matches!(Checkpoint::load(dir.path().join("none")), Err(Error::Io { .. })));
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample(BlockVariant::Dense).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[1..]).is_err());
        let text = String::from_utf8_lossy(&bytes[..200]).replace("model.channels=64", "model.channels=65");
        let mut edited = text.into_bytes();
        edited.extend_from_slice(&bytes[200..]);
        assert!(Checkpoint::from_bytes(&edited).is_err());
    }

    #[test]
    fn truncation_bounds() {
        let ck = sample(BlockVariant::DgruDgconv);
        assert_eq!(truncate_blocks(&ck, 0).unwrap().config().num_blocks, 0);
        assert_eq!(truncate_blocks(&ck, 2).unwrap(), ck.network().unwrap());
        assert!(truncate_blocks(&ck, 3).is_err());
    }
}
