use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{ConvGeometry, GruConfig};

pub const SOURCES: [&str; 4] = ["vocals", "drums", "bass", "other"];

/// Internal layout of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockVariant {
    /// GRU, then grouped conv; block input, GRU output and conv output summed.
    DgruDgconv,
    /// As above, with an extra skip adding the block input to the GRU output,
    /// which then feeds both the conv and the final sum.
    Dense,
    /// Each sublayer wrapped in its own residual connection.
    Residual,
    /// Grouped conv first, GRU second, same three-way sum.
    DgconvDgru,
    /// GRU replaced by an ungrouped kernel-1 convolution.
    ConvDgconv,
}

impl BlockVariant {
    pub const ALL: [BlockVariant; 5] = [
        BlockVariant::DgruDgconv,
        BlockVariant::Dense,
        BlockVariant::Residual,
        BlockVariant::DgconvDgru,
        BlockVariant::ConvDgconv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BlockVariant::DgruDgconv => "dgru_dgconv",
            BlockVariant::Dense => "dense",
            BlockVariant::Residual => "residual",
            BlockVariant::DgconvDgru => "dgconv_dgru",
            BlockVariant::ConvDgconv => "conv_dgconv",
        }
    }

    pub fn has_gru(self) -> bool {
        self != BlockVariant::ConvDgconv
    }
}

impl fmt::Display for BlockVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown block variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub freq_bins: usize,
    pub channels: usize,
    pub num_blocks: usize,
    pub conv_dilations: Vec<usize>,
    pub gru_dilations: Vec<usize>,
    pub groups: usize,
    pub kernel: usize,
    pub sources: Vec<String>,
    pub block_variant: BlockVariant,
}

/// One row of the layer table: what a unit maps from and to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub unit: String,
    pub kind: String,
    pub input: usize,
    pub output: usize,
    pub groups: usize,
}

impl ModelConfig {
    /// Small preset that trains in minutes on a laptop CPU.
    pub fn desk() -> Self {
        ModelConfig {
            freq_bins: 65,
            channels: 64,
            num_blocks: 2,
            conv_dilations: vec![2, 4],
            gru_dilations: vec![2, 2],
            groups: 4,
            kernel: 3,
            sources: SOURCES.iter().map(|s| s.to_string()).collect(),
            block_variant: BlockVariant::DgruDgconv,
        }
    }

    /// Full-size architecture: 4096-sample STFT, 2048 channels, three blocks.
    pub fn paper() -> Self {
        ModelConfig {
            freq_bins: 2049,
            channels: 2048,
            num_blocks: 3,
            conv_dilations: vec![2, 4, 8],
            gru_dilations: vec![2, 2, 2],
            groups: 32,
            kernel: 3,
            sources: SOURCES.iter().map(|s| s.to_string()).collect(),
            block_variant: BlockVariant::DgruDgconv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.freq_bins == 0 || self.channels == 0 || self.kernel == 0 || self.groups == 0 {
            return Err(Error::invalid(format!("degenerate model config {self:?}")));
        }
        if self.conv_dilations.len() != self.num_blocks || self.gru_dilations.len() != self.num_blocks {
            return Err(Error::invalid(format!(
                "{} blocks need {} conv and GRU dilations, got {} and {}",
                self.num_blocks,
                self.num_blocks,
                self.conv_dilations.len(),
                self.gru_dilations.len()
            )));
        }
        if self.channels % self.groups != 0 {
            return Err(Error::invalid(format!(
                "{} channels not divisible by {} groups",
                self.channels, self.groups
            )));
        }
        if self.block_variant.has_gru() && self.channels % 2 != 0 {
            return Err(Error::invalid("bidirectional GRU needs an even channel count"));
        }
        if self.sources.is_empty() {
            return Err(Error::invalid("at least one source is required"));
        }
        for g in self.gru_dilations.iter().chain(&self.conv_dilations) {
            if *g == 0 {
                return Err(Error::invalid("dilations must be at least 1"));
            }
        }
        self.input_conv().validate()?;
        self.output_conv().validate()?;
        for i in 0..self.num_blocks {
            self.block_conv(i).validate()?;
        }
        Ok(())
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    pub fn input_conv(&self) -> ConvGeometry {
        ConvGeometry::new(self.freq_bins, self.channels, self.kernel, 1, 1)
    }

    pub fn block_conv(&self, block: usize) -> ConvGeometry {
        ConvGeometry::new(self.channels, self.channels, self.kernel, self.conv_dilations[block], self.groups)
    }

    /// Kernel-1 mixing convolution standing in for the GRU.
    pub fn mix_conv(&self) -> ConvGeometry {
        ConvGeometry::new(self.channels, self.channels, 1, 1, 1)
    }

    pub fn output_conv(&self) -> ConvGeometry {
        ConvGeometry::new(self.channels, self.num_sources() * self.freq_bins, self.kernel, 1, 1)
    }

    /// Bidirectional GRU with `C/2` units per direction so the block keeps `C` channels.
    pub fn gru(&self, block: usize) -> GruConfig {
        GruConfig {
            input_size: self.channels,
            hidden_size: self.channels / 2,
            dilation: self.gru_dilations[block],
            bidirectional: true,
        }
    }

    /// Unit-by-unit input/output sizes.
    pub fn layer_table(&self) -> Vec<LayerSpec> {
        let conv_row = |unit: String, g: ConvGeometry| LayerSpec {
            unit,
            kind: format!("1D Conv ({}, {})", g.kernel, g.dilation),
            input: g.in_channels,
            output: g.out_channels,
            groups: g.groups,
        };
        let mut rows = vec![conv_row("Input convolution".into(), self.input_conv())];
        for b in 0..self.num_blocks {
            let unit = format!("Block {}", b + 1);
            let first = if self.block_variant.has_gru() {
                let g = self.gru(b);
                LayerSpec {
                    unit: unit.clone(),
                    kind: format!("Dilated GRU (k={})", g.dilation),
                    input: g.input_size,
                    output: g.output_size(),
                    groups: 1,
                }
            } else {
                conv_row(unit.clone(), self.mix_conv())
            };
            let conv = conv_row(unit, self.block_conv(b));
            if self.block_variant == BlockVariant::DgconvDgru {
                rows.extend([conv, first]);
            } else {
                rows.extend([first, conv]);
            }
        }
        rows.push(conv_row("Output convolution".into(), self.output_conv()));
        rows
    }

    /// Every parameter name with its shape, in initialization order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let conv = |prefix: &str, g: ConvGeometry, specs: &mut Vec<(String, Vec<usize>)>| {
            specs.push((format!("{prefix}.v"), g.weight_shape().to_vec()));
            specs.push((format!("{prefix}.g"), vec![g.out_channels]));
            specs.push((format!("{prefix}.bias"), vec![g.out_channels]));
        };
        conv("input_conv", self.input_conv(), &mut specs);
        for b in 0..self.num_blocks {
            if self.block_variant.has_gru() {
                let g = self.gru(b);
                let h3 = 3 * g.hidden_size;
                for dir in ["fwd", "bwd"] {
                    let p = format!("blocks.{b}.gru.{dir}");
                    specs.push((format!("{p}.w_ih"), vec![h3, g.input_size]));
                    specs.push((format!("{p}.w_hh"), vec![h3, g.hidden_size]));
                    specs.push((format!("{p}.b_ih"), vec![h3]));
                    specs.push((format!("{p}.b_hh"), vec![h3]));
                }
            } else {
                conv(&format!("blocks.{b}.mix_conv"), self.mix_conv(), &mut specs);
            }
            conv(&format!("blocks.{b}.conv"), self.block_conv(b), &mut specs);
        }
        conv("output_conv", self.output_conv(), &mut specs);
        specs
    }

    pub fn param_count(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}
