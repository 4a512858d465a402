use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    conv_leaky, dilated_gru, weight_normed_conv, ConvGeometry, DilatedGruParams, GroupedConvParams,
    GruConfig, GruDirectionParams,
};
use crate::model::config::{BlockVariant, ModelConfig};
use crate::numerics::{ops, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct ConvSlots {
    v: usize,
    g: usize,
    bias: usize,
}

#[derive(Clone, Debug)]
struct BlockSlots {
    gru: Option<[[usize; 4]; 2]>,
    mix: Option<ConvSlots>,
    conv: ConvSlots,
}

#[derive(Clone, Debug)]
struct Layout {
    input: ConvSlots,
    blocks: Vec<BlockSlots>,
    output: ConvSlots,
}

impl Layout {
    /// Mirrors the ordering of [`ModelConfig::param_specs`].
    fn new(config: &ModelConfig) -> Self {
        let mut next = 0;
        let mut take = |n: usize| {
            let start = next;
            next += n;
            start
        };
        let conv = |s: usize| ConvSlots {
            v: s,
            g: s + 1,
            bias: s + 2,
        };
        let input = conv(take(3));
        let blocks = (0..config.num_blocks)
            .map(|_| {
                let (gru, mix) = if config.block_variant.has_gru() {
                    let f = take(4);
                    let b = take(4);
                    (Some([[f, f + 1, f + 2, f + 3], [b, b + 1, b + 2, b + 3]]), None)
                } else {
                    (None, Some(conv(take(3))))
                };
                BlockSlots {
                    gru,
                    mix,
                    conv: conv(take(3)),
                }
            })
            .collect();
        let output = conv(take(3));
        Layout {
            input,
            blocks,
            output,
        }
    }
}

/// Parameters of one block, detached from a network.
#[derive(Clone, Debug, PartialEq)]
pub struct D2BlockParams<F> {
    pub variant: BlockVariant,
    pub gru: Option<DilatedGruParams<F>>,
    pub mix_conv: Option<GroupedConvParams<F>>,
    pub conv: GroupedConvParams<F>,
}

/// Block output together with its two sublayer outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockTrace<F> {
    pub output: Tensor<F>,
    /// Output of the first sublayer in the block (GRU, or the mixing conv).
    pub gru_out: Tensor<F>,
    pub conv_out: Tensor<F>,
}

struct BlockVars {
    gru: Option<Vec<[Var; 4]>>,
    mix: Option<[Var; 3]>,
    conv: [Var; 3],
}

struct BlockShape {
    variant: BlockVariant,
    gru: GruConfig,
    conv: ConvGeometry,
    mix: ConvGeometry,
}

/// Returns `(output, first sublayer, conv sublayer)`.
fn block_on_tape<'a, F: Real>(
    tape: &mut Tape<'a, F>,
    x: Var,
    vars: &BlockVars,
    shape: &BlockShape,
    workers: usize,
) -> Result<(Var, Var, Var)> {
    let channels = tape.value(x).dims2()?.0;
    if channels != shape.conv.in_channels {
        return Err(Error::shape("d2_block", tape.value(x).shape(), &[shape.conv.in_channels]));
    }
    let conv = |tape: &mut Tape<'a, F>, input: Var| {
        let [v, g, b] = vars.conv;
        conv_leaky(tape, input, v, g, b, shape.conv)
    };
    let first = |tape: &mut Tape<'a, F>, input: Var| match (&vars.gru, &vars.mix) {
        (Some(dirs), _) => dilated_gru(tape, input, dirs, shape.gru, workers),
        (None, Some([v, g, b])) => conv_leaky(tape, input, *v, *g, *b, shape.mix),
        (None, None) => Err(Error::Contract("block has neither GRU nor mixing conv".into())),
    };
    match shape.variant {
        BlockVariant::DgruDgconv | BlockVariant::ConvDgconv => {
            let g = first(tape, x)?;
            let c = conv(tape, g)?;
            let xg = ops::add(tape, x, g)?;
            Ok((ops::add(tape, xg, c)?, g, c))
        }
        BlockVariant::Dense => {
            let g = first(tape, x)?;
            let xg = ops::add(tape, x, g)?;
            let c = conv(tape, xg)?;
            let sum = ops::add(tape, x, xg)?;
            Ok((ops::add(tape, sum, c)?, g, c))
        }
        BlockVariant::Residual => {
            let g = first(tape, x)?;
            let y1 = ops::add(tape, x, g)?;
            let c = conv(tape, y1)?;
            Ok((ops::add(tape, y1, c)?, g, c))
        }
        BlockVariant::DgconvDgru => {
            let c = conv(tape, x)?;
            let g = first(tape, c)?;
            let xc = ops::add(tape, x, c)?;
            Ok((ops::add(tape, xc, g)?, g, c))
        }
    }
}

impl<F: Real> D2BlockParams<F> {
    /// Tensors in the order [`d2_block`] expects their variables:
    /// GRU forward and backward (`w_ih, w_hh, b_ih, b_hh` each) or the mixing
    /// conv, then the grouped conv (`v, g, bias`).
    pub fn tensors(&self) -> Vec<&Tensor<F>> {
        let mut out = Vec::new();
        if let Some(gru) = &self.gru {
            for d in gru.directions() {
                out.extend(d.tensors());
            }
        }
        if let Some(m) = &self.mix_conv {
            out.extend([&m.v, &m.g, &m.bias]);
        }
        out.extend([&self.conv.v, &self.conv.g, &self.conv.bias]);
        out
    }

    fn shape(&self) -> BlockShape {
        BlockShape {
            variant: self.variant,
            gru: self.gru.as_ref().map(|g| g.config).unwrap_or(GruConfig {
                input_size: self.conv.geometry.in_channels,
                hidden_size: 1,
                dilation: 1,
                bidirectional: true,
            }),
            conv: self.conv.geometry,
            mix: self.mix_conv.as_ref().map_or(self.conv.geometry, |m| m.geometry),
        }
    }
}

/// One block on a tape; `vars` follow [`D2BlockParams::tensors`].
pub fn d2_block<'a, F: Real>(
    tape: &mut Tape<'a, F>,
    x: Var,
    params: &D2BlockParams<F>,
    vars: &[Var],
    workers: usize,
) -> Result<Var> {
    Ok(block_on_tape(tape, x, &block_vars(params, vars)?, &params.shape(), workers)?.0)
}

fn block_vars<F: Real>(params: &D2BlockParams<F>, vars: &[Var]) -> Result<BlockVars> {
    let expected = params.tensors().len();
    if vars.len() != expected {
        return Err(Error::Contract(format!("block takes {expected} variables, got {}", vars.len())));
    }
    let (gru, rest) = match &params.gru {
        Some(g) => {
            let n = 4 * g.directions().len();
            let dirs = vars[..n].chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
            (Some(dirs), &vars[n..])
        }
        None => (None, vars),
    };
    let (mix, rest) = if params.mix_conv.is_some() {
        (Some([rest[0], rest[1], rest[2]]), &rest[3..])
    } else {
        (None, rest)
    };
    Ok(BlockVars {
        gru,
        mix,
        conv: [rest[0], rest[1], rest[2]],
    })
}

/// Runs one block on `x: [C x T]`.
pub fn d2_block_forward<F: Real>(x: &Tensor<F>, params: &D2BlockParams<F>) -> Result<BlockTrace<F>> {
    let mut tape = Tape::no_grad();
    let xv = tape.constant_ref(x);
    let vars: Vec<Var> = params.tensors().into_iter().map(|t| tape.constant_ref(t)).collect();
    let (out, g, c) = block_on_tape(&mut tape, xv, &block_vars(params, &vars)?, &params.shape(), 1)?;
    Ok(BlockTrace {
        output: tape.value(out).clone(),
        gru_out: tape.value(g).clone(),
        conv_out: tape.value(c).clone(),
    })
}

/// The full separation network.
#[derive(Clone, Debug, PartialEq)]
pub struct D2Net<F> {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor<F>>,
    layout: LayoutHandle,
}

#[derive(Clone, Debug)]
struct LayoutHandle(Layout);

impl PartialEq for LayoutHandle {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl<F: Real> D2Net<F> {
    /// Random initialization, deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors: Vec<Tensor<F>> = Vec::new();
        let conv = |g: ConvGeometry, rng: &mut ChaCha8Rng, out: &mut Vec<Tensor<F>>| -> Result<()> {
            let p = GroupedConvParams::init(g, rng)?;
            out.extend([p.v, p.g, p.bias]);
            Ok(())
        };
        conv(config.input_conv(), &mut rng, &mut tensors)?;
        for b in 0..config.num_blocks {
            if config.block_variant.has_gru() {
                let p = DilatedGruParams::<F>::init(config.gru(b), &mut rng)?;
                for d in p.directions() {
                    tensors.extend(d.tensors().map(|t| t.clone()));
                }
            } else {
                conv(config.mix_conv(), &mut rng, &mut tensors)?;
            }
            conv(config.block_conv(b), &mut rng, &mut tensors)?;
        }
        conv(config.output_conv(), &mut rng, &mut tensors)?;
        let names = config.param_specs().into_iter().map(|(n, _)| n).collect::<Vec<_>>();
        Self::from_params(config, names.into_iter().zip(tensors).collect())
    }

    /// Assembles a network from named tensors; every architectural parameter
    /// must appear exactly once with the right shape.
    pub fn from_params(config: ModelConfig, named: Vec<(String, Tensor<F>)>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if named.len() != specs.len() {
            return Err(Error::Contract(format!(
                "architecture has {} parameters, got {}",
                specs.len(),
                named.len()
            )));
        }
        let mut by_name: std::collections::HashMap<String, Tensor<F>> = std::collections::HashMap::new();
        for (name, t) in named {
            if by_name.insert(name.clone(), t).is_some() {
                return Err(Error::Contract(format!("parameter `{name}` appears twice")));
            }
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::shape("d2_net", t.shape(), &shape));
            }
            names.push(name);
            params.push(t);
        }
        let layout = LayoutHandle(Layout::new(&config));
        Ok(D2Net {
            config,
            names,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.params
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<F>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn cast<G: Real>(&self) -> D2Net<G> {
        D2Net {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            layout: self.layout.clone(),
        }
    }

    /// Registers every parameter on the tape as a trainable leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, F>) -> Vec<Var> {
        self.params.iter().map(|p| tape.param_ref(p)).collect()
    }

    fn block_vars(&self, vars: &[Var], b: usize) -> BlockVars {
        let slots = &self.layout.0.blocks[b];
        let conv3 = |s: ConvSlots| [vars[s.v], vars[s.g], vars[s.bias]];
        BlockVars {
            gru: slots
                .gru
                .map(|dirs| dirs.iter().map(|d| d.map(|i| vars[i])).collect()),
            mix: slots.mix.map(conv3),
            conv: conv3(slots.conv),
        }
    }

    fn block_shape(&self, b: usize) -> BlockShape {
        BlockShape {
            variant: self.config.block_variant,
            gru: self.config.gru(b),
            conv: self.config.block_conv(b),
            mix: self.config.mix_conv(),
        }
    }

    /// Forward pass on a tape; `x` is `[D x T]`, the result `[S*D x T]`.
    pub fn forward_on_tape<'a>(
        &self,
        tape: &mut Tape<'a, F>,
        vars: &[Var],
        x: Var,
        workers: usize,
    ) -> Result<Var> {
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "{} parameter variables for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        let xv = tape.value(x);
        let (d, _) = xv.dims2()?;
        if d != self.config.freq_bins {
            return Err(Error::shape("d2_net", xv.shape(), &[self.config.freq_bins]));
        }
        let layout = &self.layout.0;
        let s = layout.input;
        let mut h = conv_leaky(tape, x, vars[s.v], vars[s.g], vars[s.bias], self.config.input_conv())?;
        for b in 0..self.config.num_blocks {
            let bv = self.block_vars(vars, b);
            h = block_on_tape(tape, h, &bv, &self.block_shape(b), workers)?.0;
        }
        let s = layout.output;
        weight_normed_conv(tape, h, vars[s.v], vars[s.g], vars[s.bias], self.config.output_conv())
    }

    /// Predicts `[S x D x T]` log-magnitudes from a `[D x T]` mixture feature map.
    pub fn forward(&self, m_mix: &Tensor<F>, workers: usize) -> Result<Tensor<F>> {
        let mut tape = Tape::no_grad();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant_ref(p)).collect();
        let x = tape.constant_ref(m_mix);
        let y = self.forward_on_tape(&mut tape, &vars, x, workers)?;
        let len = m_mix.shape()[1];
        let out = tape.value(y).clone();
        out.reshape(&[self.config.num_sources(), self.config.freq_bins, len])
    }

    /// Copies out the parameters of block `b`.
    pub fn block_params(&self, b: usize) -> Result<D2BlockParams<F>> {
        if b >= self.config.num_blocks {
            return Err(Error::invalid(format!("block {b} of {}", self.config.num_blocks)));
        }
        let slots = &self.layout.0.blocks[b];
        let p = |i: usize| self.params[i].clone();
        let conv = |s: ConvSlots, geometry: ConvGeometry| GroupedConvParams {
            geometry,
            v: p(s.v),
            g: p(s.g),
            bias: p(s.bias),
        };
        let dir = |d: [usize; 4]| GruDirectionParams {
            w_ih: p(d[0]),
            w_hh: p(d[1]),
            b_ih: p(d[2]),
            b_hh: p(d[3]),
        };
        Ok(D2BlockParams {
            variant: self.config.block_variant,
            gru: slots.gru.map(|[f, bw]| DilatedGruParams {
                config: self.config.gru(b),
                forward: dir(f),
                backward: Some(dir(bw)),
            }),
            mix_conv: slots.mix.map(|s| conv(s, self.config.mix_conv())),
            conv: conv(slots.conv, self.config.block_conv(b)),
        })
    }

    /// Keeps the input/output convolutions and the first `keep` blocks,
    /// reusing trained weights unchanged.
    pub fn truncated(&self, keep: usize) -> Result<Self> {
        if keep > self.config.num_blocks {
            return Err(Error::invalid(format!(
                "cannot keep {keep} of {} blocks",
                self.config.num_blocks
            )));
        }
        let mut config = self.config.clone();
        config.num_blocks = keep;
        config.conv_dilations.truncate(keep);
        config.gru_dilations.truncate(keep);
        let wanted: std::collections::HashSet<String> =
            config.param_specs().into_iter().map(|(n, _)| n).collect();
        let named = self
            .named_params()
            .filter(|(n, _)| wanted.contains(*n))
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        Self::from_params(config, named)
    }
}
