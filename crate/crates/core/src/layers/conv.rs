//! Dilated grouped 1-D convolution and weight normalization.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::ops;
use crate::numerics::{BackwardCtx, BackwardOp, MatMut, MatRef, Real, Tape, Tensor, Var};

/// Hyperparameters of a 1-D convolution with symmetric "same" padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize, groups: usize) -> Self {
        ConvGeometry {
            in_channels,
            out_channels,
            kernel,
            dilation,
            groups,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ConvGeometry {
            in_channels,
            out_channels,
            kernel,
            dilation,
            groups,
        } = *self;
        if in_channels == 0 || out_channels == 0 || kernel == 0 || dilation == 0 || groups == 0 {
            return Err(Error::invalid(format!("degenerate convolution {self:?}")));
        }
        if in_channels % groups != 0 || out_channels % groups != 0 {
            return Err(Error::invalid(format!(
                "channels {in_channels}->{out_channels} not divisible by {groups} groups"
            )));
        }
        if (dilation * (kernel - 1)) % 2 != 0 {
            return Err(Error::invalid(format!(
                "kernel {kernel} with dilation {dilation} cannot be padded symmetrically"
            )));
        }
        Ok(())
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    /// Number of input steps one output step sees.
    pub fn receptive_field(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [self.out_channels, self.in_per_group(), self.kernel]
    }

    pub fn fan_in(&self) -> usize {
        self.in_per_group() * self.kernel
    }

    /// Output time range `[lo, hi)` touched by tap `k`, and the input offset
    /// (input index = output index + offset).
    fn tap_range(&self, k: usize, len: usize) -> Option<(usize, usize, isize)> {
        let offset = (k * self.dilation) as isize - self.padding() as isize;
        let lo = (-offset).max(0) as usize;
        let hi = (len as isize - offset).min(len as isize);
        (hi > lo as isize).then_some((lo, hi as usize, offset))
    }
}

fn conv_forward<F: Real>(x: &[F], len: usize, w: &[F], geo: &ConvGeometry) -> Vec<F> {
    let (cig, cog, kk) = (geo.in_per_group(), geo.out_per_group(), geo.kernel);
    let mut out = vec![F::zero(); geo.out_channels * len];
    for g in 0..geo.groups {
        for k in 0..kk {
            let Some((lo, hi, off)) = geo.tap_range(k, len) else { continue };
            F::gemm_raw(
                cog,
                cig,
                hi - lo,
                F::one(),
                MatRef {
                    data: w,
                    offset: g * cog * cig * kk + k,
                    row_stride: (cig * kk) as isize,
                    col_stride: kk as isize,
                },
                MatRef::row_major(x, g * cig * len + (lo as isize + off) as usize, len),
                F::one(),
                MatMut::row_major(&mut out, g * cog * len + lo, len),
            );
        }
    }
    out
}

struct ConvOp {
    geo: ConvGeometry,
    len: usize,
}

impl<F: Real> BackwardOp<F> for ConvOp {
    fn name(&self) -> &'static str {
        "grouped_conv1d"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, F>) -> Result<Vec<Option<Vec<F>>>> {
        let geo = &self.geo;
        let len = self.len;
        let (cig, cog, kk) = (geo.in_per_group(), geo.out_per_group(), geo.kernel);
        let (x, w) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let go = ctx.grad_output;

        let gx = ctx.needs[0].then(|| {
            let mut gx = vec![F::zero(); geo.in_channels * len];
            for g in 0..geo.groups {
                for k in 0..kk {
                    let Some((lo, hi, off)) = geo.tap_range(k, len) else { continue };
                    F::gemm_raw(
                        cig,
                        cog,
                        hi - lo,
                        F::one(),
                        MatRef {
                            data: w,
                            offset: g * cog * cig * kk + k,
                            row_stride: kk as isize,
                            col_stride: (cig * kk) as isize,
                        },
                        MatRef::row_major(go, g * cog * len + lo, len),
                        F::one(),
                        MatMut::row_major(&mut gx, g * cig * len + (lo as isize + off) as usize, len),
                    );
                }
            }
            gx
        });

        let gw = ctx.needs[1].then(|| {
            let mut gw = vec![F::zero(); w.len()];
            for g in 0..geo.groups {
                for k in 0..kk {
                    let Some((lo, hi, off)) = geo.tap_range(k, len) else { continue };
                    F::gemm_raw(
                        cog,
                        hi - lo,
                        cig,
                        F::one(),
                        MatRef::row_major(go, g * cog * len + lo, len),
                        MatRef::transposed(x, g * cig * len + (lo as isize + off) as usize, len),
                        F::one(),
                        MatMut {
                            data: &mut gw,
                            offset: g * cog * cig * kk + k,
                            row_stride: (cig * kk) as isize,
                            col_stride: kk as isize,
                        },
                    );
                }
            }
            gw
        });

        let gb = (ctx.inputs.len() > 2 && ctx.needs[2]).then(|| {
            go.chunks(len)
                .map(|row| row.iter().copied().sum())
                .collect::<Vec<F>>()
        });

        let mut grads = vec![gx, gw];
        if ctx.inputs.len() > 2 {
            grads.push(gb);
        }
        Ok(grads)
    }
}

/// Records `y = conv(x, weight) + bias` with `x: [C_in x T]`, `weight:
/// [C_out x C_in/G x K]`; output keeps length `T`.
pub fn conv1d<'a, F: Real>(
    tape: &mut Tape<'a, F>,
    x: Var,
    weight: Var,
    bias: Option<Var>,
    geo: ConvGeometry,
) -> Result<Var> {
    geo.validate()?;
    let xv = tape.value(x);
    let (c, len) = xv.dims2()?;
    if c != geo.in_channels {
        return Err(Error::shape("grouped_conv1d", xv.shape(), &[geo.in_channels]));
    }
    let wv = tape.value(weight);
    if wv.shape() != geo.weight_shape() {
        return Err(Error::shape("grouped_conv1d", wv.shape(), &geo.weight_shape()));
    }
    if geo.receptive_field() > len + 2 * geo.padding() {
        return Err(Error::invalid(format!(
            "kernel span {} exceeds padded input length {}",
            geo.receptive_field(),
            len + 2 * geo.padding()
        )));
    }
    let mut out = conv_forward(xv.data(), len, wv.data(), &geo);
    let mut inputs = vec![x, weight];
    if let Some(b) = bias {
        let bv = tape.value(b);
        if bv.numel() != geo.out_channels {
            return Err(Error::shape("grouped_conv1d", bv.shape(), &[geo.out_channels]));
        }
        for (row, &bb) in out.chunks_mut(len).zip(bv.data()) {
            row.iter_mut().for_each(|v| *v += bb);
        }
        inputs.push(b);
    }
    let out = Tensor::new(&[geo.out_channels, len], out)?;
    tape.record(&inputs, out, ConvOp { geo, len })
}

struct WeightNormOp;

impl<F: Real> BackwardOp<F> for WeightNormOp {
    fn name(&self) -> &'static str {
        "weight_norm"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, F>) -> Result<Vec<Option<Vec<F>>>> {
        let (v, g) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let rows = g.len();
        let width = v.len() / rows;
        let go = ctx.grad_output;
        let mut gv = vec![F::zero(); v.len()];
        let mut gg = vec![F::zero(); rows];
        for r in 0..rows {
            let vr = &v[r * width..(r + 1) * width];
            let dr = &go[r * width..(r + 1) * width];
            let norm = vr.iter().map(|&a| a * a).sum::<F>().sqrt();
            let proj: F = vr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
            gg[r] = proj / norm;
            let s = g[r] / norm;
            let c = g[r] * proj / (norm * norm * norm);
            for ((out, &a), &d) in gv[r * width..(r + 1) * width].iter_mut().zip(vr).zip(dr) {
                *out = s * d - c * a;
            }
        }
        Ok(vec![ctx.needs[0].then_some(gv), ctx.needs[1].then_some(gg)])
    }
}

/// `w = g * v / ||v||`, normalized per output channel (first axis of `v`).
pub fn weight_norm<'a, F: Real>(tape: &mut Tape<'a, F>, v: Var, g: Var) -> Result<Var> {
    let (vv, gv) = (tape.value(v), tape.value(g));
    let rows = vv.shape()[0];
    if gv.numel() != rows {
        return Err(Error::shape("weight_norm", vv.shape(), gv.shape()));
    }
    let w = weight_norm_effective(vv, gv)?;
    tape.record(&[v, g], w, WeightNormOp)
}

/// Effective kernel of a weight-normalized parameter pair.
pub fn weight_norm_effective<F: Real>(v: &Tensor<F>, g: &Tensor<F>) -> Result<Tensor<F>> {
    let rows = v.shape()[0];
    if g.numel() != rows {
        return Err(Error::shape("weight_norm", v.shape(), g.shape()));
    }
    let width = v.numel() / rows;
    let mut w = v.data().to_vec();
    for (r, row) in w.chunks_mut(width).enumerate() {
        let norm = row.iter().map(|&a| a * a).sum::<F>().sqrt();
        if !(norm > F::zero()) {
            return Err(Error::NonFinite { op: "weight_norm" });
        }
        let s = g.data()[r] / norm;
        row.iter_mut().for_each(|a| *a *= s);
    }
    Tensor::new(v.shape(), w)
}

/// Weight-normalized grouped convolution parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedConvParams<F> {
    pub geometry: ConvGeometry,
    /// Direction tensor `[C_out x C_in/G x K]`.
    pub v: Tensor<F>,
    /// Per-output-channel magnitude `[C_out]`.
    pub g: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Real> GroupedConvParams<F> {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init with `g = ||v||`, so the
    /// effective weight equals the raw draw.
    pub fn init(geometry: ConvGeometry, rng: &mut impl Rng) -> Result<Self> {
        geometry.validate()?;
        let bound = 1.0 / (geometry.fan_in() as f64).sqrt();
        let mut draw = |n| -> Vec<F> {
            (0..n).map(|_| F::lit(rng.gen_range(-bound..bound))).collect()
        };
        let shape = geometry.weight_shape();
        let v = Tensor::new(&shape, draw(shape.iter().product()))?;
        let bias = Tensor::new(&[geometry.out_channels], draw(geometry.out_channels))?;
        let g = row_norms(&v);
        Ok(GroupedConvParams { geometry, v, g, bias })
    }

    pub fn effective_weight(&self) -> Result<Tensor<F>> {
        weight_norm_effective(&self.v, &self.g)
    }
}

/// L2 norm of each slice along the first axis.
pub fn row_norms<F: Real>(v: &Tensor<F>) -> Tensor<F> {
    let rows = v.shape()[0];
    let width = v.numel() / rows;
    let norms = v
        .data()
        .chunks(width)
        .map(|r| r.iter().map(|&a| a * a).sum::<F>().sqrt())
        .collect();
    Tensor::new(&[rows], norms).expect("non-empty")
}

/// Weight-normalized convolution on a tape given its three parameter variables.
pub fn weight_normed_conv<'a, F: Real>(
    tape: &mut Tape<'a, F>,
    x: Var,
    v: Var,
    g: Var,
    bias: Var,
    geo: ConvGeometry,
) -> Result<Var> {
    let w = weight_norm(tape, v, g)?;
    conv1d(tape, x, w, Some(bias), geo)
}

/// Applies a weight-normalized grouped convolution to `x: [C_in x T]`.
pub fn grouped_conv1d<F: Real>(x: &Tensor<F>, params: &GroupedConvParams<F>) -> Result<Tensor<F>> {
    let mut tape = Tape::no_grad();
    let xv = tape.constant_ref(x);
    let v = tape.constant_ref(&params.v);
    let g = tape.constant_ref(&params.g);
    let b = tape.constant_ref(&params.bias);
    let y = weight_normed_conv(&mut tape, xv, v, g, b, params.geometry)?;
    Ok(tape.value(y).clone())
}

/// Convenience: weight-normalized conv followed by the leaky rectifier.
pub fn conv_leaky<'a, F: Real>(
    tape: &mut Tape<'a, F>,
    x: Var,
    v: Var,
    g: Var,
    bias: Var,
    geo: ConvGeometry,
) -> Result<Var> {
    let y = weight_normed_conv(tape, x, v, g, bias, geo)?;
    ops::leaky_relu(tape, y)
}
