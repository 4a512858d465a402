//! Differentiable primitives recorded on a [`Tape`].

use crate::error::{Error, Result};
use crate::numerics::real::{MatMut, MatRef, Real};
use crate::numerics::tape::{BackwardCtx, BackwardOp, Tape, Var};
use crate::numerics::tensor::Tensor;

/// Default negative slope of the leaky rectifier.
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    Log1p,
    Expm1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Unary(Unary),
    Binary(Binary),
}

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Log1p => "log1p",
            Unary::Expm1 => "expm1",
        }
    }

    pub fn apply<F: Real>(self, x: F) -> F {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::LeakyRelu(slope) => {
                if x >= F::zero() {
                    x
                } else {
                    F::lit(slope) * x
                }
            }
            Unary::Log1p => x.ln_1p(),
            Unary::Expm1 => x.exp_m1(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative<F: Real>(self, x: F, y: F) -> F {
        match self {
            Unary::Sigmoid => y * (F::one() - y),
            Unary::Tanh => F::one() - y * y,
            Unary::LeakyRelu(slope) => {
                if x >= F::zero() {
                    F::one()
                } else {
                    F::lit(slope)
                }
            }
            Unary::Log1p => F::one() / (F::one() + x),
            Unary::Expm1 => y + F::one(),
        }
    }
}

impl Binary {
    pub fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

struct UnaryOp(Unary);

impl<F: Real> BackwardOp<F> for UnaryOp {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(&self, ctx: &BackwardCtx<'_, F>) -> Result<Vec<Option<Vec<F>>>> {
        let x = ctx.inputs[0].data();
        let y = ctx.output.data();
        let g = x
            .iter()
            .zip(y)
            .zip(ctx.grad_output)
            .map(|((&x, &y), &go)| go * self.0.derivative(x, y))
            .collect();
        Ok(vec![Some(g)])
    }
}

struct BinaryOp(Binary);

impl<F: Real> BackwardOp<F> for BinaryOp {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(&self, ctx: &BackwardCtx<'_, F>) -> Result<Vec<Option<Vec<F>>>> {
        let go = ctx.grad_output;
        let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let (ga, gb) = match self.0 {
            Binary::Add => (go.to_vec(), go.to_vec()),
            Binary::Sub => (go.to_vec(), go.iter().map(|&g| -g).collect()),
            Binary::Mul => (
                go.iter().zip(b).map(|(&g, &y)| g * y).collect(),
                go.iter().zip(a).map(|(&g, &x)| g * x).collect(),
            ),
        };
        Ok(vec![
            ctx.needs[0].then_some(ga),
            ctx.needs[1].then_some(gb),
        ])
    }
}

pub fn unary<'a, F: Real>(tape: &mut Tape<'a, F>, op: Unary, x: Var) -> Result<Var> {
    let xv = tape.value(x);
    let data = xv.data().iter().map(|&v| op.apply(v)).collect();
    let out = Tensor::new(xv.shape(), data)?;
    tape.record(&[x], out, UnaryOp(op))
}

pub fn binary<'a, F: Real>(tape: &mut Tape<'a, F>, op: Binary, a: Var, b: Var) -> Result<Var> {
    let (av, bv) = (tape.value(a), tape.value(b));
    if av.shape() != bv.shape() {
        return Err(Error::shape(op.name(), av.shape(), bv.shape()));
    }
    let data = av
        .data()
        .iter()
        .zip(bv.data())
        .map(|(&x, &y)| match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        })
        .collect();
    let out = Tensor::new(av.shape(), data)?;
    tape.record(&[a, b], out, BinaryOp(op))
}

/// Applies an elementwise operation to one (unary) or two (binary) inputs.
pub fn elementwise<'a, F: Real>(
    tape: &mut Tape<'a, F>,
    op: Elementwise,
    inputs: &[Var],
) -> Result<Var> {
    match (op, inputs) {
        (Elementwise::Unary(u), &[x]) => unary(tape, u, x),
        (Elementwise::Binary(b), &[x, y]) => binary(tape, b, x, y),
        _ => Err(Error::invalid(format!(
            "{op:?} called with {} inputs",
            inputs.len()
        ))),
    }
}

pub fn add<'a, F: Real>(tape: &mut Tape<'a, F>, a: Var, b: Var) -> Result<Var> {
    binary(tape, Binary::Add, a, b)
}

pub fn sub<'a, F: Real>(tape: &mut Tape<'a, F>, a: Var, b: Var) -> Result<Var> {
    binary(tape, Binary::Sub, a, b)
}

pub fn mul<'a, F: Real>(tape: &mut Tape<'a, F>, a: Var, b: Var) -> Result<Var> {
    binary(tape, Binary::Mul, a, b)
}

pub fn sigmoid_op<'a, F: Real>(tape: &mut Tape<'a, F>, x: Var) -> Result<Var> {
    unary(tape, Unary::Sigmoid, x)
}

pub fn tanh_op<'a, F: Real>(tape: &mut Tape<'a, F>, x: Var) -> Result<Var> {
    unary(tape, Unary::Tanh, x)
}

pub fn leaky_relu<'a, F: Real>(tape: &mut Tape<'a, F>, x: Var) -> Result<Var> {
    unary(tape, Unary::LeakyRelu(LEAKY_RELU_SLOPE), x)
}

struct MatmulOp {
    m: usize,
    k: usize,
    n: usize,
}

impl<F: Real> BackwardOp<F> for MatmulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, F>) -> Result<Vec<Option<Vec<F>>>> {
        let MatmulOp { m, k, n } = *self;
        let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let go = ctx.grad_output;
        let ga = ctx.needs[0].then(|| {
            // dA = dOut * B^T
            let mut ga = vec![F::zero(); m * k];
            F::gemm_raw(
                m,
                n,
                k,
                F::one(),
                MatRef::row_major(go, 0, n),
                MatRef::transposed(b, 0, n),
                F::zero(),
                MatMut::row_major(&mut ga, 0, k),
            );
            ga
        });
        let gb = ctx.needs[1].then(|| {
            // dB = A^T * dOut
            let mut gb = vec![F::zero(); k * n];
            F::gemm_raw(
                k,
                m,
                n,
                F::one(),
                MatRef::transposed(a, 0, k),
                MatRef::row_major(go, 0, n),
                F::zero(),
                MatMut::row_major(&mut gb, 0, n),
            );
            gb
        });
        Ok(vec![ga, gb])
    }
}

pub fn matmul<'a, F: Real>(tape: &mut Tape<'a, F>, a: Var, b: Var) -> Result<Var> {
    let (av, bv) = (tape.value(a), tape.value(b));
    let (m, k) = av.dims2()?;
    let (k2, n) = bv.dims2()?;
    if k != k2 {
        return Err(Error::shape("matmul", av.shape(), bv.shape()));
    }
    let out = av.matmul(bv)?;
    tape.record(&[a, b], out, MatmulOp { m, k, n })
}

struct SumOp;

impl<F: Real> BackwardOp<F> for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, F>) -> Result<Vec<Option<Vec<F>>>> {
        Ok(vec![Some(vec![ctx.grad_output[0]; ctx.inputs[0].numel()])])
    }
}

pub fn sum<'a, F: Real>(tape: &mut Tape<'a, F>, x: Var) -> Result<Var> {
    let s: F = tape.value(x).data().iter().copied().sum();
    tape.record(&[x], Tensor::scalar(s), SumOp)
}

struct ScaleOp(f64);

impl<F: Real> BackwardOp<F> for ScaleOp {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, F>) -> Result<Vec<Option<Vec<F>>>> {
        let c = F::lit(self.0);
        Ok(vec![Some(ctx.grad_output.iter().map(|&g| g * c).collect())])
    }
}

pub fn scale<'a, F: Real>(tape: &mut Tape<'a, F>, x: Var, factor: f64) -> Result<Var> {
    let c = F::lit(factor);
    let xv = tape.value(x);
    let out = Tensor::new(xv.shape(), xv.data().iter().map(|&v| v * c).collect())?;
    tape.record(&[x], out, ScaleOp(factor))
}

struct MseOp;

impl<F: Real> BackwardOp<F> for MseOp {
    fn name(&self) -> &'static str {
        "mse"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, F>) -> Result<Vec<Option<Vec<F>>>> {
        let (p, t) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let c = F::lit(2.0 / p.len() as f64) * ctx.grad_output[0];
        let gp: Vec<F> = p.iter().zip(t).map(|(&a, &b)| c * (a - b)).collect();
        let gt = ctx.needs[1].then(|| gp.iter().map(|&g| -g).collect());
        Ok(vec![ctx.needs[0].then_some(gp), gt])
    }
}

/// Mean squared error between two equally shaped tensors.
pub fn mse<'a, F: Real>(tape: &mut Tape<'a, F>, pred: Var, target: Var) -> Result<Var> {
    let (p, t) = (tape.value(pred), tape.value(target));
    if p.numel() != t.numel() {
        return Err(Error::shape("mse", p.shape(), t.shape()));
    }
    let s: F = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let out = Tensor::scalar(s / F::lit(p.numel() as f64));
    tape.record(&[pred, target], out, MseOp)
}

struct BiasOp {
    channels: usize,
    len: usize,
}

impl<F: Real> BackwardOp<F> for BiasOp {
    fn name(&self) -> &'static str {
        "add_bias"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, F>) -> Result<Vec<Option<Vec<F>>>> {
        let go = ctx.grad_output;
        let gb = ctx.needs[1].then(|| {
            (0..self.channels)
                .map(|c| go[c * self.len..(c + 1) * self.len].iter().copied().sum())
                .collect()
        });
        Ok(vec![ctx.needs[0].then(|| go.to_vec()), gb])
    }
}

/// Adds a per-channel bias `[C]` to a `[C x T]` tensor.
pub fn add_bias<'a, F: Real>(tape: &mut Tape<'a, F>, x: Var, bias: Var) -> Result<Var> {
    let (xv, bv) = (tape.value(x), tape.value(bias));
    let (c, t) = xv.dims2()?;
    if bv.numel() != c {
        return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
    }
    let mut out = xv.data().to_vec();
    for (row, &b) in out.chunks_mut(t).zip(bv.data()) {
        row.iter_mut().for_each(|v| *v += b);
    }
    let out = Tensor::new(xv.shape(), out)?;
    tape.record(&[x, bias], out, BiasOp { channels: c, len: t })
}

struct ReshapeOp;

impl<F: Real> BackwardOp<F> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, F>) -> Result<Vec<Option<Vec<F>>>> {
        Ok(vec![Some(ctx.grad_output.to_vec())])
    }
}

pub fn reshape<'a, F: Real>(tape: &mut Tape<'a, F>, x: Var, shape: &[usize]) -> Result<Var> {
    let out = tape.value(x).clone().reshape(shape)?;
    tape.record(&[x], out, ReshapeOp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_unary(op: Unary, x: f64) -> f64 {
        let mut tape = Tape::<f64>::no_grad();
        let v = tape.constant(Tensor::scalar(x));
        let y = unary(&mut tape, op, v).unwrap();
        tape.value(y).data()[0]
    }

    #[test]
    fn unary_values() {
        assert_eq!(eval_unary(Unary::Sigmoid, 0.0), 0.5);
        assert!((eval_unary(Unary::LeakyRelu(0.01), -1.0) + 0.01).abs() < 1e-15);
        assert_eq!(eval_unary(Unary::LeakyRelu(0.01), 2.0), 2.0);
        assert!((eval_unary(Unary::Log1p, std::f64::consts::E - 1.0) - 1.0).abs() < 1e-15);
        assert!(eval_unary(Unary::Sigmoid, -800.0) >= 0.0);
    }

    #[test]
    fn expm1_inverts_log1p() {
        for i in 0..=1000 {
            let x = i as f64 * 0.1;
            let y = eval_unary(Unary::Expm1, eval_unary(Unary::Log1p, x));
            assert!((y - x).abs() < 1e-6, "{x} -> {y}");
        }
    }

    #[test]
    fn non_finite_output_names_the_op() {
        let mut tape = Tape::<f64>::no_grad();
        let v = tape.constant(Tensor::scalar(1000.0));
        let err = unary(&mut tape, Unary::Expm1, v).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "expm1" }));
    }

    #[test]
    fn binary_shape_mismatch() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(add(&mut tape, a, b), Err(Error::Shape { .. })));
        assert!(elementwise(&mut tape, Elementwise::Binary(Binary::Add), &[a]).is_err());
    }

    #[test]
    fn matmul_identity_is_exact() {
        let a = Tensor::<f32>::from_fn(&[4, 3], |i| (i as f32 * 0.37).sin());
        let out = a.matmul(&Tensor::identity(3)).unwrap();
        assert_eq!(out, a);
        let v = Tensor::<f32>::from_fn(&[3, 1], |i| i as f32 - 1.5);
        assert_eq!(Tensor::identity(3).matmul(&v).unwrap(), v);
    }

    #[test]
    fn backward_accumulates_shared_inputs() {
        // y = sum(x * x) → dy/dx = 2x
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let sq = mul(&mut tape, x, x).unwrap();
        let y = sum(&mut tape, sq).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }
}
