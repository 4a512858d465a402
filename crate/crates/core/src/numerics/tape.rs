use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::real::Real;
use crate::numerics::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a backward rule gets to see.
pub struct BackwardCtx<'c, F: Real> {
    pub inputs: &'c [&'c Tensor<F>],
    /// Which inputs actually need a gradient; rules may skip the rest.
    pub needs: &'c [bool],
    pub output: &'c Tensor<F>,
    pub grad_output: &'c [F],
}

/// Vector-Jacobian product of one recorded operation.
pub trait BackwardOp<F: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one entry per input, `None` where no gradient is needed.
    fn backward(&self, ctx: &BackwardCtx<'_, F>) -> Result<Vec<Option<Vec<F>>>>;
}

struct Node<'a, F: Real> {
    value: Cow<'a, Tensor<F>>,
    inputs: Vec<Var>,
    op: Option<Box<dyn BackwardOp<F> + 'a>>,
    requires_grad: bool,
}

/// Linear record of a forward pass, replayed in reverse by [`Tape::backward`].
pub struct Tape<'a, F: Real> {
    nodes: Vec<Node<'a, F>>,
    grad_enabled: bool,
}

impl<'a, F: Real> Default for Tape<'a, F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, F: Real> Tape<'a, F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; ops skip saving backward state.
    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    fn push_leaf(&mut self, value: Cow<'a, Tensor<F>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push_leaf(Cow::Owned(value), false)
    }

    pub fn constant_ref(&mut self, value: &'a Tensor<F>) -> Var {
        self.push_leaf(Cow::Borrowed(value), false)
    }

    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push_leaf(Cow::Owned(value), true)
    }

    pub fn param_ref(&mut self, value: &'a Tensor<F>) -> Var {
        self.push_leaf(Cow::Borrowed(value), true)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Whether an op over `inputs` should keep state for the backward pass.
    pub fn needs_backward(&self, inputs: &[Var]) -> bool {
        self.grad_enabled && inputs.iter().any(|&v| self.requires_grad(v))
    }

    /// Records the result of an operation.
    ///
    /// Fails with [`Error::NonFinite`] when `value` holds NaN or infinity.
    pub fn record(
        &mut self,
        inputs: &[Var],
        value: Tensor<F>,
        op: impl BackwardOp<F> + 'a,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = self.needs_backward(inputs);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            inputs: inputs.to_vec(),
            op: if requires_grad {
                Some(Box::new(op))
            } else {
                None
            },
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Largest absolute value over every recorded tensor.
    pub fn max_abs_activation(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.value.max_abs().as_f64())
            .fold(0.0, f64::max)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<F>> {
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be a scalar, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![F::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g_out) = upper[0].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<F>> = node.inputs.iter().map(|&v| self.value(v)).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&v| self.requires_grad(v)).collect();
            let ctx = BackwardCtx {
                inputs: &inputs,
                needs: &needs,
                output: &node.value,
                grad_output: &g_out,
            };
            let input_grads = op.backward(&ctx)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.requires_grad(input) {
                    continue;
                }
                if g.len() != self.value(input).numel() {
                    return Err(Error::shape(
                        op.name(),
                        self.value(input).shape(),
                        &[g.len()],
                    ));
                }
                match &mut lower[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &x)| *a += x),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a scalar with respect to every leaf that required them.
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
