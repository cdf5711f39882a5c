//! Reverse-mode automatic differentiation on a per-forward-pass tape.
//!
//! A [`Tape`] records every operation as a node holding its output value and
//! what the backward pass needs. [`Tape::backward`] walks the nodes once, in
//! reverse insertion order, and sums gradient contributions over all uses of
//! each value. The tape is dropped after backward; only first-order
//! gradients are supported.

mod backward;
mod ops;

use std::collections::HashMap;

use crate::conv::PlaneConv;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable array.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Whether decoupled weight decay applies (false for norms and biases).
    pub decay: bool,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, decay: bool) -> Self {
        Param {
            name: name.into(),
            value,
            decay,
        }
    }
}

/// Anything that owns [`Param`]s, visited in a fixed order.
pub trait Parameterized<T: Real> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sin(Var),
    Exp(Var),
    Gelu(Var),
    Sigmoid(Var),
    SumAll(Var),
    SumAxis {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    Reshape(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    SqDist(Var, Var),
    Conv {
        x: Var,
        k: Var,
        geom: PlaneConv,
    },
    DepthwiseConv {
        x: Var,
        k: Var,
        geom: PlaneConv,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Operation recorder for one forward pass.
pub struct Tape<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
    bindings: HashMap<String, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            bindings: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value with no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Bind a parameter as a leaf. Binding the same name twice returns the
    /// first handle, so shared parameters accumulate one gradient.
    pub fn param(&mut self, p: &Param<T>) -> Var {
        if let Some(&v) = self.bindings.get(&p.name) {
            return v;
        }
        let v = self.leaf(p.value.clone());
        self.bindings.insert(p.name.clone(), v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradients of the scalar `loss` with respect to every tracked leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let value = self.value(loss);
        if value.len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                value.shape()
            )));
        }
        if !self.requires_grad(loss) {
            return Err(Error::usage("backward on a loss that does not depend on any leaf"));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            backward::propagate(self, idx, &g, &mut grads);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor::new(self.nodes[i].value.shape().to_vec(), data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients {
            grads,
            bindings: self.bindings.clone(),
        })
    }
}

/// Result of [`Tape::backward`]: total derivatives for tracked leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    bindings: HashMap<String, Var>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a bound parameter, by name.
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.bindings.get(name).and_then(|&v| self.wrt(v))
    }
}

#[cfg(test)]
mod tests;
