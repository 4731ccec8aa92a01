//! Tape-recorded computation graph.
//!
//! Every forward primitive appends a node holding its output value and what
//! it needs for the reverse pass. Nodes are appended in evaluation order, so
//! the tape is already topologically sorted and `backward` is a single sweep
//! from the loss toward index 0.

use super::ops::{activation::Activation, backward_node};
use super::{DiffError, Real, Tensor};

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize, padding: usize },
    MaxPool2 { input: Var, argmax: Vec<u32> },
    UpConv2 { input: Var, weight: Var, bias: Var },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Activation { input: Var, kind: Activation },
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, trans_b: bool, shared_b: bool },
    Linear { input: Var, weight: Var, bias: Option<Var> },
    Softmax { input: Var },
    Concat { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { input: Var, factor: T },
    ToTokens { input: Var },
    FromTokens { input: Var },
    Sum { input: Var },
    Bce { logits: Var, targets: Var },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) grad: Option<Tensor<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

/// A single-use reverse-mode tape.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    /// Records an input tensor. Trainable leaves receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
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

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub(crate) fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    /// Propagates d(loss)/d(node) to every `requires_grad` ancestor.
    ///
    /// Gradients of leaves are summed into their buffers; every reachable
    /// trainable node ends with a populated buffer (zeros when the path
    /// contributes nothing). A graph supports exactly one backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        if self.consumed {
            return Err(DiffError::GraphConsumed);
        }
        let numel = self.nodes[loss.0].value.numel();
        if numel != 1 {
            return Err(DiffError::NotScalar { numel });
        }
        self.consumed = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let shape = self.nodes[loss.0].value.shape().to_vec();
        self.nodes[loss.0].grad = Some(Tensor::full(&shape, T::one()));

        // Mark everything reachable from the loss so untouched ancestors
        // still end with a zero gradient.
        let mut reachable = vec![false; loss.0 + 1];
        reachable[loss.0] = true;
        for i in (0..=loss.0).rev() {
            if !reachable[i] {
                continue;
            }
            for input in inputs_of(&self.nodes[i].op) {
                if self.nodes[input.0].requires_grad {
                    reachable[input.0] = true;
                }
            }
        }

        for i in (0..=loss.0).rev() {
            if !reachable[i] || !self.nodes[i].requires_grad {
                continue;
            }
            if self.nodes[i].grad.is_none() {
                let shape = self.nodes[i].value.shape().to_vec();
                self.nodes[i].grad = Some(Tensor::zeros(&shape));
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let upstream = self.nodes[i].grad.take().expect("grad populated above");
            let contributions = backward_node(self, Var(i), &upstream);
            self.nodes[i].grad = Some(upstream);
            for (target, g) in contributions {
                let node = &mut self.nodes[target.0];
                if !node.requires_grad {
                    continue;
                }
                match node.grad.as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn inputs_of<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Conv2d { input, weight, bias, .. } | Op::UpConv2 { input, weight, bias } => {
            vec![*input, *weight, *bias]
        }
        Op::BatchNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
        Op::Linear { input, weight, bias } => {
            let mut v = vec![*input, *weight];
            v.extend(bias);
            v
        }
        Op::MatMul { a, b, .. } | Op::Concat { a, b } | Op::Mul { a, b } => vec![*a, *b],
        Op::Bce { logits, targets } => vec![*logits, *targets],
        Op::MaxPool2 { input, .. }
        | Op::Activation { input, .. }
        | Op::Softmax { input }
        | Op::Scale { input, .. }
        | Op::ToTokens { input }
        | Op::FromTokens { input }
        | Op::Sum { input } => vec![*input],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_for_scalars() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.param(Tensor::scalar(-2.5));
        let z = g.mul(x, y).unwrap();
        g.backward(z).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[-2.5]);
        assert_eq!(g.grad(y).unwrap().data(), &[3.0]);
    }

    #[test]
    fn constant_loss_gives_zero_or_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let c = g.constant(Tensor::scalar(7.0));
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());

        // x participates but with a zero multiplier
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let zero = g.constant(Tensor::scalar(0.0));
        let z = g.mul(x, zero).unwrap();
        g.backward(z).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::scalar(1.0));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.backward(s), Err(DiffError::GraphConsumed));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert_eq!(g.backward(x), Err(DiffError::NotScalar { numel: 2 }));
    }

    #[test]
    fn fan_out_accumulates_by_summation() {
        // f = sum(x * x) → df/dx = 2x
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }
}
