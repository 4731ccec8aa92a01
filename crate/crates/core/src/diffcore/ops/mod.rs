pub mod activation;
pub mod conv;
pub mod loss;
pub mod matmul;
pub mod norm;
pub mod pool;
pub mod shape;
pub mod softmax;

use super::graph::{Graph, Op, Var};
use super::{Real, Tensor};

/// Vector-Jacobian products of one recorded node.
pub(crate) fn backward_node<T: Real>(g: &Graph<T>, node: Var, dout: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    match &g.node(node).op {
        Op::Leaf => Vec::new(),
        &Op::Conv2d { input, weight, bias, stride, padding } => {
            conv::conv2d_backward(g, input, weight, bias, stride, padding, dout)
        }
        &Op::UpConv2 { input, weight, bias } => conv::upconv2_backward(g, input, weight, bias, dout),
        Op::MaxPool2 { input, argmax } => pool::maxpool2_backward(g, *input, argmax, dout),
        Op::BatchNorm { input, gamma, beta, xhat, inv_std, train } => {
            norm::batchnorm_backward(g, *input, *gamma, *beta, xhat, inv_std, *train, dout)
        }
        &Op::Activation { input, kind } => activation::activation_backward(g, node, input, kind, dout),
        &Op::MatMul { a, b, batch, m, k, n, trans_b, shared_b } => {
            matmul::matmul_backward(g, a, b, batch, m, k, n, trans_b, shared_b, dout)
        }
        &Op::Linear { input, weight, bias } => matmul::linear_backward(g, input, weight, bias, dout),
        &Op::Softmax { input } => softmax::softmax_backward(g, node, input, dout),
        &Op::Concat { a, b } => shape::concat_backward(g, a, b, dout),
        &Op::Mul { a, b } => shape::mul_backward(g, a, b, dout),
        &Op::Scale { input, factor } => shape::scale_backward(input, factor, dout),
        &Op::ToTokens { input } => shape::to_tokens_backward(g, input, dout),
        &Op::FromTokens { input } => shape::from_tokens_backward(g, input, dout),
        &Op::Sum { input } => shape::sum_backward(g, input, dout),
        &Op::Bce { logits, targets } => loss::bce_backward(g, logits, targets, dout),
    }
}
