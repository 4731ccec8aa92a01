use crate::diffcore::graph::{Graph, Op, Var};
use crate::diffcore::{DiffError, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Graph<T> {
    pub fn elementwise(&mut self, input: Var, kind: Activation) -> Result<Var, DiffError> {
        let x = self.value(input);
        let value = match kind {
            Activation::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::Tanh => x.map(|v| v.tanh()),
            Activation::Sigmoid => x.map(sigmoid),
        };
        Ok(self.push(value, &[input], Op::Activation { input, kind }))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, DiffError> {
        self.elementwise(input, Activation::Relu)
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var, DiffError> {
        self.elementwise(input, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var, DiffError> {
        self.elementwise(input, Activation::Sigmoid)
    }
}

pub(crate) fn activation_backward<T: Real>(
    g: &Graph<T>,
    node: Var,
    input: Var,
    kind: Activation,
    dout: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let x = g.value(input).data();
    let y = g.value(node).data();
    let one = T::one();
    let dx: Vec<T> = match kind {
        Activation::Relu => x
            .iter()
            .zip(dout.data())
            .map(|(&xv, &d)| if xv > T::zero() { d } else { T::zero() })
            .collect(),
        Activation::Tanh => y.iter().zip(dout.data()).map(|(&yv, &d)| d * (one - yv * yv)).collect(),
        Activation::Sigmoid => y.iter().zip(dout.data()).map(|(&yv, &d)| d * yv * (one - yv)).collect(),
    };
    vec![(input, Tensor::new(dout.shape(), dx).expect("shape"))]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply(kind: Activation, xs: &[f32]) -> Vec<f32> {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::new(&[xs.len()], xs.to_vec()).unwrap());
        let y = g.elementwise(x, kind).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn pointwise_values() {
        assert_eq!(apply(Activation::Relu, &[-1.0, 2.0]), vec![0.0, 2.0]);
        assert_eq!(apply(Activation::Tanh, &[0.0]), vec![0.0]);
        assert_eq!(apply(Activation::Sigmoid, &[0.0]), vec![0.5]);
    }

    #[test]
    fn ranges_hold_at_extremes() {
        let xs = [-1e30f32, -50.0, -1.0, 0.0, 1.0, 50.0, 1e30];
        assert!(apply(Activation::Tanh, &xs).iter().all(|v| v.abs() <= 1.0));
        let s = apply(Activation::Sigmoid, &[-50.0, 0.0, 50.0]);
        assert!(s.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        assert!(apply(Activation::Relu, &xs).iter().all(|&v| v >= 0.0));
    }
}
