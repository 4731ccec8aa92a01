use super::activation::sigmoid;
use crate::diffcore::graph::{Graph, Op, Var};
use crate::diffcore::{DiffError, Real, Tensor};

impl<T: Real> Graph<T> {
    /// Mean binary cross-entropy on logits, `max(z,0) - z*t + ln(1 + e^-|z|)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var, DiffError> {
        let (z, t) = (self.value(logits), self.value(targets));
        if z.shape() != t.shape() {
            return Err(DiffError::shape("bce_with_logits", "numel", z.numel(), t.numel()));
        }
        if z.numel() == 0 {
            return Err(DiffError::invalid("bce_with_logits", "empty input"));
        }
        if let Some((index, &value)) = t.data().iter().enumerate().find(|(_, &v)| v != T::zero() && v != T::one()) {
            return Err(DiffError::NonBinaryTarget { index, value: value.as_f64() });
        }
        let total: T = z
            .data()
            .iter()
            .zip(t.data())
            .map(|(&zv, &tv)| zv.max(T::zero()) - zv * tv + (-zv.abs()).exp().ln_1p())
            .sum();
        let loss = total / T::lit(z.numel() as f64);
        Ok(self.push(Tensor::scalar(loss), &[logits, targets], Op::Bce { logits, targets }))
    }
}

pub(crate) fn bce_backward<T: Real>(g: &Graph<T>, logits: Var, targets: Var, dout: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let (z, t) = (g.value(logits), g.value(targets));
    let scale = dout.data()[0] / T::lit(z.numel() as f64);
    let dz = z.data().iter().zip(t.data()).map(|(&zv, &tv)| (sigmoid(zv) - tv) * scale).collect();
    vec![(logits, Tensor::new(z.shape(), dz).expect("shape"))]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bce(z: f64, t: f64) -> f64 {
        let mut g = Graph::<f64>::new();
        let zv = g.constant(Tensor::scalar(z));
        let tv = g.constant(Tensor::scalar(t));
        let l = g.bce_with_logits(zv, tv).unwrap();
        g.value(l).data()[0]
    }

    #[test]
    fn closed_form_values() {
        assert!((bce(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(30.0, 1.0) < 1e-12);
        for z in [-7.5, -0.3, 0.0, 2.0, 40.0] {
            assert_eq!(bce(z, 1.0), bce(-z, 0.0));
        }
    }

    #[test]
    fn finite_for_huge_logits() {
        for z in [-1e4, 1e4] {
            for t in [0.0, 1.0] {
                let l = bce(z, t);
                assert!(l.is_finite() && l >= 0.0);
            }
        }
    }

    #[test]
    fn rejects_non_binary_targets() {
        let mut g = Graph::<f32>::new();
        let z = g.constant(Tensor::zeros(&[2]));
        let t = g.constant(Tensor::new(&[2], vec![1.0, 0.5]).unwrap());
        assert_eq!(g.bce_with_logits(z, t), Err(DiffError::NonBinaryTarget { index: 1, value: 0.5 }));
    }
}
