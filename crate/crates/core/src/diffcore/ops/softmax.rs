use crate::diffcore::graph::{Graph, Op, Var};
use crate::diffcore::{DiffError, Real, Tensor};

impl<T: Real> Graph<T> {
    /// Softmax over the last axis.
    pub fn rowsoftmax(&mut self, input: Var) -> Result<Var, DiffError> {
        self.softmax_impl(input, None)
    }

    /// Softmax over the last axis of a `B x m x n` tensor where, for batch
    /// item `b`, columns at or beyond `valid[b]` are excluded. A zero length
    /// still keeps column 0 so every row stays a distribution.
    pub fn masked_rowsoftmax(&mut self, input: Var, valid: &[usize]) -> Result<Var, DiffError> {
        let shape = self.value(input).shape();
        if shape.len() != 3 {
            return Err(DiffError::Rank { op: "masked_rowsoftmax", expected: 3, found: shape.len() });
        }
        if valid.len() != shape[0] {
            return Err(DiffError::shape("masked_rowsoftmax", "valid lengths", shape[0], valid.len()));
        }
        self.softmax_impl(input, Some(valid))
    }

    fn softmax_impl(&mut self, input: Var, valid: Option<&[usize]>) -> Result<Var, DiffError> {
        let x = self.value(input);
        if !x.is_finite() {
            return Err(DiffError::NonFinite { what: "softmax logits".into() });
        }
        let n = *x.shape().last().ok_or(DiffError::Rank { op: "rowsoftmax", expected: 1, found: 0 })?;
        if n == 0 {
            return Err(DiffError::invalid("rowsoftmax", "empty softmax axis"));
        }
        let rows_per_batch = if x.ndim() >= 2 { x.shape()[x.ndim() - 2] } else { 1 };
        let mut out = vec![T::zero(); x.numel()];
        for (r, (src, dst)) in x.data().chunks(n).zip(out.chunks_mut(n)).enumerate() {
            let limit = match valid {
                Some(v) => v[r / rows_per_batch].clamp(1, n),
                None => n,
            };
            let max = src[..limit].iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for (d, &s) in dst[..limit].iter_mut().zip(&src[..limit]) {
                *d = (s - max).exp();
                total += *d;
            }
            dst[..limit].iter_mut().for_each(|d| *d = *d / total);
        }
        let value = Tensor::new(x.shape(), out)?;
        Ok(self.push(value, &[input], Op::Softmax { input }))
    }
}

pub(crate) fn softmax_backward<T: Real>(g: &Graph<T>, node: Var, input: Var, dout: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let y = g.value(node);
    let n = *y.shape().last().expect("rank >= 1");
    let mut dx = vec![T::zero(); y.numel()];
    for ((yr, dr), out) in y.data().chunks(n).zip(dout.data().chunks(n)).zip(dx.chunks_mut(n)) {
        let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
        for ((o, &yv), &dv) in out.iter_mut().zip(yr).zip(dr) {
            *o = yv * (dv - dot);
        }
    }
    vec![(input, Tensor::new(y.shape(), dx).expect("shape"))]
}
