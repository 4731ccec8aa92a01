use crate::diffcore::graph::{Graph, Op, Var};
use crate::diffcore::real::gemm;
use crate::diffcore::{DiffError, Real, Tensor};

impl<T: Real> Graph<T> {
    /// `m x k` times `k x n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let ([m, k], [kb, n]) = (sa, sb) else {
            let found = if sa.len() != 2 { sa.len() } else { sb.len() };
            return Err(DiffError::Rank { op: "matmul", expected: 2, found });
        };
        let (m, k, kb, n) = (*m, *k, *kb, *n);
        if k != kb {
            return Err(DiffError::shape("matmul", "inner dimension", k, kb));
        }
        self.matmul_impl(a, b, 1, m, k, n, false, true, vec![m, n])
    }

    /// Batched product of `B x m x k` with `B x k x n`, or with `B x n x k`
    /// transposed when `trans_b`. A rank-2 `b` is shared across the batch.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, DiffError> {
        let sa = self.value(a).shape().to_vec();
        let sb = self.value(b).shape().to_vec();
        let [batch, m, k] = sa[..] else {
            return Err(DiffError::Rank { op: "bmm", expected: 3, found: sa.len() });
        };
        let (shared_b, rows, cols) = match sb[..] {
            [bb, r, c] => {
                if bb != batch {
                    return Err(DiffError::shape("bmm", "batch", batch, bb));
                }
                (false, r, c)
            }
            [r, c] => (true, r, c),
            _ => return Err(DiffError::Rank { op: "bmm", expected: 3, found: sb.len() }),
        };
        let (kb, n) = if trans_b { (cols, rows) } else { (rows, cols) };
        if kb != k {
            return Err(DiffError::shape("bmm", "inner dimension", k, kb));
        }
        self.matmul_impl(a, b, batch, m, k, n, trans_b, shared_b, vec![batch, m, n])
    }

    #[allow(clippy::too_many_arguments)]
    fn matmul_impl(
        &mut self,
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
        shared_b: bool,
        shape: Vec<usize>,
    ) -> Result<Var, DiffError> {
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); batch * m * n];
        for s in 0..batch {
            let bs = if shared_b { bv } else { &bv[s * k * n..(s + 1) * k * n] };
            gemm(m, k, n, &av[s * m * k..(s + 1) * m * k], false, bs, trans_b, &mut out[s * m * n..(s + 1) * m * n], false);
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, &[a, b], Op::MatMul { a, b, batch, m, k, n, trans_b, shared_b }))
    }

    /// Affine map over the last axis: `x[.., K] * w[K, N] + bias[N]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var, DiffError> {
        let x = self.value(input);
        let w = self.value(weight);
        let [kin, nout] = *w.shape() else {
            return Err(DiffError::Rank { op: "linear", expected: 2, found: w.ndim() });
        };
        let kx = *x.shape().last().unwrap_or(&0);
        if kx != kin {
            return Err(DiffError::shape("linear", "input features", kin, kx));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [nout] {
                return Err(DiffError::shape("linear", "bias length", nout, self.value(b).numel()));
            }
        }
        let rows = x.numel().checked_div(kin).unwrap_or(0);
        let mut out = vec![T::zero(); rows * nout];
        gemm(rows, kin, nout, x.data(), false, w.data(), false, &mut out, false);
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_mut(nout) {
                for (o, &bv) in row.iter_mut().zip(bd) {
                    *o += bv;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = nout;
        let value = Tensor::new(&shape, out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(value, &inputs, Op::Linear { input, weight, bias }))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul_backward<T: Real>(
    g: &Graph<T>,
    a: Var,
    b: Var,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_b: bool,
    shared_b: bool,
    dout: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let av = g.value(a).data();
    let bv = g.value(b).data();
    let d = dout.data();
    let mut grads = Vec::with_capacity(2);
    if g.requires_grad(a) {
        let mut da = vec![T::zero(); av.len()];
        for s in 0..batch {
            let bs = if shared_b { bv } else { &bv[s * k * n..(s + 1) * k * n] };
            // dA = dC * B^T  (or dC * B when B was used transposed)
            gemm(m, n, k, &d[s * m * n..(s + 1) * m * n], false, bs, !trans_b, &mut da[s * m * k..(s + 1) * m * k], false);
        }
        grads.push((a, Tensor::new(g.value(a).shape(), da).expect("shape")));
    }
    if g.requires_grad(b) {
        let mut db = vec![T::zero(); bv.len()];
        for s in 0..batch {
            let dbs = if shared_b { &mut db[..] } else { &mut db[s * k * n..(s + 1) * k * n] };
            let as_ = &av[s * m * k..(s + 1) * m * k];
            let ds = &d[s * m * n..(s + 1) * m * n];
            if trans_b {
                // B is n x k: dB = dC^T * A
                gemm(n, m, k, ds, true, as_, false, dbs, true);
            } else {
                gemm(k, m, n, as_, true, ds, false, dbs, true);
            }
        }
        grads.push((b, Tensor::new(g.value(b).shape(), db).expect("shape")));
    }
    grads
}

pub(crate) fn linear_backward<T: Real>(
    g: &Graph<T>,
    input: Var,
    weight: Var,
    bias: Option<Var>,
    dout: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let x = g.value(input);
    let w = g.value(weight);
    let (kin, nout) = (w.dim(0), w.dim(1));
    let rows = x.numel().checked_div(kin).unwrap_or(0);
    let d = dout.data();
    let mut grads = Vec::with_capacity(3);
    if g.requires_grad(input) {
        let mut dx = vec![T::zero(); x.numel()];
        gemm(rows, nout, kin, d, false, w.data(), true, &mut dx, false);
        grads.push((input, Tensor::new(x.shape(), dx).expect("shape")));
    }
    if g.requires_grad(weight) {
        let mut dw = vec![T::zero(); kin * nout];
        gemm(kin, rows, nout, x.data(), true, d, false, &mut dw, false);
        grads.push((weight, Tensor::new(w.shape(), dw).expect("shape")));
    }
    if let Some(b) = bias {
        let mut db = vec![T::zero(); nout];
        for row in d.chunks(nout) {
            for (acc, &v) in db.iter_mut().zip(row) {
                *acc += v;
            }
        }
        grads.push((b, Tensor::new(&[nout], db).expect("shape")));
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_product() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.constant(Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 1]);
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn identity_is_neutral() {
        let mut g = Graph::<f32>::new();
        let x = Tensor::new(&[3, 2], vec![0.5, -1.0, 2.0, 3.5, -0.25, 8.0]).unwrap();
        let eye = g.constant(Tensor::new(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
        let xv = g.constant(x.clone());
        let y = g.matmul(eye, xv).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn inner_dimension_mismatch_is_reported() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 2]));
        assert_eq!(g.matmul(a, b), Err(DiffError::shape("matmul", "inner dimension", 3, 2)));
    }

    #[test]
    fn sum_gradient_is_row_broadcast_of_column_sums() {
        // d/dA sum(A B) = 1 * B^T, i.e. each row of dA equals the row sums of B
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::new(&[2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap());
        let b = g.constant(Tensor::new(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[3.0, 7.0, 11.0, 3.0, 7.0, 11.0]);
    }
}
