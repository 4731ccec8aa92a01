//! Layout and elementwise glue: channel concat, products, scaling, token views, sums.

use crate::diffcore::graph::{Graph, Op, Var};
use crate::diffcore::{DiffError, Real, Tensor};

impl<T: Real> Graph<T> {
    /// Stacks `a` then `b` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (na, ca, ha, wa) = self.value(a).nchw("concat_channels")?;
        let (nb, cb, hb, wb) = self.value(b).nchw("concat_channels")?;
        for (dim, ea, eb) in [("batch", na, nb), ("height", ha, hb), ("width", wa, wb)] {
            if ea != eb {
                return Err(DiffError::shape("concat_channels", dim, ea, eb));
            }
        }
        let plane = ha * wa;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(na * (ca + cb) * plane);
        for s in 0..na {
            out.extend_from_slice(&da[s * ca * plane..(s + 1) * ca * plane]);
            out.extend_from_slice(&db[s * cb * plane..(s + 1) * cb * plane]);
        }
        let value = Tensor::new(&[na, ca + cb, ha, wa], out)?;
        Ok(self.push(value, &[a, b], Op::Concat { a, b }))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(DiffError::shape("mul", "numel", ta.numel(), tb.numel()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, &[a, b], Op::Mul { a, b }))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var, DiffError> {
        let value = self.value(input).map(|v| v * factor);
        Ok(self.push(value, &[input], Op::Scale { input, factor }))
    }

    /// `N x C x H x W` to `N x (H*W) x C`: one row per pixel.
    pub fn to_tokens(&mut self, input: Var) -> Result<Var, DiffError> {
        let x = self.value(input);
        let (n, c, h, w) = x.nchw("to_tokens")?;
        let value = Tensor::new(&[n, h * w, c], nchw_to_nlc(x.data(), n, c, h * w))?;
        Ok(self.push(value, &[input], Op::ToTokens { input }))
    }

    /// Inverse of [`Graph::to_tokens`].
    pub fn from_tokens(&mut self, input: Var, h: usize, w: usize) -> Result<Var, DiffError> {
        let x = self.value(input);
        let [n, hw, c] = *x.shape() else {
            return Err(DiffError::Rank { op: "from_tokens", expected: 3, found: x.ndim() });
        };
        if hw != h * w {
            return Err(DiffError::shape("from_tokens", "pixel count", h * w, hw));
        }
        let value = Tensor::new(&[n, c, h, w], nlc_to_nchw(x.data(), n, c, hw))?;
        Ok(self.push(value, &[input], Op::FromTokens { input }))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var, DiffError> {
        let value = Tensor::scalar(self.value(input).sum());
        Ok(self.push(value, &[input], Op::Sum { input }))
    }
}

fn nchw_to_nlc<T: Real>(src: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for s in 0..n {
        for ch in 0..c {
            for p in 0..hw {
                out[(s * hw + p) * c + ch] = src[(s * c + ch) * hw + p];
            }
        }
    }
    out
}

fn nlc_to_nchw<T: Real>(src: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for s in 0..n {
        for ch in 0..c {
            for p in 0..hw {
                out[(s * c + ch) * hw + p] = src[(s * hw + p) * c + ch];
            }
        }
    }
    out
}

pub(crate) fn concat_backward<T: Real>(g: &Graph<T>, a: Var, b: Var, dout: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let sa = g.value(a).shape().to_vec();
    let sb = g.value(b).shape().to_vec();
    let (n, ca, cb, plane) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
    let d = dout.data();
    let mut ga = Vec::with_capacity(n * ca * plane);
    let mut gb = Vec::with_capacity(n * cb * plane);
    for s in 0..n {
        let base = s * (ca + cb) * plane;
        ga.extend_from_slice(&d[base..base + ca * plane]);
        gb.extend_from_slice(&d[base + ca * plane..base + (ca + cb) * plane]);
    }
    vec![(a, Tensor::new(&sa, ga).expect("shape")), (b, Tensor::new(&sb, gb).expect("shape"))]
}

pub(crate) fn mul_backward<T: Real>(g: &Graph<T>, a: Var, b: Var, dout: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let (ta, tb) = (g.value(a), g.value(b));
    let da = tb.data().iter().zip(dout.data()).map(|(&y, &d)| y * d).collect();
    let db = ta.data().iter().zip(dout.data()).map(|(&x, &d)| x * d).collect();
    vec![(a, Tensor::new(ta.shape(), da).expect("shape")), (b, Tensor::new(tb.shape(), db).expect("shape"))]
}

pub(crate) fn scale_backward<T: Real>(input: Var, factor: T, dout: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    vec![(input, dout.map(|d| d * factor))]
}

pub(crate) fn to_tokens_backward<T: Real>(g: &Graph<T>, input: Var, dout: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let shape = g.value(input).shape().to_vec();
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    vec![(input, Tensor::new(&shape, nlc_to_nchw(dout.data(), n, c, hw)).expect("shape"))]
}

pub(crate) fn from_tokens_backward<T: Real>(g: &Graph<T>, input: Var, dout: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    let shape = g.value(input).shape().to_vec();
    let (n, hw, c) = (shape[0], shape[1], shape[2]);
    vec![(input, Tensor::new(&shape, nchw_to_nlc(dout.data(), n, c, hw)).expect("shape"))]
}

pub(crate) fn sum_backward<T: Real>(g: &Graph<T>, input: Var, dout: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
    vec![(input, Tensor::full(g.value(input).shape(), dout.data()[0]))]
}
