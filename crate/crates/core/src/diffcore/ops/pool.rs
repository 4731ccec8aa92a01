use crate::diffcore::graph::{Graph, Op, Var};
use crate::diffcore::{DiffError, Real, Tensor};

impl<T: Real> Graph<T> {
    /// 2x2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major window order.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var, DiffError> {
        let x = self.value(input);
        let (n, c, h, w) = x.nchw("maxpool2")?;
        if h % 2 != 0 {
            return Err(DiffError::OddExtent { axis: "height", extent: h });
        }
        if w % 2 != 0 {
            return Err(DiffError::OddExtent { axis: "width", extent: w });
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        let data = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(&[n, c, ho, wo], out)?;
        Ok(self.push(value, &[input], Op::MaxPool2 { input, argmax }))
    }
}

pub(crate) fn maxpool2_backward<T: Real>(
    g: &Graph<T>,
    input: Var,
    argmax: &[u32],
    dout: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let x = g.value(input);
    let mut dx = Tensor::zeros(x.shape());
    let d = dx.data_mut();
    for (&idx, &gv) in argmax.iter().zip(dout.data()) {
        d[idx as usize] += gv;
    }
    vec![(input, dx)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_max() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn constant_input_routes_gradient_to_first_element() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::full(&[1, 1, 4, 4], 0.5));
        let y = g.maxpool2(x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.5));
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        let gx = g.grad(x).unwrap().data();
        #[rustfmt::skip]
        let want = [
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(gx, &want);
    }

    #[test]
    fn odd_extent_is_an_error() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::zeros(&[1, 1, 3, 4]));
        assert_eq!(g.maxpool2(x), Err(DiffError::OddExtent { axis: "height", extent: 3 }));
        let x = g.param(Tensor::zeros(&[1, 1, 4, 5]));
        assert_eq!(g.maxpool2(x), Err(DiffError::OddExtent { axis: "width", extent: 5 }));
    }
}
