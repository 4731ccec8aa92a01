//! 2-D convolution (im2col + GEMM) and the 2x2 stride-2 transposed convolution.

use crate::diffcore::graph::{Graph, Op, Var};
use crate::diffcore::real::gemm;
use crate::diffcore::{DiffError, Real, Tensor};

#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(x: &[T], g: ConvGeom, cols: &mut [T]) {
    let ConvGeom { cin, h, w, k, stride, pad, ho, wo } = g;
    let hw_out = ho * wo;
    for c in 0..cin {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out_row.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: ConvGeom, dx: &mut [T]) {
    let ConvGeom { cin, h, w, k, stride, pad, ho, wo } = g;
    let hw_out = ho * wo;
    for c in 0..cin {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// Cross-correlation of an NCHW input with a `C_out x C_in x k x k` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, DiffError> {
        let x = self.value(input);
        let wt = self.value(weight);
        let b = self.value(bias);
        let (n, cin, h, w) = x.nchw("conv2d")?;
        let [cout, wcin, kh, kw] = *wt.shape() else {
            return Err(DiffError::Rank { op: "conv2d", expected: 4, found: wt.ndim() });
        };
        if wcin != cin {
            return Err(DiffError::shape("conv2d", "input channels", wcin, cin));
        }
        if kh != kw {
            return Err(DiffError::shape("conv2d", "kernel width", kh, kw));
        }
        if b.shape() != [cout] {
            return Err(DiffError::shape("conv2d", "bias length", cout, b.numel()));
        }
        let k = kh;
        if k == 0 || stride == 0 {
            return Err(DiffError::invalid("conv2d", "kernel size and stride must be at least 1"));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(DiffError::invalid("conv2d", "kernel larger than padded input"));
        }
        let ho = (h + 2 * padding - k) / stride + 1;
        let wo = (w + 2 * padding - k) / stride + 1;
        let geom = ConvGeom { cin, h, w, k, stride, pad: padding, ho, wo };
        let ckk = cin * k * k;
        let mut out = vec![T::zero(); n * cout * ho * wo];
        let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); ckk * ho * wo] };
        for s in 0..n {
            let xs = &x.data()[s * cin * h * w..(s + 1) * cin * h * w];
            let os = &mut out[s * cout * ho * wo..(s + 1) * cout * ho * wo];
            let rhs: &[T] = if geom.is_pointwise() {
                xs
            } else {
                im2col(xs, geom, &mut cols);
                &cols
            };
            gemm(cout, ckk, ho * wo, wt.data(), false, rhs, false, os, false);
            for (co, row) in os.chunks_mut(ho * wo).enumerate() {
                let bv = b.data()[co];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
        let value = Tensor::new(&[n, cout, ho, wo], out)?;
        Ok(self.push(value, &[input, weight, bias], Op::Conv2d { input, weight, bias, stride, padding }))
    }

    /// 2x2 stride-2 transposed convolution with a `C_in x C_out x 2 x 2` kernel.
    pub fn upconv2(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, DiffError> {
        let x = self.value(input);
        let wt = self.value(weight);
        let b = self.value(bias);
        let (n, cin, h, w) = x.nchw("upconv2")?;
        let [wcin, cout, kh, kw] = *wt.shape() else {
            return Err(DiffError::Rank { op: "upconv2", expected: 4, found: wt.ndim() });
        };
        if wcin != cin {
            return Err(DiffError::shape("upconv2", "input channels", wcin, cin));
        }
        if kh != 2 || kw != 2 {
            return Err(DiffError::shape("upconv2", "kernel size", 2, if kh != 2 { kh } else { kw }));
        }
        if b.shape() != [cout] {
            return Err(DiffError::shape("upconv2", "bias length", cout, b.numel()));
        }
        let hw = h * w;
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * cout * h2 * w2];
        let mut scratch = vec![T::zero(); cout * 4 * hw];
        for s in 0..n {
            let xs = &x.data()[s * cin * hw..(s + 1) * cin * hw];
            gemm(cout * 4, cin, hw, wt.data(), true, xs, false, &mut scratch, false);
            let os = &mut out[s * cout * h2 * w2..(s + 1) * cout * h2 * w2];
            for co in 0..cout {
                let bv = b.data()[co];
                for a in 0..2 {
                    for bb in 0..2 {
                        let src = &scratch[(co * 4 + a * 2 + bb) * hw..][..hw];
                        for i in 0..h {
                            for j in 0..w {
                                os[co * h2 * w2 + (2 * i + a) * w2 + 2 * j + bb] = src[i * w + j] + bv;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[n, cout, h2, w2], out)?;
        Ok(self.push(value, &[input, weight, bias], Op::UpConv2 { input, weight, bias }))
    }
}

pub(crate) fn conv2d_backward<T: Real>(
    g: &Graph<T>,
    input: Var,
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
    dout: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let x = g.value(input);
    let wt = g.value(weight);
    let (n, cin, h, w) = x.nchw("conv2d").expect("validated in forward");
    let (cout, k) = (wt.dim(0), wt.dim(2));
    let (ho, wo) = (dout.dim(2), dout.dim(3));
    let geom = ConvGeom { cin, h, w, k, stride, pad: padding, ho, wo };
    let ckk = cin * k * k;
    let need_x = g.requires_grad(input);
    let need_w = g.requires_grad(weight);

    let mut dw = vec![T::zero(); cout * ckk];
    let mut db = vec![T::zero(); cout];
    let mut dx = if need_x { vec![T::zero(); x.numel()] } else { Vec::new() };
    let mut cols = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); ckk * ho * wo] };
    let mut dcols = vec![T::zero(); ckk * ho * wo];

    for s in 0..n {
        let ds = &dout.data()[s * cout * ho * wo..(s + 1) * cout * ho * wo];
        for (co, row) in ds.chunks(ho * wo).enumerate() {
            db[co] += row.iter().copied().sum::<T>();
        }
        let xs = &x.data()[s * cin * h * w..(s + 1) * cin * h * w];
        if need_w {
            let rhs: &[T] = if geom.is_pointwise() {
                xs
            } else {
                im2col(xs, geom, &mut cols);
                &cols
            };
            gemm(cout, ho * wo, ckk, ds, false, rhs, true, &mut dw, true);
        }
        if need_x {
            let dxs = &mut dx[s * cin * h * w..(s + 1) * cin * h * w];
            if geom.is_pointwise() {
                gemm(ckk, cout, ho * wo, wt.data(), true, ds, false, dxs, true);
            } else {
                gemm(ckk, cout, ho * wo, wt.data(), true, ds, false, &mut dcols, false);
                col2im(&dcols, geom, dxs);
            }
        }
    }

    let mut grads = vec![
        (weight, Tensor::new(wt.shape(), dw).expect("shape")),
        (bias, Tensor::new(&[cout], db).expect("shape")),
    ];
    if need_x {
        grads.push((input, Tensor::new(x.shape(), dx).expect("shape")));
    }
    grads
}

pub(crate) fn upconv2_backward<T: Real>(
    g: &Graph<T>,
    input: Var,
    weight: Var,
    bias: Var,
    dout: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let x = g.value(input);
    let wt = g.value(weight);
    let (n, cin, h, w) = x.nchw("upconv2").expect("validated in forward");
    let cout = wt.dim(1);
    let hw = h * w;
    let (h2, w2) = (2 * h, 2 * w);
    let need_x = g.requires_grad(input);

    let mut dw = vec![T::zero(); cin * cout * 4];
    let mut db = vec![T::zero(); cout];
    let mut dx = if need_x { vec![T::zero(); x.numel()] } else { Vec::new() };
    let mut gathered = vec![T::zero(); cout * 4 * hw];

    for s in 0..n {
        let ds = &dout.data()[s * cout * h2 * w2..(s + 1) * cout * h2 * w2];
        for co in 0..cout {
            let plane = &ds[co * h2 * w2..(co + 1) * h2 * w2];
            db[co] += plane.iter().copied().sum::<T>();
            for a in 0..2 {
                for bb in 0..2 {
                    let dst = &mut gathered[(co * 4 + a * 2 + bb) * hw..][..hw];
                    for i in 0..h {
                        for j in 0..w {
                            dst[i * w + j] = plane[(2 * i + a) * w2 + 2 * j + bb];
                        }
                    }
                }
            }
        }
        let xs = &x.data()[s * cin * hw..(s + 1) * cin * hw];
        gemm(cin, hw, cout * 4, xs, false, &gathered, true, &mut dw, true);
        if need_x {
            let dxs = &mut dx[s * cin * hw..(s + 1) * cin * hw];
            gemm(cin, cout * 4, hw, wt.data(), false, &gathered, false, dxs, false);
        }
    }

    let mut grads = vec![
        (weight, Tensor::new(wt.shape(), dw).expect("shape")),
        (bias, Tensor::new(&[cout], db).expect("shape")),
    ];
    if need_x {
        grads.push((input, Tensor::new(x.shape(), dx).expect("shape")));
    }
    grads
}
