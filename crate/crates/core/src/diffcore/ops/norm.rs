//! Per-channel batch normalization over (N, H, W).

use crate::diffcore::graph::{Graph, Op, Var};
use crate::diffcore::{DiffError, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Running statistics plus the update hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

/// Statistics of one training batch; `var` is the unbiased estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(0.1),
            eps: T::lit(1e-5),
        }
    }

    /// `running <- (1 - momentum) * running + momentum * batch`.
    pub fn absorb(&mut self, stats: &BatchStats<T>) {
        let m = self.momentum;
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = keep * *r + m * b;
        }
    }
}

impl<T: Real> Graph<T> {
    /// Normalizes each channel, then applies `gamma * xhat + beta`.
    ///
    /// Train mode normalizes with the biased batch variance and returns the
    /// batch statistics for the caller to fold into `state` via
    /// [`BatchNormState::absorb`]; eval mode reads `state` only.
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        state: &BatchNormState<T>,
        mode: NormMode,
    ) -> Result<(Var, Option<BatchStats<T>>), DiffError> {
        let x = self.value(input);
        let (n, c, h, w) = x.nchw("batchnorm2d")?;
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(DiffError::shape("batchnorm2d", name, c, self.value(v).numel()));
            }
        }
        if state.running_mean.len() != c || state.running_var.len() != c {
            return Err(DiffError::shape("batchnorm2d", "running stats", c, state.running_mean.len()));
        }
        let hw = h * w;
        let count = n * hw;
        if mode == NormMode::Train && count < 2 {
            return Err(DiffError::DegenerateBatch { count });
        }
        let data = x.data();
        let (mean, var_biased, stats) = match mode {
            NormMode::Train => {
                let inv = T::one() / T::lit(count as f64);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for b in 0..n {
                        s += data[(b * c + ch) * hw..][..hw].iter().copied().sum::<T>();
                    }
                    let mu = s * inv;
                    let mut ss = T::zero();
                    for b in 0..n {
                        for &v in &data[(b * c + ch) * hw..][..hw] {
                            ss += (v - mu) * (v - mu);
                        }
                    }
                    mean[ch] = mu;
                    var[ch] = ss * inv;
                }
                let bessel = T::lit(count as f64 / (count - 1) as f64);
                let stats = BatchStats { mean: mean.clone(), var: var.iter().map(|&v| v * bessel).collect() };
                (mean, var, Some(stats))
            }
            NormMode::Eval => (state.running_mean.clone(), state.running_var.clone(), None),
        };
        let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + state.eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.numel()];
        let mut out = vec![T::zero(); x.numel()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    let xh = (data[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let value = Tensor::new(x.shape(), out)?;
        let train = mode == NormMode::Train;
        let var = self.push(value, &[input, gamma, beta], Op::BatchNorm { input, gamma, beta, xhat, inv_std, train });
        Ok((var, stats))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_backward<T: Real>(
    g: &Graph<T>,
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: &[T],
    inv_std: &[T],
    train: bool,
    dout: &Tensor<T>,
) -> Vec<(Var, Tensor<T>)> {
    let x = g.value(input);
    let (n, c, h, w) = x.nchw("batchnorm2d").expect("validated in forward");
    let hw = h * w;
    let count = T::lit((n * hw) as f64);
    let gam = g.value(gamma).data();
    let dy = dout.data();

    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dgamma[ch] += dy[i] * xhat[i];
                dbeta[ch] += dy[i];
            }
        }
    }
    let mut dx = vec![T::zero(); x.numel()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let scale = gam[ch] * inv_std[ch];
            if train {
                // dx = gamma*inv_std/M * (M*dy - sum(dy) - xhat*sum(dy*xhat))
                let (sd, sdx) = (dbeta[ch], dgamma[ch]);
                for i in off..off + hw {
                    dx[i] = scale / count * (count * dy[i] - sd - xhat[i] * sdx);
                }
            } else {
                for i in off..off + hw {
                    dx[i] = scale * dy[i];
                }
            }
        }
    }
    vec![
        (input, Tensor::new(x.shape(), dx).expect("shape")),
        (gamma, Tensor::new(&[c], dgamma).expect("shape")),
        (beta, Tensor::new(&[c], dbeta).expect("shape")),
    ]
}
