use std::collections::BTreeMap;

use rand::Rng as _;

use super::attention::{cross_attention, CrossAttnVars};
use super::{Arch, ModelConfig, ModelError};
use crate::diffcore::{BatchNormState, BatchStats, Checkpoint, Graph, NormMode, Real, Tensor, Var};
use crate::rng::{derive_seed, rng_from};
use crate::textenc::{fnv1a64, ReportEmbedding};

/// Network inputs for one forward pass.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `N x 1 x S x S` grayscale images.
    pub images: Tensor<T>,
    /// `N x l x d_e` frozen report embeddings.
    pub embeddings: Tensor<T>,
    pub valid_lens: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn new(images: Vec<&[f32]>, size: usize, reports: &[&ReportEmbedding]) -> Result<Self, ModelError> {
        let n = images.len();
        if reports.len() != n {
            return Err(ModelError::Input(format!("{n} images but {} reports", reports.len())));
        }
        if n == 0 {
            return Err(ModelError::Input("empty batch".into()));
        }
        let (l, d_e) = (reports[0].len(), reports[0].width());
        let mut img = Vec::with_capacity(n * size * size);
        let mut emb = Vec::with_capacity(n * l * d_e);
        for (im, r) in images.iter().zip(reports) {
            if im.len() != size * size {
                return Err(ModelError::Input(format!("image has {} pixels, expected {}", im.len(), size * size)));
            }
            if (r.len(), r.width()) != (l, d_e) {
                return Err(ModelError::Input("reports in a batch must share l x d_e".into()));
            }
            img.extend(im.iter().map(|&v| T::lit(v as f64)));
            emb.extend(r.matrix.data().iter().map(|&v| T::lit(v as f64)));
        }
        Ok(Self {
            images: Tensor::new(&[n, 1, size, size], img)?,
            embeddings: Tensor::new(&[n, l, d_e], emb)?,
            valid_lens: reports.iter().map(|r| r.valid_len).collect(),
        })
    }
}

/// Per decoder level: the upsampled features `Q`, the gate `tanh(A)` and `Q*`.
#[derive(Clone, Copy, Debug)]
pub struct LevelTrace {
    pub level: usize,
    pub query: Var,
    pub gate: Option<Var>,
    pub output: Var,
}

pub struct Forward<T> {
    pub logits: Var,
    /// Trainable parameters as bound into the graph.
    pub params: BTreeMap<String, Var>,
    pub embedding: Option<Var>,
    pub bn_updates: Vec<(String, BatchStats<T>)>,
    pub levels: Vec<LevelTrace>,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    /// 0 marks batchnorm affine parameters and biases.
    fan_in: usize,
    init_one: bool,
}

fn block_specs(out: &mut Vec<ParamSpec>, norms: &mut Vec<(String, usize)>, prefix: &str, cin: usize, cout: usize) {
    for (conv, bn, inp) in [("conv1", "bn1", cin), ("conv2", "bn2", cout)] {
        out.push(ParamSpec { name: format!("{prefix}.{conv}.w"), shape: vec![cout, inp, 3, 3], fan_in: inp * 9, init_one: false });
        out.push(ParamSpec { name: format!("{prefix}.{conv}.b"), shape: vec![cout], fan_in: 0, init_one: false });
        out.push(ParamSpec { name: format!("{prefix}.{bn}.gamma"), shape: vec![cout], fan_in: 0, init_one: true });
        out.push(ParamSpec { name: format!("{prefix}.{bn}.beta"), shape: vec![cout], fan_in: 0, init_one: false });
        norms.push((format!("{prefix}.{bn}"), cout));
    }
}

fn specs(config: &ModelConfig, arch: Arch) -> (Vec<ParamSpec>, Vec<(String, usize)>) {
    let mut out = Vec::new();
    let mut norms = Vec::new();
    let c = &config.channels;
    let d = config.depth;
    for i in 1..=d + 1 {
        let cin = if i == 1 { 1 } else { c[i - 2] };
        block_specs(&mut out, &mut norms, &format!("enc{i}"), cin, c[i - 1]);
    }
    for i in 1..=d {
        let (ci, cnext) = (c[i - 1], c[i]);
        out.push(ParamSpec { name: format!("up{i}.w"), shape: vec![cnext, ci, 2, 2], fan_in: cnext, init_one: false });
        out.push(ParamSpec { name: format!("up{i}.b"), shape: vec![ci], fan_in: 0, init_one: false });
        if arch == Arch::TextGated {
            for (lin, fin) in [("tproj", config.d_e), ("wq", ci), ("wk", ci), ("wv", ci)] {
                out.push(ParamSpec { name: format!("xattn{i}.{lin}.w"), shape: vec![fin, ci], fan_in: fin, init_one: false });
                out.push(ParamSpec { name: format!("xattn{i}.{lin}.b"), shape: vec![ci], fan_in: 0, init_one: false });
            }
        }
        block_specs(&mut out, &mut norms, &format!("dec{i}"), 2 * ci, ci);
    }
    out.push(ParamSpec { name: "head.w".into(), shape: vec![1, c[0], 1, 1], fan_in: c[0], init_one: false });
    out.push(ParamSpec { name: "head.b".into(), shape: vec![1], fan_in: 0, init_one: false });
    (out, norms)
}

/// Weights and batchnorm state of either architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Real> {
    config: ModelConfig,
    arch: Arch,
    params: BTreeMap<String, Tensor<T>>,
    norms: BTreeMap<String, BatchNormState<T>>,
}

impl<T: Real> Network<T> {
    /// Kaiming-uniform (fan-in, ReLU gain) weights, zero biases, unit
    /// batchnorm scale. Each tensor draws from its own stream keyed by
    /// `(init_seed, name)`, so parameters shared between architectures start
    /// identical.
    pub fn new(config: ModelConfig, arch: Arch) -> Result<Self, ModelError> {
        config.validate()?;
        let (param_specs, norm_specs) = specs(&config, arch);
        let mut params = BTreeMap::new();
        for s in param_specs {
            let numel: usize = s.shape.iter().product();
            let data: Vec<T> = if s.init_one {
                vec![T::one(); numel]
            } else if s.fan_in == 0 {
                vec![T::zero(); numel]
            } else {
                let bound = (6.0 / s.fan_in as f64).sqrt();
                let mut rng = rng_from(derive_seed(&[config.init_seed, fnv1a64(s.name.as_bytes())]));
                (0..numel).map(|_| T::lit(rng.gen_range(-bound..bound))).collect()
            };
            params.insert(s.name, Tensor::new(&s.shape, data)?);
        }
        let norms = norm_specs.into_iter().map(|(n, c)| (n, BatchNormState::new(c))).collect();
        Ok(Self { config, arch, params, norms })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor<T>> {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn norms(&self) -> &BTreeMap<String, BatchNormState<T>> {
        &self.norms
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn apply_bn_updates(&mut self, updates: &[(String, BatchStats<T>)]) {
        for (name, stats) in updates {
            self.norms.get_mut(name).expect("update for a known norm").absorb(stats);
        }
    }

    /// Same weights in another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            arch: self.arch,
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            norms: self
                .norms
                .iter()
                .map(|(k, s)| {
                    let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
                    let state = BatchNormState {
                        running_mean: conv(&s.running_mean),
                        running_var: conv(&s.running_var),
                        momentum: U::lit(s.momentum.as_f64()),
                        eps: U::lit(s.eps.as_f64()),
                    };
                    (k.clone(), state)
                })
                .collect(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor<f32>)> = self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
        for (k, s) in &self.norms {
            let c = s.running_mean.len();
            let mean = s.running_mean.iter().map(|v| v.as_f64() as f32).collect();
            let var = s.running_var.iter().map(|v| v.as_f64() as f32).collect();
            tensors.push((format!("{k}.mean"), Tensor::new(&[c], mean).expect("shape")));
            tensors.push((format!("{k}.var"), Tensor::new(&[c], var).expect("shape")));
        }
        tensors.sort_by(|a, b| a.0.cmp(&b.0));
        Checkpoint { tensors }
    }

    /// Rebuilds a network; the architecture is inferred from the presence of
    /// attention tensors and every expected tensor must be present with the
    /// configured shape.
    pub fn from_checkpoint(config: ModelConfig, ck: &Checkpoint) -> Result<Self, ModelError> {
        let arch = if ck.get("xattn1.wq.w").is_some() { Arch::TextGated } else { Arch::Unet };
        let mut net = Self::new(config, arch)?;
        let mut expected = 0;
        for (name, t) in net.params.iter_mut() {
            let src = ck.get(name).ok_or_else(|| ModelError::MissingTensor(name.clone()))?;
            if src.shape() != t.shape() {
                return Err(ModelError::TensorShape { name: name.clone(), expected: t.shape().to_vec(), found: src.shape().to_vec() });
            }
            *t = src.cast();
            expected += 1;
        }
        for (name, s) in net.norms.iter_mut() {
            for (suffix, dst) in [("mean", &mut s.running_mean), ("var", &mut s.running_var)] {
                let key = format!("{name}.{suffix}");
                let src = ck.get(&key).ok_or_else(|| ModelError::MissingTensor(key.clone()))?;
                if src.numel() != dst.len() {
                    return Err(ModelError::TensorShape { name: key, expected: vec![dst.len()], found: src.shape().to_vec() });
                }
                *dst = src.data().iter().map(|&v| T::lit(v as f64)).collect();
                expected += 1;
            }
        }
        if expected != ck.tensors.len() {
            let known: std::collections::BTreeSet<String> = net.to_checkpoint().tensors.into_iter().map(|(n, _)| n).collect();
            let extra = ck.tensors.iter().map(|(n, _)| n).find(|n| !known.contains(*n)).cloned().unwrap_or_default();
            return Err(ModelError::Input(format!("checkpoint has unexpected tensor {extra}")));
        }
        Ok(net)
    }

    /// Binds every trainable tensor into `g` as a gradient-receiving leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> BTreeMap<String, Var> {
        self.params.iter().map(|(k, v)| (k.clone(), g.param(v.clone()))).collect()
    }

    pub fn forward(&self, g: &mut Graph<T>, batch: &Batch<T>, mode: NormMode) -> Result<Forward<T>, ModelError> {
        let params = self.bind(g);
        self.forward_bound(g, batch, mode, params)
    }

    /// Forward pass over already-bound parameters.
    pub fn forward_bound(
        &self,
        g: &mut Graph<T>,
        batch: &Batch<T>,
        mode: NormMode,
        params: BTreeMap<String, Var>,
    ) -> Result<Forward<T>, ModelError> {
        let s = self.config.image_size;
        let (n, c, h, w) = batch.images.nchw("forward")?;
        if (c, h, w) != (1, s, s) {
            return Err(ModelError::Input(format!("image batch is {c}x{h}x{w}, network expects 1x{s}x{s}")));
        }
        if batch.valid_lens.len() != n {
            return Err(ModelError::Input("one valid length per batch item required".into()));
        }
        let p = |name: &str| -> Var { params[name] };
        let mut updates = Vec::new();
        let mut x = g.constant(batch.images.clone());
        let embedding = match self.arch {
            Arch::TextGated => {
                let e = &batch.embeddings;
                if e.ndim() != 3 || e.dim(0) != n || e.dim(2) != self.config.d_e {
                    return Err(ModelError::Input(format!("embedding batch has shape {:?}", e.shape())));
                }
                Some(g.constant(e.clone()))
            }
            Arch::Unet => None,
        };

        let depth = self.config.depth;
        let mut skips = Vec::with_capacity(depth);
        for i in 1..=depth {
            x = self.block(g, x, &format!("enc{i}"), &params, mode, &mut updates)?;
            skips.push(x);
            x = g.maxpool2(x)?;
        }
        x = self.block(g, x, &format!("enc{}", depth + 1), &params, mode, &mut updates)?;

        let mut levels = Vec::with_capacity(depth);
        for i in (1..=depth).rev() {
            let up = g.upconv2(x, p(&format!("up{i}.w")), p(&format!("up{i}.b")))?;
            let (gate, gated) = match embedding {
                Some(e) => {
                    let vars = CrossAttnVars {
                        tproj_w: p(&format!("xattn{i}.tproj.w")),
                        tproj_b: p(&format!("xattn{i}.tproj.b")),
                        wq_w: p(&format!("xattn{i}.wq.w")),
                        wq_b: p(&format!("xattn{i}.wq.b")),
                        wk_w: p(&format!("xattn{i}.wk.w")),
                        wk_b: p(&format!("xattn{i}.wk.b")),
                        wv_w: p(&format!("xattn{i}.wv.w")),
                        wv_b: p(&format!("xattn{i}.wv.b")),
                    };
                    let out = cross_attention(g, up, e, &batch.valid_lens, &vars, self.config.attend_padding)?;
                    (Some(out.gate), out.output)
                }
                None => (None, up),
            };
            levels.push(LevelTrace { level: i, query: up, gate, output: gated });
            let cat = g.concat_channels(gated, skips[i - 1])?;
            x = self.block(g, cat, &format!("dec{i}"), &params, mode, &mut updates)?;
        }
        let logits = g.conv2d(x, p("head.w"), p("head.b"), 1, 0)?;
        Ok(Forward { logits, params, embedding, bn_updates: updates, levels })
    }

    /// Two (3x3 conv, pad 1) → batchnorm → ReLU sub-layers using the
    /// weights stored under `prefix` (e.g. `enc1`, `dec2`).
    pub fn block(
        &self,
        g: &mut Graph<T>,
        x: Var,
        prefix: &str,
        params: &BTreeMap<String, Var>,
        mode: NormMode,
        updates: &mut Vec<(String, BatchStats<T>)>,
    ) -> Result<Var, ModelError> {
        let mut x = x;
        for (conv, bn) in [("conv1", "bn1"), ("conv2", "bn2")] {
            let w = params[&format!("{prefix}.{conv}.w")];
            let b = params[&format!("{prefix}.{conv}.b")];
            x = g.conv2d(x, w, b, 1, 1)?;
            let norm_name = format!("{prefix}.{bn}");
            let state = &self.norms[&norm_name];
            let gamma = params[&format!("{norm_name}.gamma")];
            let beta = params[&format!("{norm_name}.beta")];
            let (y, stats) = g.batchnorm2d(x, gamma, beta, state, mode)?;
            if let Some(stats) = stats {
                updates.push((norm_name, stats));
            }
            x = g.relu(y)?;
        }
        Ok(x)
    }
}
