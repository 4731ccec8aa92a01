//! Training, evaluation, cross-validation, ablations and probes.

mod experiment;
mod fit;
mod probe;
mod store;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentError, AugmentPolicy, Lexicon};
use crate::data::{DataError, GenConfig, Sample, SplitSpec};
use crate::diffcore::{AdamWConfig, DiffError};
use crate::model::{Arch, ModelConfig, ModelError};
use crate::textenc::{Embedder, ReportEmbedding};
use crate::BinError;

pub use experiment::{ablate, cross_validate, AblationTable, ArmSummary, CvRecord};
pub use fit::{evaluate, train_fold, EpochLog, EvalResult, FoldOutcome, RunRecord};
pub use probe::{attention_dump, predict, swap_words, word_swap_probe, ProbeReport, ProbeSample};
pub use store::{load_model, save_model, MODEL_CHECKPOINT, MODEL_META};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Bin(#[from] BinError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("probe: {0}")]
    Probe(String),
}

impl TrainError {
    /// Divergence rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteLoss { .. } | TrainError::Diff(DiffError::NonFinite { .. }) | TrainError::Model(ModelError::Diff(DiffError::NonFinite { .. }))
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// Every report replaced by padding, in training and evaluation.
    NoText,
    /// Image-only horizontal flips with probability 0.5.
    Flip,
    BaselineUnet,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoText, Ablation::Flip, Ablation::BaselineUnet];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoText => "no_text",
            Ablation::Flip => "flip",
            Ablation::BaselineUnet => "baseline_unet",
        }
    }

    pub fn arch(self) -> Arch {
        match self {
            Ablation::BaselineUnet => Arch::Unet,
            _ => Arch::TextGated,
        }
    }

    pub fn uses_text(self) -> bool {
        !matches!(self, Ablation::NoText)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub ablation: Ablation,
    pub threshold: f64,
    /// Keys epoch shuffles and per-sample augmentation.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            lr: a.lr,
            epochs: 100,
            batch_size: 4,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
            ablation: Ablation::Full,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub samples: usize,
    pub seed: u64,
    pub generator: GenConfig,
    pub split: SplitSpec,
    /// Optional precomputed embedding file replacing the built-in embedder.
    pub embeddings: Option<String>,
    /// Optional synonym lexicon file; the built-in lexicon otherwise.
    pub lexicon: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { samples: 1024, seed: 0, generator: GenConfig::default(), split: SplitSpec::default(), embeddings: None, lexicon: None }
    }
}

/// Everything a run depends on; serialized verbatim as the run's config echo.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentPolicy,
    pub data: DataConfig,
}

impl Config {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        self.augment.validate()?;
        self.data.generator.validate()?;
        self.data.split.validate()?;
        self.train.optimizer().validate()?;
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&t.threshold) {
            return Err(TrainError::Config(format!("threshold {} outside [0, 1)", t.threshold)));
        }
        if self.data.generator.image_size != self.model.image_size {
            return Err(TrainError::Config(format!(
                "data.generator.image_size {} differs from model.image_size {}",
                self.data.generator.image_size, self.model.image_size
            )));
        }
        Ok(())
    }

    /// This config with the settings of one ablation arm applied.
    pub fn for_arm(&self, arm: Ablation) -> Config {
        let mut c = self.clone();
        c.train.ablation = arm;
        if arm == Ablation::Flip {
            c.augment.p_hflip = 0.5;
        }
        c
    }
}

/// Maps a sample and its (possibly augmented) report to a frozen embedding.
#[derive(Clone, Debug)]
pub enum TextSource {
    Embedder(Embedder),
    /// Precomputed per-sample matrices; the report text is ignored.
    Table(Arc<BTreeMap<String, ReportEmbedding>>),
}

impl TextSource {
    pub fn for_model(model: &ModelConfig) -> Self {
        TextSource::Embedder(model.embedder())
    }

    /// Loads the embedding table named by `data.embeddings`, if any.
    pub fn from_config(config: &Config) -> Result<Self, TrainError> {
        match &config.data.embeddings {
            None => Ok(Self::for_model(&config.model)),
            Some(path) => {
                let table = crate::textenc::load_embeddings(path)?;
                if let Some(e) = table.values().next() {
                    if e.width() != config.model.d_e {
                        return Err(TrainError::Config(format!("embedding width {} differs from model.d_e {}", e.width(), config.model.d_e)));
                    }
                }
                Ok(TextSource::Table(Arc::new(table)))
            }
        }
    }

    /// With `use_text` off the result is all padding.
    pub fn embed(&self, sample: &Sample, report: &str, use_text: bool) -> Result<ReportEmbedding, TrainError> {
        match self {
            TextSource::Embedder(e) => Ok(e.embed_text(if use_text { report } else { "" })),
            TextSource::Table(t) => {
                let e = t.get(&sample.id).ok_or_else(|| TrainError::Config(format!("no embedding for sample {}", sample.id)))?;
                if use_text {
                    Ok(e.clone())
                } else {
                    Ok(ReportEmbedding { matrix: crate::diffcore::Tensor::zeros(e.matrix.shape()), valid_len: 0 })
                }
            }
        }
    }
}

pub fn load_lexicon(config: &Config) -> Result<Lexicon, TrainError> {
    Ok(match &config.data.lexicon {
        Some(p) => Lexicon::load(p)?,
        None => Lexicon::default(),
    })
}

/// Population mean and standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}
