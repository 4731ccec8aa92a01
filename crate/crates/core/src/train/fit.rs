use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{mean_sd, Ablation, Config, TextSource, TrainError};
use crate::augment::{augment_sample, sample_seed, Lexicon};
use crate::data::{dice, Fold, Sample};
use crate::diffcore::{AdamW, Graph, NormMode, Real, Tensor};
use crate::model::{predict_masks, Batch, Network};
use crate::rng::{derive_seed, rng_from};
use crate::textenc::ReportEmbedding;

const EVAL_BATCH: usize = 16;
const SHUFFLE_TAG: u64 = 0x5348_5546;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_dice: f64,
}

/// Outcome of one training run on one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arm: Ablation,
    pub fold_seed: u64,
    pub epochs: Vec<EpochLog>,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
    pub best_val_dice: f64,
    pub test_dice: f64,
    pub test_sd: f64,
    /// Mean test Dice over samples that carry a decoy.
    pub test_dice_ambiguous: Option<f64>,
    pub test_ids: Vec<String>,
    pub test_scores: Vec<f64>,
    pub checkpoint: Option<String>,
    pub config: Config,
}

pub struct FoldOutcome<T: Real> {
    pub record: RunRecord,
    /// Best-on-validation weights.
    pub network: Network<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean: f64,
    /// Population standard deviation over samples.
    pub sd: f64,
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    pub ambiguous_mean: Option<f64>,
}

fn make_batch<T: Real>(samples: &[&Sample], embeddings: &[ReportEmbedding]) -> Result<Batch<T>, TrainError> {
    let size = samples[0].size;
    let refs: Vec<&ReportEmbedding> = embeddings.iter().collect();
    Ok(Batch::new(samples.iter().map(|s| s.image.as_slice()).collect(), size, &refs)?)
}

/// Eval-mode Dice of each sample's thresholded prediction.
pub fn evaluate<T: Real>(
    net: &Network<T>,
    samples: &[&Sample],
    text: &TextSource,
    use_text: bool,
    threshold: f64,
) -> Result<EvalResult, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Config("evaluation needs at least one sample".into()));
    }
    let mut scores = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let embeddings = chunk.iter().map(|s| text.embed(s, &s.report, use_text)).collect::<Result<Vec<_>, _>>()?;
        let batch = make_batch::<T>(chunk, &embeddings)?;
        let mut g = Graph::new();
        let f = net.forward(&mut g, &batch, NormMode::Eval)?;
        for (s, pred) in chunk.iter().zip(predict_masks(g.value(f.logits), threshold)) {
            scores.push(dice(&pred, &s.mask)?);
        }
    }
    let (mean, sd) = mean_sd(&scores);
    let amb: Vec<f64> = samples.iter().zip(&scores).filter(|(s, _)| s.attrs.ambiguous).map(|(_, &d)| d).collect();
    Ok(EvalResult {
        mean,
        sd,
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        scores,
        ambiguous_mean: (!amb.is_empty()).then(|| mean_sd(&amb).0),
    })
}

/// Trains one network on `fold.train`, keeps the weights with the best
/// validation Dice (earliest epoch on ties) and scores them on `fold.test`.
pub fn train_fold<T: Real>(
    config: &Config,
    samples: &[Sample],
    fold: &Fold,
    text: &TextSource,
    lexicon: &Lexicon,
    on_epoch: &(dyn Fn(&RunRecord, &EpochLog) + Sync),
) -> Result<FoldOutcome<T>, TrainError> {
    config.validate()?;
    let arm = config.train.ablation;
    let tc = &config.train;
    let mut net = Network::<T>::new(config.model.clone(), arm.arch())?;
    let mut opt = AdamW::<T>::new(tc.optimizer())?;
    let pick = |idx: &[usize]| -> Vec<&Sample> { idx.iter().map(|&i| &samples[i]).collect() };
    let (val, test) = (pick(&fold.val), pick(&fold.test));

    let mut record = RunRecord {
        arm,
        fold_seed: fold.seed,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_dice: f64::NEG_INFINITY,
        test_dice: 0.0,
        test_sd: 0.0,
        test_dice_ambiguous: None,
        test_ids: Vec::new(),
        test_scores: Vec::new(),
        checkpoint: None,
        config: config.clone(),
    };
    let mut best = net.clone();
    let mut step = 0usize;
    for epoch in 1..=tc.epochs {
        let mut order = fold.train.clone();
        order.shuffle(&mut rng_from(derive_seed(&[tc.seed, fold.seed, epoch as u64, SHUFFLE_TAG])));
        let mut losses = Vec::new();
        for chunk in order.chunks(tc.batch_size) {
            step += 1;
            let aug: Vec<Sample> = chunk
                .iter()
                .map(|&i| augment_sample(&samples[i], &config.augment, lexicon, sample_seed(tc.seed, epoch as u64, i as u64)))
                .collect();
            let refs: Vec<&Sample> = aug.iter().collect();
            let embeddings = aug.iter().map(|s| text.embed(s, &s.report, arm.uses_text())).collect::<Result<Vec<_>, _>>()?;
            let batch = make_batch::<T>(&refs, &embeddings)?;
            let target: Vec<T> = aug.iter().flat_map(|s| s.mask.iter().map(|&m| T::lit(m as f64))).collect();
            let target = Tensor::new(batch.images.shape(), target)?;

            let mut g = Graph::new();
            let f = net.forward(&mut g, &batch, NormMode::Train)?;
            let t = g.constant(target);
            let loss = g.bce_with_logits(f.logits, t)?;
            let loss_value = g.value(loss).data()[0].as_f64();
            if !loss_value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, step });
            }
            losses.push(loss_value);
            g.backward(loss)?;
            let grads: BTreeMap<&str, Tensor<T>> = f
                .params
                .iter()
                .map(|(k, &v)| {
                    let grad = g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape()));
                    (k.as_str(), grad)
                })
                .collect();
            opt.step(net.params_mut().iter_mut().map(|(k, p)| (k.as_str(), p, &grads[k.as_str()]))).map_err(|e| match e {
                crate::diffcore::DiffError::NonFinite { .. } => TrainError::NonFiniteLoss { epoch, step },
                other => other.into(),
            })?;
            net.apply_bn_updates(&f.bn_updates);
        }
        let val_dice = evaluate(&net, &val, text, arm.uses_text(), tc.threshold)?.mean;
        let log = EpochLog { epoch, train_loss: losses.iter().sum::<f64>() / losses.len().max(1) as f64, val_dice };
        if val_dice > record.best_val_dice {
            record.best_val_dice = val_dice;
            record.best_epoch = epoch;
            best = net.clone();
        }
        on_epoch(&record, &log);
        record.epochs.push(log);
    }

    let result = evaluate(&best, &test, text, arm.uses_text(), tc.threshold)?;
    record.test_dice = result.mean;
    record.test_sd = result.sd;
    record.test_dice_ambiguous = result.ambiguous_mean;
    record.test_ids = result.ids;
    record.test_scores = result.scores;
    Ok(FoldOutcome { record, network: best })
}
