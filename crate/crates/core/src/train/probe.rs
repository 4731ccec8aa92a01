use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{TextSource, TrainError};
use crate::data::pgm::{encode_pgm, Pgm};
use crate::data::{centroid_column, dice, side_of_column, Sample, Side};
use crate::diffcore::{Graph, NormMode, Real};
use crate::model::{predict_masks, Batch, Network};
use crate::textenc::{Embedder, ReportEmbedding};

const PROBE_BATCH: usize = 16;

fn match_case(template: &str, word: &str) -> String {
    let mut chars = template.chars();
    match chars.next() {
        Some(f) if f.is_uppercase() && template.chars().count() > 1 && template.chars().all(|c| !c.is_lowercase()) => word.to_uppercase(),
        Some(f) if f.is_uppercase() => {
            let mut w = word.chars();
            w.next().map(|c| c.to_uppercase().collect::<String>() + w.as_str()).unwrap_or_default()
        }
        _ => word.to_string(),
    }
}

/// Replaces whole words (case-insensitively, keeping the original casing
/// pattern). All pairs apply simultaneously, so `left→right` together with
/// `right→left` swaps the two words.
pub fn swap_words(text: &str, swaps: &[(String, String)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if !word.is_empty() {
            let lower = word.to_lowercase();
            match swaps.iter().find(|(from, _)| from.to_lowercase() == lower) {
                Some((_, to)) => out.push_str(&match_case(word, to)),
                None => out.push_str(word),
            }
            word.clear();
        }
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            flush(&mut word, &mut out);
            out.push(ch);
        }
    }
    flush(&mut word, &mut out);
    out
}

fn predict_many<T: Real>(net: &Network<T>, samples: &[&Sample], embeddings: &[ReportEmbedding], threshold: f64) -> Result<Vec<Vec<u8>>, TrainError> {
    let mut out = Vec::with_capacity(samples.len());
    for (chunk, emb) in samples.chunks(PROBE_BATCH).zip(embeddings.chunks(PROBE_BATCH)) {
        let refs: Vec<&ReportEmbedding> = emb.iter().collect();
        let batch = Batch::<T>::new(chunk.iter().map(|s| s.image.as_slice()).collect(), chunk[0].size, &refs)?;
        let mut g = Graph::new();
        let f = net.forward(&mut g, &batch, NormMode::Eval)?;
        out.extend(predict_masks(g.value(f.logits), threshold));
    }
    Ok(out)
}

/// Eval-mode binary mask for one image and report embedding.
pub fn predict<T: Real>(net: &Network<T>, image: &[f32], size: usize, embedding: &ReportEmbedding, threshold: f64) -> Result<Vec<u8>, TrainError> {
    let batch = Batch::<T>::new(vec![image], size, &[embedding])?;
    let mut g = Graph::new();
    let f = net.forward(&mut g, &batch, NormMode::Eval)?;
    Ok(predict_masks(g.value(f.logits), threshold).remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub id: String,
    pub ambiguous: bool,
    /// Whether any swap applied to this report.
    pub changed: bool,
    pub dice_original: f64,
    pub side_original: Option<Side>,
    pub side_swapped: Option<Side>,
    pub area_original: usize,
    pub area_swapped: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub swaps: Vec<(String, String)>,
    pub samples: Vec<ProbeSample>,
    /// Ambiguous, changed samples segmented with Dice >= 0.5 originally.
    pub eligible: usize,
    pub flipped: usize,
    pub flip_rate_pct: Option<f64>,
    /// Mean of `area_swapped / area_original` over changed samples with a
    /// nonempty original prediction, as a percentage.
    pub area_ratio_pct: Option<f64>,
    /// Samples whose report had no swappable word.
    pub unchanged: usize,
}

fn side_of(mask: &[u8], size: usize) -> Option<Side> {
    centroid_column(mask, size).map(|c| side_of_column(c, size))
}

fn iou(a: &[u8], b: &[u8]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x != 0 && y != 0) as usize;
        union += (x != 0 || y != 0) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Predicts every sample with its report and with the swapped report.
pub fn word_swap_probe<T: Real>(
    net: &Network<T>,
    samples: &[&Sample],
    swaps: &[(String, String)],
    embedder: &Embedder,
    threshold: f64,
) -> Result<ProbeReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::Probe("no samples to probe".into()));
    }
    let swapped: Vec<String> = samples.iter().map(|s| swap_words(&s.report, swaps)).collect();
    let changed: Vec<bool> = samples.iter().zip(&swapped).map(|(s, w)| s.report != *w).collect();
    if !changed.iter().any(|&c| c) {
        let words: Vec<&str> = swaps.iter().map(|(f, _)| f.as_str()).collect();
        return Err(TrainError::Probe(format!("none of {words:?} occurs in any report")));
    }
    let text = TextSource::Embedder(*embedder);
    let orig_emb = samples.iter().map(|s| text.embed(s, &s.report, true)).collect::<Result<Vec<_>, _>>()?;
    let swap_emb = samples.iter().zip(&swapped).map(|(s, w)| text.embed(s, w, true)).collect::<Result<Vec<_>, _>>()?;
    let before = predict_many(net, samples, &orig_emb, threshold)?;
    let after = predict_many(net, samples, &swap_emb, threshold)?;

    let mut out = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let (a, b) = (&before[k], &after[k]);
        out.push(ProbeSample {
            id: s.id.clone(),
            ambiguous: s.attrs.ambiguous,
            changed: changed[k],
            dice_original: dice(a, &s.mask)?,
            side_original: side_of(a, s.size),
            side_swapped: side_of(b, s.size),
            area_original: a.iter().filter(|&&m| m != 0).count(),
            area_swapped: b.iter().filter(|&&m| m != 0).count(),
            iou: iou(a, b),
        });
    }
    let eligible: Vec<&ProbeSample> = out.iter().filter(|p| p.ambiguous && p.changed && p.dice_original >= 0.5).collect();
    let flipped = eligible.iter().filter(|p| p.side_original.is_some() && p.side_swapped == p.side_original.map(Side::opposite)).count();
    let ratios: Vec<f64> =
        out.iter().filter(|p| p.changed && p.area_original > 0).map(|p| p.area_swapped as f64 / p.area_original as f64).collect();
    Ok(ProbeReport {
        swaps: swaps.to_vec(),
        eligible: eligible.len(),
        flipped,
        flip_rate_pct: (!eligible.is_empty()).then(|| 100.0 * flipped as f64 / eligible.len() as f64),
        area_ratio_pct: (!ratios.is_empty()).then(|| 100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64),
        unchanged: changed.iter().filter(|&&c| !c).count(),
        samples: out,
    })
}

/// Writes channel 0 of `Q`, `tanh(A)` and `Q*` at every decoder level for the
/// sample's report and for `swapped_report`, each min-max scaled to a 16-bit
/// PGM, plus `ranges.txt` with the raw range of every image.
pub fn attention_dump<T: Real>(
    net: &Network<T>,
    sample: &Sample,
    swapped_report: &str,
    embedder: &Embedder,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, TrainError> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut ranges = String::new();
    for (tag, report) in [("original", sample.report.as_str()), ("swapped", swapped_report)] {
        let emb = embedder.embed_text(report);
        let batch = Batch::<T>::new(vec![sample.image.as_slice()], sample.size, &[&emb])?;
        let mut g = Graph::new();
        let f = net.forward(&mut g, &batch, NormMode::Eval)?;
        for lv in &f.levels {
            let gate = lv.gate.ok_or_else(|| TrainError::Probe("network has no attention gates".into()))?;
            for (kind, var) in [("q", lv.query), ("gate", gate), ("qstar", lv.output)] {
                let t = g.value(var);
                let (_, _, h, w) = t.nchw("attention_dump")?;
                let plane: Vec<f64> = t.data()[..h * w].iter().map(|v| v.as_f64()).collect();
                let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let span = if hi > lo { hi - lo } else { 1.0 };
                let pixels = plane.iter().map(|v| ((v - lo) / span * 65535.0).round() as u16).collect();
                let name = format!("level{}_{tag}_{kind}.pgm", lv.level);
                let path = dir.join(&name);
                std::fs::write(&path, encode_pgm(&Pgm { width: w, height: h, maxval: 65535, pixels }))?;
                writeln!(ranges, "{name} min={lo:e} max={hi:e}").expect("string write");
                files.push(path);
            }
        }
    }
    std::fs::write(dir.join("ranges.txt"), ranges)?;
    Ok(files)
}
