//! Image and report augmentations.
//!
//! Every transform except [`hflip`] keeps the report true: side, zone and
//! presence statements still describe the augmented mask. `hflip` mirrors
//! the image but not the words and exists only for the concordance ablation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Sample;
use crate::rng::{derive_seed, rng_from, Rng};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("{what} = {value} is outside the allowed range {range}")]
    Magnitude { what: &'static str, value: f64, range: &'static str },
    #[error("warp kept {kept} of {original} mask pixels")]
    MaskLoss { kept: usize, original: usize },
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Application probabilities and magnitude bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub p_photometric: f64,
    pub p_distort: f64,
    pub p_ssr: f64,
    pub p_hflip: f64,
    pub text_shuffle: bool,
    pub text_synonym_p: f64,
    /// Largest `|δ|` for brightness.
    pub brightness: f64,
    pub contrast: (f64, f64),
    pub gamma: (f64, f64),
    /// Largest elastic displacement as a fraction of the image width.
    pub elastic_alpha: f64,
    /// Smoothing width of the elastic field as a fraction of the width.
    pub elastic_sigma: f64,
    pub grid_steps: usize,
    /// Largest relative change of one grid cell.
    pub grid_limit: f64,
    /// Largest `|k|` of the radial model.
    pub optical_k: f64,
    pub ssr_shift: f64,
    pub ssr_scale: f64,
    /// Degrees.
    pub ssr_rotate: f64,
    /// Largest tolerated fraction of mask pixels pushed out of frame.
    pub max_mask_loss: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            p_photometric: 0.3,
            p_distort: 0.3,
            p_ssr: 0.5,
            p_hflip: 0.0,
            text_shuffle: false,
            text_synonym_p: 0.0,
            brightness: 0.2,
            contrast: (0.8, 1.2),
            gamma: (0.8, 1.25),
            elastic_alpha: 0.03,
            elastic_sigma: 0.08,
            grid_steps: 5,
            grid_limit: 0.15,
            optical_k: 0.1,
            ssr_shift: 0.06,
            ssr_scale: 0.1,
            ssr_rotate: 10.0,
            max_mask_loss: 0.25,
        }
    }
}

impl AugmentPolicy {
    /// No transform ever fires.
    pub fn none() -> Self {
        Self { p_photometric: 0.0, p_distort: 0.0, p_ssr: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let check = |what, value: f64, lo: f64, hi: f64, range| {
            if value.is_finite() && (lo..=hi).contains(&value) {
                Ok(())
            } else {
                Err(AugmentError::Magnitude { what, value, range })
            }
        };
        check("p_photometric", self.p_photometric, 0.0, 1.0, "[0, 1]")?;
        check("p_distort", self.p_distort, 0.0, 1.0, "[0, 1]")?;
        check("p_ssr", self.p_ssr, 0.0, 1.0, "[0, 1]")?;
        check("p_hflip", self.p_hflip, 0.0, 1.0, "[0, 1]")?;
        check("text_synonym_p", self.text_synonym_p, 0.0, 1.0, "[0, 1]")?;
        check("brightness", self.brightness, 0.0, 0.2, "[0, 0.2]")?;
        check("contrast.0", self.contrast.0, 0.8, self.contrast.1, "[0.8, contrast.1]")?;
        check("contrast.1", self.contrast.1, self.contrast.0, 1.2, "[contrast.0, 1.2]")?;
        check("gamma.0", self.gamma.0, 0.8, self.gamma.1, "[0.8, gamma.1]")?;
        check("gamma.1", self.gamma.1, self.gamma.0, 1.25, "[gamma.0, 1.25]")?;
        check("elastic_alpha", self.elastic_alpha, 0.0, 0.1, "[0, 0.1]")?;
        check("elastic_sigma", self.elastic_sigma, 1e-3, 1.0, "[0.001, 1]")?;
        check("grid_steps", self.grid_steps as f64, 1.0, 64.0, "[1, 64]")?;
        check("grid_limit", self.grid_limit, 0.0, 0.5, "[0, 0.5]")?;
        check("optical_k", self.optical_k, 0.0, 0.3, "[0, 0.3]")?;
        check("ssr_shift", self.ssr_shift, 0.0, 0.06, "[0, 0.06]")?;
        check("ssr_scale", self.ssr_scale, 0.0, 0.1, "[0, 0.1]")?;
        check("ssr_rotate", self.ssr_rotate, 0.0, 10.0, "[0, 10]")?;
        check("max_mask_loss", self.max_mask_loss, 0.0, 1.0, "[0, 1]")
    }
}

/// Mirrors image and mask about the vertical axis; the report is kept.
pub fn hflip(sample: &Sample) -> Sample {
    let n = sample.size;
    let mirror = |src: &[f32]| -> Vec<f32> { src.chunks(n).flat_map(|row| row.iter().rev().copied()).collect() };
    let mut out = sample.clone();
    out.image = mirror(&sample.image);
    out.mask = sample.mask.chunks(n).flat_map(|row| row.iter().rev().copied()).collect();
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Photometric {
    /// `clamp(x + δ)`
    Brightness(f64),
    /// `clamp(μ + α(x − μ))` around the image mean.
    Contrast(f64),
    /// `x^γ`
    Gamma(f64),
}

pub fn photometric(image: &[f32], kind: Photometric) -> Result<Vec<f32>, AugmentError> {
    let bad = |what, value, range| Err(AugmentError::Magnitude { what, value, range });
    let out = match kind {
        Photometric::Brightness(d) => {
            if !(-0.2..=0.2).contains(&d) {
                return bad("brightness", d, "[-0.2, 0.2]");
            }
            image.iter().map(|&x| (x as f64 + d).clamp(0.0, 1.0) as f32).collect()
        }
        Photometric::Contrast(a) => {
            if !(0.8..=1.2).contains(&a) {
                return bad("contrast", a, "[0.8, 1.2]");
            }
            let mu = image.iter().map(|&x| x as f64).sum::<f64>() / image.len().max(1) as f64;
            image.iter().map(|&x| (mu + a * (x as f64 - mu)).clamp(0.0, 1.0) as f32).collect()
        }
        Photometric::Gamma(g) => {
            if !(0.8..=1.25).contains(&g) {
                return bad("gamma", g, "[0.8, 1.25]");
            }
            image.iter().map(|&x| (x as f64).clamp(0.0, 1.0).powf(g) as f32).collect()
        }
    };
    Ok(out)
}

/// A geometric warp. Random fields (elastic, grid) are drawn from the rng
/// passed to [`geometric_distort`]; the others are fully specified.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Warp {
    /// `alpha`, `sigma` as fractions of the width.
    Elastic { alpha: f64, sigma: f64 },
    Grid { steps: usize, limit: f64 },
    /// Radial `r' = r(1 + k r²)` with `r` normalised by the half-width.
    Optical { k: f64 },
    /// Shift as fractions of the width, scale factor, rotation in degrees.
    Ssr { shift_x: f64, shift_y: f64, scale: f64, rotate: f64 },
}

fn gaussian_blur(field: &[f64], n: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let off = k as isize - radius;
                    let (rr, cc) = if horizontal { (r as isize, c as isize + off) } else { (r as isize + off, c as isize) };
                    let rr = rr.clamp(0, n as isize - 1) as usize;
                    let cc = cc.clamp(0, n as isize - 1) as usize;
                    acc += w * src[rr * n + cc];
                }
                out[r * n + c] = acc / total;
            }
        }
        out
    };
    pass(&pass(field, true), false)
}

/// Maps uniform node positions to jittered ones along one axis.
fn grid_axis(n: usize, steps: usize, limit: f64, rng: &mut Rng) -> Vec<f64> {
    let widths: Vec<f64> = (0..steps).map(|_| 1.0 + rng.gen_range(-limit..=limit)).collect();
    let total: f64 = widths.iter().sum();
    let mut nodes = vec![0.0];
    for w in &widths {
        nodes.push(nodes.last().unwrap() + w / total);
    }
    let extent = (n - 1) as f64;
    (0..n)
        .map(|p| {
            let t = p as f64 / extent.max(1.0);
            let cell = ((t * steps as f64).floor() as usize).min(steps - 1);
            let local = t * steps as f64 - cell as f64;
            let src = nodes[cell] + local * (nodes[cell + 1] - nodes[cell]);
            src * extent - p as f64
        })
        .collect()
}

/// Per-pixel source offsets `(dx, dy)`: output pixel `p` samples `p + d`.
fn displacement(warp: &Warp, n: usize, rng: &mut Rng) -> Vec<(f64, f64)> {
    let c = (n as f64 - 1.0) / 2.0;
    let half = n as f64 / 2.0;
    let mut out = vec![(0.0, 0.0); n * n];
    match *warp {
        Warp::Elastic { alpha, sigma } => {
            if alpha == 0.0 {
                return out;
            }
            let mut raw = || (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            let (fx, fy) = (raw(), raw());
            let s = sigma * n as f64;
            let (fx, fy) = (gaussian_blur(&fx, n, s), gaussian_blur(&fy, n, s));
            let peak = fx.iter().chain(&fy).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
            let scale = alpha * n as f64 / peak;
            for i in 0..n * n {
                out[i] = (fx[i] * scale, fy[i] * scale);
            }
        }
        Warp::Grid { steps, limit } => {
            let xs = grid_axis(n, steps.max(1), limit, rng);
            let ys = grid_axis(n, steps.max(1), limit, rng);
            for r in 0..n {
                for col in 0..n {
                    out[r * n + col] = (xs[col], ys[r]);
                }
            }
        }
        Warp::Optical { k } => {
            for r in 0..n {
                for col in 0..n {
                    let (dx, dy) = ((col as f64 - c) / half, (r as f64 - c) / half);
                    let f = k * (dx * dx + dy * dy);
                    out[r * n + col] = (dx * f * half, dy * f * half);
                }
            }
        }
        Warp::Ssr { shift_x, shift_y, scale, rotate } => {
            let (sin, cos) = rotate.to_radians().sin_cos();
            for r in 0..n {
                for col in 0..n {
                    let x = col as f64 - c - shift_x * n as f64;
                    let y = r as f64 - c - shift_y * n as f64;
                    let sx = (cos * x + sin * y) / scale;
                    let sy = (-sin * x + cos * y) / scale;
                    out[r * n + col] = (sx - (col as f64 - c), sy - (r as f64 - c));
                }
            }
        }
    }
    out
}

fn bilinear(image: &[f32], n: usize, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, (n - 1) as f64);
    let y = y.clamp(0.0, (n - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(n - 1), (y0 + 1).min(n - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |r: usize, c: usize| image[r * n + c] as f64;
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

fn nearest(mask: &[u8], n: usize, x: f64, y: f64) -> u8 {
    let (xr, yr) = (x.round(), y.round());
    if xr < 0.0 || yr < 0.0 || xr > (n - 1) as f64 || yr > (n - 1) as f64 {
        return 0;
    }
    mask[yr as usize * n + xr as usize]
}

/// Applies one warp to image (bilinear, edge clamp) and mask (nearest, zero
/// fill). Rejects the result when more than `max_mask_loss` of the mask is lost.
pub fn geometric_distort(sample: &Sample, warp: &Warp, max_mask_loss: f64, rng: &mut Rng) -> Result<Sample, AugmentError> {
    let n = sample.size;
    let disp = displacement(warp, n, rng);
    let mut out = sample.clone();
    for r in 0..n {
        for c in 0..n {
            let (dx, dy) = disp[r * n + c];
            let (x, y) = (c as f64 + dx, r as f64 + dy);
            out.image[r * n + c] = bilinear(&sample.image, n, x, y);
            out.mask[r * n + c] = nearest(&sample.mask, n, x, y);
        }
    }
    let original = sample.mask.iter().filter(|&&m| m != 0).count();
    let kept = out.mask.iter().filter(|&&m| m != 0).count();
    if original > 0 && (kept as f64) < (1.0 - max_mask_loss) * original as f64 {
        return Err(AugmentError::MaskLoss { kept, original });
    }
    Ok(out)
}

/// Splits after each `.`, `!` or `?`, permutes uniformly and rejoins with
/// single spaces.
pub fn sentence_shuffle(text: &str, rng: &mut Rng) -> String {
    let mut sentences = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        current.push(ch);
        if matches!(ch, '.' | '!' | '?') {
            sentences.push(current.trim().to_string());
            current.clear();
        }
    }
    if !current.trim().is_empty() {
        sentences.push(current.trim().to_string());
    }
    sentences.retain(|s| !s.is_empty());
    sentences.shuffle(rng);
    sentences.join(" ")
}

/// Term to synonyms; keys are lowercase.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon(pub BTreeMap<String, Vec<String>>);

impl Default for Lexicon {
    /// A small radiology lexicon. Side words have no entries so replacements
    /// never change laterality.
    fn default() -> Self {
        let pairs: [(&str, &[&str]); 8] = [
            ("pneumothorax", &["ptx"]),
            ("large", &["big", "sizable"]),
            ("small", &["tiny", "minimal"]),
            ("apical", &["apex"]),
            ("basal", &["base"]),
            ("normal", &["unremarkable"]),
            ("fracture", &["break"]),
            ("effusion", &["fluid"]),
        ];
        Lexicon(pairs.iter().map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect())).collect())
    }
}

impl Lexicon {
    pub fn from_json(text: &str) -> Result<Self, AugmentError> {
        let map: BTreeMap<String, Vec<String>> = serde_json::from_str(text).map_err(|e| AugmentError::Lexicon(e.to_string()))?;
        for (k, v) in &map {
            if k.to_lowercase() != *k {
                return Err(AugmentError::Lexicon(format!("key {k:?} is not lowercase")));
            }
            if v.is_empty() {
                return Err(AugmentError::Lexicon(format!("key {k:?} has no synonyms")));
            }
        }
        Ok(Lexicon(map))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AugmentError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Replaces each lexicon word with probability `p` by a uniformly chosen
/// synonym, keeping surrounding punctuation. Returns the text and the number
/// of replacements.
pub fn synonym_replace(text: &str, lexicon: &Lexicon, p: f64, rng: &mut Rng) -> (String, usize) {
    let mut replaced = 0;
    let words: Vec<String> = text
        .split_whitespace()
        .map(|w| {
            let start = w.find(|c: char| c.is_alphanumeric()).unwrap_or(w.len());
            let end = w.rfind(|c: char| c.is_alphanumeric()).map_or(start, |i| i + w[i..].chars().next().unwrap().len_utf8());
            let core = &w[start..end.max(start)];
            match lexicon.0.get(&core.to_lowercase()) {
                Some(syns) if rng.gen_bool(p) => {
                    replaced += 1;
                    let syn = syns.choose(rng).expect("non-empty synonym list");
                    format!("{}{}{}", &w[..start], syn, &w[end.max(start)..])
                }
                _ => w.to_string(),
            }
        })
        .collect();
    (words.join(" "), replaced)
}

const RETRY_TAG: u64 = 0x0052_4554_5259;

fn try_augment(sample: &Sample, policy: &AugmentPolicy, lexicon: &Lexicon, seed: u64) -> Result<Sample, AugmentError> {
    let mut rng = rng_from(seed);
    let mut s = sample.clone();
    if rng.gen_bool(policy.p_hflip) {
        s = hflip(&s);
    }
    if rng.gen_bool(policy.p_photometric) {
        let kind = match rng.gen_range(0..3) {
            0 => Photometric::Contrast(rng.gen_range(policy.contrast.0..=policy.contrast.1)),
            1 => Photometric::Gamma(rng.gen_range(policy.gamma.0..=policy.gamma.1)),
            _ => Photometric::Brightness(rng.gen_range(-policy.brightness..=policy.brightness)),
        };
        s.image = photometric(&s.image, kind)?;
    }
    if rng.gen_bool(policy.p_distort) {
        let warp = match rng.gen_range(0..3) {
            0 => Warp::Elastic { alpha: policy.elastic_alpha, sigma: policy.elastic_sigma },
            1 => Warp::Grid { steps: policy.grid_steps, limit: policy.grid_limit },
            _ => Warp::Optical { k: rng.gen_range(-policy.optical_k..=policy.optical_k) },
        };
        s = geometric_distort(&s, &warp, policy.max_mask_loss, &mut rng)?;
    }
    if rng.gen_bool(policy.p_ssr) {
        let warp = Warp::Ssr {
            shift_x: rng.gen_range(-policy.ssr_shift..=policy.ssr_shift),
            shift_y: rng.gen_range(-policy.ssr_shift..=policy.ssr_shift),
            scale: rng.gen_range(1.0 - policy.ssr_scale..=1.0 + policy.ssr_scale),
            rotate: rng.gen_range(-policy.ssr_rotate..=policy.ssr_rotate),
        };
        s = geometric_distort(&s, &warp, policy.max_mask_loss, &mut rng)?;
    }
    if policy.text_shuffle {
        s.report = sentence_shuffle(&s.report, &mut rng);
    }
    if policy.text_synonym_p > 0.0 {
        s.report = synonym_replace(&s.report, lexicon, policy.text_synonym_p, &mut rng).0;
    }
    Ok(s)
}

/// Full recipe in fixed order: flip, photometric, one distortion, shift-
/// scale-rotate, then text. A rejected warp is retried once with a derived
/// seed; a second rejection returns the sample unchanged.
pub fn augment_sample(sample: &Sample, policy: &AugmentPolicy, lexicon: &Lexicon, seed: u64) -> Sample {
    try_augment(sample, policy, lexicon, seed)
        .or_else(|_| try_augment(sample, policy, lexicon, derive_seed(&[seed, RETRY_TAG])))
        .unwrap_or_else(|_| sample.clone())
}

/// Seed of one sample's augmentation, independent of worker scheduling.
pub fn sample_seed(global_seed: u64, epoch: u64, index: u64) -> u64 {
    derive_seed(&[global_seed, epoch, index])
}
