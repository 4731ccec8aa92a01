use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Attrs, DataError, Extent, Sample, Side, Zone};
use crate::rng::{derive_seed, rng_from, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub image_size: usize,
    /// Share of positive samples that carry a mirrored decoy.
    pub ambiguous_fraction: f64,
    /// Decoy darkness relative to the true target (1 = identical).
    pub distractor_contrast: f64,
    pub positive_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { image_size: 64, ambiguous_fraction: 0.75, distractor_contrast: 1.0, positive_fraction: 1.0 }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.image_size < 32 || !self.image_size.is_power_of_two() {
            return Err(DataError::Config(format!("image_size {} must be a power of two >= 32", self.image_size)));
        }
        for (name, p) in [("ambiguous_fraction", self.ambiguous_fraction), ("positive_fraction", self.positive_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Config(format!("{name} {p} outside [0,1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.distractor_contrast) {
            return Err(DataError::Config(format!("distractor_contrast {} outside [0,1]", self.distractor_contrast)));
        }
        Ok(())
    }
}

/// Radiographic convention: the patient's left appears on the image's right.
pub fn side_of_column(column: f64, size: usize) -> Side {
    if 2.0 * column + 1.0 >= size as f64 {
        Side::Left
    } else {
        Side::Right
    }
}

/// Horizontal centre of the lung on `side`, in unit image coordinates.
fn lung_center_x(side: Side) -> f64 {
    match side {
        Side::Left => 0.71,
        _ => 0.29,
    }
}

pub const DISTRACTORS: [&str; 6] = [
    "Heart size is normal.",
    "No rib fracture.",
    "No pleural effusion.",
    "The mediastinum is midline.",
    "Support lines are unchanged.",
    "Lungs are otherwise clear.",
];

const POSITIVE_TEMPLATES: [&str; 4] = [
    "There is a {size} {side} {zone} pneumothorax.",
    "{Size} {side} {zone} pneumothorax.",
    "A {size} pneumothorax is present at the {side} {zone} pleural space.",
    "Findings consistent with a {size} {side} {zone} pneumothorax.",
];

const NEGATIVE_TEMPLATES: [&str; 2] = ["No pneumothorax.", "There is no pneumothorax."];

/// Every token the report generator can emit.
pub fn vocabulary() -> Vec<String> {
    let mut text = String::new();
    for t in POSITIVE_TEMPLATES {
        for (size, side, zone) in [("small", "left", "apical"), ("large", "right", "basal")] {
            text += &t.replace("{Size}", &capitalize(size)).replace("{size}", size).replace("{side}", side).replace("{zone}", zone);
            text.push(' ');
        }
    }
    for t in NEGATIVE_TEMPLATES.iter().chain(&DISTRACTORS) {
        text += t;
        text.push(' ');
    }
    let mut words = crate::textenc::normalize_tokens(&text);
    words.sort();
    words.dedup();
    words
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
}

fn report(attrs: &Attrs, rng: &mut Rng) -> String {
    let mut sentences: Vec<String> = Vec::new();
    if attrs.present {
        let size = match attrs.size {
            Extent::Small => "small",
            _ => "large",
        };
        let zone = match attrs.zone {
            Zone::Apical => "apical",
            _ => "basal",
        };
        let t = POSITIVE_TEMPLATES.choose(rng).expect("templates");
        sentences.push(
            t.replace("{Size}", &capitalize(size)).replace("{size}", size).replace("{side}", attrs.side.word()).replace("{zone}", zone),
        );
    } else {
        sentences.push(NEGATIVE_TEMPLATES.choose(rng).expect("templates").to_string());
    }
    let k = rng.gen_range(1..=3);
    sentences.extend(DISTRACTORS.choose_multiple(rng, k).map(|s| s.to_string()));
    sentences.shuffle(rng);
    sentences.join(" ")
}

/// Sum of a few random low-frequency plane waves.
struct SmoothField {
    waves: Vec<(f64, f64, f64, f64)>,
}

impl SmoothField {
    fn new(rng: &mut Rng, count: usize, amplitude: f64) -> Self {
        let waves = (0..count)
            .map(|_| {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let freq = rng.gen_range(0.5..3.0);
                (freq * theta.cos(), freq * theta.sin(), rng.gen_range(0.0..std::f64::consts::TAU), amplitude)
            })
            .collect();
        Self { waves }
    }

    fn at(&self, u: f64, v: f64) -> f64 {
        self.waves.iter().map(|&(fx, fy, ph, a)| a * (std::f64::consts::TAU * (fx * u + fy * v) + ph).sin()).sum()
    }
}

#[derive(Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        let dx = (u - self.cx) / self.ax;
        let dy = (v - self.cy) / self.ay;
        dx * dx + dy * dy <= 1.0
    }
}

/// Pixels between the lung outline and a shrunken copy pushed medially and
/// away from `zone`, limited to that zone's half of the lung.
fn crescent(lung: &Ellipse, side: Side, zone: Zone, thickness: f64, size: usize) -> Vec<u8> {
    let lateral = if side == Side::Left { 1.0 } else { -1.0 };
    let toward_zone = if zone == Zone::Apical { -1.0 } else { 1.0 };
    let inner = Ellipse {
        cx: lung.cx - lateral * thickness * lung.ax,
        cy: lung.cy - toward_zone * thickness * lung.ay,
        ax: lung.ax * (1.0 - thickness),
        ay: lung.ay * (1.0 - thickness),
    };
    let mut mask = vec![0u8; size * size];
    for r in 0..size {
        let v = (r as f64 + 0.5) / size as f64;
        let in_zone = if zone == Zone::Apical { v < lung.cy } else { v >= lung.cy };
        if !in_zone {
            continue;
        }
        for c in 0..size {
            let u = (c as f64 + 0.5) / size as f64;
            if lung.contains(u, v) && !inner.contains(u, v) {
                mask[r * size + c] = 1;
            }
        }
    }
    mask
}

pub fn generate_sample(seed: u64, cfg: &GenConfig) -> Result<Sample, DataError> {
    cfg.validate()?;
    let s = cfg.image_size;
    let mut rng = rng_from(seed);
    let noise = |rng: &mut Rng, sd: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    };

    let present = rng.gen::<f64>() < cfg.positive_fraction;
    let ambiguous = present && rng.gen::<f64>() < cfg.ambiguous_fraction;
    let attrs = if present {
        Attrs {
            present,
            side: if rng.gen() { Side::Left } else { Side::Right },
            zone: if rng.gen() { Zone::Apical } else { Zone::Basal },
            size: if rng.gen() { Extent::Small } else { Extent::Large },
            ambiguous,
        }
    } else {
        Attrs { present, side: Side::None, zone: Zone::None, size: Extent::None, ambiguous: false }
    };

    let body = SmoothField::new(&mut rng, 4, 0.025);
    let texture = SmoothField::new(&mut rng, 6, 0.02);
    let lung_ax = rng.gen_range(0.14..0.17);
    let lung_ay = rng.gen_range(0.27..0.32);
    let lung_cy = 0.5 + rng.gen_range(-0.03..0.03);
    let lungs = [Side::Right, Side::Left].map(|side| Ellipse { cx: lung_center_x(side), cy: lung_cy, ax: lung_ax, ay: lung_ay });
    let heart = Ellipse { cx: 0.57 + rng.gen_range(-0.02..0.02), cy: 0.68, ax: rng.gen_range(0.1..0.13), ay: 0.1 };

    let mut image = vec![0f32; s * s];
    for r in 0..s {
        let v = (r as f64 + 0.5) / s as f64;
        for c in 0..s {
            let u = (c as f64 + 0.5) / s as f64;
            let mut x = 0.55 + body.at(u, v) + noise(&mut rng, 0.01);
            if lungs.iter().any(|l| l.contains(u, v)) {
                x = 0.25 + texture.at(u, v) + noise(&mut rng, 0.015);
            }
            if heart.contains(u, v) {
                x = 0.5 * x + 0.5 * (0.8 + noise(&mut rng, 0.01));
            }
            image[r * s + c] = x.clamp(0.0, 1.0) as f32;
        }
    }

    let mut mask = vec![0u8; s * s];
    if present {
        let lung = lungs[(attrs.side == Side::Left) as usize];
        loop {
            let thickness = match attrs.size {
                Extent::Small => rng.gen_range(0.07..0.11),
                _ => rng.gen_range(0.26..0.34),
            };
            mask = crescent(&lung, attrs.side, attrs.zone, thickness, s);
            if mask.iter().any(|&m| m != 0) {
                break;
            }
        }
        for (i, &m) in mask.iter().enumerate() {
            if m != 0 {
                image[i] = (0.08 + noise(&mut rng, 0.015)).clamp(0.0, 1.0) as f32;
            }
        }
        if ambiguous {
            let k = cfg.distractor_contrast as f32;
            for r in 0..s {
                for c in 0..s {
                    if mask[r * s + c] != 0 {
                        let m = r * s + (s - 1 - c);
                        image[m] = image[m] + k * (image[r * s + c] - image[m]);
                    }
                }
            }
        }
    }

    Ok(Sample { id: String::new(), size: s, image, mask, report: report(&attrs, &mut rng), attrs, seed })
}

/// `n` samples; sample `i` uses seed `derive_seed(seed, i)` and id `s{i:05}`.
pub fn generate_dataset(n: usize, seed: u64, cfg: &GenConfig) -> Result<Vec<Sample>, DataError> {
    (0..n)
        .map(|i| {
            let mut sample = generate_sample(derive_seed(&[seed, i as u64]), cfg)?;
            sample.id = format!("s{i:05}");
            Ok(sample)
        })
        .collect()
}
