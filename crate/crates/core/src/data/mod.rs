//! Synthetic chest-film-like dataset with grounding reports, its on-disk
//! layout, the Dice metric and Monte Carlo splits.

mod generate;
mod io;
mod metric;
pub mod pgm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{generate_dataset, generate_sample, side_of_column, vocabulary, GenConfig, DISTRACTORS};
pub use io::{read_dataset, write_dataset, ManifestEntry};
pub use metric::{dice, mc_split, Fold, SplitSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("pgm: {0}")]
    Pgm(String),
    #[error("{path}: {source}")]
    File { path: String, source: Box<DataError> },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("mask has {found} pixels, expected {expected}")]
    Shape { expected: usize, found: usize },
    #[error("split: {0}")]
    Split(String),
    #[error("generator: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    None,
}

impl Side {
    pub fn word(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
            Side::None => "none",
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
            Side::None => Side::None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    Apical,
    Basal,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extent {
    Small,
    Large,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attrs {
    pub present: bool,
    pub side: Side,
    pub zone: Zone,
    pub size: Extent,
    pub ambiguous: bool,
}

/// One image, its target mask and the report describing it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub size: usize,
    /// Row-major `size x size` values in `[0,1]`.
    pub image: Vec<f32>,
    /// Row-major 0/1 target.
    pub mask: Vec<u8>,
    pub report: String,
    pub attrs: Attrs,
    pub seed: u64,
}

impl Sample {
    /// Mean column of the mask, or `None` for an empty mask.
    pub fn mask_centroid_column(&self) -> Option<f64> {
        centroid_column(&self.mask, self.size)
    }
}

pub fn centroid_column(mask: &[u8], size: usize) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, &m) in mask.iter().enumerate() {
        if m != 0 {
            sum += (i % size) as f64;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}
