use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::rng::rng_from;

/// `2|A ∩ B| / (|A| + |B|)` over nonzero pixels; two empty masks score 1.
pub fn dice(pred: &[u8], truth: &[u8]) -> Result<f64, DataError> {
    if pred.len() != truth.len() {
        return Err(DataError::Shape { expected: truth.len(), found: pred.len() });
    }
    let (mut inter, mut a, mut b) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p != 0, t != 0);
        a += p as usize;
        b += t as usize;
        inter += (p && t) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Monte Carlo cross-validation: one independent permutation per fold seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub fold_seeds: Vec<u64>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.7, val: 0.15, test: 0.15, fold_seeds: vec![0, 1, 2, 3, 4] }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(DataError::Split(format!("fractions {f:?} must all be positive")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DataError::Split(format!("fractions {f:?} must sum to 1")));
        }
        if self.fold_seeds.is_empty() {
            return Err(DataError::Split("at least one fold seed is required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `round(n*train)` and `round(n*val)` indices, the rest for test.
pub fn mc_split(n: usize, spec: &SplitSpec) -> Result<Vec<Fold>, DataError> {
    spec.validate()?;
    if n < 10 {
        return Err(DataError::Split(format!("need at least 10 samples, got {n}")));
    }
    let n_train = (n as f64 * spec.train).round() as usize;
    let n_val = (n as f64 * spec.val).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(DataError::Split(format!("fractions leave an empty partition for n = {n}")));
    }
    Ok(spec
        .fold_seeds
        .iter()
        .map(|&seed| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng_from(seed));
            let test = idx.split_off(n_train + n_val);
            let val = idx.split_off(n_train);
            Fold { seed, train: idx, val, test }
        })
        .collect())
}
