//! Frozen report encoder.
//!
//! Reports are tokenized with a fixed rule set, hashed into a `2^20` id
//! space and mapped to static unit-norm vectors drawn from a keyed PRNG.
//! The resulting `l x d_e` matrix never receives gradients. Externally
//! computed embeddings can be supplied through the `CTXE` file format.

use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};

use crate::binio::{put_f32s, put_string, put_u32, BinError, ByteReader};
use crate::diffcore::Tensor;
use crate::rng::{derive_seed, rng_from};

pub const PAD_ID: u32 = 0;
pub const PAD_TOKEN: &str = "<pad>";
pub const VOCAB_MODULUS: u64 = 1 << 20;
pub const EMBEDDING_MAGIC: &[u8; 4] = b"CTXE";
pub const EMBEDDING_VERSION: u32 = 1;

/// A tokenized, padded report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub text: String,
    /// Normalized tokens before padding/after truncation.
    pub tokens: Vec<String>,
    /// Exactly `max_tokens` ids; positions `>= valid_len` hold [`PAD_ID`].
    pub ids: Vec<u32>,
    pub valid_len: usize,
}

/// Frozen `l x d_e` token matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportEmbedding {
    pub matrix: Tensor<f32>,
    pub valid_len: usize,
}

impl ReportEmbedding {
    pub fn len(&self) -> usize {
        self.matrix.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.matrix.dim(1)
    }

    /// Embeddings are frozen: they never enter a graph as trainable leaves.
    pub fn is_frozen(&self) -> bool {
        true
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hashed id of a normalized token; 0 is reserved for padding, so a token
/// hashing to 0 is moved to 1.
pub fn token_id(token: &str) -> u32 {
    match fnv1a64(token.as_bytes()) % VOCAB_MODULUS {
        0 => 1,
        id => id as u32,
    }
}

/// Lowercased whitespace tokens with punctuation split into standalone tokens.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for piece in text.split_whitespace() {
        let mut word = String::new();
        for ch in piece.chars() {
            if ch.is_ascii_punctuation() || (!ch.is_ascii() && !ch.is_alphanumeric()) {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(ch.to_string());
            } else {
                word.extend(ch.to_lowercase());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

pub fn tokenize(text: &str, max_tokens: usize) -> Report {
    assert!(max_tokens >= 1, "max_tokens must be at least 1");
    let mut tokens = normalize_tokens(text);
    tokens.truncate(max_tokens);
    let mut ids: Vec<u32> = tokens.iter().map(|t| token_id(t)).collect();
    let valid_len = ids.len();
    ids.resize(max_tokens, PAD_ID);
    Report { text: text.to_string(), tokens, ids, valid_len }
}

/// Unit-norm vector for `id`, keyed by `(seed, id)`.
pub fn token_vector(id: u32, d_e: usize, seed: u64) -> Vec<f32> {
    let mut rng = rng_from(derive_seed(&[seed, id as u64]));
    loop {
        let v: Vec<f64> = (0..d_e).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

pub fn embed(report: &Report, d_e: usize, seed: u64) -> ReportEmbedding {
    assert!(d_e >= 1, "d_e must be at least 1");
    let mut rows: BTreeMap<u32, Vec<f32>> = BTreeMap::new();
    let mut data = Vec::with_capacity(report.ids.len() * d_e);
    for &id in &report.ids {
        let row = rows.entry(id).or_insert_with(|| token_vector(id, d_e, seed));
        data.extend_from_slice(row);
    }
    ReportEmbedding {
        matrix: Tensor::new(&[report.ids.len(), d_e], data).expect("rows x d_e"),
        valid_len: report.valid_len,
    }
}

/// Tokenize-and-embed with fixed settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Embedder {
    pub max_tokens: usize,
    pub d_e: usize,
    pub seed: u64,
}

impl Embedder {
    pub fn embed_text(&self, text: &str) -> ReportEmbedding {
        embed(&tokenize(text, self.max_tokens), self.d_e, self.seed)
    }
}

pub fn embeddings_to_bytes(records: &BTreeMap<String, ReportEmbedding>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(EMBEDDING_MAGIC);
    put_u32(&mut out, EMBEDDING_VERSION);
    put_u32(&mut out, records.len() as u32);
    for (id, e) in records {
        put_string(&mut out, id);
        put_u32(&mut out, e.len() as u32);
        put_u32(&mut out, e.width() as u32);
        put_f32s(&mut out, e.matrix.data());
    }
    out
}

/// Parses a `CTXE` file. Every record must share one `(l, d_e)`; loaded
/// matrices count all `l` rows as valid.
pub fn embeddings_from_bytes(bytes: &[u8]) -> Result<BTreeMap<String, ReportEmbedding>, BinError> {
    let mut r = ByteReader::new(bytes);
    r.magic(EMBEDDING_MAGIC)?;
    let version = r.u32()?;
    if version != EMBEDDING_VERSION {
        return r.fail(format!("unsupported embedding file version {version}"));
    }
    let count = r.u32()? as usize;
    let mut dims: Option<(usize, usize)> = None;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let id = r.string()?;
        let l = r.u32()? as usize;
        let d_e = r.u32()? as usize;
        match dims {
            None => dims = Some((l, d_e)),
            Some((l0, d0)) if (l0, d0) != (l, d_e) => {
                return r.fail(format!("record {id}: dims {l}x{d_e} differ from first record {l0}x{d0}"));
            }
            Some(_) => {}
        }
        if l == 0 || d_e == 0 {
            return r.fail(format!("record {id}: zero-sized embedding"));
        }
        let data = r.f32s(l * d_e)?;
        let matrix = Tensor::new(&[l, d_e], data).expect("l x d_e");
        if out.insert(id.clone(), ReportEmbedding { matrix, valid_len: l }).is_some() {
            return r.fail(format!("duplicate record id {id}"));
        }
    }
    r.finish()?;
    Ok(out)
}

pub fn write_embeddings(path: impl AsRef<Path>, records: &BTreeMap<String, ReportEmbedding>) -> Result<(), BinError> {
    std::fs::write(path, embeddings_to_bytes(records))?;
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<BTreeMap<String, ReportEmbedding>, BinError> {
    embeddings_from_bytes(&std::fs::read(path)?)
}
