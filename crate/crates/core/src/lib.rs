//! Text-gated U-Net segmentation.
//!
//! Report embeddings gate each decoder level of a U-Net through single-head
//! pixel-to-token cross-attention. The crate carries its own reverse-mode
//! engine ([`diffcore`]), a frozen report embedder ([`textenc`]), the network
//! ([`model`]), concordance-aware augmentations ([`augment`]), a synthetic
//! text-grounded dataset ([`data`]) and the training/ablation harness
//! ([`train`]).

pub mod augment;
mod binio;
pub mod data;
pub mod diffcore;
pub mod model;
pub mod rng;
pub mod textenc;
pub mod train;

pub use binio::BinError;
