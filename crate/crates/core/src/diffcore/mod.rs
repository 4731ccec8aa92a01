//! Differentiable-array engine: dense tensors, a reverse-mode tape with the
//! primitives the segmentation network needs, AdamW, gradient checking and
//! the checkpoint format.

mod adamw;
mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod ops;
mod real;
mod tensor;

pub use adamw::{AdamW, AdamWConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::DiffError;
pub use gradcheck::{finite_diff_check, GradCheckEntry, GradCheckReport};
pub use graph::{Graph, Var};
pub use ops::activation::Activation;
pub use ops::norm::{BatchNormState, BatchStats, NormMode};
pub use real::{gemm, verify_mode, Real};
pub use tensor::Tensor;
