//! T-Nets, shared MLPs, the multi-branch network and the PointNet baseline.
//!
//! Per branch, a structure's `[n×3]` points are aligned by a 3×3 T-Net,
//! lifted to `k` features by a shared MLP, aligned again by a `k×k` feature
//! T-Net and passed through a second shared MLP. The multi-branch network
//! keeps every point's features (with dropout), concatenates all branches
//! and predicts with a final MLP. The baseline runs one branch over the
//! concatenation of all clouds and max-pools over points instead.
//!
//! Batch-norm statistics of shared MLPs pool the point axis with the batch
//! axis.

mod checkpoint;
mod layers;
mod model;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamRecord};
pub use layers::{BatchNorm, DenseBlock, Linear, SharedMlp, TNet};
pub use model::{stack_structures, Architecture, Branch, Head, Model, ModelConfig, ModelOutput};
pub use params::{ForwardCtx, ParamEntry, ParamId, ParamStore};
