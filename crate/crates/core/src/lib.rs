//! Multi-structure point-cloud networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffcore`]: a small reverse-mode automatic differentiation engine over
//!   row-major `f64` tensors, with exactly the operations the networks need.
//! - [`shapedata`]: label volumes, boundary extraction, point sampling, rigid
//!   augmentation, subject normalization, a synthetic shape corpus and the
//!   on-disk formats for all of them.
//! - [`network`]: T-Nets, shared MLPs, the multi-branch network with a
//!   per-point dropout head and the max-pooling single-branch baseline, plus
//!   checkpoint serialization.
//! - [`training`]: subject-level splits, the composite loss, Adam, the
//!   training loop and evaluation metrics.
//! - [`occlusion`]: per-point importance by nearest-neighbour occlusion and
//!   its CSV/PLY export.
//!
//! The guide under `book/` walks through each of these with runnable snippets.

pub mod diffcore;
mod error;
pub mod fmt;
pub mod network;
pub mod occlusion;
pub mod rng;
pub mod shapedata;
pub mod training;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    pub struct Intro;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub struct Autodiff;
    #[doc = include_str!("../../../book/src/point_clouds.md")]
    pub struct PointClouds;
    #[doc = include_str!("../../../book/src/architecture.md")]
    pub struct Architecture;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/occlusion.md")]
    pub struct Occlusion;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
