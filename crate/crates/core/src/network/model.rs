use serde::{Deserialize, Serialize};

use super::layers::{DenseBlock, Linear, SharedMlp, TNet};
use super::params::{ForwardCtx, ParamStore};
use crate::diffcore::{concat, dropout, flatten, matmul, max_over_points, Tensor};
use crate::rng::rng_from_seed;
use crate::shapedata::{MultiStructureSample, Task};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// One branch per structure, per-point features kept and concatenated.
    Mspnet,
    /// Single branch over the concatenated clouds with max pooling.
    Pointnet,
}

impl std::str::FromStr for Architecture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mspnet" => Ok(Architecture::Mspnet),
            "pointnet" => Ok(Architecture::Pointnet),
            other => Err(Error::Parameter(format!("unknown model {other:?} (expected mspnet or pointnet)"))),
        }
    }
}

/// Architecture hyperparameters. Defaults follow the PointNet layer sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub task: Task,
    /// Number of classes, or 1 for regression.
    pub outputs: usize,
    /// Structures per subject (`m`).
    pub structures: usize,
    /// Points per structure (`n`).
    pub points: usize,
    pub tnet_mlp: Vec<usize>,
    pub tnet_fc: Vec<usize>,
    /// Shared MLP before the feature transform; its last width is `k`.
    pub feature_mlp: Vec<usize>,
    /// Shared MLP after the feature transform; its last width is `k₂`.
    pub post_mlp: Vec<usize>,
    /// Hidden widths of the prediction MLP (the output layer is appended).
    pub head: Vec<usize>,
    pub point_dropout_keep: f64,
    pub head_dropout_keep: f64,
    /// Regression outputs are `raw · target_scale + target_offset`.
    pub target_offset: f64,
    pub target_scale: f64,
    /// Inputs are normalized per subject (joint centroid, unit radius).
    pub normalize: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::Mspnet,
            task: Task::Classification,
            outputs: 2,
            structures: 4,
            points: 512,
            tnet_mlp: vec![64, 128, 256],
            tnet_fc: vec![128, 64],
            feature_mlp: vec![64, 64],
            post_mlp: vec![64, 128],
            head: vec![512, 256],
            point_dropout_keep: 0.3,
            head_dropout_keep: 0.7,
            target_offset: 0.0,
            target_scale: 1.0,
            normalize: true,
        }
    }
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        self.feature_mlp.last().copied().unwrap_or(3)
    }

    pub fn point_feature_dim(&self) -> usize {
        self.post_mlp.last().copied().unwrap_or_else(|| self.feature_dim())
    }

    pub fn branches(&self) -> usize {
        match self.architecture {
            Architecture::Mspnet => self.structures,
            Architecture::Pointnet => 1,
        }
    }

    pub fn head_inputs(&self) -> usize {
        match self.architecture {
            Architecture::Mspnet => self.structures * self.points * self.point_feature_dim(),
            Architecture::Pointnet => self.point_feature_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.structures == 0 || self.points == 0 {
            return bad("structures and points must be positive".into());
        }
        let all_widths = [&self.tnet_mlp, &self.tnet_fc, &self.feature_mlp, &self.post_mlp, &self.head];
        if all_widths.iter().any(|w| w.contains(&0)) {
            return bad("layer widths must be positive".into());
        }
        match (self.task, self.outputs) {
            (Task::Regression, 1) => {}
            (Task::Regression, o) => return bad(format!("regression head needs 1 output, got {o}")),
            (Task::Classification, o) if o >= 2 => {}
            (Task::Classification, o) => return bad(format!("classification needs at least 2 classes, got {o}")),
        }
        for keep in [self.point_dropout_keep, self.head_dropout_keep] {
            if !(keep > 0.0 && keep <= 1.0) {
                return bad(format!("keep probability {keep} outside (0, 1]"));
            }
        }
        if !(self.target_scale.is_finite() && self.target_scale != 0.0) || !self.target_offset.is_finite() {
            return bad("target scaling must be finite and non-zero".into());
        }
        Ok(())
    }
}

/// Point T-Net, feature MLP, feature T-Net, post-transform MLP.
#[derive(Debug, Clone)]
pub struct Branch {
    pub input_tnet: TNet,
    pub feature_mlp: SharedMlp,
    pub feature_tnet: TNet,
    pub post_mlp: SharedMlp,
}

impl Branch {
    fn new(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut crate::rng::RngState) -> Self {
        let input_tnet = TNet::new(store, &format!("{name}.input_tnet"), 3, &cfg.tnet_mlp, &cfg.tnet_fc, rng);
        let feature_mlp = SharedMlp::new(store, &format!("{name}.feature_mlp"), 3, &cfg.feature_mlp, rng);
        let k = cfg.feature_dim();
        let feature_tnet = TNet::new(store, &format!("{name}.feature_tnet"), k, &cfg.tnet_mlp, &cfg.tnet_fc, rng);
        let post_mlp = SharedMlp::new(store, &format!("{name}.post_mlp"), k, &cfg.post_mlp, rng);
        Branch { input_tnet, feature_mlp, feature_tnet, post_mlp }
    }

    /// `[B×n×3]` points to `[B×n×k₂]` per-point features and the `[B×k×k]`
    /// feature transform.
    pub fn forward(&self, store: &ParamStore, points: &Tensor, ctx: &mut ForwardCtx) -> Result<(Tensor, Tensor)> {
        let (b, k) = (points.shape()[0], self.feature_tnet.dim);
        let aligned = if ctx.bypass_transforms {
            points.clone()
        } else {
            let t_in = self.input_tnet.forward(store, points, ctx)?;
            matmul(points, &t_in)?
        };
        let features = self.feature_mlp.forward(store, &aligned, ctx)?;
        let (features, t_feat) = if ctx.bypass_transforms {
            let eye: Vec<f64> = (0..b * k * k).map(|i| if i % (k * k) % (k + 1) == 0 { 1.0 } else { 0.0 }).collect();
            (features, Tensor::new(&[b, k, k], eye)?)
        } else {
            let t_feat = self.feature_tnet.forward(store, &features, ctx)?;
            (matmul(&features, &t_feat)?, t_feat)
        };
        Ok((self.post_mlp.forward(store, &features, ctx)?, t_feat))
    }
}

/// Prediction MLP: dense blocks with dropout between them, then a linear
/// output layer.
#[derive(Debug, Clone)]
pub struct Head {
    pub hidden: Vec<DenseBlock>,
    pub out: Linear,
}

impl Head {
    fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut crate::rng::RngState) -> Self {
        let mut d = cfg.head_inputs();
        let mut hidden = Vec::with_capacity(cfg.head.len());
        for (i, &w) in cfg.head.iter().enumerate() {
            hidden.push(DenseBlock::new(store, &format!("head.{i}"), d, w, rng));
            d = w;
        }
        let out = Linear::new(store, "head.out", d, cfg.outputs, rng);
        Head { hidden, out }
    }

    fn forward(&self, store: &ParamStore, x: &Tensor, keep: f64, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &self.hidden {
            h = block.forward(store, &h, ctx)?;
            h = dropout(&h, keep, ctx.mode, &mut ctx.rng)?;
        }
        self.out.forward(store, &h, ctx)
    }
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `[B×C]` logits, or `[B×1]` standardized regression output.
    pub prediction: Tensor,
    /// One `[B×k×k]` feature transform per branch.
    pub feature_transforms: Vec<Tensor>,
    /// One `[B×n×k₂]` per-point feature map per branch (before dropout).
    pub point_features: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub branches: Vec<Branch>,
    pub head: Head,
}

impl Model {
    /// Builds and initializes a model; initialization draws from a stream
    /// seeded with `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut store = ParamStore::new();
        let branches =
            (0..config.branches()).map(|i| Branch::new(&mut store, &format!("branch{i}"), &config, &mut rng)).collect();
        let head = Head::new(&mut store, &config, &mut rng);
        Ok(Model { config, store, branches, head })
    }

    /// Forward pass over `m` stacked structure tensors of shape `[B×n×3]`.
    pub fn forward(&self, clouds: &[Tensor], ctx: &mut ForwardCtx) -> Result<ModelOutput> {
        let cfg = &self.config;
        if clouds.len() != cfg.structures {
            return Err(Error::Parameter(format!(
                "model has {} structures, got {} point clouds",
                cfg.structures,
                clouds.len()
            )));
        }
        let expected = [clouds[0].shape().first().copied().unwrap_or(0), cfg.points, 3];
        if let Some(bad) = clouds.iter().find(|c| c.shape() != expected) {
            return Err(Error::shape("model input", bad.shape(), &expected));
        }
        match cfg.architecture {
            Architecture::Mspnet => self.forward_mspnet(clouds, ctx),
            Architecture::Pointnet => self.forward_pointnet(clouds, ctx),
        }
    }

    fn forward_mspnet(&self, clouds: &[Tensor], ctx: &mut ForwardCtx) -> Result<ModelOutput> {
        let mut flat = Vec::with_capacity(clouds.len());
        let mut transforms = Vec::with_capacity(clouds.len());
        let mut point_features = Vec::with_capacity(clouds.len());
        for (branch, cloud) in self.branches.iter().zip(clouds) {
            let (features, t_feat) = branch.forward(&self.store, cloud, ctx)?;
            let dropped = dropout(&features, self.config.point_dropout_keep, ctx.mode, &mut ctx.rng)?;
            flat.push(flatten(&dropped)?);
            transforms.push(t_feat);
            point_features.push(features);
        }
        let joined = concat(&flat, 1)?;
        let prediction = self.head.forward(&self.store, &joined, self.config.head_dropout_keep, ctx)?;
        Ok(ModelOutput { prediction, feature_transforms: transforms, point_features })
    }

    fn forward_pointnet(&self, clouds: &[Tensor], ctx: &mut ForwardCtx) -> Result<ModelOutput> {
        let joined = concat(clouds, 1)?;
        let (features, t_feat) = self.branches[0].forward(&self.store, &joined, ctx)?;
        let global = max_over_points(&features)?;
        let prediction = self.head.forward(&self.store, &global, self.config.head_dropout_keep, ctx)?;
        Ok(ModelOutput { prediction, feature_transforms: vec![t_feat], point_features: vec![features] })
    }

    /// Stacks the structures of `samples` into `m` tensors of shape `[B×n×3]`.
    pub fn batch_inputs(&self, samples: &[&MultiStructureSample]) -> Result<Vec<Tensor>> {
        stack_structures(samples, self.config.structures, self.config.points)
    }

    /// Maps a raw regression output back to target units.
    pub fn denormalize(&self, raw: f64) -> f64 {
        raw * self.config.target_scale + self.config.target_offset
    }

    pub fn standardize(&self, target: f64) -> f64 {
        (target - self.config.target_offset) / self.config.target_scale
    }
}

pub fn stack_structures(samples: &[&MultiStructureSample], structures: usize, points: usize) -> Result<Vec<Tensor>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    (0..structures)
        .map(|j| {
            let mut values = Vec::with_capacity(samples.len() * points * 3);
            for s in samples {
                let cloud = s.clouds.get(j).ok_or_else(|| {
                    Error::Parameter(format!(
                        "subject {} has {} structures, expected {structures}",
                        s.subject_id,
                        s.clouds.len()
                    ))
                })?;
                if cloud.len() != points {
                    return Err(Error::Parameter(format!(
                        "subject {} structure {j} has {} points, expected {points}",
                        s.subject_id,
                        cloud.len()
                    )));
                }
                values.extend(cloud.points.iter().flatten());
            }
            Tensor::new(&[samples.len(), points, 3], values)
        })
        .collect()
}
