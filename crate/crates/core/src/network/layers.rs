use rand::Rng;

use super::params::{ForwardCtx, ParamId, ParamStore};
use crate::diffcore::{add, batch_norm, matmul, max_over_points, relu, reshape, BatchNormStats, Tensor};
use crate::rng::RngState;
use crate::Result;

/// `x·W + b` with `W` stored `[in×out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Weights and bias uniform in `±1/√inputs`.
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut RngState) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-bound..bound)).collect::<Vec<_>>();
        let w = draw(inputs * outputs);
        let b = draw(outputs);
        Linear {
            weight: store.register(format!("{name}.weight"), vec![inputs, outputs], w, true),
            bias: store.register(format!("{name}.bias"), vec![outputs], b, true),
            inputs,
            outputs,
        }
    }

    /// Layer with all-zero weights and the given bias.
    pub fn with_bias(store: &mut ParamStore, name: &str, inputs: usize, bias: Vec<f64>) -> Self {
        let outputs = bias.len();
        Linear {
            weight: store.register(format!("{name}.weight"), vec![inputs, outputs], vec![0.0; inputs * outputs], true),
            bias: store.register(format!("{name}.bias"), vec![outputs], bias, true),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let w = ctx.leaf(store, self.weight);
        let b = ctx.leaf(store, self.bias);
        add(&matmul(x, &w)?, &b)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Self {
        BatchNorm {
            gamma: store.register(format!("{name}.gamma"), vec![features], vec![1.0; features], true),
            beta: store.register(format!("{name}.beta"), vec![features], vec![0.0; features], true),
            running_mean: store.register(format!("{name}.running_mean"), vec![features], vec![0.0; features], false),
            running_var: store.register(format!("{name}.running_var"), vec![features], vec![1.0; features], false),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let gamma = ctx.leaf(store, self.gamma);
        let beta = ctx.leaf(store, self.beta);
        let mut stats = BatchNormStats {
            running_mean: store.values(self.running_mean).to_vec(),
            running_var: store.values(self.running_var).to_vec(),
        };
        let y = batch_norm(x, &gamma, &beta, &mut stats, ctx.mode)?;
        if ctx.mode == crate::diffcore::Mode::Train {
            ctx.record_bn(self.running_mean, self.running_var, stats);
        }
        Ok(y)
    }
}

/// Linear → batch norm → ReLU on `[rows×features]`.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub linear: Linear,
    pub norm: BatchNorm,
}

impl DenseBlock {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut RngState) -> Self {
        let linear = Linear::new(store, name, inputs, outputs, rng);
        let norm = BatchNorm::new(store, &format!("{name}.bn"), outputs);
        DenseBlock { linear, norm }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let h = self.linear.forward(store, x, ctx)?;
        Ok(relu(&self.norm.forward(store, &h, ctx)?))
    }
}

/// Dense blocks applied with the same weights to every row (point).
#[derive(Debug, Clone)]
pub struct SharedMlp {
    pub blocks: Vec<DenseBlock>,
}

impl SharedMlp {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, widths: &[usize], rng: &mut RngState) -> Self {
        let mut blocks = Vec::with_capacity(widths.len());
        let mut d = inputs;
        for (i, &w) in widths.iter().enumerate() {
            blocks.push(DenseBlock::new(store, &format!("{name}.{i}"), d, w, rng));
            d = w;
        }
        SharedMlp { blocks }
    }

    pub fn output_width(&self) -> Option<usize> {
        self.blocks.last().map(|b| b.linear.outputs)
    }

    /// `[B×n×d] → [B×n×w]`; points of the whole batch are pooled as the
    /// batch-norm batch.
    pub fn forward(&self, store: &ParamStore, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let &[b, n, d] = x.shape() else {
            return Err(crate::Error::shape("shared_mlp", x.shape(), &[]));
        };
        let mut h = reshape(x, &[b * n, d])?;
        for block in &self.blocks {
            h = block.forward(store, &h, ctx)?;
        }
        let w = h.shape()[1];
        reshape(&h, &[b, n, w])
    }
}

/// Transformation network: shared MLP, max pool over points, fully
/// connected blocks, then a linear layer emitting a `d×d` matrix. The last
/// layer starts with zero weights and the flattened identity as bias, so a
/// fresh T-Net returns exactly the identity.
#[derive(Debug, Clone)]
pub struct TNet {
    pub dim: usize,
    pub mlp: SharedMlp,
    pub fc: Vec<DenseBlock>,
    pub out: Linear,
}

impl TNet {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        mlp_widths: &[usize],
        fc_widths: &[usize],
        rng: &mut RngState,
    ) -> Self {
        let mlp = SharedMlp::new(store, &format!("{name}.mlp"), dim, mlp_widths, rng);
        let mut d = mlp.output_width().unwrap_or(dim);
        let mut fc = Vec::with_capacity(fc_widths.len());
        for (i, &w) in fc_widths.iter().enumerate() {
            fc.push(DenseBlock::new(store, &format!("{name}.fc{i}"), d, w, rng));
            d = w;
        }
        let identity = (0..dim * dim).map(|i| if i % (dim + 1) == 0 { 1.0 } else { 0.0 }).collect();
        let out = Linear::with_bias(store, &format!("{name}.out"), d, identity);
        TNet { dim, mlp, fc, out }
    }

    /// `[B×n×d] → [B×d×d]`.
    pub fn forward(&self, store: &ParamStore, x: &Tensor, ctx: &mut ForwardCtx) -> Result<Tensor> {
        let &[b, _, d] = x.shape() else {
            return Err(crate::Error::shape("tnet", x.shape(), &[self.dim]));
        };
        if d != self.dim {
            return Err(crate::Error::shape("tnet", x.shape(), &[self.dim]));
        }
        let h = self.mlp.forward(store, x, ctx)?;
        let mut g = max_over_points(&h)?;
        for block in &self.fc {
            g = block.forward(store, &g, ctx)?;
        }
        let m = self.out.forward(store, &g, ctx)?;
        reshape(&m, &[b, d, d])
    }
}
