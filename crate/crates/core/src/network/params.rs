use std::sync::Arc;

use crate::diffcore::{BatchNormStats, Mode, Tensor};
use crate::rng::{rng_from_seed, RngState};

/// Index of one buffer in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Arc<Vec<f64>>,
    /// False for batch-norm running statistics.
    pub trainable: bool,
}

/// Every numeric buffer of a model in registration order. The order is the
/// checkpoint order: branch, then stage, then layer; within a layer the
/// weights, bias, batch-norm gamma, beta, running mean, running variance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: String, shape: Vec<usize>, values: Vec<f64>, trainable: bool) -> ParamId {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "parameter {name}");
        self.entries.push(ParamEntry { name, shape, values: Arc::new(values), trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.entries[id.0].trainable)
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].values
    }

    /// Mutable access; copies the buffer only if a live graph still shares it.
    pub fn values_mut(&mut self, id: ParamId) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.entries[id.0].values)
    }

    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.values.len()).sum()
    }
}

/// Per-forward state: mode, the dropout stream, the graph leaves created for
/// parameters and the batch-norm statistics observed in training mode.
pub struct ForwardCtx {
    pub mode: Mode,
    pub rng: RngState,
    /// Skip both T-Nets (used to compare against the transform-free pipeline).
    pub bypass_transforms: bool,
    /// Build parameter leaves as constants, so no backward graph is kept.
    pub no_grad: bool,
    leaves: Vec<Option<Tensor>>,
    bn_updates: Vec<(ParamId, ParamId, BatchNormStats)>,
}

impl ForwardCtx {
    pub fn new(mode: Mode, dropout_seed: u64) -> Self {
        ForwardCtx {
            mode,
            rng: rng_from_seed(dropout_seed),
            bypass_transforms: false,
            no_grad: false,
            leaves: Vec::new(),
            bn_updates: Vec::new(),
        }
    }

    pub fn infer() -> Self {
        Self::new(Mode::Infer, 0)
    }

    /// Inference without gradient tracking.
    pub fn evaluate() -> Self {
        ForwardCtx { no_grad: true, ..Self::infer() }
    }

    /// Graph leaf for a parameter, shared by every use within this forward.
    pub fn leaf(&mut self, store: &ParamStore, id: ParamId) -> Tensor {
        if self.leaves.len() <= id.0 {
            self.leaves.resize(id.0 + 1, None);
        }
        self.leaves[id.0]
            .get_or_insert_with(|| {
                let e = store.entry(id);
                if e.trainable && !self.no_grad {
                    Tensor::parameter(&e.shape, Arc::clone(&e.values))
                } else {
                    Tensor::shared(&e.shape, Arc::clone(&e.values))
                }
                .expect("registered shape")
            })
            .clone()
    }

    pub(crate) fn record_bn(&mut self, mean: ParamId, var: ParamId, stats: BatchNormStats) {
        self.bn_updates.push((mean, var, stats));
    }

    /// Gradient of every parameter used in this forward, indexed by
    /// [`ParamId`]; `None` for unused or non-trainable buffers.
    pub fn gradients(&self, store: &ParamStore) -> Vec<Option<Vec<f64>>> {
        (0..store.len())
            .map(|i| {
                let leaf = self.leaves.get(i).and_then(Option::as_ref)?;
                leaf.requires_grad().then(|| leaf.grad())
            })
            .collect()
    }

    /// Writes the running statistics recorded in training mode.
    pub fn commit_batch_stats(&self, store: &mut ParamStore) {
        for (mean, var, stats) in &self.bn_updates {
            *store.values_mut(*mean) = stats.running_mean.clone();
            *store.values_mut(*var) = stats.running_var.clone();
        }
    }
}
