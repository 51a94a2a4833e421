use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::loss::{total_loss, Targets};
use super::metrics::{ClassificationMetrics, Metrics, RegressionMetrics};
use super::split::{check_ratios, split_by_subject, Split};
use crate::diffcore::Mode;
use crate::fmt::sig9;
use crate::network::{ForwardCtx, Model};
use crate::rng::{derive_seed_path, rng_from_seed};
use crate::shapedata::{apply_rigid, normalize_subject, random_rigid, MultiStructureSample, Target, Task};
use crate::{Error, Result};

const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

const EVAL_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the feature-transform orthogonality penalty.
    pub reg_weight: f64,
    /// Train / validation / test fractions of subjects.
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Fresh random rigid transform per subject and epoch.
    pub augment: bool,
    pub max_translation: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            reg_weight: 0.001,
            ratios: [0.70, 0.15, 0.15],
            seed: 0,
            augment: true,
            max_translation: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_ratios(self.ratios)?;
        if self.batch_size < 2 {
            return Err(Error::Parameter("batch_size must be at least 2 (batch norm)".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {} must be non-negative", self.learning_rate)));
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            return Err(Error::Parameter(format!("reg_weight {} must be non-negative", self.reg_weight)));
        }
        if !(self.max_translation >= 0.0) {
            return Err(Error::Parameter("max_translation must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Macro F1 (classification) or MAE (regression) on the validation split.
    pub val_metric: f64,
}

/// CSV with header `epoch,train_loss,val_loss,val_metric`, 9 significant digits.
pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_metric\n");
    for e in log {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, sig9(e.train_loss), sig9(e.val_loss), sig9(e.val_metric));
    }
    out
}

pub fn write_epoch_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    std::fs::write(path, epoch_log_csv(log))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation metric.
    pub model: Model,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Applies the model's input preprocessing (subject normalization) to copies.
pub fn prepare_samples(model: &Model, samples: &[MultiStructureSample]) -> Result<Vec<MultiStructureSample>> {
    samples.iter().map(|s| if model.config.normalize { Ok(normalize_subject(s)?.0) } else { Ok(s.clone()) }).collect()
}

fn check_targets(model: &Model, samples: &[MultiStructureSample]) -> Result<()> {
    for s in samples {
        match (model.config.task, s.target) {
            (Task::Classification, Target::Class(c)) if c < model.config.outputs => {}
            (Task::Regression, Target::Value(v)) if v.is_finite() => {}
            (task, t) => {
                return Err(Error::Parameter(format!(
                    "subject {} has target {t:?}, incompatible with {task:?} model",
                    s.subject_id
                )))
            }
        }
    }
    Ok(())
}

/// Splits by subject with the configured ratios and seed, then trains on the
/// training part with the validation part for model selection.
pub fn fit(model: Model, dataset: &[MultiStructureSample], config: &TrainConfig) -> Result<(TrainOutcome, Split)> {
    config.validate()?;
    let split = split_by_subject(dataset, config.ratios, config.seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i].clone()).collect::<Vec<_>>();
    let outcome = train(model, &pick(&split.train), &pick(&split.val), config)?;
    Ok((outcome, split))
}

/// Adam on the composite loss over shuffled mini-batches. When `val` is
/// empty the training subjects are used for model selection.
pub fn train(
    mut model: Model,
    train_set: &[MultiStructureSample],
    val: &[MultiStructureSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training split"));
    }
    check_targets(&model, train_set)?;
    check_targets(&model, val)?;
    if model.config.task == Task::Regression {
        let ys: Vec<f64> = train_set.iter().map(|s| s.target.value()).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
        model.config.target_offset = mean;
        model.config.target_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let prepared = prepare_samples(&model, train_set)?;
    let selection = if val.is_empty() { train_set } else { val };

    let mut adam = Adam::new(config.learning_rate);
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(Metrics, usize, Model)> = None;
    let mut order: Vec<usize> = (0..prepared.len()).collect();

    for epoch in 1..=config.epochs {
        let e = epoch as u64;
        order.sort_unstable();
        order.shuffle(&mut rng_from_seed(derive_seed_path(config.seed, &[STREAM_SHUFFLE, e])));
        let batches = batch_ranges(order.len(), config.batch_size);
        let mut loss_sum = 0.0;
        for (b, range) in batches.into_iter().enumerate() {
            let batch: Vec<MultiStructureSample> = order[range]
                .iter()
                .map(|&i| {
                    if !config.augment {
                        return Ok(prepared[i].clone());
                    }
                    let seed = derive_seed_path(config.seed, &[STREAM_AUGMENT, e, i as u64]);
                    let t = random_rigid(&mut rng_from_seed(seed), config.max_translation)?;
                    let mut s = prepared[i].clone();
                    s.clouds = s.clouds.iter().map(|c| apply_rigid(c, &t)).collect();
                    Ok(s)
                })
                .collect::<Result<_>>()?;
            let dropout_seed = derive_seed_path(config.seed, &[STREAM_DROPOUT, e, b as u64]);
            let loss = train_step(&mut model, &mut adam, &batch, config.reg_weight, dropout_seed)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss {loss} at epoch {epoch}, batch {b}")));
            }
            loss_sum += loss * batch.len() as f64;
        }
        let (metrics, val_loss) = evaluate_with_loss(&model, selection, config.reg_weight)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / prepared.len() as f64,
            val_loss,
            val_metric: metrics.headline(),
        });
        let better = best.as_ref().map_or(true, |(m, _, _)| metrics.improves_on(m));
        if better {
            best = Some((metrics, epoch, model.clone()));
        }
    }
    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, 0),
    };
    Ok(TrainOutcome { model, best_epoch, log })
}

/// Mini-batch index ranges; a trailing batch of one sample is merged into
/// its predecessor (batch norm needs two rows).
fn batch_ranges(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(size).map(|s| s..(s + size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = last.end;
    }
    out
}

fn batch_targets(model: &Model, batch: &[&MultiStructureSample]) -> (Vec<usize>, Vec<f64>) {
    match model.config.task {
        Task::Classification => (batch.iter().map(|s| s.target.class().unwrap_or(0)).collect(), Vec::new()),
        Task::Regression => (Vec::new(), batch.iter().map(|s| model.standardize(s.target.value())).collect()),
    }
}

/// One optimizer step on an already preprocessed batch; returns the loss.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[MultiStructureSample],
    reg_weight: f64,
    dropout_seed: u64,
) -> Result<f64> {
    let refs: Vec<&MultiStructureSample> = batch.iter().collect();
    let (classes, values) = batch_targets(model, &refs);
    let targets = match model.config.task {
        Task::Classification => Targets::Classes(&classes),
        Task::Regression => Targets::Values(&values),
    };
    let (loss_value, grads) = {
        let mut ctx = ForwardCtx::new(Mode::Train, dropout_seed);
        let inputs = model.batch_inputs(&refs)?;
        let output = model.forward(&inputs, &mut ctx)?;
        let loss = total_loss(&output, targets, reg_weight)?;
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss {value}")));
        }
        loss.backward()?;
        ctx.commit_batch_stats(&mut model.store);
        (value, ctx.gradients(&model.store))
    };
    if grads.iter().flatten().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    adam.step(&mut model.store, &grads);
    Ok(loss_value)
}

/// Loss of a preprocessed batch in inference mode, without side effects.
pub fn batch_loss(model: &Model, batch: &[&MultiStructureSample], reg_weight: f64) -> Result<f64> {
    let (classes, values) = batch_targets(model, batch);
    let targets = match model.config.task {
        Task::Classification => Targets::Classes(&classes),
        Task::Regression => Targets::Values(&values),
    };
    let mut ctx = ForwardCtx::evaluate();
    let output = model.forward(&model.batch_inputs(batch)?, &mut ctx)?;
    Ok(total_loss(&output, targets, reg_weight)?.item())
}

/// Raw model outputs (logits, or regression values in target units) for raw
/// samples, in inference mode.
pub fn predict(model: &Model, samples: &[MultiStructureSample]) -> Result<Vec<Vec<f64>>> {
    let prepared = prepare_samples(model, samples)?;
    predict_prepared(model, &prepared)
}

fn predict_prepared(model: &Model, prepared: &[MultiStructureSample]) -> Result<Vec<Vec<f64>>> {
    let width = model.config.outputs;
    let mut out = Vec::with_capacity(prepared.len());
    for chunk in prepared.chunks(EVAL_BATCH) {
        let refs: Vec<&MultiStructureSample> = chunk.iter().collect();
        let output = model.forward(&model.batch_inputs(&refs)?, &mut ForwardCtx::evaluate())?;
        for row in output.prediction.values().chunks(width) {
            out.push(match model.config.task {
                Task::Classification => row.to_vec(),
                Task::Regression => vec![model.denormalize(row[0])],
            });
        }
    }
    Ok(out)
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Inference-mode metrics on raw samples.
pub fn evaluate(model: &Model, samples: &[MultiStructureSample]) -> Result<Metrics> {
    Ok(evaluate_with_loss(model, samples, 0.0)?.0)
}

fn evaluate_with_loss(model: &Model, samples: &[MultiStructureSample], reg_weight: f64) -> Result<(Metrics, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluation split"));
    }
    check_targets(model, samples)?;
    let prepared = prepare_samples(model, samples)?;
    let mut loss = 0.0;
    let mut outputs = Vec::with_capacity(prepared.len());
    for chunk in prepared.chunks(EVAL_BATCH) {
        let refs: Vec<&MultiStructureSample> = chunk.iter().collect();
        let (classes, values) = batch_targets(model, &refs);
        let targets = match model.config.task {
            Task::Classification => Targets::Classes(&classes),
            Task::Regression => Targets::Values(&values),
        };
        let output = model.forward(&model.batch_inputs(&refs)?, &mut ForwardCtx::evaluate())?;
        loss += total_loss(&output, targets, reg_weight)?.item() * chunk.len() as f64;
        for row in output.prediction.values().chunks(model.config.outputs) {
            outputs.push(match model.config.task {
                Task::Classification => row.to_vec(),
                Task::Regression => vec![model.denormalize(row[0])],
            });
        }
    }
    let loss = loss / prepared.len() as f64;
    let metrics = match model.config.task {
        Task::Classification => {
            let truth: Vec<usize> = samples.iter().map(|s| s.target.class().unwrap_or(0)).collect();
            let predicted: Vec<usize> = outputs.iter().map(|o| argmax(o)).collect();
            Metrics::Classification(ClassificationMetrics::from_predictions(&truth, &predicted, model.config.outputs)?)
        }
        Task::Regression => {
            let truth: Vec<f64> = samples.iter().map(|s| s.target.value()).collect();
            let predicted: Vec<f64> = outputs.iter().map(|o| o[0]).collect();
            Metrics::Regression(RegressionMetrics::from_predictions(&truth, &predicted)?)
        }
    };
    Ok((metrics, loss))
}
