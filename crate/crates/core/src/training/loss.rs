use crate::diffcore::{add, mse, ortho_regularizer, scale, softmax_cross_entropy, Tensor};
use crate::network::ModelOutput;
use crate::Result;

/// Supervision for one batch, in the units the model predicts.
#[derive(Debug, Clone, Copy)]
pub enum Targets<'a> {
    Classes(&'a [usize]),
    /// Standardized regression targets.
    Values(&'a [f64]),
}

pub fn task_loss(output: &ModelOutput, targets: Targets<'_>) -> Result<Tensor> {
    match targets {
        Targets::Classes(labels) => softmax_cross_entropy(&output.prediction, labels),
        Targets::Values(values) => mse(&output.prediction, values),
    }
}

/// Sum of the feature-transform orthogonality penalties over branches,
/// each averaged over the batch.
pub fn transform_penalty(output: &ModelOutput) -> Result<Option<Tensor>> {
    let mut total: Option<Tensor> = None;
    for t in &output.feature_transforms {
        let r = ortho_regularizer(t)?;
        total = Some(match total {
            Some(acc) => add(&acc, &r)?,
            None => r,
        });
    }
    Ok(total)
}

/// Task loss plus `reg_weight` times the summed transform penalties.
pub fn total_loss(output: &ModelOutput, targets: Targets<'_>, reg_weight: f64) -> Result<Tensor> {
    let task = task_loss(output, targets)?;
    if reg_weight == 0.0 {
        return Ok(task);
    }
    match transform_penalty(output)? {
        Some(p) => add(&task, &scale(&p, reg_weight)),
        None => Ok(task),
    }
}
