//! Activations, normalization, pooling and losses.

use rand::Rng;

use super::tensor::{numel, Tensor};
use crate::rng::RngState;
use crate::{Error, Result};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// `max(0, x)`; the gradient at exactly zero is taken as zero.
pub fn relu(x: &Tensor) -> Tensor {
    let xv = x.data_arc();
    let out = xv.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            vec![Some(g.iter().zip(xv.iter()).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect())]
        }),
    )
}

/// Running statistics of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(features: usize) -> Self {
        BatchNormStats { running_mean: vec![0.0; features], running_var: vec![1.0; features] }
    }
}

/// Batch normalization over the last axis; all leading axes are pooled
/// into the batch. In [`Mode::Train`] the batch statistics (biased
/// variance) normalize the input and `stats` is updated with momentum
/// [`BATCH_NORM_MOMENTUM`] using the unbiased variance. In
/// [`Mode::Infer`] the running statistics are used and `stats` is untouched.
pub fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, stats: &mut BatchNormStats, mode: Mode) -> Result<Tensor> {
    let shape = x.shape();
    let features = *shape.last().ok_or_else(|| Error::shape("batch_norm", shape, &[]))?;
    if gamma.shape() != [features] || beta.shape() != [features] {
        return Err(Error::shape("batch_norm", shape, gamma.shape()));
    }
    if stats.running_mean.len() != features || stats.running_var.len() != features {
        return Err(Error::shape("batch_norm", shape, &[stats.running_mean.len()]));
    }
    let rows = numel(&shape[..shape.len() - 1]);
    let xv = x.values();
    let (mean, var) = match mode {
        Mode::Train => {
            if rows < 2 {
                return Err(Error::Parameter(format!("batch_norm in train mode needs at least 2 rows, got {rows}")));
            }
            let mut mean = vec![0.0; features];
            for row in xv.chunks(features) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; features];
            for row in xv.chunks(features) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var.iter_mut().for_each(|s| *s /= rows as f64);
            let unbias = rows as f64 / (rows - 1) as f64;
            for f in 0..features {
                stats.running_mean[f] =
                    BATCH_NORM_MOMENTUM * stats.running_mean[f] + (1.0 - BATCH_NORM_MOMENTUM) * mean[f];
                stats.running_var[f] =
                    BATCH_NORM_MOMENTUM * stats.running_var[f] + (1.0 - BATCH_NORM_MOMENTUM) * var[f] * unbias;
            }
            (mean, var)
        }
        Mode::Infer => (stats.running_mean.clone(), stats.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
    let (gv, bv) = (gamma.data_arc(), beta.data_arc());
    let mut xhat = xv.to_vec();
    let mut out = vec![0.0; xv.len()];
    for (hrow, orow) in xhat.chunks_exact_mut(features).zip(out.chunks_exact_mut(features)) {
        for f in 0..features {
            let h = (hrow[f] - mean[f]) * inv_std[f];
            hrow[f] = h;
            orow[f] = gv[f] * h + bv[f];
        }
    }
    Ok(Tensor::from_op(
        shape.to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, needs| {
            let mut dgamma = vec![0.0; features];
            let mut dbeta = vec![0.0; features];
            for (grow, hrow) in g.chunks(features).zip(xhat.chunks(features)) {
                for f in 0..features {
                    dgamma[f] += grow[f] * hrow[f];
                    dbeta[f] += grow[f];
                }
            }
            let dx = needs[0].then(|| {
                let mut dx = Vec::with_capacity(g.len());
                match mode {
                    Mode::Infer => {
                        for grow in g.chunks(features) {
                            dx.extend((0..features).map(|f| grow[f] * gv[f] * inv_std[f]));
                        }
                    }
                    Mode::Train => {
                        // dx = γ·σ⁻¹/N · (N·g − Σg − x̂·Σ(g·x̂))
                        let n = rows as f64;
                        for (grow, hrow) in g.chunks(features).zip(xhat.chunks(features)) {
                            dx.extend(
                                (0..features)
                                    .map(|f| gv[f] * inv_std[f] / n * (n * grow[f] - dbeta[f] - hrow[f] * dgamma[f])),
                            );
                        }
                    }
                }
                dx
            });
            vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
        }),
    ))
}

/// Inverted dropout: in [`Mode::Train`] each element survives with
/// probability `keep_prob` and survivors are scaled by `1 / keep_prob`.
/// Identity in [`Mode::Infer`] or when `keep_prob == 1`; neither case
/// draws from `rng`.
pub fn dropout(x: &Tensor, keep_prob: f64, mode: Mode, rng: &mut RngState) -> Result<Tensor> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::Parameter(format!("keep probability {keep_prob} outside (0, 1]")));
    }
    if mode == Mode::Infer || keep_prob == 1.0 {
        return Ok(x.clone());
    }
    let scale = 1.0 / keep_prob;
    let mask: Vec<f64> = (0..x.numel()).map(|_| if rng.gen::<f64>() < keep_prob { scale } else { 0.0 }).collect();
    let out = x.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |g, _| vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())]),
    ))
}

/// Column-wise maximum over the point axis: `[n×k] → [k]` or
/// `[B×n×k] → [B×k]`. The gradient goes to the first row attaining the
/// maximum in each column.
pub fn max_over_points(x: &Tensor) -> Result<Tensor> {
    let (batch, n, k, out_shape) = match *x.shape() {
        [n, k] => (1, n, k, vec![k]),
        [b, n, k] => (b, n, k, vec![b, k]),
        _ => return Err(Error::shape("max_over_points", x.shape(), &[])),
    };
    if n == 0 {
        return Err(Error::EmptyInput("max_over_points"));
    }
    let xv = x.values();
    let mut out = Vec::with_capacity(batch * k);
    let mut argmax = Vec::with_capacity(batch * k);
    for b in 0..batch {
        let base = b * n * k;
        for c in 0..k {
            let mut best = 0;
            for r in 1..n {
                if xv[base + r * k + c] > xv[base + best * k + c] {
                    best = r;
                }
            }
            out.push(xv[base + best * k + c]);
            argmax.push(base + best * k + c);
        }
    }
    let len = x.numel();
    Ok(Tensor::from_op(
        out_shape,
        out,
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut dx = vec![0.0; len];
            for (&idx, &gv) in argmax.iter().zip(g) {
                dx[idx] += gv;
            }
            vec![Some(dx)]
        }),
    ))
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let [batch, classes] = *logits.shape() else {
        return Err(Error::shape("softmax_cross_entropy", logits.shape(), &[labels.len()]));
    };
    if batch != labels.len() || batch == 0 {
        return Err(Error::shape("softmax_cross_entropy", logits.shape(), &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Parameter(format!("label {bad} out of range for {classes} classes")));
    }
    let mut probs = Vec::with_capacity(batch * classes);
    let mut loss = 0.0;
    for (row, &label) in logits.values().chunks(classes).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        loss += total.ln() - (row[label] - max);
        probs.extend(exps.iter().map(|e| e / total));
    }
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        Vec::new(),
        vec![loss / batch as f64],
        vec![logits.clone()],
        Box::new(move |g, _| {
            let scale = g[0] / batch as f64;
            let mut d = probs.clone();
            for (b, &label) in labels.iter().enumerate() {
                d[b * classes + label] -= 1.0;
            }
            d.iter_mut().for_each(|v| *v *= scale);
            vec![Some(d)]
        }),
    ))
}

/// Mean squared error between a `[B]` (or `[B×1]`) prediction and targets.
pub fn mse(pred: &Tensor, target: &[f64]) -> Result<Tensor> {
    if pred.numel() != target.len() || target.is_empty() {
        return Err(Error::shape("mse", pred.shape(), &[target.len()]));
    }
    let n = target.len() as f64;
    let diff: Vec<f64> = pred.values().iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok(Tensor::from_op(
        Vec::new(),
        vec![loss],
        vec![pred.clone()],
        Box::new(move |g, _| vec![Some(diff.iter().map(|d| 2.0 * d * g[0] / n).collect())]),
    ))
}

/// `‖I − T·Tᵀ‖²_F` for a square `[k×k]` matrix; for a stack `[B×k×k]` the
/// mean over the stack.
pub fn ortho_regularizer(t: &Tensor) -> Result<Tensor> {
    let (batch, k) = match *t.shape() {
        [a, b] if a == b => (1, a),
        [s, a, b] if a == b => (s, a),
        _ => return Err(Error::shape("ortho_regularizer", t.shape(), &[])),
    };
    let tv = t.data_arc();
    // M = T·Tᵀ − I, per matrix
    let mut residual = vec![0.0; batch * k * k];
    for b in 0..batch {
        let m = &tv[b * k * k..(b + 1) * k * k];
        for i in 0..k {
            for j in 0..k {
                let dot: f64 = m[i * k..(i + 1) * k].iter().zip(&m[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum();
                residual[b * k * k + i * k + j] = dot - if i == j { 1.0 } else { 0.0 };
            }
        }
    }
    let value = residual.iter().map(|r| r * r).sum::<f64>() / batch as f64;
    Ok(Tensor::from_op(
        Vec::new(),
        vec![value],
        vec![t.clone()],
        Box::new(move |g, _| {
            // d/dT ‖M‖² = 4·M·T
            let scale = 4.0 * g[0] / batch as f64;
            let mut d = vec![0.0; batch * k * k];
            for b in 0..batch {
                let m = &residual[b * k * k..(b + 1) * k * k];
                let tm = &tv[b * k * k..(b + 1) * k * k];
                for i in 0..k {
                    for j in 0..k {
                        let v: f64 = (0..k).map(|l| m[i * k + l] * tm[l * k + j]).sum();
                        d[b * k * k + i * k + j] = scale * v;
                    }
                }
            }
            vec![Some(d)]
        }),
    ))
}
