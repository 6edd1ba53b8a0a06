//! Loss functions over recorded predictions. Every loss returns the
//! mini-batch mean as a scalar variable.

use crate::error::TrainError;
use ferrograd_core::{Tape, Tensor, Var};
use ferrograd_nn::ActivationOps;
use std::rc::Rc;

/// Mean squared error over all elements.
pub fn mse<'t>(pred: Var<'t>, target: &Tensor) -> Result<Var<'t>, TrainError> {
    let t = pred.tape().input(target.clone());
    Ok(pred.sub(t)?.square().mean_all()?)
}

/// Huber loss: quadratic inside ±δ, linear outside.
pub fn huber<'t>(pred: Var<'t>, target: &Tensor, delta: f64) -> Result<Var<'t>, TrainError> {
    let t = pred.tape().input(target.clone());
    let residual = pred.sub(t)?;
    let loss = residual.unary_map(
        move |e| {
            if e.abs() <= delta {
                0.5 * e * e
            } else {
                delta * (e.abs() - 0.5 * delta)
            }
        },
        move |e| e.clamp(-delta, delta),
    );
    Ok(loss.mean_all()?)
}

/// Hinge loss over ±1 targets: mean(max(0, 1 − y·ŷ)).
pub fn hinge<'t>(pred: Var<'t>, targets_pm1: &Tensor) -> Result<Var<'t>, TrainError> {
    if targets_pm1.data().iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(TrainError::Config("hinge targets must be ±1".into()));
    }
    let y = pred.tape().input(targets_pm1.clone());
    let margin = y.mul(pred)?.neg().add_scalar(1.0);
    Ok(margin.relu().mean_all()?)
}

/// Cross-entropy from logits via the logsumexp route:
/// per row, −logit[y] + logsumexp(logits); mean over rows.
pub fn ce_from_logits<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>, TrainError> {
    let mask = vec![true; labels.len()];
    ce_from_logits_masked(logits, labels, &mask)
}

/// Masked cross-entropy: rows with a false mask are excluded from the mean
/// (semi-supervised node classification discards unlabeled nodes).
pub fn ce_from_logits_masked<'t>(
    logits: Var<'t>,
    labels: &[usize],
    mask: &[bool],
) -> Result<Var<'t>, TrainError> {
    let shape = logits.shape();
    let (n, m) = (shape[0], shape[1]);
    if labels.len() != n || mask.len() != n {
        return Err(TrainError::Config(format!(
            "{} labels / {} mask entries for {n} rows",
            labels.len(),
            mask.len()
        )));
    }
    for &label in labels {
        if label >= m {
            return Err(TrainError::BadClassIndex {
                index: label,
                classes: m,
            });
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if kept.is_empty() {
        return Err(TrainError::Config("mask excludes every row".into()));
    }
    // Gather the kept rows, then their label logits.
    let mut row_map = Vec::with_capacity(kept.len() * m);
    for &i in &kept {
        for j in 0..m {
            row_map.push(Some(i * m + j));
        }
    }
    let rows = logits.gather_map(Rc::new(row_map), &[kept.len(), m])?;
    let mut label_map = Vec::with_capacity(kept.len());
    for (local, &i) in kept.iter().enumerate() {
        label_map.push(Some(local * m + labels[i]));
    }
    let picked = rows.gather_map(Rc::new(label_map), &[kept.len()])?;
    let lse = rows.logsumexp()?;
    Ok(lse.sub(picked)?.mean_all()?)
}

/// Binary cross-entropy from logits, stable form softplus(x) − x·y.
pub fn bce_from_logits<'t>(logits: Var<'t>, targets01: &Tensor) -> Result<Var<'t>, TrainError> {
    if targets01.data().iter().any(|&y| !(0.0..=1.0).contains(&y)) {
        return Err(TrainError::Config("bce targets must lie in [0, 1]".into()));
    }
    let y = logits.tape().input(targets01.clone());
    let loss = logits.softplus().sub(logits.mul(y)?)?;
    Ok(loss.mean_all()?)
}

/// Brier score: mean over rows of Σ (softmax(p) − onehot(y))².
pub fn brier<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>, TrainError> {
    let shape = logits.shape();
    let (n, m) = (shape[0], shape[1]);
    let mut onehot = Tensor::zeros(&[n, m]);
    for (i, &label) in labels.iter().enumerate() {
        if label >= m {
            return Err(TrainError::BadClassIndex {
                index: label,
                classes: m,
            });
        }
        onehot.set(&[i, label], 1.0);
    }
    let target = logits.tape().input(onehot);
    let probs = logits.softmax(1.0)?;
    Ok(probs.sub(target)?.square().sum_axes(&[1], false)?.mean_all()?)
}

/// Accuracy of argmax predictions against integer labels (not recorded).
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let (n, m) = (logits.shape()[0], logits.shape()[1]);
    let mut hits = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        let mut best = 0usize;
        for j in 1..m {
            if logits.at(&[i, j]) > logits.at(&[i, best]) {
                best = j;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Convenience: a fresh tape is rarely needed by callers, but tests that
/// only want a scalar value can use this.
pub fn eval_scalar(f: impl for<'t> FnOnce(&'t Tape) -> Result<Var<'t>, TrainError>) -> Result<f64, TrainError> {
    let tape = Tape::new();
    let v = f(&tape)?;
    Ok(v.value().item().map_err(ferrograd_core::AdError::Tensor)?)
}

// ── Target converters ───────────────────────────────────────────────

/// 0/1 labels to the ±1 convention hinge expects.
pub fn labels01_to_pm1(labels: &[f64]) -> Tensor {
    Tensor::new(
        vec![labels.len()],
        labels.iter().map(|&y| if y >= 0.5 { 1.0 } else { -1.0 }).collect(),
    )
    .expect("flat shape")
}

/// Class indices to one-hot rows (n, classes).
pub fn indices_to_onehot(labels: &[usize], classes: usize) -> Result<Tensor, TrainError> {
    let mut out = Tensor::zeros(&[labels.len(), classes]);
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(TrainError::BadClassIndex {
                index: label,
                classes,
            });
        }
        out.set(&[i, label], 1.0);
    }
    Ok(out)
}

/// ±1 targets back to class indices {0, 1}.
pub fn pm1_to_indices(targets: &Tensor) -> Vec<usize> {
    targets
        .data()
        .iter()
        .map(|&y| if y > 0.0 { 1 } else { 0 })
        .collect()
}
