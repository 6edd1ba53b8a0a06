//! Calibration diagnostics: reliability bins, expected calibration error,
//! and conformal threshold selection.

use crate::error::TrainError;
use ferrograd_core::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BinStat {
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub bins: Vec<BinStat>,
    pub ece: f64,
}

/// Equal-width bins on [0, 1]; ECE = Σ (|Bᵢ|/n)·|aᵢ − pᵢ| with empty bins
/// contributing zero.
pub fn calibration(
    confidences: &[f64],
    correct: &[bool],
    num_bins: usize,
) -> Result<CalibrationReport, TrainError> {
    if confidences.len() != correct.len() {
        return Err(TrainError::Config(format!(
            "{} confidences vs {} outcomes",
            confidences.len(),
            correct.len()
        )));
    }
    if num_bins == 0 {
        return Err(TrainError::Config("need at least one bin".into()));
    }
    if confidences.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
        return Err(TrainError::Config("confidences must lie in [0, 1]".into()));
    }
    let n = confidences.len();
    let mut counts = vec![0usize; num_bins];
    let mut conf_sums = vec![0.0; num_bins];
    let mut hit_sums = vec![0.0; num_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let bin = ((c * num_bins as f64) as usize).min(num_bins - 1);
        counts[bin] += 1;
        conf_sums[bin] += c;
        hit_sums[bin] += if ok { 1.0 } else { 0.0 };
    }
    let mut bins = Vec::with_capacity(num_bins);
    let mut ece = 0.0;
    for b in 0..num_bins {
        let (mean_confidence, accuracy) = if counts[b] > 0 {
            (
                conf_sums[b] / counts[b] as f64,
                hit_sums[b] / counts[b] as f64,
            )
        } else {
            (0.0, 0.0)
        };
        if counts[b] > 0 {
            ece += counts[b] as f64 / n as f64 * (accuracy - mean_confidence).abs();
        }
        bins.push(BinStat {
            count: counts[b],
            mean_confidence,
            accuracy,
        });
    }
    Ok(CalibrationReport { bins, ece })
}

/// Tightest score threshold whose prediction sets C(x) = {i : fᵢ(x) > γ}
/// keep the true class with empirical frequency at least 1 − α on the
/// calibration split. γ = 0 always satisfies coverage; the returned value
/// is the largest candidate (drawn from the observed true-class scores,
/// plus zero) that still does.
pub fn conformal_threshold(
    scores: &Tensor,
    labels: &[usize],
    alpha: f64,
) -> Result<f64, TrainError> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(TrainError::Config(format!("α must lie in (0, 1), got {alpha}")));
    }
    let (n, m) = (scores.shape()[0], scores.shape()[1]);
    if labels.len() != n {
        return Err(TrainError::Config(format!(
            "{} labels for {n} rows",
            labels.len()
        )));
    }
    let mut true_scores = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        if label >= m {
            return Err(TrainError::BadClassIndex {
                index: label,
                classes: m,
            });
        }
        true_scores.push(scores.at(&[i, label]));
    }
    let coverage = |gamma: f64| -> f64 {
        true_scores.iter().filter(|&&s| s > gamma).count() as f64 / n as f64
    };
    let mut candidates: Vec<f64> = true_scores.clone();
    candidates.push(0.0);
    candidates.sort_by(|a, b| b.total_cmp(a)); // descending
    for gamma in candidates {
        if coverage(gamma) >= 1.0 - alpha {
            return Ok(gamma);
        }
    }
    Ok(0.0)
}

/// Empirical coverage of the sets induced by γ.
pub fn conformal_coverage(scores: &Tensor, labels: &[usize], gamma: f64) -> f64 {
    let n = scores.shape()[0];
    let mut covered = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if scores.at(&[i, label]) > gamma {
            covered += 1;
        }
    }
    covered as f64 / n as f64
}
