//! Closed-form estimators: maximum likelihood for simple families and the
//! (regularized) least-squares normal equations.

use crate::error::TrainError;
use crate::loss;
use crate::optim::Sgd;
use ferrograd_core::{GradientStore, Tape, Tensor};
use ferrograd_nn::param::ParamSet;

/// Bernoulli MLE: the ratio of positive samples.
pub fn mle_bernoulli(samples: &[bool]) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::TooFewSamples { needed: 1, got: 0 });
    }
    Ok(samples.iter().filter(|&&b| b).count() as f64 / samples.len() as f64)
}

/// Gaussian MLE: sample mean and the biased (1/n) variance.
pub fn mle_gaussian(samples: &[f64]) -> Result<(f64, f64), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::TooFewSamples { needed: 1, got: 0 });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var))
}

/// Gaussian with Bessel's 1/(n−1) variance correction.
pub fn mle_gaussian_bessel(samples: &[f64]) -> Result<(f64, f64), TrainError> {
    if samples.len() < 2 {
        return Err(TrainError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let (mean, biased) = mle_gaussian(samples)?;
    let n = samples.len() as f64;
    Ok((mean, biased * n / (n - 1.0)))
}

/// Solves (XᵀX + λI) w = Xᵀy by Gaussian elimination with partial
/// pivoting — a linear solve, never an explicit inverse. A vanishing
/// pivot reports an ill-conditioned system and suggests λ > 0.
pub fn least_squares_closed_form(
    x: &Tensor,
    y: &Tensor,
    lambda: f64,
) -> Result<Tensor, TrainError> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    if y.shape() != [n] {
        return Err(TrainError::Config(format!(
            "{n} rows of X but targets have shape {:?}",
            y.shape()
        )));
    }
    let xt = x.t()?;
    let mut gram = xt.matmul(x)?;
    for i in 0..d {
        let v = gram.at(&[i, i]) + lambda;
        gram.set(&[i, i], v);
    }
    let rhs = xt.matmul(&y.reshape(&[n, 1])?)?;
    let w = solve_linear(&gram, &rhs)?;
    w.reshape(&[d]).map_err(TrainError::Tensor)
}

/// Dense linear solve (partial pivoting) for a (d, d) system with a
/// (d, 1) right-hand side.
pub fn solve_linear(a: &Tensor, b: &Tensor) -> Result<Tensor, TrainError> {
    let d = a.shape()[0];
    let mut m = a.clone();
    let mut rhs = b.clone();
    let scale = m
        .data()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
        .max(1.0);
    for col in 0..d {
        // Pivot selection.
        let mut pivot_row = col;
        for row in (col + 1)..d {
            if m.at(&[row, col]).abs() > m.at(&[pivot_row, col]).abs() {
                pivot_row = row;
            }
        }
        let pivot = m.at(&[pivot_row, col]);
        if pivot.abs() < 1e-10 * scale {
            return Err(TrainError::IllConditioned { pivot });
        }
        if pivot_row != col {
            for j in 0..d {
                let (a1, a2) = (m.at(&[col, j]), m.at(&[pivot_row, j]));
                m.set(&[col, j], a2);
                m.set(&[pivot_row, j], a1);
            }
            let (b1, b2) = (rhs.at(&[col, 0]), rhs.at(&[pivot_row, 0]));
            rhs.set(&[col, 0], b2);
            rhs.set(&[pivot_row, 0], b1);
        }
        for row in (col + 1)..d {
            let factor = m.at(&[row, col]) / m.at(&[col, col]);
            for j in col..d {
                let v = m.at(&[row, j]) - factor * m.at(&[col, j]);
                m.set(&[row, j], v);
            }
            let v = rhs.at(&[row, 0]) - factor * rhs.at(&[col, 0]);
            rhs.set(&[row, 0], v);
        }
    }
    // Back substitution.
    let mut w = Tensor::zeros(&[d, 1]);
    for row in (0..d).rev() {
        let mut acc = rhs.at(&[row, 0]);
        for j in (row + 1)..d {
            acc -= m.at(&[row, j]) * w.at(&[j, 0]);
        }
        w.set(&[row, 0], acc / m.at(&[row, row]));
    }
    Ok(w)
}

/// Full-batch gradient descent on ‖Xw − y‖² + λ‖w‖², driven through the
/// tape; converges to the normal-equations solution.
pub fn least_squares_gd(
    x: &Tensor,
    y: &Tensor,
    lambda: f64,
    lr: f64,
    steps: usize,
) -> Result<(Tensor, Vec<f64>), TrainError> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut ps = ParamSet::new();
    let w = ps.add("w", Tensor::zeros(&[d]))?;
    let mut opt = Sgd::new(lr);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let tape = Tape::new();
        let wv = ps.var(&tape, w);
        let pred = tape
            .input(x.clone())
            .matmul(wv.reshape(&[d, 1])?)?
            .reshape(&[n])?;
        let squared = pred
            .sub(tape.input(y.clone()))?
            .square()
            .sum_all()?;
        let ridge = wv.square().sum_all()?.scale(lambda);
        let total = squared.add(ridge)?;
        losses.push(total.value().item().map_err(ferrograd_core::AdError::Tensor)?);
        let grads: GradientStore = tape.backward(total)?;
        opt.step(&mut ps, &grads)?;
    }
    Ok((ps.value(w).clone(), losses))
}

/// Residual variance of a fitted linear model: the Gaussian MLE σ²
/// attached to least squares is the mean squared prediction error.
pub fn residual_variance(x: &Tensor, y: &Tensor, w: &Tensor) -> Result<f64, TrainError> {
    let n = x.shape()[0];
    let pred = x.matmul(&w.reshape(&[w.len(), 1])?)?.reshape(&[n])?;
    let residuals: Vec<f64> = pred
        .data()
        .iter()
        .zip(y.data())
        .map(|(p, t)| p - t)
        .collect();
    Ok(residuals.iter().map(|r| r * r).sum::<f64>() / n as f64)
}

pub use loss::accuracy;
