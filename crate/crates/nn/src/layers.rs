//! Dense layers, gates, dropout, normalization, residual wrappers, and
//! embeddings, all expressed over recorded primitives.

use crate::act::Activation;
use crate::error::NnError;
use crate::param::ParamSet;
use ferrograd_core::{ParamId, Tape, Tensor, Var};
use rand::Rng;
use std::rc::Rc;

/// Fan-in uniform initialization on ±sqrt(1/c).
pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// Fully-connected layer: φ(XW + b).
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_width: usize,
    pub out_width: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_width: usize,
        out_width: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let w = ps.add(
            format!("{name}.w"),
            fan_in_uniform(&[in_width, out_width], in_width, rng),
        )?;
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[out_width]))?;
        Ok(Dense {
            w,
            b,
            in_width,
            out_width,
            activation,
        })
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        x: Var<'t>,
    ) -> Result<Var<'t>, NnError> {
        let width = *x.shape().last().unwrap_or(&0);
        if width != self.in_width {
            return Err(NnError::WidthMismatch {
                layer: "dense",
                expected: self.in_width,
                actual: width,
            });
        }
        let w = ps.var(tape, self.w);
        let b = ps.var(tape, self.b);
        let affine = x.matmul(w)?.add(b)?;
        Ok(self.activation.apply(affine))
    }

    /// (c + 1)·c′ trainable scalars.
    pub fn param_count(&self) -> usize {
        (self.in_width + 1) * self.out_width
    }
}

/// Parametric ReLU with one trainable slope per unit:
/// x ↦ max(x, 0) − a ⊙ max(−x, 0).
#[derive(Debug, Clone)]
pub struct PRelu {
    pub slope: ParamId,
}

impl PRelu {
    pub fn new(ps: &mut ParamSet, name: &str, width: usize) -> Result<Self, NnError> {
        let slope = ps.add(format!("{name}.slope"), Tensor::full(&[width], 0.01))?;
        Ok(PRelu { slope })
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        x: Var<'t>,
    ) -> Result<Var<'t>, NnError> {
        use crate::act::ActivationOps;
        let a = ps.var(tape, self.slope);
        let positive = x.relu();
        let negative = x.neg().relu().mul(a)?;
        Ok(positive.sub(negative)?)
    }
}

/// Gated linear unit: σ(XW₁) ⊙ (XW₂).
#[derive(Debug, Clone)]
pub struct Glu {
    pub w_gate: ParamId,
    pub w_value: ParamId,
    pub width: usize,
}

impl Glu {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_width: usize,
        out_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let w_gate = ps.add(
            format!("{name}.w_gate"),
            fan_in_uniform(&[in_width, out_width], in_width, rng),
        )?;
        let w_value = ps.add(
            format!("{name}.w_value"),
            fan_in_uniform(&[in_width, out_width], in_width, rng),
        )?;
        Ok(Glu {
            w_gate,
            w_value,
            width: in_width,
        })
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        x: Var<'t>,
    ) -> Result<Var<'t>, NnError> {
        use crate::act::ActivationOps;
        let width = *x.shape().last().unwrap_or(&0);
        if width != self.width {
            return Err(NnError::WidthMismatch {
                layer: "glu",
                expected: self.width,
                actual: width,
            });
        }
        let gate = x.matmul(ps.var(tape, self.w_gate))?.sigmoid();
        let value = x.matmul(ps.var(tape, self.w_value))?;
        Ok(gate.mul(value)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
    /// Monte Carlo inference: the mean of k masked forward passes.
    MonteCarlo(usize),
}

/// Inverted dropout with keep-probability `p`: training scales kept units
/// by 1/p so evaluation is the identity.
pub fn dropout<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    keep_p: f64,
    mode: DropoutMode,
    rng: &mut impl Rng,
) -> Result<Var<'t>, NnError> {
    if !(0.0 < keep_p && keep_p <= 1.0) {
        return Err(NnError::Config(format!(
            "keep probability must lie in (0, 1], got {keep_p}"
        )));
    }
    let shape = x.shape();
    let masked = |tape: &'t Tape, x: Var<'t>, rng: &mut dyn rand::RngCore| {
        let mask = Tensor::from_fn(&shape, |_| {
            if rng.gen_bool(keep_p) {
                1.0 / keep_p
            } else {
                0.0
            }
        });
        let m = tape.input(mask);
        x.mul(m)
    };
    match mode {
        DropoutMode::Eval => Ok(x),
        DropoutMode::Train => Ok(masked(tape, x, rng)?),
        DropoutMode::MonteCarlo(k) => {
            let k = k.max(1);
            let mut acc = masked(tape, x, rng)?;
            for _ in 1..k {
                acc = acc.add(masked(tape, x, rng)?)?;
            }
            Ok(acc.scale(1.0 / k as f64))
        }
    }
}

/// Batch normalization over the rows of an (n, c) activation matrix.
///
/// Train mode standardizes with biased batch statistics and updates the
/// running stats by an exponential moving average with factor `momentum`.
/// Eval mode is a deterministic per-row function of the frozen stats.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub alpha: ParamId,
    pub beta: ParamId,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub eps: f64,
    pub width: usize,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamSet, name: &str, width: usize) -> Result<Self, NnError> {
        let alpha = ps.add(format!("{name}.alpha"), Tensor::ones(&[width]))?;
        let beta = ps.add(format!("{name}.beta"), Tensor::zeros(&[width]))?;
        Ok(BatchNorm {
            alpha,
            beta,
            running_mean: Tensor::zeros(&[width]),
            running_var: Tensor::ones(&[width]),
            momentum: 0.01,
            eps: 1e-5,
            width,
        })
    }

    pub fn forward_train<'t>(
        &mut self,
        tape: &'t Tape,
        ps: &ParamSet,
        x: Var<'t>,
    ) -> Result<Var<'t>, NnError> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.width {
            return Err(NnError::WidthMismatch {
                layer: "batch_norm",
                expected: self.width,
                actual: *shape.last().unwrap_or(&0),
            });
        }
        if shape[0] < 2 {
            return Err(NnError::BatchTooSmall(shape[0]));
        }
        let mean = x.mean_axes(&[0], true)?;
        let centered = x.sub(mean)?;
        let variance = centered.square().mean_axes(&[0], true)?;
        let xhat = centered.div(variance.add_scalar(self.eps).sqrt())?;
        let out = xhat
            .mul(ps.var(tape, self.alpha))?
            .add(ps.var(tape, self.beta))?;
        // EMA update of the frozen statistics (buffers, not gradients).
        let batch_mean = mean.value().reshape(&[self.width])?;
        let batch_var = variance.value().reshape(&[self.width])?;
        self.running_mean = self
            .running_mean
            .scale(1.0 - self.momentum)
            .add(&batch_mean.scale(self.momentum))?;
        self.running_var = self
            .running_var
            .scale(1.0 - self.momentum)
            .add(&batch_var.scale(self.momentum))?;
        Ok(out)
    }

    pub fn forward_eval<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        x: Var<'t>,
    ) -> Result<Var<'t>, NnError> {
        let mean = tape.input(self.running_mean.clone());
        let std = tape.input(self.running_var.add_scalar(self.eps).sqrt());
        let xhat = x.sub(mean)?.div(std)?;
        Ok(xhat
            .mul(ps.var(tape, self.alpha))?
            .add(ps.var(tape, self.beta))?)
    }
}

/// Per-sample standardization over the trailing `normalized_rank` axes,
/// followed by the α, β affine map (parameters shaped like those axes).
pub fn layer_norm<'t>(
    x: Var<'t>,
    normalized_rank: usize,
    alpha: Var<'t>,
    beta: Var<'t>,
    eps: f64,
) -> Result<Var<'t>, NnError> {
    let rank = x.shape().len();
    if normalized_rank == 0 || normalized_rank > rank {
        return Err(NnError::Config(format!(
            "layer_norm: cannot normalize {normalized_rank} trailing axes of a rank-{rank} input"
        )));
    }
    let norm_shape: Vec<usize> = x.shape()[rank - normalized_rank..].to_vec();
    if alpha.shape() != norm_shape || beta.shape() != norm_shape {
        return Err(NnError::Config(format!(
            "layer_norm: affine parameters must have shape {norm_shape:?}"
        )));
    }
    let axes: Vec<usize> = (rank - normalized_rank..rank).collect();
    let mean = x.mean_axes(&axes, true)?;
    let centered = x.sub(mean)?;
    let variance = centered.square().mean_axes(&axes, true)?;
    let xhat = centered.div(variance.add_scalar(eps).sqrt())?;
    Ok(xhat.mul(alpha)?.add(beta)?)
}

/// RMS normalization over the last axis: x / sqrt(mean(x²) + ε) ⊙ α.
pub fn rms_norm<'t>(x: Var<'t>, alpha: Var<'t>, eps: f64) -> Result<Var<'t>, NnError> {
    let rank = x.shape().len();
    let last = rank - 1;
    let ms = x.square().mean_axes(&[last], true)?;
    Ok(x.div(ms.add_scalar(eps).sqrt())?.mul(alpha)?)
}

/// Residual wrapper: f(x) + x. The backward pass adds the unmodified
/// adjoint through the identity branch.
pub fn residual<'t, F>(x: Var<'t>, f: F) -> Result<Var<'t>, NnError>
where
    F: FnOnce(Var<'t>) -> Result<Var<'t>, NnError>,
{
    let fx = f(x)?;
    if fx.shape() != x.shape() {
        return Err(NnError::Config(format!(
            "residual: inner block changed shape {:?} -> {:?}; supply a projection adapter",
            x.shape(),
            fx.shape()
        )));
    }
    Ok(fx.add(x)?)
}

/// Row gather from an embedding table; the backward pass scatters adjoint
/// rows additively, so repeated ids accumulate.
pub fn embedding_lookup<'t>(
    ids: &[usize],
    table: Var<'t>,
) -> Result<Var<'t>, NnError> {
    let shape = table.shape();
    let (vocab, width) = (shape[0], shape[1]);
    let mut map = Vec::with_capacity(ids.len() * width);
    for &id in ids {
        if id >= vocab {
            return Err(NnError::Vocabulary { id, vocab });
        }
        for j in 0..width {
            map.push(Some(id * width + j));
        }
    }
    Ok(table.gather_map(Rc::new(map), &[ids.len(), width])?)
}
