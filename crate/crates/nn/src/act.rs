//! Element-wise activation functions as recorded primitives.

use ferrograd_core::Var;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn gelu_scalar(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x.powi(3));
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_CUBIC * x.powi(3));
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Activation kinds with fixed hyper-parameters. The parametric ReLU has a
/// trainable slope and lives in `layers::PRelu` instead.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Softplus,
    Elu(f64),
    Gelu,
    Silu,
}

impl Activation {
    pub fn apply<'t>(&self, x: Var<'t>) -> Var<'t> {
        match *self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
            Activation::LeakyRelu(alpha) => x.leaky_relu(alpha),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => x.softplus(),
            Activation::Elu(alpha) => x.elu(alpha),
            Activation::Gelu => x.gelu(),
            Activation::Silu => x.silu(),
        }
    }
}

/// Extension methods on tape variables.
pub trait ActivationOps<'t> {
    /// max(0, x); the subgradient at exactly zero is fixed to zero.
    fn relu(self) -> Var<'t>;
    fn leaky_relu(self, alpha: f64) -> Var<'t>;
    fn sigmoid(self) -> Var<'t>;
    fn tanh(self) -> Var<'t>;
    fn softplus(self) -> Var<'t>;
    fn elu(self, alpha: f64) -> Var<'t>;
    /// tanh approximation of the Gaussian CDF gate.
    fn gelu(self) -> Var<'t>;
    fn silu(self) -> Var<'t>;
}

impl<'t> ActivationOps<'t> for Var<'t> {
    fn relu(self) -> Var<'t> {
        self.unary_map(|x| x.max(0.0), |x| if x > 0.0 { 1.0 } else { 0.0 })
    }

    fn leaky_relu(self, alpha: f64) -> Var<'t> {
        self.unary_map(
            move |x| if x > 0.0 { x } else { alpha * x },
            move |x| if x > 0.0 { 1.0 } else { alpha },
        )
    }

    fn sigmoid(self) -> Var<'t> {
        self.unary_map(sigmoid_scalar, |x| {
            let s = sigmoid_scalar(x);
            s * (1.0 - s)
        })
    }

    fn tanh(self) -> Var<'t> {
        self.unary_map(f64::tanh, |x| {
            let t = x.tanh();
            1.0 - t * t
        })
    }

    fn softplus(self) -> Var<'t> {
        self.unary_map(softplus_scalar, sigmoid_scalar)
    }

    fn elu(self, alpha: f64) -> Var<'t> {
        self.unary_map(
            move |x| if x > 0.0 { x } else { alpha * (x.exp() - 1.0) },
            move |x| if x > 0.0 { 1.0 } else { alpha * x.exp() },
        )
    }

    fn gelu(self) -> Var<'t> {
        self.unary_map(gelu_scalar, gelu_deriv)
    }

    fn silu(self) -> Var<'t> {
        self.unary_map(
            |x| x * sigmoid_scalar(x),
            |x| {
                let s = sigmoid_scalar(x);
                s + x * s * (1.0 - s)
            },
        )
    }
}
