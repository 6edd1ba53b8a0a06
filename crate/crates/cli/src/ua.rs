//! One-dimensional universal-approximation constructor: a one-hidden-layer
//! network of 2m steep sigmoid units whose weights are set analytically,
//! two units per bin. Bin i is centered at the midpoint of the i-th of m
//! equal cells of [lo, hi]; its amplitude is the bin average of the target
//! computed by midpoint quadrature.

use ferrograd_nn::act::sigmoid_scalar;

#[derive(Debug, Clone, Copy)]
pub struct UaBinSpec {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
    /// Slope constant w; large values sharpen each unit into a step.
    pub slope: f64,
    /// Midpoint-quadrature points per bin for the amplitude integral.
    pub quadrature: usize,
}

impl UaBinSpec {
    pub fn new(bins: usize, lo: f64, hi: f64) -> Self {
        UaBinSpec {
            bins,
            lo,
            hi,
            slope: 1e4,
            quadrature: 128,
        }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }
}

/// The assembled model: per bin, an amplitude and a center; every unit
/// shares the slope. Equivalent to a dense 1 → 2m sigmoid layer followed
/// by a ±amplitude linear readout.
#[derive(Debug, Clone)]
pub struct UaModel {
    pub amplitudes: Vec<f64>,
    pub centers: Vec<f64>,
    pub delta: f64,
    pub slope: f64,
}

impl UaModel {
    pub fn hidden_units(&self) -> usize {
        2 * self.amplitudes.len()
    }

    /// f(x) = Σᵢ aᵢ·[σ(w(x − (cᵢ − Δ/2))) − σ(w(x − (cᵢ + Δ/2)))].
    pub fn eval(&self, x: f64) -> f64 {
        let half = self.delta / 2.0;
        self.amplitudes
            .iter()
            .zip(&self.centers)
            .map(|(&a, &c)| {
                a * (sigmoid_scalar(self.slope * (x - (c - half)))
                    - sigmoid_scalar(self.slope * (x - (c + half))))
            })
            .sum()
    }

    /// The explicit layer parameters: hidden weights (all `slope`), hidden
    /// biases −w·sᵤ for the 2m shift points, and the ±aᵢ output weights.
    pub fn layer_parameters(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let half = self.delta / 2.0;
        let mut weights = Vec::with_capacity(self.hidden_units());
        let mut biases = Vec::with_capacity(self.hidden_units());
        let mut output = Vec::with_capacity(self.hidden_units());
        for (&a, &c) in self.amplitudes.iter().zip(&self.centers) {
            for (shift, sign) in [(c - half, 1.0), (c + half, -1.0)] {
                weights.push(self.slope);
                biases.push(-self.slope * shift);
                output.push(sign * a);
            }
        }
        (weights, biases, output)
    }
}

/// Sets the weights analytically: no training happens anywhere here.
pub fn ua_construct(target: impl Fn(f64) -> f64, spec: &UaBinSpec) -> UaModel {
    let m = spec.bins;
    let delta = spec.width();
    let mut amplitudes = Vec::with_capacity(m);
    let mut centers = Vec::with_capacity(m);
    for i in 0..m {
        let center = spec.lo + (i as f64 + 0.5) * delta;
        let lo = center - delta / 2.0;
        let q = spec.quadrature.max(1);
        let step = delta / q as f64;
        let average = (0..q)
            .map(|k| target(lo + (k as f64 + 0.5) * step))
            .sum::<f64>()
            / q as f64;
        amplitudes.push(average);
        centers.push(center);
    }
    UaModel {
        amplitudes,
        centers,
        delta,
        slope: spec.slope,
    }
}

/// Cell-midpoint evaluation grid over [lo, hi].
pub fn midpoint_grid(lo: f64, hi: f64, cells: usize) -> Vec<f64> {
    let step = (hi - lo) / cells as f64;
    (0..cells).map(|i| lo + (i as f64 + 0.5) * step).collect()
}

/// Mean squared error of the model against the target over a grid.
pub fn ua_mse(model: &UaModel, target: impl Fn(f64) -> f64, grid: &[f64]) -> f64 {
    grid.iter()
        .map(|&x| {
            let err = model.eval(x) - target(x);
            err * err
        })
        .sum::<f64>()
        / grid.len() as f64
}

/// The running example target sin(x)/x, continuously extended at 0.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}
