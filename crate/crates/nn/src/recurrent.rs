//! Recurrent cells (Elman, Li-GRU), linear state-space models evaluated
//! sequentially or by associative parallel scan, and the SSM-as-convolution
//! view.
//!
//! States are column vectors (e, 1) initialized to zero. The scan combine
//! operator is (Z, z) ⋆ (V, v) = (VZ, Vz + v); prefixes of the SSM element
//! stream (A, Bxᵢ) are exactly (Aⁱ, sᵢ). The parallel schedule is a
//! balanced binary tree: ~2t combines, depth ⌈log₂ t⌉, with a fixed
//! combination order so results are bit-stable run to run.

use crate::act::{Activation, ActivationOps};
use crate::error::NnError;
use crate::layers::fan_in_uniform;
use crate::param::ParamSet;
use ferrograd_core::{ParamId, Tape, Tensor, Var};
use rand::Rng;

// ── Cells ───────────────────────────────────────────────────────────

pub trait RecurrentCell {
    fn state_width(&self) -> usize;
    fn input_width(&self) -> usize;
    /// One transition step: state and input are column vectors.
    fn step<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        state: Var<'t>,
        x: Var<'t>,
    ) -> Result<Var<'t>, NnError>;
}

/// Elman cell: f(s, x) = φ(As + Bx).
#[derive(Debug, Clone)]
pub struct ElmanCell {
    pub a: ParamId,
    pub b: ParamId,
    pub phi: Activation,
    pub state: usize,
    pub input: usize,
}

impl ElmanCell {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        state: usize,
        input: usize,
        phi: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        Ok(ElmanCell {
            a: ps.add(format!("{name}.a"), fan_in_uniform(&[state, state], state, rng))?,
            b: ps.add(format!("{name}.b"), fan_in_uniform(&[state, input], input, rng))?,
            phi,
            state,
            input,
        })
    }
}

impl RecurrentCell for ElmanCell {
    fn state_width(&self) -> usize {
        self.state
    }

    fn input_width(&self) -> usize {
        self.input
    }

    fn step<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        state: Var<'t>,
        x: Var<'t>,
    ) -> Result<Var<'t>, NnError> {
        let pre = ps
            .var(tape, self.a)
            .matmul(state)?
            .add(ps.var(tape, self.b).matmul(x)?)?;
        Ok(self.phi.apply(pre))
    }
}

/// Light gated recurrent unit: γ = σ(Vs + Ux),
/// f(s, x) = γ ⊙ φ(As + Bx) + (1 − γ) ⊙ s.
#[derive(Debug, Clone)]
pub struct LiGruCell {
    pub a: ParamId,
    pub b: ParamId,
    pub gate_v: ParamId,
    pub gate_u: ParamId,
    pub phi: Activation,
    pub state: usize,
    pub input: usize,
}

impl LiGruCell {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        state: usize,
        input: usize,
        phi: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        Ok(LiGruCell {
            a: ps.add(format!("{name}.a"), fan_in_uniform(&[state, state], state, rng))?,
            b: ps.add(format!("{name}.b"), fan_in_uniform(&[state, input], input, rng))?,
            gate_v: ps.add(
                format!("{name}.gate_v"),
                fan_in_uniform(&[state, state], state, rng),
            )?,
            gate_u: ps.add(
                format!("{name}.gate_u"),
                fan_in_uniform(&[state, input], input, rng),
            )?,
            phi,
            state,
            input,
        })
    }
}

impl RecurrentCell for LiGruCell {
    fn state_width(&self) -> usize {
        self.state
    }

    fn input_width(&self) -> usize {
        self.input
    }

    fn step<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        state: Var<'t>,
        x: Var<'t>,
    ) -> Result<Var<'t>, NnError> {
        let gate = ps
            .var(tape, self.gate_v)
            .matmul(state)?
            .add(ps.var(tape, self.gate_u).matmul(x)?)?
            .sigmoid();
        let candidate = self
            .phi
            .apply(ps.var(tape, self.a).matmul(state)?.add(ps.var(tape, self.b).matmul(x)?)?);
        let keep = gate.neg().add_scalar(1.0);
        Ok(gate.mul(candidate)?.add(keep.mul(state)?)?)
    }
}

/// Linear readout y = Cs + Dx.
#[derive(Debug, Clone)]
pub struct Readout {
    pub c: ParamId,
    pub d: ParamId,
    pub out: usize,
}

impl Readout {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        state: usize,
        input: usize,
        out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        Ok(Readout {
            c: ps.add(format!("{name}.c"), fan_in_uniform(&[out, state], state, rng))?,
            d: ps.add(format!("{name}.d"), fan_in_uniform(&[out, input], input, rng))?,
            out,
        })
    }

    pub fn apply<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        state: Var<'t>,
        x: Var<'t>,
    ) -> Result<Var<'t>, NnError> {
        Ok(ps
            .var(tape, self.c)
            .matmul(state)?
            .add(ps.var(tape, self.d).matmul(x)?)?)
    }
}

/// Sequential left-to-right evaluation over a (t, c) input; returns the
/// stacked states (t, e) and outputs (t, o).
pub fn rnn_scan<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    cell: &dyn RecurrentCell,
    readout: &Readout,
    xs: Var<'t>,
) -> Result<(Var<'t>, Var<'t>), NnError> {
    let shape = xs.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(NnError::Config(format!(
            "rnn_scan expects a non-empty (t, c) input, got {shape:?}"
        )));
    }
    let (t, c) = (shape[0], shape[1]);
    if c != cell.input_width() {
        return Err(NnError::WidthMismatch {
            layer: "rnn_scan",
            expected: cell.input_width(),
            actual: c,
        });
    }
    let e = cell.state_width();
    let mut state = tape.input(Tensor::zeros(&[e, 1]));
    let mut state_rows = Vec::with_capacity(t);
    let mut output_rows = Vec::with_capacity(t);
    for i in 0..t {
        let x = xs.slice(&[(i, i + 1), (0, c)])?.reshape(&[c, 1])?;
        state = cell.step(tape, ps, state, x)?;
        let y = readout.apply(tape, ps, state, x)?;
        state_rows.push(state.reshape(&[1, e])?);
        output_rows.push(y.t2()?);
    }
    Ok((
        Var::concat(&state_rows, 0)?,
        Var::concat(&output_rows, 0)?,
    ))
}

/// Bidirectional wrapper: a second parameter set runs right-to-left and the
/// per-position outputs concatenate to width 2o.
pub fn bidirectional_scan<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    forward: (&dyn RecurrentCell, &Readout),
    backward: (&dyn RecurrentCell, &Readout),
    xs: Var<'t>,
) -> Result<Var<'t>, NnError> {
    let shape = xs.shape();
    let (t, c) = (shape[0], shape[1]);
    let (_, out_fwd) = rnn_scan(tape, ps, forward.0, forward.1, xs)?;
    // Reverse the rows, scan, reverse back.
    let rev_map: Vec<Option<usize>> = (0..t)
        .rev()
        .flat_map(|i| (0..c).map(move |j| Some(i * c + j)))
        .collect();
    let reversed = xs.gather_map(std::rc::Rc::new(rev_map), &[t, c])?;
    let (_, out_bwd_rev) = rnn_scan(tape, ps, backward.0, backward.1, reversed)?;
    let o = out_bwd_rev.shape()[1];
    let unrev: Vec<Option<usize>> = (0..t)
        .rev()
        .flat_map(|i| (0..o).map(move |j| Some(i * o + j)))
        .collect();
    let out_bwd = out_bwd_rev.gather_map(std::rc::Rc::new(unrev), &[t, o])?;
    Ok(Var::concat(&[out_fwd, out_bwd], 1)?)
}

// ── Linear SSMs (tensor-level) ──────────────────────────────────────

/// Plain tensors for the classic SSM: s ← As + Bx, y = Cs + Dx.
#[derive(Debug, Clone)]
pub struct SsmMatrices {
    pub a: Tensor,
    pub b: Tensor,
    pub c: Tensor,
    pub d: Tensor,
}

/// Sequential linear SSM over (t, c); returns states (t, e), outputs (t, o).
pub fn linear_ssm_sequential(
    x: &Tensor,
    m: &SsmMatrices,
) -> Result<(Tensor, Tensor), NnError> {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    let e = m.a.shape()[0];
    let o = m.c.shape()[0];
    let mut state = Tensor::zeros(&[e, 1]);
    let mut states = Tensor::zeros(&[t, e]);
    let mut outputs = Tensor::zeros(&[t, o]);
    for i in 0..t {
        let xi = x.slice(&[(i, i + 1), (0, c)])?.t()?;
        state = m.a.matmul(&state)?.add(&m.b.matmul(&xi)?)?;
        let y = m.c.matmul(&state)?.add(&m.d.matmul(&xi)?)?;
        for j in 0..e {
            states.set(&[i, j], state.at(&[j, 0]));
        }
        for j in 0..o {
            outputs.set(&[i, j], y.at(&[j, 0]));
        }
    }
    Ok((states, outputs))
}

// ── Associative scan over (M, v) pairs ──────────────────────────────

/// Transition part of a scan element: a dense matrix or a diagonal.
#[derive(Debug, Clone)]
pub enum Transition {
    Dense(Tensor),
    Diag(Tensor),
}

impl Transition {
    fn apply(&self, v: &Tensor) -> Tensor {
        match self {
            Transition::Dense(m) => m
                .matmul(&v.reshape(&[v.len(), 1]).expect("column"))
                .expect("apply")
                .reshape(&[v.len()])
                .expect("flatten"),
            Transition::Diag(d) => d.mul(v).expect("diag apply"),
        }
    }

    fn compose_after(&self, first: &Transition) -> Transition {
        match (self, first) {
            (Transition::Dense(b), Transition::Dense(a)) => {
                Transition::Dense(b.matmul(a).expect("compose"))
            }
            (Transition::Diag(b), Transition::Diag(a)) => {
                Transition::Diag(b.mul(a).expect("compose"))
            }
            _ => panic!("mixed dense/diagonal scan elements"),
        }
    }
}

/// One element of the scan stream: the pair (M, v).
#[derive(Debug, Clone)]
pub struct ScanElement {
    pub m: Transition,
    pub v: Tensor,
}

impl ScanElement {
    pub fn new(m: Transition, v: Tensor) -> Self {
        ScanElement { m, v }
    }

    /// (Z, z) ⋆ (V, v) = (VZ, Vz + v); `self` is the earlier element.
    pub fn combine(&self, later: &ScanElement) -> ScanElement {
        ScanElement {
            m: later.m.compose_after(&self.m),
            v: later.m.apply(&self.v).add(&later.v).expect("combine"),
        }
    }
}

/// Sequential inclusive scan; the oracle for the parallel schedule.
pub fn sequential_scan(elems: &[ScanElement]) -> Vec<ScanElement> {
    let mut out: Vec<ScanElement> = Vec::with_capacity(elems.len());
    for e in elems {
        let next = match out.last() {
            Some(prev) => prev.combine(e),
            None => e.clone(),
        };
        out.push(next);
    }
    out
}

/// Work-efficient inclusive scan on a balanced binary tree: adjacent pairs
/// combine, the half-length stream scans recursively, and a final level
/// fills the odd positions.
pub fn parallel_scan(elems: &[ScanElement]) -> Vec<ScanElement> {
    let t = elems.len();
    if t <= 1 {
        return elems.to_vec();
    }
    // Level 1: pairwise combines (parallelizable within the level).
    let mut pairs = Vec::with_capacity(t / 2);
    for i in 0..t / 2 {
        pairs.push(elems[2 * i].combine(&elems[2 * i + 1]));
    }
    let pair_prefixes = parallel_scan(&pairs);
    let mut out = Vec::with_capacity(t);
    out.push(elems[0].clone());
    for i in 1..t {
        if i % 2 == 1 {
            out.push(pair_prefixes[i / 2].clone());
        } else {
            out.push(pair_prefixes[i / 2 - 1].combine(&elems[i]));
        }
    }
    out
}

/// SSM states for every prefix via the parallel scan: element i is
/// (A, Bxᵢ) and prefix i is (Aⁱ, sᵢ).
pub fn ssm_parallel_scan(
    x: &Tensor,
    transition: &Transition,
    b: &Tensor,
) -> Result<Tensor, NnError> {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    let e = b.shape()[0];
    let mut elems = Vec::with_capacity(t);
    for i in 0..t {
        let xi = x.slice(&[(i, i + 1), (0, c)])?.t()?;
        let bx = b.matmul(&xi)?.reshape(&[e])?;
        elems.push(ScanElement::new(transition.clone(), bx));
    }
    let prefixes = parallel_scan(&elems);
    let mut states = Tensor::zeros(&[t, e]);
    for (i, p) in prefixes.iter().enumerate() {
        for j in 0..e {
            states.set(&[i, j], p.v.at(&[j]));
        }
    }
    Ok(states)
}

/// Materializes the long-convolution kernel stack(A^{t−1}B, …, AB, B).
pub fn ssm_to_conv_kernel(a: &Tensor, b: &Tensor, t: usize) -> Result<Vec<Tensor>, NnError> {
    let mut kernel = vec![b.clone()];
    let mut power = b.clone();
    for _ in 1..t {
        power = a.matmul(&power)?;
        kernel.push(power.clone());
    }
    kernel.reverse(); // index 0 holds A^{t−1}B
    Ok(kernel)
}

/// Evaluates the SSM state sequence through the materialized kernel:
/// sᵢ = Σⱼ kernel[t−1−(i−j)] xⱼ.
pub fn ssm_conv_eval(x: &Tensor, kernel: &[Tensor]) -> Result<Tensor, NnError> {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    let e = kernel[0].shape()[0];
    let mut states = Tensor::zeros(&[t, e]);
    for i in 0..t {
        for j in 0..=i {
            let tap = &kernel[t - 1 - (i - j)];
            let xj = x.slice(&[(j, j + 1), (0, c)])?.t()?;
            let contrib = tap.matmul(&xj)?;
            for z in 0..e {
                let v = states.at(&[i, z]) + contrib.at(&[z, 0]);
                states.set(&[i, z], v);
            }
        }
    }
    Ok(states)
}

// ── Diagonal SSM (recorded, trainable) ──────────────────────────────

/// Diagonal SSM with tanh-bounded eigenvalues: λ = (1 − 1e-9)·tanh(λ_raw)
/// keeps every |λᵢ| strictly below 1 even where f64 tanh saturates, so
/// long-run dynamics stay bounded. Evaluation runs the recorded parallel
/// scan.
#[derive(Debug, Clone)]
pub struct DiagSsm {
    pub lambda_raw: ParamId,
    pub b: ParamId,
    pub c: ParamId,
    pub d: ParamId,
    pub state: usize,
    pub input: usize,
    pub output: usize,
}

impl DiagSsm {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        state: usize,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        Ok(DiagSsm {
            lambda_raw: ps.add(
                format!("{name}.lambda_raw"),
                Tensor::rand_uniform(&[state], -1.0, 1.0, rng),
            )?,
            b: ps.add(format!("{name}.b"), fan_in_uniform(&[state, input], input, rng))?,
            c: ps.add(
                format!("{name}.c"),
                fan_in_uniform(&[output, state], state, rng),
            )?,
            d: ps.add(
                format!("{name}.d"),
                fan_in_uniform(&[output, input], input, rng),
            )?,
            state,
            input,
            output,
        })
    }

    pub fn lambda(&self, ps: &ParamSet) -> Tensor {
        ps.value(self.lambda_raw)
            .map(|x| x.tanh() * EIGENVALUE_MARGIN)
    }

    /// Recorded forward pass over a (t, c) input; outputs (t, o). The
    /// state stream is computed by the same balanced-tree schedule as the
    /// tensor-level scan, so gradients flow through log-depth combines.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        x: &Tensor,
    ) -> Result<Var<'t>, NnError> {
        let (t, c) = (x.shape()[0], x.shape()[1]);
        if c != self.input {
            return Err(NnError::WidthMismatch {
                layer: "diag_ssm",
                expected: self.input,
                actual: c,
            });
        }
        let e = self.state;
        let lambda = ps
            .var(tape, self.lambda_raw)
            .tanh()
            .scale(EIGENVALUE_MARGIN);
        let xs = tape.input(x.clone());
        // U = X Bᵀ, one row per step.
        let u = xs.matmul(ps.var(tape, self.b).t2()?)?;
        let mut elems: Vec<(Var<'t>, Var<'t>)> = Vec::with_capacity(t);
        for i in 0..t {
            let v = u.slice(&[(i, i + 1), (0, e)])?.reshape(&[e])?;
            elems.push((lambda, v));
        }
        let prefixes = recorded_diag_scan(&elems)?;
        let rows: Vec<Var<'t>> = prefixes
            .iter()
            .map(|(_, v)| v.reshape(&[1, e]))
            .collect::<Result<_, _>>()?;
        let states = Var::concat(&rows, 0)?;
        let y = states
            .matmul(ps.var(tape, self.c).t2()?)?
            .add(xs.matmul(ps.var(tape, self.d).t2()?)?)?;
        Ok(y)
    }
}

const EIGENVALUE_MARGIN: f64 = 1.0 - 1e-9;

type DiagElem<'t> = (Var<'t>, Var<'t>);

fn combine_diag<'t>(first: &DiagElem<'t>, later: &DiagElem<'t>) -> Result<DiagElem<'t>, NnError> {
    let m = later.0.mul(first.0)?;
    let v = later.0.mul(first.1)?.add(later.1)?;
    Ok((m, v))
}

/// The balanced-tree scan over recorded diagonal elements.
fn recorded_diag_scan<'t>(elems: &[DiagElem<'t>]) -> Result<Vec<DiagElem<'t>>, NnError> {
    let t = elems.len();
    if t <= 1 {
        return Ok(elems.to_vec());
    }
    let mut pairs = Vec::with_capacity(t / 2);
    for i in 0..t / 2 {
        pairs.push(combine_diag(&elems[2 * i], &elems[2 * i + 1])?);
    }
    let pair_prefixes = recorded_diag_scan(&pairs)?;
    let mut out = Vec::with_capacity(t);
    out.push(elems[0]);
    for i in 1..t {
        if i % 2 == 1 {
            out.push(pair_prefixes[i / 2]);
        } else {
            out.push(combine_diag(&pair_prefixes[i / 2 - 1], &elems[i])?);
        }
    }
    Ok(out)
}
