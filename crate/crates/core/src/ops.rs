//! Recorded primitives over tape variables.
//!
//! Each operation computes its forward value eagerly, then appends a node
//! carrying one VJP and one JVP closure per parent. The JVP rules are
//! written per primitive (dual propagation) rather than derived from the
//! VJPs, so forward mode acts as an independent cross-check of the reverse
//! rules.

use crate::error::{AdError, TensorError};
use crate::tape::{JvpFn, Var, VjpFn};
use crate::tensor::{broadcast_shapes, Tensor};
use std::rc::Rc;

/// Reduction flavors shared by axis reductions and scatter reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

impl<'t> Var<'t> {
    // ── Element-wise binary (broadcasting) ──────────────────────────

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let (a, b) = (self.value(), other.value());
        let out = a.add(&b)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let out_shape = out.shape().to_vec();
        let (osa, osb) = (out_shape.clone(), out_shape);
        Ok(self.tape().custom_op(
            out,
            vec![
                (
                    self,
                    reduce_vjp(sa.clone()),
                    Box::new(move |t: &Tensor| t.broadcast_to(&osa).expect("jvp add")),
                ),
                (
                    other,
                    reduce_vjp(sb.clone()),
                    Box::new(move |t: &Tensor| t.broadcast_to(&osb).expect("jvp add")),
                ),
            ],
        ))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let (a, b) = (self.value(), other.value());
        let out = a.sub(&b)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let out_shape = out.shape().to_vec();
        let (osa, osb) = (out_shape.clone(), out_shape);
        Ok(self.tape().custom_op(
            out,
            vec![
                (
                    self,
                    reduce_vjp(sa),
                    Box::new(move |t: &Tensor| t.broadcast_to(&osa).expect("jvp sub")),
                ),
                (
                    other,
                    Box::new(move |adj: &Tensor| {
                        adj.neg().reduce_to_shape(&sb).expect("vjp sub")
                    }),
                    Box::new(move |t: &Tensor| t.broadcast_to(&osb).expect("jvp sub").neg()),
                ),
            ],
        ))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let (a, b) = (self.value(), other.value());
        let out = a.mul(&b)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let (a1, b1) = (Rc::clone(&a), Rc::clone(&b));
        let (a2, b2) = (Rc::clone(&a), Rc::clone(&b));
        Ok(self.tape().custom_op(
            out,
            vec![
                (
                    self,
                    Box::new(move |adj: &Tensor| {
                        adj.mul(&b1)
                            .and_then(|g| g.reduce_to_shape(&sa))
                            .expect("vjp mul")
                    }),
                    Box::new(move |t: &Tensor| t.mul(&b2).expect("jvp mul")),
                ),
                (
                    other,
                    Box::new(move |adj: &Tensor| {
                        adj.mul(&a1)
                            .and_then(|g| g.reduce_to_shape(&sb))
                            .expect("vjp mul")
                    }),
                    Box::new(move |t: &Tensor| a2.mul(t).expect("jvp mul")),
                ),
            ],
        ))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let (a, b) = (self.value(), other.value());
        let out = a.div(&b)?;
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let (b1, b2) = (Rc::clone(&b), Rc::clone(&b));
        let (a1, b3) = (Rc::clone(&a), Rc::clone(&b));
        let (a2, b4) = (Rc::clone(&a), b);
        Ok(self.tape().custom_op(
            out,
            vec![
                (
                    self,
                    Box::new(move |adj: &Tensor| {
                        adj.div(&b1)
                            .and_then(|g| g.reduce_to_shape(&sa))
                            .expect("vjp div")
                    }),
                    Box::new(move |t: &Tensor| t.div(&b2).expect("jvp div")),
                ),
                (
                    other,
                    Box::new(move |adj: &Tensor| {
                        // -adj * a / b^2
                        adj.mul(&a1)
                            .and_then(|g| g.div(&b3.mul(&b3).expect("b*b")))
                            .map(|g| g.neg())
                            .and_then(|g| g.reduce_to_shape(&sb))
                            .expect("vjp div")
                    }),
                    Box::new(move |t: &Tensor| {
                        a2.mul(t)
                            .and_then(|g| g.div(&b4.mul(&b4).expect("b*b")))
                            .map(|g| g.neg())
                            .expect("jvp div")
                    }),
                ),
            ],
        ))
    }

    // ── Element-wise unary ──────────────────────────────────────────

    /// Records an element-wise map with its derivative; the VJP and JVP
    /// are both Hadamard products with the derivative evaluated at the
    /// input, so the full Jacobian is never materialized.
    pub fn unary_map(
        self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64) -> f64 + 'static,
    ) -> Var<'t> {
        let x = self.value();
        let out = x.map(&f);
        let deriv = x.map(df);
        let d1 = deriv.clone();
        self.tape().custom_op(
            out,
            vec![(
                self,
                Box::new(move |adj: &Tensor| adj.mul(&deriv).expect("vjp unary")) as VjpFn,
                Box::new(move |t: &Tensor| t.mul(&d1).expect("jvp unary")) as JvpFn,
            )],
        )
    }

    pub fn neg(self) -> Var<'t> {
        self.unary_map(|x| -x, |_| -1.0)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary_map(f64::exp, f64::exp)
    }

    pub fn ln(self) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let out = x.ln()?;
        let x1 = Rc::clone(&x);
        Ok(self.tape().custom_op(
            out,
            vec![(
                self,
                Box::new(move |adj: &Tensor| adj.div(&x).expect("vjp ln")),
                Box::new(move |t: &Tensor| t.div(&x1).expect("jvp ln")),
            )],
        ))
    }

    /// |x|; the derivative at exactly zero is taken as zero.
    pub fn abs(self) -> Var<'t> {
        self.unary_map(f64::abs, |x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary_map(move |x| x.powf(p), move |x| p * x.powf(p - 1.0))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary_map(f64::sqrt, |x| 0.5 / x.sqrt())
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary_map(move |x| c * x, move |_| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary_map(move |x| x + c, |_| 1.0)
    }

    pub fn square(self) -> Var<'t> {
        self.unary_map(|x| x * x, |x| 2.0 * x)
    }

    // ── Linear algebra ──────────────────────────────────────────────

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let (a, b) = (self.value(), other.value());
        let out = a.matmul(&b)?;
        let (a1, b1) = (Rc::clone(&a), Rc::clone(&b));
        let (a2, b2) = (a, b);
        Ok(self.tape().custom_op(
            out,
            vec![
                (
                    self,
                    Box::new(move |adj: &Tensor| {
                        adj.matmul(&b1.t().expect("t")).expect("vjp matmul lhs")
                    }),
                    Box::new(move |t: &Tensor| t.matmul(&b2).expect("jvp matmul lhs")),
                ),
                (
                    other,
                    Box::new(move |adj: &Tensor| {
                        a1.t().expect("t").matmul(adj).expect("vjp matmul rhs")
                    }),
                    Box::new(move |t: &Tensor| a2.matmul(t).expect("jvp matmul rhs")),
                ),
            ],
        ))
    }

    pub fn bmm(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let (a, b) = (self.value(), other.value());
        let out = a.bmm(&b)?;
        let (a1, b1) = (Rc::clone(&a), Rc::clone(&b));
        let (a2, b2) = (a, b);
        let swap = [0usize, 2, 1];
        Ok(self.tape().custom_op(
            out,
            vec![
                (
                    self,
                    Box::new(move |adj: &Tensor| {
                        adj.bmm(&b1.transpose(&swap).expect("t")).expect("vjp bmm")
                    }),
                    Box::new(move |t: &Tensor| t.bmm(&b2).expect("jvp bmm")),
                ),
                (
                    other,
                    Box::new(move |adj: &Tensor| {
                        a1.transpose(&swap).expect("t").bmm(adj).expect("vjp bmm")
                    }),
                    Box::new(move |t: &Tensor| a2.bmm(t).expect("jvp bmm")),
                ),
            ],
        ))
    }

    /// Sum of the element-wise product over all axes; scalar output.
    pub fn gdot(self, other: Var<'t>) -> Result<Var<'t>, AdError> {
        let (a, b) = (self.value(), other.value());
        let out = Tensor::scalar(a.gdot(&b)?);
        let (a1, b1) = (Rc::clone(&a), Rc::clone(&b));
        let (a2, b2) = (a, b);
        Ok(self.tape().custom_op(
            out,
            vec![
                (
                    self,
                    Box::new(move |adj: &Tensor| b1.scale(adj.data()[0])),
                    Box::new(move |t: &Tensor| Tensor::scalar(t.gdot(&b2).expect("jvp gdot"))),
                ),
                (
                    other,
                    Box::new(move |adj: &Tensor| a1.scale(adj.data()[0])),
                    Box::new(move |t: &Tensor| Tensor::scalar(a2.gdot(t).expect("jvp gdot"))),
                ),
            ],
        ))
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn reduce(
        self,
        kind: Reduction,
        axes: &[usize],
        keep_dims: bool,
    ) -> Result<Var<'t>, AdError> {
        let x = self.value();
        match kind {
            Reduction::Sum | Reduction::Mean => {
                let out = match kind {
                    Reduction::Sum => x.sum_axes(axes, keep_dims)?,
                    _ => x.mean_axes(axes, keep_dims)?,
                };
                let in_shape = x.shape().to_vec();
                let keep_shape = x.sum_axes(axes, true)?.shape().to_vec();
                let count: f64 = in_shape
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| axes.contains(i))
                    .map(|(_, &e)| e as f64)
                    .product();
                let factor = match kind {
                    Reduction::Sum => 1.0,
                    _ => 1.0 / count,
                };
                let (axes1, keep1, in1) = (axes.to_vec(), keep_shape.clone(), in_shape.clone());
                let keep2 = keep_shape;
                Ok(self.tape().custom_op(
                    out,
                    vec![(
                        self,
                        Box::new(move |adj: &Tensor| {
                            adj.reshape(&keep2)
                                .and_then(|a| a.broadcast_to(&in1))
                                .expect("vjp reduce")
                                .scale(factor)
                        }),
                        Box::new(move |t: &Tensor| {
                            let summed = t.sum_axes(&axes1, false).expect("jvp reduce");
                            let summed = if keep1.len() == t.rank() {
                                summed.reshape(&keep1).expect("reshape")
                            } else {
                                summed
                            };
                            summed.scale(factor)
                        }),
                    )],
                ))
            }
            Reduction::Max => {
                let out = x.max_axes(axes, keep_dims)?;
                // Route gradients to the first maximum of each group.
                let winners = Rc::new(argmax_map(&x, axes)?);
                let in_shape = x.shape().to_vec();
                let out_shape = out.shape().to_vec();
                let in_len = x.len();
                let (w1, w2) = (Rc::clone(&winners), winners);
                Ok(self.tape().custom_op(
                    out,
                    vec![(
                        self,
                        Box::new(move |adj: &Tensor| {
                            let mut grad = vec![0.0; in_len];
                            for (k, &src) in w1.iter().enumerate() {
                                grad[src] += adj.data()[k];
                            }
                            Tensor::new(in_shape.clone(), grad).expect("vjp max")
                        }),
                        Box::new(move |t: &Tensor| {
                            let data: Vec<f64> = w2.iter().map(|&src| t.data()[src]).collect();
                            Tensor::new(out_shape.clone(), data).expect("jvp max")
                        }),
                    )],
                ))
            }
        }
    }

    pub fn sum_axes(self, axes: &[usize], keep_dims: bool) -> Result<Var<'t>, AdError> {
        self.reduce(Reduction::Sum, axes, keep_dims)
    }

    pub fn mean_axes(self, axes: &[usize], keep_dims: bool) -> Result<Var<'t>, AdError> {
        self.reduce(Reduction::Mean, axes, keep_dims)
    }

    pub fn max_axes(self, axes: &[usize], keep_dims: bool) -> Result<Var<'t>, AdError> {
        self.reduce(Reduction::Max, axes, keep_dims)
    }

    /// Scalar sum over all axes.
    pub fn sum_all(self) -> Result<Var<'t>, AdError> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        let v = self.reduce(Reduction::Sum, &axes, false)?;
        Ok(v)
    }

    pub fn mean_all(self) -> Result<Var<'t>, AdError> {
        let axes: Vec<usize> = (0..self.value().rank()).collect();
        self.reduce(Reduction::Mean, &axes, false)
    }

    // ── Softmax family ──────────────────────────────────────────────

    /// Row-wise stable softmax over the last axis with a temperature.
    pub fn softmax(self, temperature: f64) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let y = x.softmax(temperature)?;
        let rows = *y.shape().last().unwrap_or(&1);
        let y1 = Rc::new(y.clone());
        let y2 = Rc::clone(&y1);
        let inv_t = 1.0 / temperature;
        Ok(self.tape().custom_op(
            y,
            vec![(
                self,
                Box::new(move |adj: &Tensor| softmax_backward(&y1, adj, rows, inv_t)),
                Box::new(move |t: &Tensor| softmax_backward(&y2, t, rows, inv_t)),
            )],
        ))
    }

    /// log Σ exp over the last axis, computed with a max shift.
    pub fn logsumexp(self) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let out = x.logsumexp()?;
        let soft = Rc::new(x.softmax(1.0)?);
        let soft1 = Rc::clone(&soft);
        let rank = x.rank();
        let keep_shape: Vec<usize> = {
            let mut s = x.shape().to_vec();
            if rank > 0 {
                s[rank - 1] = 1;
            }
            s
        };
        let last = rank.saturating_sub(1);
        Ok(self.tape().custom_op(
            out,
            vec![(
                self,
                Box::new(move |adj: &Tensor| {
                    adj.reshape(&keep_shape)
                        .and_then(|a| soft.mul(&a))
                        .expect("vjp logsumexp")
                }),
                Box::new(move |t: &Tensor| {
                    soft1
                        .mul(t)
                        .and_then(|p| p.sum_axes(&[last], false))
                        .expect("jvp logsumexp")
                }),
            )],
        ))
    }

    // ── Shape manipulation ──────────────────────────────────────────

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let out = x.reshape(shape)?;
        let orig = x.shape().to_vec();
        let new_shape = shape.to_vec();
        Ok(self.tape().custom_op(
            out,
            vec![(
                self,
                Box::new(move |adj: &Tensor| adj.reshape(&orig).expect("vjp reshape")),
                Box::new(move |t: &Tensor| t.reshape(&new_shape).expect("jvp reshape")),
            )],
        ))
    }

    pub fn transpose(self, perm: &[usize]) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let out = x.transpose(perm)?;
        let mut inverse = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let fwd = perm.to_vec();
        Ok(self.tape().custom_op(
            out,
            vec![(
                self,
                Box::new(move |adj: &Tensor| adj.transpose(&inverse).expect("vjp transpose")),
                Box::new(move |t: &Tensor| t.transpose(&fwd).expect("jvp transpose")),
            )],
        ))
    }

    pub fn t2(self) -> Result<Var<'t>, AdError> {
        self.transpose(&[1, 0])
    }

    pub fn slice(self, ranges: &[(usize, usize)]) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let out = x.slice(ranges)?;
        let in_shape = x.shape().to_vec();
        let r1 = ranges.to_vec();
        let r2 = ranges.to_vec();
        Ok(self.tape().custom_op(
            out,
            vec![(
                self,
                Box::new(move |adj: &Tensor| {
                    let mut grad = Tensor::zeros(&in_shape);
                    embed_slice(&mut grad, adj, &r1);
                    grad
                }),
                Box::new(move |t: &Tensor| t.slice(&r2).expect("jvp slice")),
            )],
        ))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>, AdError> {
        let first = parts.first().ok_or(TensorError::Empty { op: "concat" })?;
        let tape = first.tape();
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat(&refs, axis)?;
        let out_shape = out.shape().to_vec();
        let mut parents: Vec<(Var<'t>, VjpFn, JvpFn)> = Vec::with_capacity(parts.len());
        let mut offset = 0usize;
        for (part, value) in parts.iter().zip(&values) {
            let extent = value.shape()[axis];
            let ranges: Vec<(usize, usize)> = value
                .shape()
                .iter()
                .enumerate()
                .map(|(ax, &e)| {
                    if ax == axis {
                        (offset, offset + extent)
                    } else {
                        (0, e)
                    }
                })
                .collect();
            let r1 = ranges.clone();
            let out_shape1 = out_shape.clone();
            parents.push((
                *part,
                Box::new(move |adj: &Tensor| adj.slice(&ranges).expect("vjp concat")),
                Box::new(move |t: &Tensor| {
                    let mut out_t = Tensor::zeros(&out_shape1);
                    embed_slice(&mut out_t, t, &r1);
                    out_t
                }),
            ));
            offset += extent;
        }
        Ok(tape.custom_op(out, parents))
    }

    // ── Index-map gather and grouped scatter ────────────────────────

    /// Builds the output by reading one source element per output slot;
    /// `None` entries produce zeros (implicit zero padding). The VJP is
    /// the matching scatter-add, so padded slots drop their adjoint.
    pub fn gather_map(
        self,
        map: Rc<Vec<Option<usize>>>,
        out_shape: &[usize],
    ) -> Result<Var<'t>, AdError> {
        let x = self.value();
        let expected: usize = out_shape.iter().product();
        if map.len() != expected {
            return Err(AdError::Contract {
                op: "gather",
                reason: format!("index map has {} entries for {expected} slots", map.len()),
            });
        }
        let data: Vec<f64> = map
            .iter()
            .map(|slot| slot.map(|i| x.data()[i]).unwrap_or(0.0))
            .collect();
        let out = Tensor::new(out_shape.to_vec(), data)?;
        let in_shape = x.shape().to_vec();
        let in_len = x.len();
        let out_shape_v = out_shape.to_vec();
        let (m1, m2) = (Rc::clone(&map), map);
        Ok(self.tape().custom_op(
            out,
            vec![(
                self,
                Box::new(move |adj: &Tensor| {
                    let mut grad = vec![0.0; in_len];
                    for (k, slot) in m1.iter().enumerate() {
                        if let Some(i) = slot {
                            grad[*i] += adj.data()[k];
                        }
                    }
                    Tensor::new(in_shape.clone(), grad).expect("vjp gather")
                }),
                Box::new(move |t: &Tensor| {
                    let data: Vec<f64> = m2
                        .iter()
                        .map(|slot| slot.map(|i| t.data()[i]).unwrap_or(0.0))
                        .collect();
                    Tensor::new(out_shape_v.clone(), data).expect("jvp gather")
                }),
            )],
        ))
    }

    /// Grouped row reduction: row g of the output reduces the rows of a
    /// (n, c) input whose group id equals g.
    pub fn scatter_rows(
        self,
        groups: Rc<Vec<usize>>,
        num_groups: usize,
        kind: Reduction,
    ) -> Result<Var<'t>, AdError> {
        let x = self.value();
        if x.rank() != 2 {
            return Err(AdError::Contract {
                op: "scatter_reduce",
                reason: format!("expected rank-2 input, got shape {:?}", x.shape()),
            });
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        if groups.len() != n {
            return Err(AdError::Contract {
                op: "scatter_reduce",
                reason: format!("{} group ids for {n} rows", groups.len()),
            });
        }
        if let Some(&bad) = groups.iter().find(|&&g| g >= num_groups) {
            return Err(AdError::Contract {
                op: "scatter_reduce",
                reason: format!("group id {bad} out of range 0..{num_groups}"),
            });
        }
        let mut counts = vec![0usize; num_groups];
        for &g in groups.iter() {
            counts[g] += 1;
        }
        match kind {
            Reduction::Sum | Reduction::Mean => {
                let mut out = vec![0.0; num_groups * c];
                for (row, &g) in groups.iter().enumerate() {
                    for j in 0..c {
                        out[g * c + j] += x.data()[row * c + j];
                    }
                }
                if kind == Reduction::Mean {
                    for (g, chunk) in out.chunks_mut(c).enumerate() {
                        let denom = counts[g].max(1) as f64;
                        for v in chunk {
                            *v /= denom;
                        }
                    }
                }
                let out = Tensor::new(vec![num_groups, c], out)?;
                let scale: Vec<f64> = counts
                    .iter()
                    .map(|&cnt| match kind {
                        Reduction::Mean => 1.0 / cnt.max(1) as f64,
                        _ => 1.0,
                    })
                    .collect();
                let (g1, g2) = (Rc::clone(&groups), Rc::clone(&groups));
                let scale1 = scale.clone();
                Ok(self.tape().custom_op(
                    out,
                    vec![(
                        self,
                        Box::new(move |adj: &Tensor| {
                            let mut grad = vec![0.0; n * c];
                            for (row, &g) in g1.iter().enumerate() {
                                for j in 0..c {
                                    grad[row * c + j] = adj.data()[g * c + j] * scale[g];
                                }
                            }
                            Tensor::new(vec![n, c], grad).expect("vjp scatter")
                        }),
                        Box::new(move |t: &Tensor| {
                            let mut out_t = vec![0.0; num_groups * c];
                            for (row, &g) in g2.iter().enumerate() {
                                for j in 0..c {
                                    out_t[g * c + j] += t.data()[row * c + j] * scale1[g];
                                }
                            }
                            Tensor::new(vec![num_groups, c], out_t).expect("jvp scatter")
                        }),
                    )],
                ))
            }
            Reduction::Max => {
                if counts.iter().any(|&cnt| cnt == 0) {
                    return Err(AdError::Contract {
                        op: "scatter_reduce",
                        reason: "max reduction over an empty group".into(),
                    });
                }
                let mut out = vec![f64::NEG_INFINITY; num_groups * c];
                let mut winners = vec![0usize; num_groups * c];
                for (row, &g) in groups.iter().enumerate() {
                    for j in 0..c {
                        let v = x.data()[row * c + j];
                        if v > out[g * c + j] {
                            out[g * c + j] = v;
                            winners[g * c + j] = row * c + j;
                        }
                    }
                }
                let out = Tensor::new(vec![num_groups, c], out)?;
                let winners = Rc::new(winners);
                let (w1, w2) = (Rc::clone(&winners), winners);
                Ok(self.tape().custom_op(
                    out,
                    vec![(
                        self,
                        Box::new(move |adj: &Tensor| {
                            let mut grad = vec![0.0; n * c];
                            for (k, &src) in w1.iter().enumerate() {
                                grad[src] += adj.data()[k];
                            }
                            Tensor::new(vec![n, c], grad).expect("vjp scatter max")
                        }),
                        Box::new(move |t: &Tensor| {
                            let data: Vec<f64> = w2.iter().map(|&src| t.data()[src]).collect();
                            Tensor::new(vec![num_groups, c], data).expect("jvp scatter max")
                        }),
                    )],
                ))
            }
        }
    }

    /// Broadcast to a target shape as an explicit node.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'t>, AdError> {
        let x = self.value();
        broadcast_shapes(x.shape(), shape)?;
        let out = x.broadcast_to(shape)?;
        let in_shape = x.shape().to_vec();
        let target = shape.to_vec();
        Ok(self.tape().custom_op(
            out,
            vec![(
                self,
                Box::new(move |adj: &Tensor| {
                    adj.reduce_to_shape(&in_shape).expect("vjp broadcast")
                }),
                Box::new(move |t: &Tensor| t.broadcast_to(&target).expect("jvp broadcast")),
            )],
        ))
    }
}

fn reduce_vjp(target: Vec<usize>) -> VjpFn {
    Box::new(move |adj: &Tensor| adj.reduce_to_shape(&target).expect("vjp broadcast-reduce"))
}

/// For each output slot of a max reduction, the flat input index holding
/// the (first) maximum of the reduced group.
fn argmax_map(x: &Tensor, axes: &[usize]) -> Result<Vec<usize>, TensorError> {
    let rank = x.rank();
    for &ax in axes {
        if ax >= rank {
            return Err(TensorError::InvalidAxis { axis: ax, rank });
        }
    }
    let reduced: Vec<bool> = (0..rank).map(|ax| axes.contains(&ax)).collect();
    let out_shape: Vec<usize> = x
        .shape()
        .iter()
        .enumerate()
        .filter(|(i, _)| !reduced[*i])
        .map(|(_, &e)| e)
        .collect();
    let out_strides = crate::tensor::row_major_strides(&out_shape);
    let out_len: usize = out_shape.iter().product();
    let mut best = vec![f64::NEG_INFINITY; out_len];
    let mut winners = vec![0usize; out_len];
    let mut idx = vec![0usize; rank];
    for (flat, &v) in x.data().iter().enumerate() {
        let mut out_flat = 0usize;
        let mut out_ax = 0usize;
        for ax in 0..rank {
            if !reduced[ax] {
                out_flat += idx[ax] * out_strides[out_ax];
                out_ax += 1;
            }
        }
        if v > best[out_flat] {
            best[out_flat] = v;
            winners[out_flat] = flat;
        }
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < x.shape()[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Ok(winners)
}

fn softmax_backward(y: &Tensor, adj: &Tensor, row_len: usize, inv_t: f64) -> Tensor {
    // (y ⊙ (adj − ⟨adj, y⟩_row)) / T, per last-axis row.
    let mut out = vec![0.0; y.len()];
    for (row, (ys, adjs)) in y
        .data()
        .chunks(row_len)
        .zip(adj.data().chunks(row_len))
        .enumerate()
    {
        let dot: f64 = ys.iter().zip(adjs).map(|(a, b)| a * b).sum();
        for (j, (yv, av)) in ys.iter().zip(adjs).enumerate() {
            out[row * row_len + j] = yv * (av - dot) * inv_t;
        }
    }
    Tensor::new(y.shape().to_vec(), out).expect("softmax backward")
}

fn embed_slice(dst: &mut Tensor, src: &Tensor, ranges: &[(usize, usize)]) {
    let rank = dst.rank();
    let strides = dst.strides().to_vec();
    let src_shape = src.shape().to_vec();
    let mut idx = vec![0usize; rank];
    for flat in 0..src.len() {
        let mut dst_flat = 0usize;
        for ax in 0..rank {
            dst_flat += (ranges[ax].0 + idx[ax]) * strides[ax];
        }
        dst.data_mut()[dst_flat] = src.data()[flat];
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < src_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}
