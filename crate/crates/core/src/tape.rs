//! Tape-based reverse-mode automatic differentiation.
//!
//! Every primitive application appends one node holding the forward value
//! plus, per parent, the two closures demanded by reverse and forward mode:
//! a VJP mapping the node's adjoint to the parent's adjoint contribution,
//! and a JVP mapping the parent's tangent to the node's tangent
//! contribution. Parent ids are strictly smaller than the node's own id, so
//! the record order doubles as a topological order and the reverse pass is a
//! single right-to-left sweep.
//!
//! A tape is single-threaded while recording and during `backward`;
//! independent tapes may run on different threads and their gradient stores
//! can be merged additively.

use crate::error::AdError;
use crate::tensor::Tensor;
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// Index of a trainable parameter in its owning parameter set.
pub type ParamId = usize;

pub type VjpFn = Box<dyn Fn(&Tensor) -> Tensor>;
pub type JvpFn = Box<dyn Fn(&Tensor) -> Tensor>;

pub struct Parent {
    pub(crate) id: usize,
    pub(crate) vjp: VjpFn,
    pub(crate) jvp: JvpFn,
}

pub(crate) struct Node {
    pub(crate) value: Rc<Tensor>,
    pub(crate) parents: Vec<Parent>,
}

/// Recorded evaluation trace.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to one recorded value; cheap to copy.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(node);
        Var { tape: self, id }
    }

    /// Records a constant leaf (no gradient tracking).
    pub fn input(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            parents: vec![],
        })
    }

    /// Records a trainable leaf. Recording the same id twice returns the
    /// first leaf so weight sharing accumulates on one node. Ids must come
    /// from a single parameter set per tape; mixing id spaces aliases
    /// unrelated leaves.
    pub fn param(&self, id: ParamId, value: &Tensor) -> Var<'_> {
        if let Some(&node) = self.param_nodes.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let var = self.push(Node {
            value: Rc::new(value.clone()),
            parents: vec![],
        });
        self.param_nodes.borrow_mut().insert(id, var.id);
        var
    }

    /// Appends an already-computed primitive application. The extension
    /// point used by layer crates to register their own primitives.
    pub fn custom_op(&self, value: Tensor, parents: Vec<(Var<'_>, VjpFn, JvpFn)>) -> Var<'_> {
        let parents = parents
            .into_iter()
            .map(|(var, vjp, jvp)| {
                assert!(
                    std::ptr::eq(var.tape, self),
                    "operands must come from the same tape"
                );
                Parent {
                    id: var.id,
                    vjp,
                    jvp,
                }
            })
            .collect();
        self.push(Node {
            value: Rc::new(value),
            parents,
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn parent_count(&self, id: usize) -> usize {
        self.nodes.borrow()[id].parents.len()
    }

    pub(crate) fn parent_ids(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id]
            .parents
            .iter()
            .map(|p| p.id)
            .collect()
    }

    /// Generalized reverse sweep: seeds node `output` with `seed` and
    /// returns the adjoints of every node, indexed by node id.
    fn sweep(&self, output: Var<'_>, seed: Tensor) -> Result<Vec<Option<Tensor>>, AdError> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.id].value.shape().to_vec();
        if seed.shape() != out_shape.as_slice() {
            return Err(AdError::SeedShape {
                seed: seed.shape().to_vec(),
                out: out_shape,
            });
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; output.id + 1];
        adjoints[output.id] = Some(seed);
        for id in (0..=output.id).rev() {
            let adjoint = match adjoints[id].take() {
                Some(a) => a,
                None => continue,
            };
            for parent in &nodes[id].parents {
                let contribution = (parent.vjp)(&adjoint);
                match &mut adjoints[parent.id] {
                    Some(existing) => {
                        *existing = existing.add(&contribution)?;
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
            adjoints[id] = Some(adjoint);
        }
        Ok(adjoints)
    }

    /// Reverse pass from a scalar loss. Every registered parameter gets a
    /// gradient entry; parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: Var<'_>) -> Result<GradientStore, AdError> {
        let loss_value = self.value_of(loss.id);
        if loss_value.len() != 1 {
            return Err(AdError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let seed = Tensor::ones(loss_value.shape());
        let adjoints = self.sweep(loss, seed)?;
        let nodes = self.nodes.borrow();
        let mut store = GradientStore::new();
        for (&param, &node_id) in self.param_nodes.borrow().iter() {
            let grad = if node_id <= loss.id {
                adjoints[node_id]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(nodes[node_id].value.shape()))
            } else {
                Tensor::zeros(nodes[node_id].value.shape())
            };
            store.insert(param, grad);
        }
        Ok(store)
    }

    /// vᵀ∂f: adjoint of `wrt` after seeding `output` with `seed`.
    pub fn vjp(&self, output: Var<'_>, seed: &Tensor, wrt: Var<'_>) -> Result<Tensor, AdError> {
        let adjoints = self.sweep(output, seed.clone())?;
        let shape = self.value_of(wrt.id).shape().to_vec();
        Ok(adjoints
            .get(wrt.id)
            .cloned()
            .flatten()
            .unwrap_or_else(|| Tensor::zeros(&shape)))
    }

    /// ∂f·u: forward tangent propagation along the recorded trace, seeded
    /// at the given leaves. Uses the per-primitive JVP closures, not the
    /// transposed VJPs.
    pub fn jvp(&self, output: Var<'_>, seeds: &[(Var<'_>, Tensor)]) -> Result<Tensor, AdError> {
        let nodes = self.nodes.borrow();
        let mut tangents: Vec<Option<Tensor>> = vec![None; output.id + 1];
        for (var, tangent) in seeds {
            let shape = nodes[var.id].value.shape();
            if tangent.shape() != shape {
                return Err(AdError::SeedShape {
                    seed: tangent.shape().to_vec(),
                    out: shape.to_vec(),
                });
            }
            tangents[var.id] = Some(tangent.clone());
        }
        for id in 0..=output.id {
            if tangents[id].is_some() {
                continue; // seeded leaf
            }
            let mut acc: Option<Tensor> = None;
            for parent in &nodes[id].parents {
                if let Some(parent_tangent) = &tangents[parent.id] {
                    let contribution = (parent.jvp)(parent_tangent);
                    acc = Some(match acc {
                        Some(existing) => existing.add(&contribution)?,
                        None => contribution,
                    });
                }
            }
            tangents[id] = acc;
        }
        let out_shape = nodes[output.id].value.shape().to_vec();
        Ok(tangents[output.id]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&out_shape)))
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn node_id(&self) -> usize {
        self.id
    }

    pub fn parent_count(&self) -> usize {
        self.tape.parent_count(self.id)
    }

    pub fn parent_ids(&self) -> Vec<usize> {
        self.tape.parent_ids(self.id)
    }
}

/// Accumulated gradients keyed by parameter id. Uses additive merge so
/// weight sharing and cross-tape accumulation behave identically.
#[derive(Default, Debug, Clone)]
pub struct GradientStore {
    grads: std::collections::BTreeMap<ParamId, Tensor>,
}

impl GradientStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        match self.grads.get_mut(&id) {
            Some(existing) => {
                *existing = existing.add(&grad).expect("gradient shapes must agree");
            }
            None => {
                self.grads.insert(id, grad);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.grads.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Additive merge of gradients from another tape.
    pub fn merge(&mut self, other: &GradientStore) {
        for (id, grad) in other.iter() {
            self.insert(id, grad.clone());
        }
    }

    /// Global l2 norm over every stored gradient.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scales every gradient in place.
    pub fn scale_all(&mut self, factor: f64) {
        for grad in self.grads.values_mut() {
            *grad = grad.scale(factor);
        }
    }
}
