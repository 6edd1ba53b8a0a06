//! Sparse graph representations, adjacency/Laplacian algebra, graph
//! convolution and attention layers, message passing, scatter reductions,
//! block-diagonal batching, and random-walk structural embeddings.
//!
//! COO is the only sparse format; dense conversions exist in oracles only.

use crate::act::{Activation, ActivationOps};
use crate::error::NnError;
use crate::layers::fan_in_uniform;
use crate::param::ParamSet;
use ferrograd_core::{ParamId, Reduction, Tape, Tensor, Var};
use rand::Rng;
use std::collections::HashSet;
use std::rc::Rc;

/// Node features plus a COO edge list. Undirected construction stores both
/// (i, j) and (j, i); `graph_id` assigns each node to a graph of the batch.
#[derive(Debug, Clone)]
pub struct SparseGraph {
    pub x: Tensor,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Option<Tensor>,
    pub graph_id: Vec<usize>,
}

impl SparseGraph {
    pub fn num_nodes(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn feature_width(&self) -> usize {
        self.x.shape()[1]
    }

    pub fn num_graphs(&self) -> usize {
        self.graph_id.iter().copied().max().map_or(1, |m| m + 1)
    }

    /// Directed construction: edges used exactly as given.
    pub fn directed(x: Tensor, edges: Vec<(usize, usize)>) -> Result<Self, NnError> {
        let n = x.shape()[0];
        for &(s, d) in &edges {
            if s >= n || d >= n {
                return Err(NnError::Config(format!(
                    "edge ({s}, {d}) references a node outside 0..{n}"
                )));
            }
        }
        Ok(SparseGraph {
            graph_id: vec![0; n],
            x,
            edges,
            edge_features: None,
        })
    }

    /// Undirected construction: both orientations of every pair are stored.
    pub fn undirected(x: Tensor, pairs: &[(usize, usize)]) -> Result<Self, NnError> {
        let mut seen = HashSet::new();
        let mut edges = Vec::with_capacity(pairs.len() * 2);
        for &(a, b) in pairs {
            for (s, d) in [(a, b), (b, a)] {
                if seen.insert((s, d)) {
                    edges.push((s, d));
                }
            }
        }
        Self::directed(x, edges)
    }

    /// Adds (i, i) for every node; idempotent.
    pub fn with_self_loops(mut self) -> Self {
        let present: HashSet<(usize, usize)> = self.edges.iter().copied().collect();
        for i in 0..self.num_nodes() {
            if !present.contains(&(i, i)) {
                self.edges.push((i, i));
            }
        }
        self
    }

    pub fn has_self_loop(&self, node: usize) -> bool {
        self.edges.contains(&(node, node))
    }

    /// Row sums of the adjacency matrix.
    pub fn degree(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.num_nodes()];
        for &(s, _) in &self.edges {
            d[s] += 1.0;
        }
        d
    }

    /// In-degree (column sums); equal to `degree` for undirected graphs.
    pub fn in_degree(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.num_nodes()];
        for &(_, dst) in &self.edges {
            d[dst] += 1.0;
        }
        d
    }

    /// Dense adjacency; oracle use only.
    pub fn dense_adjacency(&self) -> Tensor {
        let n = self.num_nodes();
        let mut a = Tensor::zeros(&[n, n]);
        for &(s, d) in &self.edges {
            a.set(&[s, d], 1.0);
        }
        a
    }

    /// Applies a node permutation: features, edges, and graph ids move
    /// together (PX, PAPᵀ). `perm[i]` is the new position of node i.
    pub fn permute(&self, perm: &[usize]) -> Result<Self, NnError> {
        let n = self.num_nodes();
        let mut x = Tensor::zeros(&[n, self.feature_width()]);
        let mut graph_id = vec![0; n];
        for i in 0..n {
            graph_id[perm[i]] = self.graph_id[i];
            for j in 0..self.feature_width() {
                x.set(&[perm[i], j], self.x.at(&[i, j]));
            }
        }
        Ok(SparseGraph {
            x,
            edges: self
                .edges
                .iter()
                .map(|&(s, d)| (perm[s], perm[d]))
                .collect(),
            edge_features: self.edge_features.clone(),
            graph_id,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftKind {
    Adjacency,
    RowNorm,
    ColNorm,
    SymNorm,
    Laplacian,
}

/// Any matrix sharing the adjacency sparsity (plus the diagonal for the
/// Laplacian), stored as COO triples.
#[derive(Debug, Clone)]
pub struct GraphShift {
    pub entries: Vec<(usize, usize, f64)>,
    pub n: usize,
}

/// Builds a graph shift. Division by a zero degree raises a degenerate-node
/// error unless `guard` converts such rows into identity pass-through.
pub fn graph_shift(
    graph: &SparseGraph,
    kind: ShiftKind,
    guard: bool,
) -> Result<GraphShift, NnError> {
    let n = graph.num_nodes();
    let degree = graph.degree();
    let needs_degree = matches!(kind, ShiftKind::RowNorm | ShiftKind::ColNorm | ShiftKind::SymNorm);
    let mut isolated: HashSet<usize> = HashSet::new();
    if needs_degree {
        for (node, &d) in degree.iter().enumerate() {
            if d == 0.0 {
                if !guard {
                    return Err(NnError::DegenerateNode { node });
                }
                isolated.insert(node);
            }
        }
    }
    let mut entries = Vec::with_capacity(graph.edges.len() + n);
    match kind {
        ShiftKind::Adjacency => {
            for &(s, d) in &graph.edges {
                entries.push((s, d, 1.0));
            }
        }
        ShiftKind::RowNorm => {
            for &(s, d) in &graph.edges {
                entries.push((s, d, 1.0 / degree[s]));
            }
        }
        ShiftKind::ColNorm => {
            for &(s, d) in &graph.edges {
                entries.push((s, d, 1.0 / degree[d]));
            }
        }
        ShiftKind::SymNorm => {
            for &(s, d) in &graph.edges {
                entries.push((s, d, 1.0 / (degree[s] * degree[d]).sqrt()));
            }
        }
        ShiftKind::Laplacian => {
            for i in 0..n {
                entries.push((i, i, degree[i]));
            }
            for &(s, d) in &graph.edges {
                entries.push((s, d, -1.0));
            }
        }
    }
    for node in isolated {
        entries.push((node, node, 1.0));
    }
    Ok(GraphShift { entries, n })
}

impl GraphShift {
    /// Dense (n, n) materialization; oracle use only.
    pub fn to_dense(&self) -> Tensor {
        let mut m = Tensor::zeros(&[self.n, self.n]);
        for &(i, j, w) in &self.entries {
            let v = m.at(&[i, j]) + w;
            m.set(&[i, j], v);
        }
        m
    }

    /// Transposed entry list (the VJP of the shift application).
    fn transposed(&self) -> Vec<(usize, usize, f64)> {
        self.entries.iter().map(|&(i, j, w)| (j, i, w)).collect()
    }
}

/// Recorded sparse shift application: out = S · X for X of shape (n, c).
/// The shift values are constants of the layer, not trainable.
pub fn shift_apply<'t>(shift: &GraphShift, x: Var<'t>) -> Result<Var<'t>, NnError> {
    let shape = x.shape();
    if shape.len() != 2 || shape[0] != shift.n {
        return Err(NnError::Config(format!(
            "shift of size {} applied to features {shape:?}",
            shift.n
        )));
    }
    let _c = shape[1];
    let n = shift.n;
    let forward_entries = Rc::new(shift.entries.clone());
    let backward_entries = Rc::new(shift.transposed());
    let value = spmm(&forward_entries, n, &x.value());
    let fwd = Rc::clone(&forward_entries);
    Ok(x.tape().custom_op(
        value,
        vec![(
            x,
            Box::new(move |adj: &Tensor| spmm(&backward_entries, n, adj)),
            Box::new(move |t: &Tensor| spmm(&fwd, n, t)),
        )],
    ))
}

fn spmm(entries: &[(usize, usize, f64)], n: usize, x: &Tensor) -> Tensor {
    let c = x.shape()[1];
    let mut out = vec![0.0; n * c];
    for &(i, j, w) in entries {
        for col in 0..c {
            out[i * c + col] += w * x.data()[j * c + col];
        }
    }
    Tensor::new(vec![n, c], out).expect("spmm shape")
}

/// Smoothness quadratic form fᵀLf, computed from the Laplacian entries.
pub fn laplacian_quadratic(graph: &SparseGraph, f: &Tensor) -> Result<f64, NnError> {
    let n = graph.num_nodes();
    if f.shape() != [n] {
        return Err(NnError::WidthMismatch {
            layer: "laplacian_quadratic",
            expected: n,
            actual: f.len(),
        });
    }
    let shift = graph_shift(graph, ShiftKind::Laplacian, true)?;
    let lf = spmm(&shift.entries, n, &f.reshape(&[n, 1])?);
    f.gdot(&lf.reshape(&[n])?).map_err(NnError::Tensor)
}

/// Graph convolution: φ(S(XW + b)).
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub in_width: usize,
    pub out_width: usize,
    pub activation: Activation,
}

impl GcnLayer {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        in_width: usize,
        out_width: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        Ok(GcnLayer {
            w: ps.add(
                format!("{name}.w"),
                fan_in_uniform(&[in_width, out_width], in_width, rng),
            )?,
            b: ps.add(format!("{name}.b"), Tensor::zeros(&[out_width]))?,
            in_width,
            out_width,
            activation,
        })
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        shift: &GraphShift,
        x: Var<'t>,
    ) -> Result<Var<'t>, NnError> {
        let width = *x.shape().last().unwrap_or(&0);
        if width != self.in_width {
            return Err(NnError::WidthMismatch {
                layer: "gcn",
                expected: self.in_width,
                actual: width,
            });
        }
        let projected = x
            .matmul(ps.var(tape, self.w))?
            .add(ps.var(tape, self.b))?;
        let mixed = shift_apply(shift, projected)?;
        Ok(self.activation.apply(mixed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatVariant {
    /// score = LeakyReLU(aᵀ[Vxᵢ ∥ Vxⱼ])
    V1,
    /// score = aᵀ LeakyReLU(V[xᵢ ∥ xⱼ])
    V2,
}

/// Graph attention layer. The per-node softmax runs over incoming edges;
/// nodes with empty neighborhoods fall back to a self-loop.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub variant: GatVariant,
    pub proj: ParamId,
    pub attn: ParamId,
    pub w: ParamId,
    pub in_width: usize,
    pub out_width: usize,
    pub score_width: usize,
    pub activation: Activation,
}

// Standard negative slope for the scoring nonlinearity.
const GAT_LEAK: f64 = 0.2;

impl GatLayer {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        variant: GatVariant,
        in_width: usize,
        score_width: usize,
        out_width: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let (proj_shape, attn_shape): (Vec<usize>, Vec<usize>) = match variant {
            GatVariant::V1 => (vec![in_width, score_width], vec![2 * score_width, 1]),
            GatVariant::V2 => (vec![2 * in_width, score_width], vec![score_width, 1]),
        };
        let fan_in = proj_shape[0];
        Ok(GatLayer {
            variant,
            proj: ps.add(format!("{name}.proj"), fan_in_uniform(&proj_shape, fan_in, rng))?,
            attn: ps.add(
                format!("{name}.attn"),
                fan_in_uniform(&attn_shape, attn_shape[0], rng),
            )?,
            w: ps.add(
                format!("{name}.w"),
                fan_in_uniform(&[in_width, out_width], in_width, rng),
            )?,
            in_width,
            out_width,
            score_width,
            activation,
        })
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        graph: &SparseGraph,
        x: Var<'t>,
    ) -> Result<Var<'t>, NnError> {
        let n = graph.num_nodes();
        let c = self.in_width;
        // Self-loop fallback for nodes with no incoming edge.
        let mut edges = graph.edges.clone();
        let in_deg = graph.in_degree();
        for (node, &d) in in_deg.iter().enumerate() {
            if d == 0.0 && !edges.contains(&(node, node)) {
                edges.push((node, node));
            }
        }
        let _m = edges.len();
        let src_rows = gather_rows(x, &edges.iter().map(|e| e.0).collect::<Vec<_>>(), c)?;
        let dst_rows = gather_rows(x, &edges.iter().map(|e| e.1).collect::<Vec<_>>(), c)?;

        let scores = match self.variant {
            GatVariant::V1 => {
                let proj = ps.var(tape, self.proj);
                let pv_dst = dst_rows.matmul(proj)?;
                let pv_src = src_rows.matmul(proj)?;
                let both = Var::concat(&[pv_dst, pv_src], 1)?;
                both.matmul(ps.var(tape, self.attn))?.leaky_relu(GAT_LEAK)
            }
            GatVariant::V2 => {
                let both = Var::concat(&[dst_rows, src_rows], 1)?;
                let hidden = both.matmul(ps.var(tape, self.proj))?.leaky_relu(GAT_LEAK);
                hidden.matmul(ps.var(tape, self.attn))?
            }
        };

        // Softmax over each destination's incoming edges.
        let dst_ids: Vec<usize> = edges.iter().map(|e| e.1).collect();
        let weights = segment_softmax(scores, &dst_ids, n)?;

        let messages = src_rows.matmul(ps.var(tape, self.w))?;
        let weighted = messages.mul(weights)?;
        let pooled = weighted.scatter_rows(Rc::new(dst_ids), n, Reduction::Sum)?;
        Ok(self.activation.apply(pooled))
    }
}

/// Gathers rows of a (n, c) variable into a (len(ids), c) variable.
pub fn gather_rows<'t>(x: Var<'t>, ids: &[usize], width: usize) -> Result<Var<'t>, NnError> {
    let mut map = Vec::with_capacity(ids.len() * width);
    for &i in ids {
        for j in 0..width {
            map.push(Some(i * width + j));
        }
    }
    Ok(x.gather_map(Rc::new(map), &[ids.len(), width])?)
}

/// Numerically shifted softmax over score groups: scores is (m, 1), one
/// row per edge, grouped by destination node.
fn segment_softmax<'t>(
    scores: Var<'t>,
    groups: &[usize],
    num_groups: usize,
) -> Result<Var<'t>, NnError> {
    let group_rc = Rc::new(groups.to_vec());
    let maxes = scores.scatter_rows(Rc::clone(&group_rc), num_groups, Reduction::Max)?;
    let max_per_edge = gather_rows(maxes, groups, 1)?;
    let shifted = scores.sub(max_per_edge)?.exp();
    let sums = shifted.scatter_rows(Rc::clone(&group_rc), num_groups, Reduction::Sum)?;
    let sum_per_edge = gather_rows(sums, groups, 1)?;
    Ok(shifted.div(sum_per_edge)?)
}

/// Inputs handed to a message function: per-edge destination features,
/// source features, and optional edge features, each (m, ·).
pub struct MessageInputs<'t> {
    pub dst: Var<'t>,
    pub src: Var<'t>,
    pub edge: Option<Var<'t>>,
}

/// General message-passing layer: hᵢ = ψ(xᵢ, Aggr{M(xᵢ, xⱼ, eᵢⱼ)}).
/// Aggregation runs over incoming edges; an empty neighborhood without
/// self-loops is an error.
pub fn message_passing<'t, M, P>(
    tape: &'t Tape,
    graph: &SparseGraph,
    x: Var<'t>,
    aggr: Reduction,
    message: M,
    update: P,
) -> Result<Var<'t>, NnError>
where
    M: FnOnce(MessageInputs<'t>) -> Result<Var<'t>, NnError>,
    P: FnOnce(Var<'t>, Var<'t>) -> Result<Var<'t>, NnError>,
{
    let n = graph.num_nodes();
    let c = graph.feature_width();
    let in_deg = graph.in_degree();
    if let Some(node) = in_deg.iter().position(|&d| d == 0.0) {
        return Err(NnError::Config(format!(
            "message_passing: node {node} has an empty neighborhood and no self-loop"
        )));
    }
    let src_ids: Vec<usize> = graph.edges.iter().map(|e| e.0).collect();
    let dst_ids: Vec<usize> = graph.edges.iter().map(|e| e.1).collect();
    let src = gather_rows(x, &src_ids, c)?;
    let dst = gather_rows(x, &dst_ids, c)?;
    let edge = match &graph.edge_features {
        Some(feats) => Some(tape.input(feats.clone())),
        None => None,
    };
    let messages = message(MessageInputs { dst, src, edge })?;
    let pooled = messages.scatter_rows(Rc::new(dst_ids), n, aggr)?;
    update(x, pooled)
}

/// Block-diagonal batching: node features stack, edges shift by the node
/// offset of their graph, and graph ids record provenance.
pub fn batch_graphs(graphs: &[SparseGraph]) -> Result<SparseGraph, NnError> {
    let first = graphs
        .first()
        .ok_or_else(|| NnError::Config("batch_graphs: empty list".into()))?;
    let width = first.feature_width();
    let mut features = Vec::new();
    let mut edges = Vec::new();
    let mut graph_id = Vec::new();
    let mut offset = 0usize;
    for (g_index, g) in graphs.iter().enumerate() {
        if g.feature_width() != width {
            return Err(NnError::WidthMismatch {
                layer: "batch_graphs",
                expected: width,
                actual: g.feature_width(),
            });
        }
        features.extend_from_slice(g.x.data());
        for &(s, d) in &g.edges {
            edges.push((s + offset, d + offset));
        }
        graph_id.extend(std::iter::repeat(g_index).take(g.num_nodes()));
        offset += g.num_nodes();
    }
    Ok(SparseGraph {
        x: Tensor::new(vec![offset, width], features)?,
        edges,
        edge_features: None,
        graph_id,
    })
}

/// Grouped readout: row g of the output reduces the node rows of graph g.
pub fn scatter_reduce<'t>(
    h: Var<'t>,
    graph_id: &[usize],
    num_graphs: usize,
    kind: Reduction,
) -> Result<Var<'t>, NnError> {
    Ok(h.scatter_rows(Rc::new(graph_id.to_vec()), num_graphs, kind)?)
}

/// Random-walk structural embedding: the diagonals of R, R², …, R^k with
/// R = A D⁻¹, projected by a trainable (k, e) matrix.
pub fn random_walk_embedding<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    graph: &SparseGraph,
    steps: usize,
    projection: ParamId,
) -> Result<Var<'t>, NnError> {
    let n = graph.num_nodes();
    let degree = graph.degree();
    if let Some(node) = degree.iter().position(|&d| d == 0.0) {
        return Err(NnError::DegenerateNode { node });
    }
    // R = A D⁻¹ in COO form.
    let entries: Vec<(usize, usize, f64)> = graph
        .edges
        .iter()
        .map(|&(s, d)| (s, d, 1.0 / degree[d]))
        .collect();
    let mut power = Tensor::eye(n);
    let mut profile = Tensor::zeros(&[n, steps]);
    for t in 0..steps {
        power = spmm(&entries, n, &power);
        for i in 0..n {
            profile.set(&[i, t], power.at(&[i, i]));
        }
    }
    let rows = tape.input(profile);
    Ok(rows.matmul(ps.var(tape, projection))?)
}

/// Per-candidate-edge scores σ(hᵢᵀhⱼ).
pub fn edge_head<'t>(h: Var<'t>, pairs: &[(usize, usize)]) -> Result<Var<'t>, NnError> {
    let width = *h.shape().last().unwrap_or(&0);
    let left = gather_rows(h, &pairs.iter().map(|p| p.0).collect::<Vec<_>>(), width)?;
    let right = gather_rows(h, &pairs.iter().map(|p| p.1).collect::<Vec<_>>(), width)?;
    Ok(left.mul(right)?.sum_axes(&[1], false)?.sigmoid())
}

/// Manifold regularization term λ·fᵀLf for a recorded per-node signal
/// f (n,) or per-node features (n, c) summed over channels. Added to a
/// loss it pulls predictions towards smoothness along edges.
pub fn manifold_penalty<'t>(
    graph: &SparseGraph,
    f: Var<'t>,
    lambda: f64,
) -> Result<Var<'t>, NnError> {
    let shape = f.shape();
    let n = graph.num_nodes();
    if shape.first().copied().unwrap_or(0) != n {
        return Err(NnError::WidthMismatch {
            layer: "manifold_penalty",
            expected: n,
            actual: shape.first().copied().unwrap_or(0),
        });
    }
    let columns = if shape.len() == 1 { 1 } else { shape[1] };
    let matrix = f.reshape(&[n, columns])?;
    let laplacian = graph_shift(graph, ShiftKind::Laplacian, true)?;
    let lf = shift_apply(&laplacian, matrix)?;
    Ok(matrix.mul(lf)?.sum_all()?.scale(lambda))
}

/// Reads the graph file format {n, edges, x, y, train_mask} used by small
/// citation-style datasets; returns the graph (undirected, self-loops
/// added), integer labels, and the training mask.
pub fn read_graph_json(path: &std::path::Path) -> Result<(SparseGraph, Vec<usize>, Vec<bool>), NnError> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| NnError::Config(format!("graph json: {e}")))?;
    let n = value["n"]
        .as_u64()
        .ok_or_else(|| NnError::Config("graph json: missing n".into()))? as usize;
    let edges: Vec<(usize, usize)> = value["edges"]
        .as_array()
        .ok_or_else(|| NnError::Config("graph json: missing edges".into()))?
        .iter()
        .map(|pair| {
            (
                pair[0].as_u64().unwrap_or(0) as usize,
                pair[1].as_u64().unwrap_or(0) as usize,
            )
        })
        .collect();
    let width = value["x"][0].as_array().map(|r| r.len()).unwrap_or(0);
    let x = Tensor::from_json(&serde_json::json!({
        "shape": [n, width],
        "data": value["x"],
    }))?;
    let y: Vec<usize> = value["y"]
        .as_array()
        .ok_or_else(|| NnError::Config("graph json: missing y".into()))?
        .iter()
        .map(|v| v.as_u64().unwrap_or(0) as usize)
        .collect();
    let train_mask: Vec<bool> = value["train_mask"]
        .as_array()
        .ok_or_else(|| NnError::Config("graph json: missing train_mask".into()))?
        .iter()
        .map(|v| v.as_bool().unwrap_or(false))
        .collect();
    let graph = SparseGraph::undirected(x, &edges)?.with_self_loops();
    Ok((graph, y, train_mask))
}
