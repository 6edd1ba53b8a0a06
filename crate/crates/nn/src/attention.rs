//! Self/cross/causal multi-head attention, positional embeddings,
//! transformer blocks, online-softmax chunking, KV caching, and linearized
//! attention.

use crate::act::ActivationOps;
use crate::error::NnError;
use crate::layers::{fan_in_uniform, layer_norm, residual};
use crate::param::ParamSet;
use ferrograd_core::{ParamId, Tape, Tensor, Var};
use rand::Rng;

/// Masking applied to attention scores before the softmax. The "minus
/// infinity" entries use −1e9.
pub const NEG_INF_MASK: f64 = -1e9;

/// Per-head projections plus the shared output projection. Key and query
/// widths are identical by construction.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub w_q: Vec<ParamId>,
    pub w_k: Vec<ParamId>,
    pub w_v: Vec<ParamId>,
    pub w_o: ParamId,
    pub heads: usize,
    pub embed: usize,
    pub key_width: usize,
    pub value_width: usize,
    pub out_width: usize,
}

impl AttentionParams {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        heads: usize,
        embed: usize,
        key_width: usize,
        value_width: usize,
        out_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        if heads == 0 {
            return Err(NnError::Config("attention needs at least one head".into()));
        }
        let mut w_q = Vec::with_capacity(heads);
        let mut w_k = Vec::with_capacity(heads);
        let mut w_v = Vec::with_capacity(heads);
        for h in 0..heads {
            w_q.push(ps.add(
                format!("{name}.head{h}.wq"),
                fan_in_uniform(&[embed, key_width], embed, rng),
            )?);
            w_k.push(ps.add(
                format!("{name}.head{h}.wk"),
                fan_in_uniform(&[embed, key_width], embed, rng),
            )?);
            w_v.push(ps.add(
                format!("{name}.head{h}.wv"),
                fan_in_uniform(&[embed, value_width], embed, rng),
            )?);
        }
        let w_o = ps.add(
            format!("{name}.wo"),
            fan_in_uniform(&[heads * value_width, out_width], heads * value_width, rng),
        )?;
        Ok(AttentionParams {
            w_q,
            w_k,
            w_v,
            w_o,
            heads,
            embed,
            key_width,
            value_width,
            out_width,
        })
    }

    /// 2ke·h + ve·h + (hv)o trainable scalars.
    pub fn param_count(&self) -> usize {
        self.heads * (2 * self.key_width * self.embed + self.value_width * self.embed)
            + self.heads * self.value_width * self.out_width
    }
}

fn check_embed(params: &AttentionParams, width: usize, layer: &'static str) -> Result<(), NnError> {
    if width != params.embed {
        return Err(NnError::WidthMismatch {
            layer,
            expected: params.embed,
            actual: width,
        });
    }
    Ok(())
}

/// Sets every score strictly above the diagonal to −1e9 so the softmax
/// zeroes attention to future positions. Masking happens inside the
/// softmax: applying it afterwards would leak every token through the
/// normalizer.
pub fn causal_mask<'t>(scores: Var<'t>) -> Result<Var<'t>, NnError> {
    let shape = scores.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(NnError::Config(format!(
            "causal_mask expects square scores, got {shape:?}"
        )));
    }
    let n = shape[0];
    let mask = Tensor::from_fn(&[n, n], |ix| if ix[1] > ix[0] { NEG_INF_MASK } else { 0.0 });
    let m = scores.tape().input(mask);
    Ok(scores.add(m)?)
}

/// Single-head self-attention: softmax(X Wq Wkᵀ Xᵀ / √k) X Wv, with the
/// optional additive masks applied inside the softmax.
pub fn self_attention_with<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    x_q: Var<'t>,
    x_kv: Var<'t>,
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    causal: bool,
    bias: Option<Var<'t>>,
) -> Result<Var<'t>, NnError> {
    self_attention_with_dropout(tape, ps, x_q, x_kv, w_q, w_k, w_v, causal, bias, None)
}

#[allow(clippy::too_many_arguments)]
pub fn self_attention_with_dropout<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    x_q: Var<'t>,
    x_kv: Var<'t>,
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    causal: bool,
    bias: Option<Var<'t>>,
    dropout: Option<AttentionDropout>,
) -> Result<Var<'t>, NnError> {
    let q = x_q.matmul(ps.var(tape, w_q))?;
    let k = x_kv.matmul(ps.var(tape, w_k))?;
    let v = x_kv.matmul(ps.var(tape, w_v))?;
    let key_width = *k.shape().last().unwrap();
    let mut scores = q.matmul(k.t2()?)?.scale(1.0 / (key_width as f64).sqrt());
    if causal {
        scores = causal_mask(scores)?;
    }
    if let Some(b) = bias {
        scores = scores.add(b)?;
    }
    let mut weights = scores.softmax(1.0)?;
    if let Some(plan) = dropout {
        if !(0.0 < plan.keep_p && plan.keep_p <= 1.0) {
            return Err(NnError::Config(format!(
                "attention dropout keep probability must lie in (0, 1], got {}",
                plan.keep_p
            )));
        }
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(plan.seed);
        let shape = weights.shape();
        let mask = Tensor::from_fn(&shape, |_| {
            if rng.gen_bool(plan.keep_p) {
                1.0 / plan.keep_p
            } else {
                0.0
            }
        });
        weights = weights.mul(tape.input(mask))?;
    }
    Ok(weights.matmul(v)?)
}

/// Single-head self-attention over (n, e) tokens.
pub fn self_attention<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    x: Var<'t>,
    params: &AttentionParams,
) -> Result<Var<'t>, NnError> {
    check_embed(params, *x.shape().last().unwrap_or(&0), "self_attention")?;
    self_attention_with(
        tape,
        ps,
        x,
        x,
        params.w_q[0],
        params.w_k[0],
        params.w_v[0],
        false,
        None,
    )
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MhaOptions {
    pub causal: bool,
    /// Per-head additive linear bias −(i−j)·w on the scores.
    pub linear_bias: Option<f64>,
    /// Optional inverted dropout on the attention weights, applied after
    /// the softmax. Off by default.
    pub attention_dropout: Option<AttentionDropout>,
}

/// Dropout plan for attention maps: keep probability plus the seed the
/// mask is drawn from (one fresh stream per head and call site).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionDropout {
    pub keep_p: f64,
    pub seed: u64,
}

/// Multi-head attention: h independent attention heads, concatenated and
/// projected by W_o.
pub fn multi_head_attention<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    x: Var<'t>,
    params: &AttentionParams,
    options: MhaOptions,
) -> Result<Var<'t>, NnError> {
    check_embed(params, *x.shape().last().unwrap_or(&0), "multi_head_attention")?;
    let n = x.shape()[0];
    let mut heads = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let bias = options
            .linear_bias
            .map(|w| tape.input(linear_bias_matrix(n, w)));
        let dropout = options.attention_dropout.map(|plan| AttentionDropout {
            keep_p: plan.keep_p,
            seed: plan.seed.wrapping_add(h as u64),
        });
        heads.push(self_attention_with_dropout(
            tape,
            ps,
            x,
            x,
            params.w_q[h],
            params.w_k[h],
            params.w_v[h],
            options.causal,
            bias,
            dropout,
        )?);
    }
    let stacked = Var::concat(&heads, 1)?;
    Ok(stacked.matmul(ps.var(tape, params.w_o))?)
}

/// Cross-attention: queries from X (n, e), keys and values from Z (m, e).
pub fn cross_attention<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    x: Var<'t>,
    z: Var<'t>,
    params: &AttentionParams,
) -> Result<Var<'t>, NnError> {
    check_embed(params, *x.shape().last().unwrap_or(&0), "cross_attention")?;
    check_embed(params, *z.shape().last().unwrap_or(&0), "cross_attention")?;
    self_attention_with(
        tape,
        ps,
        x,
        z,
        params.w_q[0],
        params.w_k[0],
        params.w_v[0],
        false,
        None,
    )
}

// ── Positional schemes ──────────────────────────────────────────────

#[derive(Debug, Clone)]
pub enum PositionalScheme {
    /// Trainable rows, capped at a maximum length.
    Learned { table: ParamId, max_len: usize },
    /// Interleaved sin/cos rows with frequencies ω_i = 10000^(−i/e).
    Sinusoidal { embed: usize },
    /// Per-head scalar bias on scores, proportional to −(i−j).
    LinearBias { weight: f64 },
}

/// The deterministic sinusoidal table: row i holds
/// [sin(ω₁ i), cos(ω₁ i), …, sin(ω_{e/2} i), cos(ω_{e/2} i)].
pub fn sinusoidal_embedding(n: usize, embed: usize) -> Result<Tensor, NnError> {
    if embed % 2 != 0 {
        return Err(NnError::Config(
            "sinusoidal embedding needs an even width".into(),
        ));
    }
    Ok(Tensor::from_fn(&[n, embed], |ix| {
        let (i, j) = (ix[0] as f64, ix[1]);
        let pair = (j / 2 + 1) as f64;
        let omega = 10000f64.powf(-pair / embed as f64);
        if j % 2 == 0 {
            (omega * i).sin()
        } else {
            (omega * i).cos()
        }
    }))
}

/// Relative bias template: entry (i, j) is −(i−j)·w.
pub fn linear_bias_matrix(n: usize, weight: f64) -> Tensor {
    Tensor::from_fn(&[n, n], |ix| -((ix[0] as f64) - (ix[1] as f64)) * weight)
}

/// Positional rows (or a score-bias matrix) for a length-n input.
pub enum PositionalOutput<'t> {
    Rows(Var<'t>),
    Bias(Tensor),
}

pub fn positional_embed<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    scheme: &PositionalScheme,
    n: usize,
) -> Result<PositionalOutput<'t>, NnError> {
    match scheme {
        PositionalScheme::Learned { table, max_len } => {
            if n > *max_len {
                return Err(NnError::Config(format!(
                    "learned positional table holds {max_len} rows, asked for {n}"
                )));
            }
            let full = ps.var(tape, *table);
            let e = full.shape()[1];
            Ok(PositionalOutput::Rows(full.slice(&[(0, n), (0, e)])?))
        }
        PositionalScheme::Sinusoidal { embed } => Ok(PositionalOutput::Rows(
            tape.input(sinusoidal_embedding(n, *embed)?),
        )),
        PositionalScheme::LinearBias { weight } => {
            Ok(PositionalOutput::Bias(linear_bias_matrix(n, *weight)))
        }
    }
}

// ── Transformer block ───────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BlockVariant {
    PreNorm,
    PostNorm,
}

/// One transformer block: an MHA sub-block and a token-wise two-layer MLP
/// (hidden width 4e, no biases), each wrapped in a residual connection
/// with layer norm placed per variant.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub attention: AttentionParams,
    pub ln1_alpha: ParamId,
    pub ln1_beta: ParamId,
    pub ln2_alpha: ParamId,
    pub ln2_beta: ParamId,
    pub mlp_w1: ParamId,
    pub mlp_w2: ParamId,
    pub variant: BlockVariant,
    pub embed: usize,
    pub causal: bool,
}

impl TransformerBlock {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        embed: usize,
        heads: usize,
        variant: BlockVariant,
        causal: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        if embed % heads != 0 {
            return Err(NnError::Config(format!(
                "embed width {embed} must divide evenly across {heads} heads"
            )));
        }
        let head_width = embed / heads;
        let attention = AttentionParams::new(
            ps,
            &format!("{name}.mha"),
            heads,
            embed,
            head_width,
            head_width,
            embed,
            rng,
        )?;
        let hidden = 4 * embed;
        Ok(TransformerBlock {
            attention,
            ln1_alpha: ps.add(format!("{name}.ln1.alpha"), Tensor::ones(&[embed]))?,
            ln1_beta: ps.add(format!("{name}.ln1.beta"), Tensor::zeros(&[embed]))?,
            ln2_alpha: ps.add(format!("{name}.ln2.alpha"), Tensor::ones(&[embed]))?,
            ln2_beta: ps.add(format!("{name}.ln2.beta"), Tensor::zeros(&[embed]))?,
            mlp_w1: ps.add(
                format!("{name}.mlp.w1"),
                fan_in_uniform(&[embed, hidden], embed, rng),
            )?,
            mlp_w2: ps.add(
                format!("{name}.mlp.w2"),
                fan_in_uniform(&[hidden, embed], hidden, rng),
            )?,
            variant,
            embed,
            causal,
        })
    }

    fn mlp<'t>(&self, tape: &'t Tape, ps: &ParamSet, x: Var<'t>) -> Result<Var<'t>, NnError> {
        let h = x.matmul(ps.var(tape, self.mlp_w1))?.gelu();
        Ok(h.matmul(ps.var(tape, self.mlp_w2))?)
    }

    fn ln<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        x: Var<'t>,
        alpha: ParamId,
        beta: ParamId,
    ) -> Result<Var<'t>, NnError> {
        layer_norm(x, 1, ps.var(tape, alpha), ps.var(tape, beta), 1e-5)
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        x: Var<'t>,
    ) -> Result<Var<'t>, NnError> {
        let options = MhaOptions {
            causal: self.causal,
            linear_bias: None,
            attention_dropout: None,
        };
        let x = match self.variant {
            BlockVariant::PreNorm => {
                let x = residual(x, |inner| {
                    let normed = self.ln(tape, ps, inner, self.ln1_alpha, self.ln1_beta)?;
                    multi_head_attention(tape, ps, normed, &self.attention, options)
                })?;
                residual(x, |inner| {
                    let normed = self.ln(tape, ps, inner, self.ln2_alpha, self.ln2_beta)?;
                    self.mlp(tape, ps, normed)
                })?
            }
            BlockVariant::PostNorm => {
                let x = residual(x, |inner| {
                    multi_head_attention(tape, ps, inner, &self.attention, options)
                })?;
                let x = self.ln(tape, ps, x, self.ln1_alpha, self.ln1_beta)?;
                let x = residual(x, |inner| self.mlp(tape, ps, inner))?;
                self.ln(tape, ps, x, self.ln2_alpha, self.ln2_beta)?
            }
        };
        Ok(x)
    }
}

/// Appends a trainable class token as row n+1; a classification head is
/// expected to read only that row afterwards.
pub fn class_token_attach<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    x: Var<'t>,
    token: ParamId,
) -> Result<Var<'t>, NnError> {
    attach_tokens(tape, ps, x, &[token])
}

/// Appends extra trainable rows (class token, registers) to the input.
/// Heads ignore register rows; they only give the model scratch slots.
pub fn attach_tokens<'t>(
    tape: &'t Tape,
    ps: &ParamSet,
    x: Var<'t>,
    tokens: &[ParamId],
) -> Result<Var<'t>, NnError> {
    let embed = *x.shape().last().unwrap_or(&0);
    let mut rows = vec![x];
    for &token in tokens {
        let c = ps.var(tape, token);
        if c.shape() != vec![embed] {
            return Err(NnError::WidthMismatch {
                layer: "attached_token",
                expected: embed,
                actual: c.shape().first().copied().unwrap_or(0),
            });
        }
        rows.push(c.reshape(&[1, embed])?);
    }
    Ok(Var::concat(&rows, 0)?)
}

/// Allocates `count` register tokens (zero-initialized).
pub fn register_tokens(
    ps: &mut ParamSet,
    name: &str,
    count: usize,
    embed: usize,
) -> Result<Vec<ParamId>, NnError> {
    (0..count)
        .map(|i| ps.add(format!("{name}.register{i}"), Tensor::zeros(&[embed])))
        .collect()
}

// ── Online (chunked) softmax attention ──────────────────────────────

/// Attention for one query over chunked keys/values, carrying unnormalized
/// numerators and a running normalizer (with a running max for stability)
/// and normalizing once at the end. Equals unchunked attention for every
/// partition of the key set.
pub fn chunked_attention(
    q: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    chunk_sizes: &[usize],
) -> Result<Tensor, NnError> {
    let (n, k) = (keys.shape()[0], keys.shape()[1]);
    let v_width = values.shape()[1];
    if q.shape() != [k] {
        return Err(NnError::WidthMismatch {
            layer: "chunked_attention",
            expected: k,
            actual: q.len(),
        });
    }
    if chunk_sizes.iter().sum::<usize>() != n {
        return Err(NnError::Config(format!(
            "chunks {chunk_sizes:?} do not partition {n} keys"
        )));
    }
    if chunk_sizes.iter().any(|&c| c == 0) {
        return Err(NnError::Config("empty chunk".into()));
    }
    let mut numerator = vec![0.0; v_width];
    let mut normalizer = 0.0f64;
    let mut running_max = f64::NEG_INFINITY;
    let mut offset = 0usize;
    for &size in chunk_sizes {
        // Scores for this chunk.
        let mut scores = Vec::with_capacity(size);
        for row in offset..offset + size {
            let mut s = 0.0;
            for j in 0..k {
                s += keys.at(&[row, j]) * q.at(&[j]);
            }
            scores.push(s);
        }
        let chunk_max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let new_max = running_max.max(chunk_max);
        let rescale = if running_max.is_finite() {
            (running_max - new_max).exp()
        } else {
            0.0
        };
        for value in numerator.iter_mut() {
            *value *= rescale;
        }
        normalizer *= rescale;
        for (local, &s) in scores.iter().enumerate() {
            let w = (s - new_max).exp();
            normalizer += w;
            let row = offset + local;
            for j in 0..v_width {
                numerator[j] += w * values.at(&[row, j]);
            }
        }
        running_max = new_max;
        offset += size;
    }
    let out: Vec<f64> = numerator.iter().map(|&x| x / normalizer).collect();
    Ok(Tensor::new(vec![v_width], out)?)
}

/// Unchunked single-query attention oracle.
pub fn naive_attention(
    q: &Tensor,
    keys: &Tensor,
    values: &Tensor,
) -> Result<Tensor, NnError> {
    chunked_attention(q, keys, values, &[keys.shape()[0]])
}

// ── KV cache ────────────────────────────────────────────────────────

/// Append-only per-head key/value rows for incremental causal decoding.
#[derive(Debug, Clone, Default)]
pub struct KVCache {
    pub keys: Vec<Tensor>,
    pub values: Vec<Tensor>,
}

impl KVCache {
    pub fn new(heads: usize) -> Self {
        KVCache {
            keys: vec![Tensor::zeros(&[0, 0]); heads],
            values: vec![Tensor::zeros(&[0, 0]); heads],
        }
    }

    pub fn len(&self) -> usize {
        self.keys.first().map(|k| k.shape()[0]).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One incremental decode step: projects the new token, appends its key
/// and value per head, and attends the new query over the cached rows
/// (itself included). Equals recomputing full causal MHA on the extended
/// sequence and reading the last row.
pub fn kv_decode_step(
    ps: &ParamSet,
    params: &AttentionParams,
    cache: &mut KVCache,
    x_new: &Tensor,
) -> Result<Tensor, NnError> {
    if x_new.shape() != [params.embed] {
        return Err(NnError::WidthMismatch {
            layer: "kv_decode_step",
            expected: params.embed,
            actual: x_new.len(),
        });
    }
    let x_row = x_new.reshape(&[1, params.embed])?;
    let mut head_outputs = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let q = x_row.matmul(ps.value(params.w_q[h]))?.reshape(&[params.key_width])?;
        let k_new = x_row.matmul(ps.value(params.w_k[h]))?;
        let v_new = x_row.matmul(ps.value(params.w_v[h]))?;
        let keys = if cache.keys[h].len() == 0 {
            k_new
        } else {
            Tensor::concat(&[&cache.keys[h], &k_new], 0)?
        };
        let values = if cache.values[h].len() == 0 {
            v_new
        } else {
            Tensor::concat(&[&cache.values[h], &v_new], 0)?
        };
        let scaled_q = q.scale(1.0 / (params.key_width as f64).sqrt());
        head_outputs.push(naive_attention(&scaled_q, &keys, &values)?);
        cache.keys[h] = keys;
        cache.values[h] = values;
    }
    let refs: Vec<&Tensor> = head_outputs.iter().collect();
    let concat = Tensor::concat(&refs, 0)?.reshape(&[1, params.heads * params.value_width])?;
    Ok(concat.matmul(ps.value(params.w_o))?.reshape(&[params.out_width])?)
}

/// Full causal MHA recompute oracle over raw tensors (no recording).
pub fn causal_mha_full(
    ps: &ParamSet,
    params: &AttentionParams,
    x: &Tensor,
) -> Result<Tensor, NnError> {
    let n = x.shape()[0];
    let mut heads = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let q = x.matmul(ps.value(params.w_q[h]))?;
        let k = x.matmul(ps.value(params.w_k[h]))?;
        let v = x.matmul(ps.value(params.w_v[h]))?;
        let mut scores = q
            .matmul(&k.t()?)?
            .scale(1.0 / (params.key_width as f64).sqrt());
        for i in 0..n {
            for j in (i + 1)..n {
                scores.set(&[i, j], NEG_INF_MASK);
            }
        }
        heads.push(scores.softmax(1.0)?.matmul(&v)?);
    }
    let refs: Vec<&Tensor> = heads.iter().collect();
    Tensor::concat(&refs, 1)?
        .matmul(ps.value(params.w_o))
        .map_err(NnError::Tensor)
}

// ── Linearized attention ────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// elu(x) + 1, strictly positive.
    EluPlusOne,
    /// [x², x, 1]-style quadratic expansion per coordinate pair is heavy;
    /// this uses the elementwise square shifted to stay positive.
    Quadratic,
}

impl FeatureMap {
    fn apply(&self, x: &Tensor) -> Tensor {
        match self {
            FeatureMap::EluPlusOne => x.map(|v| if v > 0.0 { v + 1.0 } else { v.exp() }),
            FeatureMap::Quadratic => x.map(|v| v * v + 1e-3),
        }
    }
}

/// Causal linearized attention evaluated recurrently: the attention memory
/// S and normalizer z start at zero and accumulate one rank-one update per
/// token; output i reads φ(qᵢ)ᵀSᵢ / φ(qᵢ)ᵀzᵢ.
pub fn linearized_attention_recurrent(
    queries: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    phi: FeatureMap,
) -> Result<Tensor, NnError> {
    let (n, e) = (keys.shape()[0], keys.shape()[1]);
    let v_width = values.shape()[1];
    let fq = phi.apply(queries);
    let fk = phi.apply(keys);
    let mut memory = Tensor::zeros(&[e, v_width]);
    let mut normalizer = Tensor::zeros(&[e]);
    let mut out = Tensor::zeros(&[n, v_width]);
    for i in 0..n {
        let k_row = fk.slice(&[(i, i + 1), (0, e)])?;
        let v_row = values.slice(&[(i, i + 1), (0, v_width)])?;
        memory = memory.add(&k_row.t()?.matmul(&v_row)?)?;
        normalizer = normalizer.add(&k_row.reshape(&[e])?)?;
        let q_row = fq.slice(&[(i, i + 1), (0, e)])?;
        let numer = q_row.matmul(&memory)?;
        let denom = q_row.reshape(&[e])?.gdot(&normalizer)?;
        if denom.abs() < 1e-12 {
            return Err(NnError::Config(
                "linearized attention: zero normalizer".into(),
            ));
        }
        for j in 0..v_width {
            out.set(&[i, j], numer.at(&[0, j]) / denom);
        }
    }
    Ok(out)
}

/// The vectorized causal-sum form of the same layer.
pub fn linearized_attention_vectorized(
    queries: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    phi: FeatureMap,
) -> Result<Tensor, NnError> {
    let (n, e) = (keys.shape()[0], keys.shape()[1]);
    let v_width = values.shape()[1];
    let fq = phi.apply(queries);
    let fk = phi.apply(keys);
    let mut out = Tensor::zeros(&[n, v_width]);
    for i in 0..n {
        let mut numer = vec![0.0; v_width];
        let mut denom = 0.0;
        for j in 0..=i {
            let mut sim = 0.0;
            for d in 0..e {
                sim += fq.at(&[i, d]) * fk.at(&[j, d]);
            }
            denom += sim;
            for d in 0..v_width {
                numer[d] += sim * values.at(&[j, d]);
            }
        }
        for d in 0..v_width {
            out.set(&[i, d], numer[d] / denom);
        }
    }
    Ok(out)
}
