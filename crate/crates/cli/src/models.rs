//! Task models assembled from the layer catalog.

use anyhow::{anyhow, Result};
use ferrograd_core::{Tape, Tensor, Var};
use ferrograd_nn::act::{sigmoid_scalar, Activation};
use ferrograd_nn::attention::{
    kv_decode_step, sinusoidal_embedding, BlockVariant, KVCache, TransformerBlock,
};
use ferrograd_nn::layers::{embedding_lookup, Dense};
use ferrograd_nn::param::ParamSet;
use ferrograd_core::ParamId;
use rand::Rng;

/// Binary classifier over 2-d points: a single logit, either linear
/// (logistic regression) or with one ReLU hidden layer.
#[derive(Debug, Clone)]
pub struct BinaryClassifier {
    layers: Vec<Dense>,
}

impl BinaryClassifier {
    pub fn linear(ps: &mut ParamSet, inputs: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(BinaryClassifier {
            layers: vec![Dense::new(ps, "logit", inputs, 1, Activation::Identity, rng)?],
        })
    }

    pub fn mlp(ps: &mut ParamSet, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(BinaryClassifier {
            layers: vec![
                Dense::new(ps, "hidden", inputs, hidden, Activation::Relu, rng)?,
                Dense::new(ps, "logit", hidden, 1, Activation::Identity, rng)?,
            ],
        })
    }

    /// Logits for a batch (n, d) → (n,).
    pub fn forward<'t>(&self, tape: &'t Tape, ps: &ParamSet, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, ps, h)?;
        }
        let n = h.shape()[0];
        Ok(h.reshape(&[n])?)
    }

    pub fn predictions(&self, ps: &ParamSet, x: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let logits = self.forward(&tape, ps, tape.input(x.clone()))?;
        Ok(logits.value().data().iter().map(|&l| sigmoid_scalar(l)).collect())
    }

    pub fn accuracy(&self, ps: &ParamSet, x: &Tensor, labels01: &[f64]) -> Result<f64> {
        let probs = self.predictions(ps, x)?;
        let hits = probs
            .iter()
            .zip(labels01)
            .filter(|(p, y)| (**p >= 0.5) == (**y >= 0.5))
            .count();
        Ok(hits as f64 / labels01.len() as f64)
    }
}

/// Decoder-only character model: token embedding plus sinusoidal
/// positions, a stack of causal pre-norm blocks, and a linear head.
#[derive(Debug, Clone)]
pub struct TransformerLm {
    pub embed_table: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub head: ParamId,
    pub vocab: usize,
    pub embed: usize,
    pub context: usize,
}

impl TransformerLm {
    pub fn new(
        ps: &mut ParamSet,
        vocab: usize,
        embed: usize,
        heads: usize,
        num_blocks: usize,
        context: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let embed_table = ps.add(
            "lm.embed",
            ferrograd_nn::layers::fan_in_uniform(&[vocab, embed], embed, rng),
        )?;
        let mut blocks = Vec::with_capacity(num_blocks);
        for b in 0..num_blocks {
            blocks.push(TransformerBlock::new(
                ps,
                &format!("lm.block{b}"),
                embed,
                heads,
                BlockVariant::PreNorm,
                true,
                rng,
            )?);
        }
        let head = ps.add(
            "lm.head",
            ferrograd_nn::layers::fan_in_uniform(&[embed, vocab], embed, rng),
        )?;
        Ok(TransformerLm {
            embed_table,
            blocks,
            head,
            vocab,
            embed,
            context,
        })
    }

    /// Recorded forward pass: logits (n, vocab) for an id sequence.
    pub fn forward_logits<'t>(
        &self,
        tape: &'t Tape,
        ps: &ParamSet,
        ids: &[usize],
    ) -> Result<Var<'t>> {
        if ids.is_empty() {
            return Err(anyhow!("empty id sequence"));
        }
        if ids.len() > self.context {
            return Err(anyhow!(
                "sequence of {} exceeds context {}",
                ids.len(),
                self.context
            ));
        }
        let table = ps.var(tape, self.embed_table);
        let mut x = embedding_lookup(ids, table)?;
        let pos = tape.input(sinusoidal_embedding(ids.len(), self.embed)?);
        x = x.add(pos)?;
        for block in &self.blocks {
            x = block.forward(tape, ps, x)?;
        }
        Ok(x.matmul(ps.var(tape, self.head))?)
    }

    /// Next-token logits after a prefix, by full recompute.
    pub fn prefix_logits(&self, ps: &ParamSet, prefix: &[usize]) -> Result<Vec<f64>> {
        let window = if prefix.len() > self.context {
            &prefix[prefix.len() - self.context..]
        } else {
            prefix
        };
        let tape = Tape::new();
        let logits = self.forward_logits(&tape, ps, window)?;
        let n = window.len();
        let last = logits.value().slice(&[(n - 1, n), (0, self.vocab)])?;
        Ok(last.data().to_vec())
    }

    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "transformer_lm",
            "vocab": self.vocab,
            "embed": self.embed,
            "heads": self.blocks.first().map(|b| b.attention.heads).unwrap_or(1),
            "blocks": self.blocks.len(),
            "context": self.context,
        })
    }
}

/// Incremental decoding state: one KV cache per block plus the number of
/// positions consumed.
pub struct LmDecodeState {
    caches: Vec<KVCache>,
    position: usize,
}

impl TransformerLm {
    pub fn begin_decode(&self) -> LmDecodeState {
        LmDecodeState {
            caches: self
                .blocks
                .iter()
                .map(|b| KVCache::new(b.attention.heads))
                .collect(),
            position: 0,
        }
    }

    /// Feeds one token through the cached pre-norm stack and returns the
    /// next-token logits. Equals the last row of `forward_logits` on the
    /// extended sequence.
    pub fn decode_step(
        &self,
        ps: &ParamSet,
        state: &mut LmDecodeState,
        token: usize,
    ) -> Result<Vec<f64>> {
        if token >= self.vocab {
            return Err(anyhow!("token {token} outside vocabulary {}", self.vocab));
        }
        let table = ps.value(self.embed_table);
        let mut x = table
            .slice(&[(token, token + 1), (0, self.embed)])?
            .reshape(&[self.embed])?;
        let pos_row = sinusoidal_embedding(state.position + 1, self.embed)?
            .slice(&[(state.position, state.position + 1), (0, self.embed)])?
            .reshape(&[self.embed])?;
        x = x.add(&pos_row)?;
        for (block, cache) in self.blocks.iter().zip(&mut state.caches) {
            // Pre-norm attention sub-block over the single new token.
            let normed = layer_norm_row(
                &x,
                ps.value(block.ln1_alpha),
                ps.value(block.ln1_beta),
            )?;
            let attended = kv_decode_step(ps, &block.attention, cache, &normed)?;
            x = x.add(&attended)?;
            // Pre-norm MLP sub-block.
            let normed2 = layer_norm_row(
                &x,
                ps.value(block.ln2_alpha),
                ps.value(block.ln2_beta),
            )?;
            let row = normed2.reshape(&[1, self.embed])?;
            let hidden = row.matmul(ps.value(block.mlp_w1))?.map(gelu_scalar_local);
            let mlp_out = hidden.matmul(ps.value(block.mlp_w2))?.reshape(&[self.embed])?;
            x = x.add(&mlp_out)?;
        }
        state.position += 1;
        let logits = x
            .reshape(&[1, self.embed])?
            .matmul(ps.value(self.head))?
            .reshape(&[self.vocab])?;
        Ok(logits.data().to_vec())
    }
}

fn layer_norm_row(x: &Tensor, alpha: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let n = x.len() as f64;
    let mean = x.data().iter().sum::<f64>() / n;
    let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let denom = (var + 1e-5).sqrt();
    let normed: Vec<f64> = x
        .data()
        .iter()
        .zip(alpha.data())
        .zip(beta.data())
        .map(|((v, a), b)| (v - mean) / denom * a + b)
        .collect();
    Ok(Tensor::new(vec![x.len()], normed)?)
}

fn gelu_scalar_local(x: f64) -> f64 {
    let u = 0.797_884_560_802_865_4 * (x + 0.044715 * x.powi(3));
    0.5 * x * (1.0 + u.tanh())
}
