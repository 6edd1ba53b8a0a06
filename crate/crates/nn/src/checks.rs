//! Gradient-check cases for the layer catalog.
//!
//! Each case owns a layer built over parameter ids 0..k and lists those
//! parameter values as check inputs in id order. The harness registers the
//! (possibly perturbed) values on its tape under the same ids, and since a
//! tape deduplicates parameter leaves by id, the layer forward reads
//! exactly the harness's leaves. Probes stay away from non-smooth points.

use crate::act::{Activation, ActivationOps};
use crate::attention::{
    self, AttentionParams, BlockVariant, MhaOptions, TransformerBlock,
};
use crate::conv::{self, ConvSpec, Padding};
use crate::graph::{self, GatLayer, GatVariant, GcnLayer, ShiftKind, SparseGraph};
use crate::layers::{self, BatchNorm, Dense, Glu, PRelu};
use crate::param::ParamSet;
use crate::recurrent::{DiagSsm, ElmanCell, LiGruCell, Readout, RecurrentCell};
use ferrograd_core::check::CheckCase;
use ferrograd_core::registry::{positive_probe, probe};
use ferrograd_core::{Reduction, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params_as_inputs(ps: &ParamSet) -> Vec<Tensor> {
    ps.iter().map(|(_, p)| p.value.clone()).collect()
}

fn weighted_sum<'t>(out: Var<'t>, seed: u64) -> Result<Var<'t>, ferrograd_core::AdError> {
    let shape = out.shape();
    let w = out.tape().input(probe(&shape, seed));
    out.mul(w)?.sum_all()
}

/// A small fixed graph with self-loops used by the graph-layer checks.
fn toy_graph(seed: u64) -> SparseGraph {
    let x = probe(&[5, 3], seed);
    SparseGraph::undirected(x, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)])
        .expect("valid graph")
        .with_self_loops()
}

/// One check case per activation primitive.
pub fn activation_cases() -> Vec<CheckCase> {
    type Apply = for<'a> fn(Var<'a>) -> Var<'a>;
    let make = |name: &'static str, input: Tensor, f: Apply| {
        CheckCase::new(name, vec![input], move |_t: &Tape, v: &[Var<'_>]| {
            weighted_sum(f(v[0]), 1000)
        })
    };
    vec![
        // ReLU-family probes sit strictly on the positive side or well
        // below zero, away from the kink.
        make("relu", positive_probe(&[2, 3], 50).add_scalar(0.1), |x| x.relu()),
        make("leaky_relu", probe(&[2, 3], 51), |x| x.leaky_relu(0.01)),
        make("sigmoid", probe(&[2, 3], 52), |x| x.sigmoid()),
        make("tanh", probe(&[2, 3], 53), |x| x.tanh()),
        make("softplus", probe(&[2, 3], 54), |x| x.softplus()),
        make("elu", probe(&[2, 3], 55), |x| x.elu(1.0)),
        make("gelu", probe(&[2, 3], 56), |x| x.gelu()),
        make("silu", probe(&[2, 3], 57), |x| x.silu()),
    ]
}

/// Check cases for every layer family.
pub fn layer_cases() -> Vec<CheckCase> {
    let mut cases = Vec::new();

    // Dense with a smooth activation.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let layer = Dense::new(&mut ps, "dense", 3, 2, Activation::Tanh, &mut rng).unwrap();
        cases.push(CheckCase::new(
            "dense_tanh",
            params_as_inputs(&ps),
            move |tape: &Tape, _v: &[Var<'_>]| {
                let ps = ps.clone();
                let x = tape.input(probe(&[4, 3], 2));
                let out = layer.forward(tape, &ps, x).map_err(ad)?;
                weighted_sum(out, 3)
            },
        ));
    }

    // Dense + ReLU in a strictly positive pre-activation regime.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = ParamSet::new();
        let mut layer = Dense::new(&mut ps, "dense", 3, 2, Activation::Relu, &mut rng).unwrap();
        ps.get_mut(layer.w).value = positive_probe(&[3, 2], 5);
        ps.get_mut(layer.b).value = Tensor::full(&[2], 0.5);
        layer.activation = Activation::Relu;
        cases.push(CheckCase::new(
            "dense_relu",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(positive_probe(&[4, 3], 6));
                let out = layer.forward(tape, &ps, x).map_err(ad)?;
                weighted_sum(out, 7)
            },
        ));
    }

    // PReLU (probes clear of zero).
    {
        let mut ps = ParamSet::new();
        let layer = PRelu::new(&mut ps, "prelu", 3).unwrap();
        ps.get_mut(layer.slope).value = probe(&[3], 8);
        cases.push(CheckCase::new(
            "prelu",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[4, 3], 9));
                let out = layer.forward(tape, &ps, x).map_err(ad)?;
                weighted_sum(out, 10)
            },
        ));
    }

    // GLU.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ps = ParamSet::new();
        let layer = Glu::new(&mut ps, "glu", 3, 2, &mut rng).unwrap();
        cases.push(CheckCase::new(
            "glu",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[4, 3], 12));
                let out = layer.forward(tape, &ps, x).map_err(ad)?;
                weighted_sum(out, 13)
            },
        ));
    }

    // Batch norm in train mode.
    {
        let mut ps = ParamSet::new();
        let layer = BatchNorm::new(&mut ps, "bn", 3).unwrap();
        ps.get_mut(layer.alpha).value = positive_probe(&[3], 14);
        ps.get_mut(layer.beta).value = probe(&[3], 15);
        cases.push(CheckCase::new(
            "batch_norm",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let mut bn = layer.clone();
                let x = tape.input(probe(&[6, 3], 16));
                let out = bn.forward_train(tape, &ps, x).map_err(ad)?;
                weighted_sum(out, 17)
            },
        ));
    }

    // Layer norm.
    {
        let mut ps = ParamSet::new();
        let alpha = ps.add("ln.alpha", positive_probe(&[4], 18)).unwrap();
        let beta = ps.add("ln.beta", probe(&[4], 19)).unwrap();
        cases.push(CheckCase::new(
            "layer_norm",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[3, 4], 20));
                let out = layers::layer_norm(x, 1, ps.var(tape, alpha), ps.var(tape, beta), 1e-5)
                    .map_err(ad)?;
                weighted_sum(out, 21)
            },
        ));
    }

    // RMS norm.
    {
        let mut ps = ParamSet::new();
        let alpha = ps.add("rms.alpha", positive_probe(&[4], 22)).unwrap();
        cases.push(CheckCase::new(
            "rms_norm",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[3, 4], 23));
                let out = layers::rms_norm(x, ps.var(tape, alpha), 1e-8).map_err(ad)?;
                weighted_sum(out, 24)
            },
        ));
    }

    // Residual around a dense block.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut ps = ParamSet::new();
        let inner = Dense::new(&mut ps, "res.dense", 3, 3, Activation::Tanh, &mut rng).unwrap();
        cases.push(CheckCase::new(
            "residual_dense",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[4, 3], 26));
                let out =
                    layers::residual(x, |inner_x| inner.forward(tape, &ps, inner_x)).map_err(ad)?;
                weighted_sum(out, 27)
            },
        ));
    }

    // Embedding lookup with a repeated id (weight sharing).
    {
        let mut ps = ParamSet::new();
        let table = ps.add("embed.table", probe(&[5, 3], 28)).unwrap();
        cases.push(CheckCase::new(
            "embedding",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let rows =
                    layers::embedding_lookup(&[0, 2, 0, 4], ps.var(tape, table)).map_err(ad)?;
                weighted_sum(rows, 29)
            },
        ));
    }

    cases.extend(conv_cases());
    cases.extend(attention_cases());
    cases.extend(graph_cases());
    cases.extend(recurrent_cases());
    cases
}

fn conv_cases() -> Vec<CheckCase> {
    let mut cases = Vec::new();

    // conv1d, same padding.
    {
        let mut ps = ParamSet::new();
        let w = ps.add("conv1.w", probe(&[3, 2, 3], 30)).unwrap();
        let b = ps.add("conv1.b", probe(&[3], 31)).unwrap();
        let spec = ConvSpec::new(1, 2, 3);
        cases.push(CheckCase::new(
            "conv1d_same",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[2, 5, 2], 32));
                let out = conv::conv1d(x, &spec, ps.var(tape, w), Some(ps.var(tape, b)))
                    .map_err(ad)?;
                weighted_sum(out, 33)
            },
        ));
    }

    // conv1d, causal and dilated.
    {
        let mut ps = ParamSet::new();
        let w = ps.add("convc.w", probe(&[5, 2, 2], 34)).unwrap();
        let spec = ConvSpec::new(2, 2, 2).causal().with_dilation(2);
        cases.push(CheckCase::new(
            "conv1d_causal_dilated",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[1, 7, 2], 35));
                let out = conv::conv1d(x, &spec, ps.var(tape, w), None).map_err(ad)?;
                weighted_sum(out, 36)
            },
        ));
    }

    // conv2d, same padding.
    {
        let mut ps = ParamSet::new();
        let w = ps.add("conv2.w", probe(&[3, 3, 2, 2], 37)).unwrap();
        let b = ps.add("conv2.b", probe(&[2], 38)).unwrap();
        let spec = ConvSpec::new(1, 2, 2);
        cases.push(CheckCase::new(
            "conv2d_same",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[1, 4, 4, 2], 39));
                let out = conv::conv2d(x, &spec, ps.var(tape, w), Some(ps.var(tape, b)))
                    .map_err(ad)?;
                weighted_sum(out, 40)
            },
        ));
    }

    // conv2d, valid padding with stride 2.
    {
        let mut ps = ParamSet::new();
        let w = ps.add("conv2s.w", probe(&[3, 3, 1, 2], 41)).unwrap();
        let spec = ConvSpec::new(1, 1, 2)
            .with_padding(Padding::Valid)
            .with_stride(2);
        cases.push(CheckCase::new(
            "conv2d_valid_strided",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[1, 6, 6, 1], 42));
                let out = conv::conv2d(x, &spec, ps.var(tape, w), None).map_err(ad)?;
                weighted_sum(out, 43)
            },
        ));
    }

    // Depthwise conv2d.
    {
        let mut ps = ParamSet::new();
        let w = ps.add("dw.w", probe(&[3, 3, 2], 44)).unwrap();
        let spec = ConvSpec::new(1, 2, 2).depthwise();
        cases.push(CheckCase::new(
            "conv2d_depthwise",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[1, 4, 4, 2], 45));
                let out = conv::conv2d(x, &spec, ps.var(tape, w), None).map_err(ad)?;
                weighted_sum(out, 46)
            },
        ));
    }

    // Max pooling: the input is the differentiable leaf; distinct values
    // keep the argmax stable under perturbation.
    cases.push(CheckCase::new(
        "max_pool2d",
        vec![Tensor::from_fn(&[1, 4, 4, 1], |ix| {
            (ix[1] * 4 + ix[2]) as f64 * 0.37 + 0.1
        })],
        move |_tape: &Tape, v: &[Var<'_>]| {
            let out = conv::max_pool2d(v[0], 2).map_err(ad)?;
            weighted_sum(out, 47)
        },
    ));

    // Global mean pooling.
    cases.push(CheckCase::new(
        "global_pool_mean",
        vec![probe(&[2, 3, 3, 2], 48)],
        move |_tape: &Tape, v: &[Var<'_>]| {
            let out = conv::global_pool(v[0], Reduction::Sum).map_err(ad)?;
            weighted_sum(out, 49)
        },
    ));

    cases
}

fn attention_cases() -> Vec<CheckCase> {
    let mut cases = Vec::new();

    // Single-head self-attention.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let mut ps = ParamSet::new();
        let params = AttentionParams::new(&mut ps, "sa", 1, 4, 3, 3, 3, &mut rng).unwrap();
        cases.push(CheckCase::new(
            "self_attention",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[5, 4], 61));
                let out = attention::self_attention(tape, &ps, x, &params).map_err(ad)?;
                weighted_sum(out, 62)
            },
        ));
    }

    // Causal multi-head attention.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let mut ps = ParamSet::new();
        let params = AttentionParams::new(&mut ps, "mha", 2, 4, 2, 2, 4, &mut rng).unwrap();
        cases.push(CheckCase::new(
            "mha_causal",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[4, 4], 64));
                let out = attention::multi_head_attention(
                    tape,
                    &ps,
                    x,
                    &params,
                    MhaOptions {
                        causal: true,
                        linear_bias: None,
                        attention_dropout: None,
                    },
                )
                .map_err(ad)?;
                weighted_sum(out, 65)
            },
        ));
    }

    // Cross-attention.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        let mut ps = ParamSet::new();
        let params = AttentionParams::new(&mut ps, "ca", 1, 3, 2, 2, 2, &mut rng).unwrap();
        cases.push(CheckCase::new(
            "cross_attention",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[4, 3], 67));
                let z = tape.input(probe(&[3, 3], 68));
                let out = attention::cross_attention(tape, &ps, x, z, &params).map_err(ad)?;
                weighted_sum(out, 69)
            },
        ));
    }

    // Transformer blocks, both norm placements.
    for (name, variant, seed) in [
        ("transformer_block_prenorm", BlockVariant::PreNorm, 70u64),
        ("transformer_block_postnorm", BlockVariant::PostNorm, 73),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let block =
            TransformerBlock::new(&mut ps, "blk", 4, 2, variant, false, &mut rng).unwrap();
        cases.push(CheckCase::new(
            name,
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[3, 4], seed + 1));
                let out = block.forward(tape, &ps, x).map_err(ad)?;
                weighted_sum(out, seed + 2)
            },
        ));
    }

    // Class token: the gradient must flow into the token through a head
    // that reads only the last row.
    {
        let mut ps = ParamSet::new();
        let token = ps.add("class.token", probe(&[3], 76)).unwrap();
        cases.push(CheckCase::new(
            "class_token",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = tape.input(probe(&[4, 3], 77));
                let with_token =
                    attention::class_token_attach(tape, &ps, x, token).map_err(ad)?;
                let last = with_token.slice(&[(4, 5), (0, 3)])?;
                weighted_sum(last.tanh(), 78)
            },
        ));
    }

    // Learned positional rows.
    {
        let mut ps = ParamSet::new();
        let table = ps.add("pos.table", probe(&[6, 3], 79)).unwrap();
        cases.push(CheckCase::new(
            "positional_learned",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let scheme = attention::PositionalScheme::Learned { table, max_len: 6 };
                match attention::positional_embed(tape, &ps, &scheme, 4).map_err(ad)? {
                    attention::PositionalOutput::Rows(rows) => weighted_sum(rows, 80),
                    attention::PositionalOutput::Bias(_) => unreachable!(),
                }
            },
        ));
    }

    cases
}

fn graph_cases() -> Vec<CheckCase> {
    let mut cases = Vec::new();

    // Graph convolution over the symmetric normalized shift.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let mut ps = ParamSet::new();
        let layer = GcnLayer::new(&mut ps, "gcn", 3, 2, Activation::Tanh, &mut rng).unwrap();
        cases.push(CheckCase::new(
            "gcn",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let g = toy_graph(91);
                let shift = graph::graph_shift(&g, ShiftKind::SymNorm, false).map_err(ad)?;
                let x = tape.input(g.x.clone());
                let out = layer.forward(tape, &ps, &shift, x).map_err(ad)?;
                weighted_sum(out, 92)
            },
        ));
    }

    // GAT, both scoring variants.
    for (name, variant, seed) in [
        ("gat_v1", GatVariant::V1, 93u64),
        ("gat_v2", GatVariant::V2, 96),
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let layer =
            GatLayer::new(&mut ps, "gat", variant, 3, 2, 2, Activation::Tanh, &mut rng).unwrap();
        cases.push(CheckCase::new(
            name,
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let g = toy_graph(seed + 1);
                let x = tape.input(g.x.clone());
                let out = layer.forward(tape, &ps, &g, x).map_err(ad)?;
                weighted_sum(out, seed + 2)
            },
        ));
    }

    // Message passing instantiated with a dense message and update.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let mut ps = ParamSet::new();
        let w_msg = ps.add("mp.w_msg", probe(&[3, 2], 101)).unwrap();
        let w_upd = ps.add("mp.w_upd", probe(&[3, 2], 102)).unwrap();
        let _ = &mut rng;
        cases.push(CheckCase::new(
            "message_passing",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let g = toy_graph(103);
                let x = tape.input(g.x.clone());
                let out = graph::message_passing(
                    tape,
                    &g,
                    x,
                    Reduction::Sum,
                    |inputs| Ok(inputs.src.matmul(ps.var(tape, w_msg))?.tanh()),
                    |node_x, pooled| Ok(node_x.matmul(ps.var(tape, w_upd))?.add(pooled)?.tanh()),
                )
                .map_err(ad)?;
                weighted_sum(out, 104)
            },
        ));
    }

    // Random-walk embedding projection.
    {
        let mut ps = ParamSet::new();
        let proj = ps.add("rw.proj", probe(&[3, 2], 105)).unwrap();
        cases.push(CheckCase::new(
            "random_walk_embedding",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let g = toy_graph(106);
                let out =
                    graph::random_walk_embedding(tape, &ps, &g, 3, proj).map_err(ad)?;
                weighted_sum(out, 107)
            },
        ));
    }

    // Edge head through gathered endpoint features.
    cases.push(CheckCase::new(
        "edge_head",
        vec![probe(&[4, 3], 108)],
        move |_tape: &Tape, v: &[Var<'_>]| {
            let scores = graph::edge_head(v[0], &[(0, 1), (2, 3), (1, 3)]).map_err(ad)?;
            weighted_sum(scores, 109)
        },
    ));

    cases
}

fn recurrent_cases() -> Vec<CheckCase> {
    let mut cases = Vec::new();

    // Elman cell unrolled three steps (the BPTT path).
    {
        let mut rng = ChaCha8Rng::seed_from_u64(110);
        let mut ps = ParamSet::new();
        let cell = ElmanCell::new(&mut ps, "elman", 3, 2, Activation::Tanh, &mut rng).unwrap();
        let readout = Readout::new(&mut ps, "elman.read", 3, 2, 2, &mut rng).unwrap();
        cases.push(CheckCase::new(
            "elman_bptt3",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let xs = tape.input(probe(&[3, 2], 111));
                let (_, outputs) =
                    crate::recurrent::rnn_scan(tape, &ps, &cell, &readout, xs).map_err(ad)?;
                weighted_sum(outputs, 112)
            },
        ));
    }

    // Li-GRU cell.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(113);
        let mut ps = ParamSet::new();
        let cell = LiGruCell::new(&mut ps, "ligru", 3, 2, Activation::Tanh, &mut rng).unwrap();
        cases.push(CheckCase::new(
            "ligru",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let mut state = tape.input(Tensor::zeros(&[3, 1]));
                for step in 0..3 {
                    let x = tape.input(probe(&[2, 1], 114 + step));
                    state = cell.step(tape, &ps, state, x).map_err(ad)?;
                }
                weighted_sum(state, 118)
            },
        ));
    }

    // Diagonal SSM through the recorded parallel scan.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(120);
        let mut ps = ParamSet::new();
        let ssm = DiagSsm::new(&mut ps, "dssm", 3, 2, 2, &mut rng).unwrap();
        cases.push(CheckCase::new(
            "diag_ssm",
            params_as_inputs(&ps),
            move |tape: &Tape, _v| {
                let ps = ps.clone();
                let x = probe(&[6, 2], 121);
                let out = ssm.forward(tape, &ps, &x).map_err(ad)?;
                weighted_sum(out, 122)
            },
        ));
    }

    cases
}

/// Every nn-layer check case (activations plus layers).
pub fn all_cases() -> Vec<CheckCase> {
    let mut cases = activation_cases();
    cases.extend(layer_cases());
    cases
}

fn ad(e: crate::error::NnError) -> ferrograd_core::AdError {
    match e {
        crate::error::NnError::Ad(inner) => inner,
        other => ferrograd_core::AdError::Contract {
            op: "layer",
            reason: other.to_string(),
        },
    }
}
