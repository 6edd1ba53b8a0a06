//! Register tokens and the manifold regularization term.

use ferrograd_core::{Tape, Tensor};
use ferrograd_nn::attention::{attach_tokens, register_tokens};
use ferrograd_nn::graph::{self, manifold_penalty, SparseGraph};
use ferrograd_nn::param::ParamSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn register_tokens_extend_the_sequence_and_train() {
    let mut ps = ParamSet::new();
    let registers = register_tokens(&mut ps, "enc", 2, 3).unwrap();
    let tape = Tape::new();
    let x = tape.input(Tensor::rand_uniform(
        &[4, 3],
        -1.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(1),
    ));
    let extended = attach_tokens(&tape, &ps, x, &registers).unwrap();
    assert_eq!(extended.shape(), vec![6, 3]);
    // Gradients reach the registers through any loss over their rows.
    let loss = extended
        .slice(&[(4, 6), (0, 3)])
        .unwrap()
        .square()
        .sum_all()
        .unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(registers[0]).is_some());
}

#[test]
fn zero_register_count_is_the_identity() {
    let mut ps = ParamSet::new();
    let registers = register_tokens(&mut ps, "enc", 0, 3).unwrap();
    assert!(registers.is_empty());
    let tape = Tape::new();
    let xv = Tensor::rand_uniform(&[2, 3], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
    let x = tape.input(xv.clone());
    let extended = attach_tokens(&tape, &ps, x, &registers).unwrap();
    assert_eq!(&*extended.value(), &xv);
}

#[test]
fn manifold_penalty_matches_the_quadratic_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::rand_uniform(&[5, 1], -1.0, 1.0, &mut rng);
    let g = SparseGraph::undirected(x, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
    let f = Tensor::rand_uniform(&[5], -1.0, 1.0, &mut rng);
    let lambda = 0.7;
    let tape = Tape::new();
    let fv = tape.input(f.clone());
    let term = manifold_penalty(&g, fv, lambda).unwrap();
    let expected = lambda * graph::laplacian_quadratic(&g, &f).unwrap();
    assert!((term.value().item().unwrap() - expected).abs() <= 1e-12);
}

#[test]
fn manifold_penalty_vanishes_on_constant_signals() {
    let g = SparseGraph::undirected(Tensor::zeros(&[4, 1]), &[(0, 1), (1, 2), (2, 3)]).unwrap();
    let tape = Tape::new();
    let f = tape.input(Tensor::full(&[4], 3.0));
    let term = manifold_penalty(&g, f, 1.0).unwrap();
    assert!(term.value().item().unwrap().abs() <= 1e-12);
}

#[test]
fn graph_json_reader_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    std::fs::write(
        &path,
        serde_json::to_string(&serde_json::json!({
            "n": 3,
            "edges": [[0, 1], [1, 2]],
            "x": [[0.5, 1.0], [-0.5, 0.0], [1.5, -1.0]],
            "y": [0, 1, 0],
            "train_mask": [true, true, false],
        }))
        .unwrap(),
    )
    .unwrap();
    let (g, y, mask) = graph::read_graph_json(&path).unwrap();
    assert_eq!(g.num_nodes(), 3);
    assert_eq!(g.feature_width(), 2);
    assert_eq!(y, vec![0, 1, 0]);
    assert_eq!(mask, vec![true, true, false]);
    // Undirected + self loops: (0,1),(1,0),(1,2),(2,1) plus 3 loops.
    assert_eq!(g.edges.len(), 7);
    assert_eq!(g.x.at(&[2, 1]), -1.0);
}
