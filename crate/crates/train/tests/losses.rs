//! Loss values against analytic forms and the pure-softmax oracle,
//! including the stability contract for shifted logits.

use ferrograd_core::{Tape, Tensor};
use ferrograd_train::loss;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn mse_of_identical_tensors_is_zero() {
    let x = Tensor::rand_uniform(&[4, 3], -1.0, 1.0, &mut rng(1));
    let tape = Tape::new();
    let pred = tape.input(x.clone());
    let v = loss::mse(pred, &x).unwrap();
    assert_eq!(v.value().item().unwrap(), 0.0);
}

#[test]
fn cross_entropy_of_uniform_logits_is_log_m() {
    for m in [2usize, 5, 11] {
        let tape = Tape::new();
        let logits = tape.input(Tensor::full(&[3, m], 0.37));
        let labels = vec![0usize; 3];
        let v = loss::ce_from_logits(logits, &labels).unwrap();
        assert_close(v.value().item().unwrap(), (m as f64).ln(), 1e-12);
    }
}

#[test]
fn ce_from_logits_matches_softmax_log_oracle_even_shifted() {
    let raw = Tensor::rand_uniform(&[5, 4], -2.0, 2.0, &mut rng(2));
    let labels = [1usize, 3, 0, 2, 2];
    for shift in [0.0, 1000.0] {
        let logits = raw.add_scalar(shift);
        let tape = Tape::new();
        let v = loss::ce_from_logits(tape.input(logits.clone()), &labels).unwrap();
        // Oracle: softmax explicitly (on the unshifted values, where the
        // naive exponentials are safe), then −log p_y averaged.
        let soft = raw.softmax(1.0).unwrap();
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            total += -soft.at(&[i, y]).ln();
        }
        assert_close(v.value().item().unwrap(), total / 5.0, 1e-10);
        assert!(v.value().item().unwrap().is_finite());
    }
}

#[test]
fn ce_rejects_bad_class_index() {
    let tape = Tape::new();
    let logits = tape.input(Tensor::zeros(&[2, 3]));
    assert!(loss::ce_from_logits(logits, &[0, 3]).is_err());
}

#[test]
fn masked_ce_averages_only_kept_rows() {
    let logits_v = Tensor::rand_uniform(&[4, 3], -1.0, 1.0, &mut rng(3));
    let labels = [0usize, 1, 2, 1];
    let mask = [true, false, true, false];
    let tape = Tape::new();
    let masked = loss::ce_from_logits_masked(tape.input(logits_v.clone()), &labels, &mask)
        .unwrap();
    // Oracle over the two kept rows.
    let soft = logits_v.softmax(1.0).unwrap();
    let expect = (-soft.at(&[0, 0]).ln() - soft.at(&[2, 2]).ln()) / 2.0;
    assert_close(masked.value().item().unwrap(), expect, 1e-12);
}

#[test]
fn bce_from_logits_matches_sigmoid_oracle() {
    let logits_v = Tensor::rand_uniform(&[6], -3.0, 3.0, &mut rng(4));
    let targets = Tensor::from_slice(&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    let tape = Tape::new();
    let v = loss::bce_from_logits(tape.input(logits_v.clone()), &targets).unwrap();
    let mut expect = 0.0;
    for (x, y) in logits_v.data().iter().zip(targets.data()) {
        let p = 1.0 / (1.0 + (-x).exp());
        expect += -y * p.ln() - (1.0 - y) * (1.0 - p).ln();
    }
    assert_close(v.value().item().unwrap(), expect / 6.0, 1e-10);
}

#[test]
fn logistic_gradient_identity() {
    // For the binary model p = σ(wᵀx), ∂CE/∂w = (p − y)·x; autodiff must
    // reproduce it to 1e-10.
    let mut r = rng(5);
    for trial in 0..5 {
        let w_v = Tensor::rand_uniform(&[4], -1.0, 1.0, &mut r);
        let x_v = Tensor::rand_uniform(&[4], -1.0, 1.0, &mut r);
        let y = if trial % 2 == 0 { 1.0 } else { 0.0 };
        let tape = Tape::new();
        let w = tape.param(0, &w_v);
        let x = tape.input(x_v.clone());
        let logit = w.gdot(x).unwrap().reshape(&[1]).unwrap();
        let ce = loss::bce_from_logits(logit, &Tensor::from_slice(&[y])).unwrap();
        let grads = tape.backward(ce).unwrap();
        let g = grads.get(0).unwrap();
        let p = 1.0 / (1.0 + (-w_v.gdot(&x_v).unwrap()).exp());
        for j in 0..4 {
            assert_close(g.at(&[j]), (p - y) * x_v.at(&[j]), 1e-10);
        }
    }
}

#[test]
fn hinge_loss_examples() {
    let tape = Tape::new();
    // Margins: 1·2.0 = 2 → 0 loss; (−1)·0.5 → 1.5 loss.
    let pred = tape.input(Tensor::from_slice(&[2.0, 0.5]));
    let targets = Tensor::from_slice(&[1.0, -1.0]);
    let v = loss::hinge(pred, &targets).unwrap();
    assert_close(v.value().item().unwrap(), (0.0 + 1.5) / 2.0, 1e-12);
    assert!(loss::hinge(pred, &Tensor::from_slice(&[1.0, 0.3])).is_err());
}

#[test]
fn huber_is_quadratic_inside_linear_outside() {
    let tape = Tape::new();
    let pred = tape.input(Tensor::from_slice(&[0.5, 3.0]));
    let target = Tensor::zeros(&[2]);
    let v = loss::huber(pred, &target, 1.0).unwrap();
    let expect = (0.5 * 0.25 + (3.0 - 0.5)) / 2.0;
    assert_close(v.value().item().unwrap(), expect, 1e-12);
}

#[test]
fn brier_score_of_perfect_prediction_is_small() {
    let tape = Tape::new();
    // Strongly peaked logits on the true class.
    let logits = tape.input(Tensor::new(vec![2, 3], vec![30.0, 0.0, 0.0, 0.0, 30.0, 0.0]).unwrap());
    let v = loss::brier(logits, &[0, 1]).unwrap();
    assert!(v.value().item().unwrap() < 1e-10);
}

#[test]
fn accuracy_counts_argmax_hits() {
    let logits = Tensor::new(
        vec![3, 2],
        vec![2.0, 1.0, 0.0, 1.0, 0.3, 0.7],
    )
    .unwrap();
    assert_close(loss::accuracy(&logits, &[0, 1, 0]), 2.0 / 3.0, 1e-15);
}
