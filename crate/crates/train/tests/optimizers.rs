//! Optimizer trajectories against hand-unrolled updates, clipping, and
//! the penalty terms.

use ferrograd_core::{GradientStore, Tape, Tensor};
use ferrograd_nn::param::ParamSet;
use ferrograd_train::estimate;
use ferrograd_train::optim::{grad_clip, l1_penalty, l2_penalty, Adam, Sgd, SpredPair};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn store(id: usize, grad: Tensor) -> GradientStore {
    let mut s = GradientStore::new();
    s.insert(id, grad);
    s
}

#[test]
fn gradient_descent_finds_the_quadratic_minimum() {
    // f(x) = x² − 1.5x has its stationary point at 0.75.
    let mut ps = ParamSet::new();
    let x = ps.add("x", Tensor::scalar(0.0)).unwrap();
    let mut opt = Sgd::new(0.1);
    for _ in 0..200 {
        let tape = Tape::new();
        let xv = ps.var(&tape, x);
        let loss = xv.square().sub(xv.scale(1.5)).unwrap().sum_all().unwrap();
        let grads = tape.backward(loss).unwrap();
        opt.step(&mut ps, &grads).unwrap();
    }
    assert_close(ps.value(x).item().unwrap(), 0.75, 1e-6);
}

#[test]
fn zero_momentum_is_bitwise_plain_descent() {
    let w0 = Tensor::rand_uniform(&[4], -1.0, 1.0, &mut rng(1));
    let g = Tensor::rand_uniform(&[4], -1.0, 1.0, &mut rng(2));
    let lr = 0.05;

    let mut ps_a = ParamSet::new();
    let a = ps_a.add("w", w0.clone()).unwrap();
    let mut with_momentum = Sgd::new(lr).with_momentum(0.0);
    with_momentum.step(&mut ps_a, &store(a, g.clone())).unwrap();

    let mut ps_b = ParamSet::new();
    let b = ps_b.add("w", w0.clone()).unwrap();
    let mut plain = Sgd::new(lr);
    plain.step(&mut ps_b, &store(b, g.clone())).unwrap();

    assert_eq!(ps_a.value(a).data(), ps_b.value(b).data());
}

#[test]
fn momentum_buffer_damps_older_gradients_geometrically() {
    // After three steps the buffer is −η(g₃ + λg₂ + λ²g₁): the gradient
    // from step t−n enters damped by λ^(n−1).
    let (lr, lam) = (0.1, 0.3);
    let g1 = Tensor::from_slice(&[1.0]);
    let g2 = Tensor::from_slice(&[-2.0]);
    let g3 = Tensor::from_slice(&[0.5]);
    let mut ps = ParamSet::new();
    let w = ps.add("w", Tensor::from_slice(&[0.0])).unwrap();
    let mut opt = Sgd::new(lr).with_momentum(lam);
    let mut positions = vec![0.0];
    for g in [&g1, &g2, &g3] {
        opt.step(&mut ps, &store(w, g.clone())).unwrap();
        positions.push(ps.value(w).item().unwrap());
    }
    // Recover the applied updates (differences of positions) and compare
    // with the unrolled momentum recursion.
    let updates: Vec<f64> = positions.windows(2).map(|p| p[1] - p[0]).collect();
    let b1 = -lr * 1.0;
    let b2 = -lr * -2.0 + lam * b1;
    let b3 = -lr * 0.5 + lam * b2;
    assert_close(updates[0], b1, 1e-15);
    assert_close(updates[1], b2, 1e-15);
    assert_close(updates[2], b3, 1e-15);
    let lambda_sq_term = -lr * 1.0 * lam * lam;
    assert_close(b3, -lr * 0.5 + lam * (-lr * -2.0) + lambda_sq_term, 1e-15);
}

#[test]
fn adam_leaves_parameters_alone_on_zero_gradients() {
    let w0 = Tensor::rand_uniform(&[3], -1.0, 1.0, &mut rng(3));
    let mut ps = ParamSet::new();
    let w = ps.add("w", w0.clone()).unwrap();
    let mut adam = Adam::new(1e-2);
    for _ in 0..3 {
        adam.step(&mut ps, &store(w, Tensor::zeros(&[3]))).unwrap();
    }
    assert_eq!(ps.value(w).data(), w0.data());

    // Decoupled decay still shrinks weights with zero gradients.
    let mut ps2 = ParamSet::new();
    let w2 = ps2.add("w", w0.clone()).unwrap();
    let mut adamw = Adam::new(1e-2).with_weight_decay(0.1, true);
    adamw.step(&mut ps2, &store(w2, Tensor::zeros(&[3]))).unwrap();
    for (after, before) in ps2.value(w2).data().iter().zip(w0.data()) {
        assert_close(*after, before * (1.0 - 1e-2 * 0.1), 1e-15);
    }
}

#[test]
fn adam_step_magnitude_approaches_learning_rate() {
    // With a constant gradient, m̂ → g and v̂ → g², so |Δx| → η.
    let lr = 1e-3;
    let mut ps = ParamSet::new();
    let w = ps.add("w", Tensor::scalar(5.0)).unwrap();
    let mut adam = Adam::new(lr);
    let g = Tensor::scalar(0.37);
    let mut prev = 5.0;
    let mut last_step = 0.0;
    for _ in 0..500 {
        adam.step(&mut ps, &store(w, g.clone())).unwrap();
        let now = ps.value(w).item().unwrap();
        last_step = (now - prev).abs();
        prev = now;
    }
    assert_close(last_step, lr, lr * 1e-3);
}

#[test]
fn adam_matches_a_hand_unrolled_two_step_trace() {
    let (lr, b1, b2, eps): (f64, f64, f64, f64) = (0.01, 0.9, 0.999, 1e-8);
    let grads = [0.7f64, -0.2];
    let mut x = 1.0f64;
    let (mut m, mut v) = (0.0f64, 0.0f64);
    let mut expected = Vec::new();
    for (t, g) in grads.iter().enumerate() {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(t as i32 + 1));
        let v_hat = v / (1.0 - b2.powi(t as i32 + 1));
        x -= lr * m_hat / (v_hat.sqrt() + eps);
        expected.push(x);
    }

    let mut ps = ParamSet::new();
    let w = ps.add("w", Tensor::scalar(1.0)).unwrap();
    let mut adam = Adam::new(lr);
    for (g, want) in grads.iter().zip(&expected) {
        adam.step(&mut ps, &store(w, Tensor::scalar(*g))).unwrap();
        assert_close(ps.value(w).item().unwrap(), *want, 1e-15);
    }
}

#[test]
fn decoupled_decay_diverges_from_l2_gradient_decay() {
    // Same decay coefficient, different trajectories on one parameter.
    let wd = 0.2;
    let grads = [0.5, 0.1, -0.3, 0.2];
    let run = |decoupled: bool| -> f64 {
        let mut ps = ParamSet::new();
        let w = ps.add("w", Tensor::scalar(2.0)).unwrap();
        let mut adam = Adam::new(0.05).with_weight_decay(wd, decoupled);
        for g in grads {
            adam.step(&mut ps, &store(w, Tensor::scalar(g))).unwrap();
        }
        ps.value(w).item().unwrap()
    };
    let adamw = run(true);
    let adam_l2 = run(false);
    assert!(
        (adamw - adam_l2).abs() > 1e-4,
        "AdamW {adamw} vs Adam+L2 {adam_l2} coincided"
    );
}

#[test]
fn clip_examples() {
    let mut below = store(0, Tensor::from_slice(&[0.3, 0.4]));
    let norm = grad_clip(&mut below, 1.0).unwrap();
    assert_close(norm, 0.5, 1e-15);
    assert_eq!(below.get(0).unwrap().data(), &[0.3, 0.4]);

    let mut above = store(0, Tensor::from_slice(&[6.0, 8.0])); // norm 10
    grad_clip(&mut above, 1.0).unwrap();
    assert_close(above.get(0).unwrap().data()[0], 0.6, 1e-15);
    assert_close(above.get(0).unwrap().data()[1], 0.8, 1e-15);
    assert_close(above.global_norm(), 1.0, 1e-12);

    // Post-clip norm equals min(norm, cap).
    let mut mid = store(0, Tensor::from_slice(&[0.1, 0.2]));
    let pre = mid.global_norm();
    grad_clip(&mut mid, 5.0).unwrap();
    assert_close(mid.global_norm(), pre.min(5.0), 1e-12);
}

#[test]
fn l2_and_l1_penalties() {
    let w = Tensor::from_slice(&[1.0, -2.0, 0.0]);
    let l2 = l2_penalty(&[&w]);
    assert_close(l2.value, 5.0, 1e-15);
    assert_eq!(l2.grads[0].data(), &[2.0, -4.0, 0.0]);

    let l1 = l1_penalty(&[&w]);
    assert_close(l1.value, 3.0, 1e-15);
    // Subgradient at zero is zero.
    assert_eq!(l1.grads[0].data(), &[1.0, -1.0, 0.0]);
}

#[test]
fn spred_pair_tracks_effective_weights() {
    let a = Tensor::from_slice(&[0.5, -1.0]);
    let b = Tensor::from_slice(&[2.0, 0.25]);
    let pair = SpredPair::new(a, b).unwrap();
    assert_eq!(pair.effective_weights().data(), &[1.0, -0.25]);
    let penalty = pair.penalty();
    assert_close(penalty.value, 0.25 + 1.0 + 4.0 + 0.0625, 1e-15);
}

#[test]
fn ridge_closed_form_matches_regularized_descent() {
    let mut r = rng(6);
    let x = Tensor::rand_uniform(&[5, 3], -1.0, 1.0, &mut r);
    let y = Tensor::rand_uniform(&[5], -1.0, 1.0, &mut r);
    let lambda = 0.5;
    let closed = estimate::least_squares_closed_form(&x, &y, lambda).unwrap();
    let (via_gd, _) = estimate::least_squares_gd(&x, &y, lambda, 0.02, 4000).unwrap();
    for (a, b) in closed.data().iter().zip(via_gd.data()) {
        assert_close(*a, *b, 1e-5);
    }
}

#[test]
fn small_step_descent_never_increases_a_convex_quadratic() {
    let mut r = rng(7);
    let x = Tensor::rand_uniform(&[20, 4], -1.0, 1.0, &mut r);
    let y = Tensor::rand_uniform(&[20], -1.0, 1.0, &mut r);
    let (_, losses) = estimate::least_squares_gd(&x, &y, 0.0, 0.005, 300).unwrap();
    for pair in losses.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-12,
            "loss increased: {} -> {}",
            pair[0],
            pair[1]
        );
    }
}
