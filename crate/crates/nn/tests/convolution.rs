//! Convolution examples, oracles, and the structural invariants:
//! translation equivariance, Toeplitz equivalence, causality, and the
//! depthwise factorization parameter count.

use ferrograd_core::{Reduction, Tape, Tensor};
use ferrograd_nn::conv::{
    self, conv1d, conv1d_reference, conv2d, conv2d_reference, extract_patch, global_pool,
    max_pool2d, pad_and_mask, ConvSpec, Padding,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

fn assert_tensor_close(a: &Tensor, b: &Tensor, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert_close(*x, *y, tol);
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ── extract_patch ───────────────────────────────────────────────────

#[test]
fn patch_of_half_width_zero_is_one_pixel() {
    let x = Tensor::from_fn(&[3, 3, 2], |ix| (ix[0] * 10 + ix[1]) as f64 + ix[2] as f64 * 0.5);
    let p = extract_patch(&x, 1, 2, 0, false).unwrap();
    assert_eq!(p.shape(), &[1, 1, 2]);
    assert_eq!(p.at(&[0, 0, 0]), x.at(&[1, 2, 0]));
}

#[test]
fn corner_patch_is_zero_padded() {
    let x = Tensor::ones(&[3, 3, 1]);
    let p = extract_patch(&x, 0, 0, 1, true).unwrap();
    // Top row and left column read the zero border.
    assert_eq!(p.at(&[0, 0, 0]), 0.0);
    assert_eq!(p.at(&[0, 1, 0]), 0.0);
    assert_eq!(p.at(&[1, 0, 0]), 0.0);
    assert_eq!(p.at(&[1, 1, 0]), 1.0);
    assert!(extract_patch(&x, 0, 0, 1, false).is_err());
}

#[test]
fn interior_patch_equals_direct_slice() {
    let x = Tensor::rand_uniform(&[5, 5, 3], -1.0, 1.0, &mut rng(1));
    let p = extract_patch(&x, 2, 2, 1, false).unwrap();
    let s = x.slice(&[(1, 4), (1, 4), (0, 3)]).unwrap();
    assert_eq!(p, s);
}

// ── conv2d ──────────────────────────────────────────────────────────

#[test]
fn conv2d_worked_shape_example_via_channel_first_ingest() {
    // Channel-first input (16, 3, 32, 32) with kernel (64, 3, 5, 5) and
    // same padding maps to (16, 64, 32, 32).
    let x_nchw = Tensor::zeros(&[16, 3, 32, 32]);
    let w_oihw = Tensor::zeros(&[64, 3, 5, 5]);
    let x = conv::nchw_to_nhwc(&x_nchw).unwrap();
    let w = conv::kernel_oihw_to_hwio(&w_oihw).unwrap();
    let spec = ConvSpec::new(2, 3, 64);
    let tape = Tape::new();
    let out = conv2d(tape.input(x), &spec, tape.input(w), None).unwrap();
    let reported = conv::nhwc_to_nchw(&out.value()).unwrap();
    assert_eq!(reported.shape(), &[16, 64, 32, 32]);
}

#[test]
fn conv2d_identity_kernel_passes_input() {
    // k = 0 with W = I over channels.
    let c = 3;
    let mut w = Tensor::zeros(&[1, 1, c, c]);
    for i in 0..c {
        w.set(&[0, 0, i, i], 1.0);
    }
    let xv = Tensor::rand_uniform(&[2, 4, 4, c], -1.0, 1.0, &mut rng(2));
    let spec = ConvSpec::new(0, c, c);
    let tape = Tape::new();
    let out = conv2d(tape.input(xv.clone()), &spec, tape.input(w), None).unwrap();
    assert_tensor_close(&out.value(), &xv, 1e-15);
}

#[test]
fn conv2d_matches_direct_summation_oracle() {
    let spec = ConvSpec::new(1, 2, 3);
    let xv = Tensor::rand_uniform(&[2, 5, 4, 2], -1.0, 1.0, &mut rng(3));
    let wv = Tensor::rand_uniform(&[3, 3, 2, 3], -1.0, 1.0, &mut rng(4));
    let bv = Tensor::rand_uniform(&[3], -0.5, 0.5, &mut rng(5));
    let tape = Tape::new();
    let fused = conv2d(
        tape.input(xv.clone()),
        &spec,
        tape.input(wv.clone()),
        Some(tape.input(bv.clone())),
    )
    .unwrap();
    let oracle = conv2d_reference(&xv, &spec, &wv, Some(&bv)).unwrap();
    assert_tensor_close(&fused.value(), &oracle, 1e-10);
}

#[test]
fn conv2d_strided_paths_agree_bit_exactly() {
    for padding in [Padding::Same, Padding::Valid] {
        let spec = ConvSpec::new(1, 2, 2).with_padding(padding).with_stride(2);
        let xv = Tensor::rand_uniform(&[1, 7, 6, 2], -1.0, 1.0, &mut rng(6));
        let wv = Tensor::rand_uniform(&[3, 3, 2, 2], -1.0, 1.0, &mut rng(7));
        let tape = Tape::new();
        let fused = conv2d(tape.input(xv.clone()), &spec, tape.input(wv.clone()), None).unwrap();
        let reference = conv2d_reference(&xv, &spec, &wv, None).unwrap();
        assert_eq!(&*fused.value(), &reference, "padding {padding:?}");
    }
}

#[test]
fn conv2d_rejects_oversized_kernel() {
    let spec = ConvSpec::new(3, 1, 1).with_padding(Padding::Valid);
    let tape = Tape::new();
    let x = tape.input(Tensor::zeros(&[1, 5, 5, 1]));
    let w = tape.input(Tensor::zeros(&[7, 7, 1, 1]));
    assert!(conv2d(x, &spec, w, None).is_err());
}

#[test]
fn depthwise_factorization_parameter_count() {
    // Depthwise (s·s·c) plus pointwise (c·c′) versus full s·s·c·c′.
    let (s, c, co) = (3usize, 8usize, 16usize);
    let depthwise = Tensor::zeros(&[s, s, c]);
    let pointwise = Tensor::zeros(&[1, 1, c, co]);
    let full = Tensor::zeros(&[s, s, c, co]);
    assert_eq!(depthwise.len() + pointwise.len(), s * s * c + c * co);
    assert_eq!(full.len(), s * s * c * co);
    assert!(depthwise.len() + pointwise.len() < full.len());
}

#[test]
fn depthwise_conv_matches_reference() {
    let spec = ConvSpec::new(1, 3, 3).depthwise();
    let xv = Tensor::rand_uniform(&[2, 4, 4, 3], -1.0, 1.0, &mut rng(8));
    let wv = Tensor::rand_uniform(&[3, 3, 3], -1.0, 1.0, &mut rng(9));
    let tape = Tape::new();
    let fused = conv2d(tape.input(xv.clone()), &spec, tape.input(wv.clone()), None).unwrap();
    let oracle = conv2d_reference(&xv, &spec, &wv, None).unwrap();
    assert_tensor_close(&fused.value(), &oracle, 1e-10);
}

// ── conv1d ──────────────────────────────────────────────────────────

#[test]
fn conv1d_matches_direct_summation_oracle() {
    let spec = ConvSpec::new(2, 3, 2).with_dilation(2);
    let xv = Tensor::rand_uniform(&[2, 9, 3], -1.0, 1.0, &mut rng(10));
    let wv = Tensor::rand_uniform(&[5, 3, 2], -1.0, 1.0, &mut rng(11));
    let bv = Tensor::rand_uniform(&[2], -0.5, 0.5, &mut rng(12));
    let tape = Tape::new();
    let fused = conv1d(
        tape.input(xv.clone()),
        &spec,
        tape.input(wv.clone()),
        Some(tape.input(bv.clone())),
    )
    .unwrap();
    let oracle = conv1d_reference(&xv, &spec, &wv, Some(&bv)).unwrap();
    assert_tensor_close(&fused.value(), &oracle, 1e-10);
}

#[test]
fn causal_conv_ignores_future_positions() {
    let spec = ConvSpec::new(2, 1, 1).causal();
    let wv = Tensor::rand_uniform(&[5, 1, 1], -1.0, 1.0, &mut rng(13));
    let xv = Tensor::rand_uniform(&[1, 8, 1], -1.0, 1.0, &mut rng(14));
    let tape = Tape::new();
    let base = conv1d(tape.input(xv.clone()), &spec, tape.input(wv.clone()), None).unwrap();
    // Perturb position 5; outputs at 0..=4 must not move.
    let mut bumped = xv.clone();
    bumped.set(&[0, 5, 0], bumped.at(&[0, 5, 0]) + 10.0);
    let tape2 = Tape::new();
    let moved = conv1d(tape2.input(bumped), &spec, tape2.input(wv), None).unwrap();
    for i in 0..=4 {
        assert_eq!(base.value().at(&[0, i, 0]), moved.value().at(&[0, i, 0]));
    }
    assert!(base.value().at(&[0, 5, 0]) != moved.value().at(&[0, 5, 0]));
}

#[test]
fn causal_equals_future_masked_centered_kernel() {
    // Zeroing taps k+1..s of a centered same-padded kernel must reproduce
    // the causal evaluation of the same kernel exactly.
    let k = 2usize;
    let spec_causal = ConvSpec::new(k, 2, 2).causal().with_dilation(2);
    let spec_same = ConvSpec::new(k, 2, 2).with_dilation(2);
    let xv = Tensor::rand_uniform(&[1, 9, 2], -1.0, 1.0, &mut rng(15));
    let mut wv = Tensor::rand_uniform(&[2 * k + 1, 2, 2], -1.0, 1.0, &mut rng(16));
    // Mask the future taps.
    for u in (k + 1)..(2 * k + 1) {
        for a in 0..2 {
            for b in 0..2 {
                wv.set(&[u, a, b], 0.0);
            }
        }
    }
    let tape = Tape::new();
    let causal = conv1d(tape.input(xv.clone()), &spec_causal, tape.input(wv.clone()), None).unwrap();
    let masked = conv1d(tape.input(xv), &spec_same, tape.input(wv), None).unwrap();
    assert_tensor_close(&causal.value(), &masked.value(), 1e-12);
}

#[test]
fn dilated_stack_receptive_field_grows_exponentially() {
    // Three same-padded layers with s = 3 and dilations 1, 2, 4 reach
    // 1 + Σ (s−1)·d = 15: the center output sees offsets up to ±7.
    let t = 17usize;
    let center = 8usize;
    let dilations = [1usize, 2, 4];
    let response = |probe_pos: usize| -> f64 {
        let tape = Tape::new();
        let mut x = tape.param(0, &Tensor::zeros(&[1, t, 1]));
        for (i, &d) in dilations.iter().enumerate() {
            let spec = ConvSpec::new(1, 1, 1).with_dilation(d);
            let w = tape.input(Tensor::ones(&[3, 1, 1]));
            x = conv1d(x, &spec, w, None).unwrap();
            let _ = i;
        }
        let mut seed = Tensor::zeros(&[1, t, 1]);
        seed.set(&[0, probe_pos, 0], 1.0);
        let tangent = tape
            .jvp(x, &[(tape.param(0, &Tensor::zeros(&[1, t, 1])), seed)])
            .unwrap();
        tangent.at(&[0, center, 0])
    };
    assert!(response(center - 7) != 0.0);
    assert!(response(center + 7) != 0.0);
    assert_eq!(response(center - 8), 0.0);
    assert_eq!(response(center + 8), 0.0);
}

#[test]
fn causal_stack_jacobian_is_lower_triangular() {
    // jvp probes: ∂outᵢ/∂inⱼ = 0 for j > i through a two-layer causal stack.
    let t = 6usize;
    let spec = ConvSpec::new(1, 1, 1).causal();
    let w1 = Tensor::rand_uniform(&[3, 1, 1], -1.0, 1.0, &mut rng(17));
    let w2 = Tensor::rand_uniform(&[3, 1, 1], -1.0, 1.0, &mut rng(18));
    let tape = Tape::new();
    let x = tape.param(0, &Tensor::rand_uniform(&[1, t, 1], -1.0, 1.0, &mut rng(19)));
    let h = conv1d(x, &spec, tape.input(w1), None).unwrap();
    let out = conv1d(h, &spec, tape.input(w2), None).unwrap();
    for j in 0..t {
        let mut seed = Tensor::zeros(&[1, t, 1]);
        seed.set(&[0, j, 0], 1.0);
        let tangent = tape.jvp(out, &[(x, seed)]).unwrap();
        for i in 0..j {
            assert_eq!(tangent.at(&[0, i, 0]), 0.0, "∂out[{i}]/∂in[{j}] leaked");
        }
    }
}

#[test]
fn circular_translation_equivariance() {
    // With circular padding (realized by explicit wrap-around padding and
    // a valid conv), shifting the input shifts the output.
    let k = 1usize;
    let spec = ConvSpec::new(k, 1, 2).with_padding(Padding::Valid);
    let wv = Tensor::rand_uniform(&[3, 3, 1, 2], -1.0, 1.0, &mut rng(20));
    let xv = Tensor::rand_uniform(&[1, 5, 6, 1], -1.0, 1.0, &mut rng(21));

    let circular = |x: &Tensor| -> Tensor {
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let padded = circular_pad(x, k);
        let tape = Tape::new();
        let out = conv2d(tape.input(padded), &spec, tape.input(wv.clone()), None).unwrap();
        let v = (*out.value()).clone();
        assert_eq!(v.shape()[1], h);
        assert_eq!(v.shape()[2], w);
        v
    };

    let (dy, dx) = (2usize, 4usize);
    let shifted_then_conv = circular(&roll(&xv, dy, dx));
    let conv_then_shifted = roll(&circular(&xv), dy, dx);
    assert_tensor_close(&shifted_then_conv, &conv_then_shifted, 1e-10);
}

fn roll(x: &Tensor, dy: usize, dx: usize) -> Tensor {
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    Tensor::from_fn(&[n, h, w, c], |ix| {
        let src_i = (ix[1] + h - dy % h) % h;
        let src_j = (ix[2] + w - dx % w) % w;
        x.at(&[ix[0], src_i, src_j, ix[3]])
    })
}

fn circular_pad(x: &Tensor, k: usize) -> Tensor {
    let (n, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    Tensor::from_fn(&[n, h + 2 * k, w + 2 * k, c], |ix| {
        let src_i = (ix[1] + h - k % h) % h;
        let src_j = (ix[2] + w - k % w) % w;
        x.at(&[ix[0], src_i % h, src_j % w, ix[3]])
    })
}

#[test]
fn conv1d_equals_toeplitz_matmul() {
    // Single-channel same-padded conv is multiplication by the explicitly
    // built banded Toeplitz matrix.
    let t = 7usize;
    let wv = Tensor::rand_uniform(&[3, 1, 1], -1.0, 1.0, &mut rng(22));
    let xv = Tensor::rand_uniform(&[1, t, 1], -1.0, 1.0, &mut rng(23));
    let spec = ConvSpec::new(1, 1, 1);
    let tape = Tape::new();
    let out = conv1d(tape.input(xv.clone()), &spec, tape.input(wv.clone()), None).unwrap();
    let mut toeplitz = Tensor::zeros(&[t, t]);
    for i in 0..t {
        for (tap, offset) in [(0usize, -1isize), (1, 0), (2, 1)] {
            let j = i as isize + offset;
            if j >= 0 && (j as usize) < t {
                toeplitz.set(&[i, j as usize], wv.at(&[tap, 0, 0]));
            }
        }
    }
    let oracle = toeplitz.matmul(&xv.reshape(&[t, 1]).unwrap()).unwrap();
    assert_tensor_close(
        &out.value().reshape(&[t, 1]).unwrap(),
        &oracle,
        1e-10,
    );
}

// ── Pooling ─────────────────────────────────────────────────────────

#[test]
fn max_pool_constant_image_stays_constant() {
    let tape = Tape::new();
    let x = tape.input(Tensor::full(&[1, 4, 4, 2], 3.25));
    let out = max_pool2d(x, 2).unwrap();
    assert_eq!(&*out.value(), &Tensor::full(&[1, 2, 2, 2], 3.25));
}

#[test]
fn max_pool_ramp_selects_quadrant_maxima() {
    let x = Tensor::from_fn(&[1, 4, 4, 1], |ix| (ix[1] * 4 + ix[2]) as f64);
    let tape = Tape::new();
    let out = max_pool2d(tape.input(x), 2).unwrap();
    let v = out.value();
    assert_eq!(v.at(&[0, 0, 0, 0]), 5.0);
    assert_eq!(v.at(&[0, 0, 1, 0]), 7.0);
    assert_eq!(v.at(&[0, 1, 0, 0]), 13.0);
    assert_eq!(v.at(&[0, 1, 1, 0]), 15.0);
}

#[test]
fn max_pool_backward_routes_to_argmax_only() {
    let xv = Tensor::from_fn(&[1, 2, 2, 1], |ix| (ix[1] * 2 + ix[2]) as f64 * 1.5);
    let tape = Tape::new();
    let x = tape.param(0, &xv);
    let out = max_pool2d(x, 2).unwrap();
    let loss = out.sum_all().unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = grads.get(0).unwrap();
    assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn max_pool_rejects_oversized_window() {
    let tape = Tape::new();
    let x = tape.input(Tensor::zeros(&[1, 2, 2, 1]));
    assert!(max_pool2d(x, 3).is_err());
}

#[test]
fn global_mean_pool_examples() {
    let tape = Tape::new();
    let ones = tape.input(Tensor::ones(&[2, 3, 3, 4]));
    let out = global_pool(ones, Reduction::Mean).unwrap();
    assert_eq!(&*out.value(), &Tensor::ones(&[2, 4]));

    // Equals the plain mean reduction over the spatial axes.
    let xv = Tensor::rand_uniform(&[2, 3, 4, 5], -1.0, 1.0, &mut rng(24));
    let x = tape.input(xv.clone());
    let pooled = global_pool(x, Reduction::Mean).unwrap();
    let oracle = xv.mean_axes(&[1, 2], false).unwrap();
    assert_tensor_close(&pooled.value(), &oracle, 1e-12);
}

#[test]
fn global_pool_is_invariant_to_circular_shifts() {
    let xv = Tensor::rand_uniform(&[1, 4, 5, 3], -1.0, 1.0, &mut rng(25));
    let tape = Tape::new();
    for kind in [Reduction::Mean, Reduction::Max] {
        let a = global_pool(tape.input(xv.clone()), kind).unwrap();
        let b = global_pool(tape.input(roll(&xv, 2, 3)), kind).unwrap();
        assert_tensor_close(&a.value(), &b.value(), 1e-12);
    }
}

// ── Padded batching ─────────────────────────────────────────────────

#[test]
fn pad_and_mask_worked_shape_example() {
    let seqs = [
        Tensor::rand_uniform(&[3, 8], -1.0, 1.0, &mut rng(26)),
        Tensor::rand_uniform(&[5, 8], -1.0, 1.0, &mut rng(27)),
        Tensor::rand_uniform(&[2, 8], -1.0, 1.0, &mut rng(28)),
    ];
    let (batch, mask) = pad_and_mask(&seqs).unwrap();
    assert_eq!(batch.shape(), &[3, 5, 8]);
    assert_eq!(mask.shape(), &[3, 5]);
    // Row 2 has two valid slots then zeros.
    assert_eq!(
        (0..5).map(|i| mask.at(&[2, i])).collect::<Vec<_>>(),
        vec![1.0, 1.0, 0.0, 0.0, 0.0]
    );
    // Padding slots hold zeros.
    assert_eq!(batch.at(&[2, 4, 3]), 0.0);
}

#[test]
fn pad_and_mask_single_sequence_is_unchanged() {
    let seq = Tensor::rand_uniform(&[4, 3], -1.0, 1.0, &mut rng(29));
    let (batch, mask) = pad_and_mask(std::slice::from_ref(&seq)).unwrap();
    assert_eq!(batch.reshape(&[4, 3]).unwrap(), seq);
    assert_eq!(mask, Tensor::ones(&[1, 4]));
}

#[test]
fn pad_and_mask_rejects_empty_input() {
    assert!(pad_and_mask(&[]).is_err());
}

#[test]
fn masked_mean_pool_matches_per_sequence_means() {
    let seqs = [
        Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng(30)),
        Tensor::rand_uniform(&[6, 4], -1.0, 1.0, &mut rng(31)),
    ];
    let (batch, mask) = pad_and_mask(&seqs).unwrap();
    let tape = Tape::new();
    let pooled = conv::masked_mean_pool(&tape, tape.input(batch), &mask).unwrap();
    for (row, seq) in seqs.iter().enumerate() {
        let mean = seq.mean_axes(&[0], false).unwrap();
        for j in 0..4 {
            assert_close(pooled.value().at(&[row, j]), mean.at(&[j]), 1e-12);
        }
    }
}

// ── Fixture IO ──────────────────────────────────────────────────────

#[test]
fn image_fixture_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.raw");
    let x = Tensor::rand_uniform(&[2, 3, 4, 1], -1.0, 1.0, &mut rng(32));
    conv::write_image_fixture(&path, &x).unwrap();
    let back = conv::read_image_fixture(&path).unwrap();
    assert_eq!(back, x);
}
