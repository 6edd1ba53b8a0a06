//! Every activation and layer case passes the central-difference oracle at
//! relative tolerance 1e-6.

use ferrograd_core::check::{run_all, run_check, DEFAULT_STEP};
use ferrograd_nn::checks;

#[test]
fn all_layer_cases_pass_at_1e6() {
    let cases = checks::all_cases();
    assert!(cases.len() >= 30, "catalog shrank to {}", cases.len());
    let reports = run_all(&cases, 1e-6);
    let mut failures = Vec::new();
    for report in &reports {
        if !report.pass {
            failures.push(format!("{}: {}", report.primitive, report.max_rel_err));
        }
    }
    assert!(failures.is_empty(), "failing layers: {failures:?}");
}

#[test]
fn catalog_covers_the_named_layers() {
    let names: Vec<String> = checks::all_cases().iter().map(|c| c.name.clone()).collect();
    for needed in [
        "mha_causal",
        "gcn",
        "gat_v1",
        "gat_v2",
        "ligru",
        "diag_ssm",
        "conv2d_same",
        "transformer_block_prenorm",
    ] {
        assert!(
            names.iter().any(|n| n == needed),
            "missing gradcheck case `{needed}`"
        );
    }
}

#[test]
fn a_corrupted_layer_case_fails_the_sweep() {
    // Negative control at the layer level: scaling one VJP breaks the check.
    use ferrograd_core::check::CheckCase;
    use ferrograd_core::registry::probe;
    use ferrograd_core::{Tape, Tensor, Var};
    use std::rc::Rc;
    let case = CheckCase::new(
        "corrupted_layer",
        vec![probe(&[3, 3], 7)],
        |_t: &Tape, v: &[Var<'_>]| {
            let x = v[0].value();
            let out = x.map(|a| a.tanh());
            let x1 = Rc::clone(&x);
            let x2 = Rc::clone(&x);
            let bad = v[0].tape().custom_op(
                out,
                vec![(
                    v[0],
                    Box::new(move |adj: &Tensor| {
                        adj.mul(&x1.map(|a| 1.0 - a.tanh() * a.tanh()))
                            .unwrap()
                            .scale(1.5)
                    }),
                    Box::new(move |t: &Tensor| {
                        t.mul(&x2.map(|a| 1.0 - a.tanh() * a.tanh()))
                            .unwrap()
                            .scale(1.5)
                    }),
                )],
            );
            bad.sum_all()
        },
    );
    let report = run_check(&case, 1e-6, DEFAULT_STEP);
    assert!(!report.pass);
}
