//! Checkpoint format: JSON manifest plus little-endian parameter blob in
//! declaration order.

use ferrograd_core::Tensor;
use ferrograd_nn::checkpoint;
use ferrograd_nn::param::ParamSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn build_set(seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ps = ParamSet::new();
    ps.add("layer0.w", Tensor::rand_uniform(&[3, 4], -1.0, 1.0, &mut rng))
        .unwrap();
    ps.add("layer0.b", Tensor::rand_uniform(&[4], -1.0, 1.0, &mut rng))
        .unwrap();
    ps.add("head.w", Tensor::rand_uniform(&[4, 2], -1.0, 1.0, &mut rng))
        .unwrap();
    ps
}

#[test]
fn round_trip_restores_every_value() {
    let dir = tempfile::tempdir().unwrap();
    let saved = build_set(1);
    let model = serde_json::json!({"kind": "mlp", "widths": [3, 4, 2]});
    checkpoint::save(dir.path(), "model", &model, &saved).unwrap();

    let manifest = checkpoint::read_manifest(dir.path(), "model").unwrap();
    assert_eq!(manifest["model"]["kind"], "mlp");
    assert_eq!(manifest["params"][0]["name"], "layer0.w");

    let mut restored = build_set(2); // different values, same declarations
    checkpoint::load_values(dir.path(), "model", &mut restored).unwrap();
    for ((_, a), (_, b)) in saved.iter().zip(restored.iter()) {
        assert_eq!(a.value, b.value);
        assert_eq!(a.name, b.name);
    }
}

#[test]
fn blob_is_little_endian_in_declaration_order() {
    let dir = tempfile::tempdir().unwrap();
    let ps = build_set(3);
    checkpoint::save(dir.path(), "model", &serde_json::json!({}), &ps).unwrap();
    let blob = std::fs::read(dir.path().join("model.bin")).unwrap();
    assert_eq!(blob.len(), ps.total_elements() * 8);
    let first = f64::from_le_bytes(blob[0..8].try_into().unwrap());
    assert_eq!(first, ps.value(0).data()[0]);
    let last = f64::from_le_bytes(blob[blob.len() - 8..].try_into().unwrap());
    assert_eq!(last, *ps.value(2).data().last().unwrap());
}

#[test]
fn mismatched_declarations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ps = build_set(4);
    checkpoint::save(dir.path(), "model", &serde_json::json!({}), &ps).unwrap();
    let mut wrong = ParamSet::new();
    wrong.add("other.w", Tensor::zeros(&[3, 4])).unwrap();
    assert!(checkpoint::load_values(dir.path(), "model", &mut wrong).is_err());
}
