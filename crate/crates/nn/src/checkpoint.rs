//! Model checkpoints: a JSON manifest describing the architecture plus a
//! flat binary blob of parameter values in declaration order, 64-bit
//! little-endian.

use crate::error::NnError;
use crate::param::ParamSet;
use std::path::Path;

/// Writes `<stem>.json` (manifest) and `<stem>.bin` (parameter blob).
/// `model` is arbitrary layer-spec JSON owned by the caller.
pub fn save(
    dir: &Path,
    stem: &str,
    model: &serde_json::Value,
    ps: &ParamSet,
) -> Result<(), NnError> {
    std::fs::create_dir_all(dir)?;
    let params: Vec<serde_json::Value> = ps
        .iter()
        .map(|(_, p)| {
            serde_json::json!({
                "name": p.name,
                "shape": p.value.shape(),
                "trainable": p.trainable,
            })
        })
        .collect();
    let manifest = serde_json::json!({
        "format": "ferrograd-checkpoint-v1",
        "model": model,
        "params": params,
    });
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&manifest).expect("serializable manifest"),
    )?;
    let mut blob = Vec::with_capacity(ps.total_elements() * 8);
    for (_, p) in ps.iter() {
        for &v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(dir.join(format!("{stem}.bin")), blob)?;
    Ok(())
}

/// Reads the manifest back; the caller rebuilds the architecture from the
/// `model` field and then calls `load_values` to fill its parameter set.
pub fn read_manifest(dir: &Path, stem: &str) -> Result<serde_json::Value, NnError> {
    let text = std::fs::read_to_string(dir.join(format!("{stem}.json")))
        .map_err(|e| NnError::Checkpoint(format!("missing manifest: {e}")))?;
    serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(format!("bad manifest: {e}")))
}

/// Fills an already-declared parameter set from the blob, verifying that
/// names and shapes match the manifest in declaration order.
pub fn load_values(dir: &Path, stem: &str, ps: &mut ParamSet) -> Result<(), NnError> {
    let manifest = read_manifest(dir, stem)?;
    let listed = manifest["params"]
        .as_array()
        .ok_or_else(|| NnError::Checkpoint("manifest lacks params".into()))?;
    if listed.len() != ps.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint declares {} parameters, model has {}",
            listed.len(),
            ps.len()
        )));
    }
    let blob = std::fs::read(dir.join(format!("{stem}.bin")))?;
    let mut offset = 0usize;
    for (id, entry) in listed.iter().enumerate() {
        let name = entry["name"].as_str().unwrap_or_default();
        let param = ps.get_mut(id);
        if param.name != name {
            return Err(NnError::Checkpoint(format!(
                "parameter {id} is `{}` in the model but `{name}` in the checkpoint",
                param.name
            )));
        }
        let len = param.value.len();
        let need = len * 8;
        if offset + need > blob.len() {
            return Err(NnError::Checkpoint("parameter blob is truncated".into()));
        }
        for (i, chunk) in blob[offset..offset + need].chunks_exact(8).enumerate() {
            param.value.data_mut()[i] = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        offset += need;
    }
    if offset != blob.len() {
        return Err(NnError::Checkpoint(format!(
            "parameter blob has {} trailing bytes",
            blob.len() - offset
        )));
    }
    Ok(())
}
