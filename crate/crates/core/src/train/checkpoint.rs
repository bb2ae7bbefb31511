use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::nets::{read_tensors, write_tensors, AdamState, FieldConfig, FieldNets, TensorArchive, TensorEntry};

use super::{io_err, TrainError, TrainState, TrainingConfig};

/// Layout version of the checkpoint metadata and tensor names.
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_KIND: &str = "ndf-checkpoint";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

/// Serializes parameters, Adam moments, the iteration counter and the
/// batch RNG position.
pub fn write_checkpoint(state: &TrainState, config: &TrainingConfig) -> Result<Vec<u8>, TrainError> {
    let metadata = json!({
        "kind": CHECKPOINT_KIND,
        "checkpoint_version": CHECKPOINT_VERSION,
        "iteration": state.iteration,
        "adam_step": state.adam.step,
        "rng": {
            "seed": hex(&state.rng.get_seed()),
            "stream": state.rng.get_stream(),
            "word_pos": state.rng.get_word_pos().to_string(),
        },
        "field": state.nets.config,
        "training": config,
    });
    let mut tensors = Vec::new();
    let named = state.nets.tensors();
    for (name, shape, data) in &named {
        tensors.push(TensorEntry {
            name: format!("net.{name}"),
            shape: shape.clone(),
            data: data.to_vec(),
        });
    }
    for (prefix, moments) in [("adam.m", &state.adam.m), ("adam.v", &state.adam.v)] {
        for ((name, shape, _), m) in named.iter().zip(moments) {
            tensors.push(TensorEntry {
                name: format!("{prefix}.{name}"),
                shape: shape.clone(),
                data: m.clone(),
            });
        }
    }
    let mut bytes = Vec::new();
    write_tensors(&mut bytes, &TensorArchive { metadata, tensors })?;
    Ok(bytes)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(TrainState, TrainingConfig), TrainError> {
    let archive = read_tensors(&mut &bytes[..])?;
    let meta = &archive.metadata;
    let bad = |m: &str| TrainError::Checkpoint(m.to_string());
    if meta.get("kind").and_then(|v| v.as_str()) != Some(CHECKPOINT_KIND) {
        return Err(bad("not a training checkpoint"));
    }
    let version = meta
        .get("checkpoint_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| bad("missing checkpoint_version"))? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let field: FieldConfig = serde_json::from_value(meta["field"].clone()).map_err(|e| bad(&e.to_string()))?;
    let config: TrainingConfig =
        serde_json::from_value(meta["training"].clone()).map_err(|e| bad(&e.to_string()))?;
    let iteration = meta["iteration"].as_u64().ok_or_else(|| bad("missing iteration"))?;
    let adam_step = meta["adam_step"].as_u64().ok_or_else(|| bad("missing adam_step"))?;
    let rng_meta = &meta["rng"];
    let seed = rng_meta["seed"]
        .as_str()
        .and_then(unhex)
        .ok_or_else(|| bad("bad rng seed"))?;
    let stream = rng_meta["stream"].as_u64().ok_or_else(|| bad("bad rng stream"))?;
    let word_pos: u128 = rng_meta["word_pos"]
        .as_str()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad rng word_pos"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let mut nets = FieldNets::new(field, 0);
    let names: Vec<(String, Vec<usize>)> = nets
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    let fetch = |name: &str, shape: &[usize]| -> Result<Vec<f64>, TrainError> {
        let t = archive.get(name)?;
        if t.shape != shape {
            return Err(TrainError::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t.data.clone())
    };
    for ((name, shape), dst) in names.iter().zip(nets.tensors_mut()) {
        dst.copy_from_slice(&fetch(&format!("net.{name}"), shape)?);
    }
    let mut m = Vec::with_capacity(names.len());
    let mut v = Vec::with_capacity(names.len());
    for (name, shape) in &names {
        m.push(fetch(&format!("adam.m.{name}"), shape)?);
        v.push(fetch(&format!("adam.v.{name}"), shape)?);
    }
    if archive.tensors.len() != 3 * names.len() {
        return Err(bad("unexpected extra tensors"));
    }
    Ok((
        TrainState {
            nets,
            adam: AdamState { step: adam_step, m, v },
            iteration,
            rng,
        },
        config,
    ))
}

pub fn save_checkpoint(path: &Path, state: &TrainState, config: &TrainingConfig) -> Result<(), TrainError> {
    let bytes = write_checkpoint(state, config)?;
    // Write-then-rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainState, TrainingConfig), TrainError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    read_checkpoint(&bytes).map_err(|e| match e {
        TrainError::Checkpoint(m) => TrainError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
