//! Single-file model checkpoints.
//!
//! Layout: the magic line `LUSPHASE1`, one line of JSON header (config,
//! fusion spec, seed, step count), then the parameter tensors as a
//! little-endian `f32` blob in declaration order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{FusionSpec, Model, ModelConfig};
use crate::{Error, Result};

const MAGIC: &[u8] = b"LUSPHASE1\n";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    fusion: FusionSpec,
    seed: u64,
    step_count: u64,
}

pub fn save_checkpoint(model: &mut Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        config: model.config().clone(),
        fusion: model.fusion().clone(),
        seed: model.config().seed,
        step_count: model.step_count(),
    };
    let header_json = serde_json::to_string(&header)
        .map_err(|e| Error::Format(format!("checkpoint header encode: {e}")))?;
    let mut blob: Vec<u8> = Vec::new();
    for tensor in model.parameters_mut() {
        for &v in tensor.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    file.write_all(header_json.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    file.write_all(&blob).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Format(format!("{}: not a checkpoint file", path.display())))?;
    let newline = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint header is unterminated".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&rest[..newline])
        .map_err(|e| Error::Format(format!("checkpoint header decode: {e}")))?;
    let blob = &rest[newline + 1..];

    let mut model = Model::build(header.config, header.fusion)?;
    let expected: usize = model.parameter_count() * 4;
    if blob.len() != expected {
        return Err(Error::Format(format!(
            "checkpoint blob holds {} bytes, expected {expected}",
            blob.len()
        )));
    }
    let mut offset = 0;
    for tensor in model.parameters_mut() {
        for v in tensor.data_mut() {
            let quad: [u8; 4] = blob[offset..offset + 4].try_into().unwrap();
            *v = f32::from_le_bytes(quad) as f64;
            offset += 4;
        }
    }
    model.set_step_count(header.step_count);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{FeatureKind, FusionMode};

    fn small_model() -> Model {
        let cfg = ModelConfig::with_side(32, 3);
        let fusion = FusionSpec::new(FusionMode::Early, vec![FeatureKind::Us]);
        Model::build(cfg, fusion).unwrap()
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"NOTACKPT\n{}\n").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = small_model();
        save_checkpoint(&mut model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("bytes"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn garbled_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"LUSPHASE1\nnot json\n").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }
}
