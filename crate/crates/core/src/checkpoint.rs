//! Named-tensor archives (safetensors layout, f64) and model checkpoints.
//!
//! A checkpoint stores every model parameter plus a JSON manifest in the
//! archive metadata. The manifest records the model configuration, the
//! metadata template version, the text-encoder model id and a SHA-256 digest
//! of the tensor contents; loading re-derives the digest and rejects
//! mismatches.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::Array2;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::metadata::TEMPLATE_VERSION;
use crate::model::MetaTst;
use crate::nn::Module;

pub const MANIFEST_KEY: &str = "manifest";
pub const FORMAT_VERSION: u32 = 1;

pub type NamedTensors = BTreeMap<String, Array2<f64>>;

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn tensor_bytes(a: &Array2<f64>) -> Vec<u8> {
    a.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Digest over names, shapes and little-endian values, in name order.
pub fn content_digest(tensors: &NamedTensors) -> String {
    let mut h = Sha256::new();
    for (name, t) in tensors {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update((t.nrows() as u64).to_le_bytes());
        h.update((t.ncols() as u64).to_le_bytes());
        h.update(tensor_bytes(t));
    }
    to_hex(&h.finalize())
}

pub fn write_tensors(path: &Path, tensors: &NamedTensors, metadata: HashMap<String, String>) -> Result<()> {
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(n, t)| (n.clone(), vec![t.nrows(), t.ncols()], tensor_bytes(t)))
        .collect();
    let views = buffers
        .iter()
        .map(|(n, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = safetensors::tensor::serialize(views, Some(metadata))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<(NamedTensors, HashMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let metadata = meta.metadata().clone().unwrap_or_default();
    let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = NamedTensors::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F64 {
            return Err(Error::Checkpoint(format!("tensor `{name}` is {:?}, expected F64", view.dtype())));
        }
        let shape = view.shape();
        let (r, c) = match shape {
            [r, c] => (*r, *c),
            other => return Err(Error::Checkpoint(format!("tensor `{name}` has rank {}", other.len()))),
        };
        let values: Vec<f64> = view
            .data()
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let arr = Array2::from_shape_vec((r, c), values).map_err(|e| Error::Checkpoint(e.to_string()))?;
        out.insert(name, arr);
    }
    Ok((out, metadata))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub template_version: String,
    pub model_id: String,
    pub digest: String,
}

pub fn state_dict(model: &MetaTst) -> NamedTensors {
    let mut out = NamedTensors::new();
    model.visit("", &mut |name, p| {
        out.insert(name.to_string(), p.value.clone());
    });
    out
}

/// Copy values into a model with the same parameter set.
pub fn load_state(model: &mut MetaTst, state: &NamedTensors) -> Result<()> {
    let expected: Vec<String> = model.param_names();
    let mut missing: Vec<&String> = expected.iter().filter(|n| !state.contains_key(*n)).collect();
    let extra: Vec<&String> = state.keys().filter(|n| !expected.contains(n)).collect();
    if !missing.is_empty() || !extra.is_empty() {
        missing.truncate(5);
        return Err(Error::Checkpoint(format!(
            "parameter sets differ: missing {missing:?}, unexpected {extra:?}"
        )));
    }
    let mut err = None;
    model.visit_mut("", &mut |name, p| {
        let src = &state[name];
        if src.dim() != p.value.dim() {
            err.get_or_insert_with(|| {
                Error::Checkpoint(format!("`{name}` has shape {:?}, model expects {:?}", src.dim(), p.value.dim()))
            });
        } else {
            p.value.assign(src);
        }
    });
    err.map_or(Ok(()), Err)
}

pub fn save_checkpoint(model: &MetaTst, model_id: &str, path: &Path) -> Result<CheckpointManifest> {
    let state = state_dict(model);
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        template_version: TEMPLATE_VERSION.to_string(),
        model_id: model_id.to_string(),
        digest: content_digest(&state),
    };
    let json = serde_json::to_string(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_tensors(path, &state, HashMap::from([(MANIFEST_KEY.to_string(), json)]))?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<(MetaTst, CheckpointManifest)> {
    let (state, metadata) = read_tensors(path)?;
    let json = metadata
        .get(MANIFEST_KEY)
        .ok_or_else(|| Error::Checkpoint(format!("{} has no manifest", path.display())))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(json).map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {}",
            manifest.format_version
        )));
    }
    let digest = content_digest(&state);
    if digest != manifest.digest {
        return Err(Error::Checkpoint(format!(
            "content digest mismatch: manifest {} vs data {digest}",
            manifest.digest
        )));
    }
    if manifest.template_version != TEMPLATE_VERSION {
        log::warn!(
            "checkpoint was trained with metadata templates {}, current is {TEMPLATE_VERSION}",
            manifest.template_version
        );
    }
    let mut model = MetaTst::new(&manifest.config, 0)?;
    load_state(&mut model, &state)?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            seq_len: 24,
            pred_len: 4,
            patch_len: 12,
            e_layers: 1,
            d_model: 8,
            d_ff: 16,
            n_heads: 2,
            embed_dim: 8,
            ..ModelConfig::short_term()
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let model = MetaTst::new(&tiny(), 42).unwrap();
        let manifest = save_checkpoint(&model, "hash-stub-8", &path).unwrap();
        let (loaded, m2) = load_checkpoint(&path).unwrap();
        assert_eq!(manifest, m2);
        assert_eq!(state_dict(&loaded), state_dict(&model));
        assert_eq!(m2.template_version, TEMPLATE_VERSION);
    }

    #[test]
    fn tampered_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let model = MetaTst::new(&tiny(), 1).unwrap();
        save_checkpoint(&model, "x", &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn mismatched_parameter_sets_fail() {
        let model = MetaTst::new(&tiny(), 1).unwrap();
        let mut state = state_dict(&model);
        state.remove("head.bias");
        let mut other = MetaTst::new(&tiny(), 2).unwrap();
        assert!(load_state(&mut other, &state).is_err());
    }
}
