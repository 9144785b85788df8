//! Checkpoint directories: `manifest.json`, `weights.safetensors`, and the
//! tokenizer file when the encoder uses a learned vocabulary.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderAdapter, TokenizerSpec};
use super::head::RegressionHead;
use super::tokenizer::{Tokenizer, UnigramTokenizer};
use super::transformer::{TransformerConfig, TransformerEncoder};
use super::{DimAsrModel, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor_io::{write_tensors, TensorFile};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.safetensors";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub encoder_name: String,
    pub hidden_dim: usize,
    pub max_len: usize,
    pub transformer: TransformerConfig,
    pub tokenizer: TokenizerSpec,
    pub model: ModelConfig,
    pub seed: u64,
}

pub fn save_checkpoint(model: &DimAsrModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let enc = model.encoder();
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        encoder_name: crate::model::Encoder::name(enc).to_string(),
        hidden_dim: model.hidden_dim(),
        max_len: crate::model::Encoder::max_len(enc),
        transformer: enc.transformer().config().clone(),
        tokenizer: enc.tokenizer_spec(),
        model: model.config().clone(),
        seed: model.seed(),
    };
    if let TokenizerSpec::Unigram { file } = &manifest.tokenizer {
        let json = enc.tokenizer_json().expect("unigram tokenizer keeps its json");
        let path = dir.join(file);
        std::fs::write(&path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    let tensors: Vec<(String, Vec<usize>, Vec<f64>)> = model
        .params()
        .into_iter()
        .map(|p| (p.name, p.shape.to_vec(), p.value.to_vec()))
        .collect();
    let mut meta = BTreeMap::new();
    meta.insert("format_version".to_string(), CHECKPOINT_VERSION.to_string());
    write_tensors(&dir.join(WEIGHTS_FILE), &tensors, &meta)?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("encoding manifest", e))?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let version: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", path.display()), e))?;
    match version.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
        other => {
            return Err(Error::Model(format!(
                "{}: unsupported checkpoint format version {}, expected {CHECKPOINT_VERSION}",
                path.display(),
                other.map_or("none".to_string(), |v| v.to_string())
            )))
        }
    }
    serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", path.display()), e))
}

pub fn load_checkpoint(dir: &Path) -> Result<DimAsrModel> {
    let manifest = read_manifest(dir)?;
    if manifest.hidden_dim != manifest.transformer.hidden_size {
        return Err(Error::Model(format!(
            "checkpoint hidden_dim {} disagrees with encoder hidden size {}",
            manifest.hidden_dim, manifest.transformer.hidden_size
        )));
    }
    let (tokenizer, json) = match &manifest.tokenizer {
        TokenizerSpec::Hashed(t) => (Tokenizer::Hashed(t.clone()), None),
        TokenizerSpec::Unigram { file } => {
            let path = dir.join(file);
            let text =
                std::fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::json(format!("parsing {}", path.display()), e))?;
            (Tokenizer::Unigram(UnigramTokenizer::from_json(&value)?), Some(Arc::new(text)))
        }
    };
    // Initial values are overwritten below; the generator only fills shapes.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut transformer = TransformerEncoder::new(manifest.transformer.clone(), &mut rng)?;
    let weights = TensorFile::open(&dir.join(WEIGHTS_FILE))?;
    let lookup = |name: &str| -> Result<Option<(Vec<usize>, Vec<f64>)>> {
        if weights.contains(name) {
            weights.get(name).map(Some)
        } else {
            Ok(None)
        }
    };
    let missing = transformer.load_params(lookup)?;
    let d = manifest.hidden_dim;
    let p = if manifest.model.head_internal_dropout {
        manifest.model.head_dropout
    } else {
        0.0
    };
    let mut head_v = RegressionHead::new(d, p, manifest.model.head_init_std, &mut rng)?;
    let mut head_a = RegressionHead::new(d, p, manifest.model.head_init_std, &mut rng)?;
    let mut missing_heads = Vec::new();
    for (prefix, head) in [("head_v", &mut head_v), ("head_a", &mut head_a)] {
        for param in head.params_mut(prefix) {
            match lookup(&param.name)? {
                Some((shape, data)) if shape == param.shape => param.value.copy_from_slice(&data),
                Some((shape, _)) => {
                    return Err(Error::Model(format!(
                        "{}: expected shape {:?}, found {shape:?}",
                        param.name, param.shape
                    )))
                }
                None => missing_heads.push(param.name.clone()),
            }
        }
    }
    if !missing.is_empty() || !missing_heads.is_empty() {
        let all: Vec<String> = missing.into_iter().chain(missing_heads).collect();
        return Err(Error::Model(format!("{}: missing tensors {}", dir.display(), all.join(", "))));
    }
    let encoder = EncoderAdapter::from_parts(manifest.encoder_name, manifest.max_len, tokenizer, json, transformer)?;
    Ok(DimAsrModel::from_parts(encoder, manifest.model, head_v, head_a, manifest.seed))
}

/// Loads a checkpoint and checks its hidden size against what the caller
/// was configured for.
pub fn load_checkpoint_expecting(dir: &Path, hidden_dim: usize) -> Result<DimAsrModel> {
    let manifest = read_manifest(dir)?;
    if manifest.hidden_dim != hidden_dim {
        return Err(Error::Model(format!(
            "hidden_dim mismatch: checkpoint {} has {}, configuration expects {hidden_dim}",
            dir.display(),
            manifest.hidden_dim
        )));
    }
    load_checkpoint(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{instance, tiny_model};

    #[test]
    fn round_trip_reproduces_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny_model(11);
        save_checkpoint(&model, dir.path()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        let batch = vec![
            instance("a", 0, "great battery", "battery", None),
            instance("b", 0, "服务很好", "服务", None),
        ];
        let x = model.predict(&batch).unwrap();
        let y = loaded.predict(&batch).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p.valence() - q.valence()).abs() <= 1e-6);
            assert!((p.arousal() - q.arousal()).abs() <= 1e-6);
        }
        assert_eq!(loaded.seed(), 11);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_checkpoint(&dir.path().join("nope")).is_err());

        let model = tiny_model(12);
        save_checkpoint(&model, dir.path()).unwrap();
        let err = load_checkpoint_expecting(dir.path(), 32).unwrap_err().to_string();
        assert!(err.contains('8') && err.contains("32"), "{err}");

        let path = dir.path().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("\"format_version\": 1", "\"format_version\": 99")).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");

        std::fs::write(&path, text).unwrap();
        std::fs::remove_file(dir.path().join(WEIGHTS_FILE)).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
