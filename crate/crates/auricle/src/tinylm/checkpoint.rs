//! Versioned JSON checkpoint container. Stage-1 and Stage-2 runs load the
//! same format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::ArrayViewD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifest::atomic_write;
use crate::tinylm::model::{LMConfig, TinyLm};
use crate::tinylm::tokenizer::{Tokenizer, TokenizerState};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Shape plus row-major data for one tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorData {
    pub fn from_view(view: &ArrayViewD<'_, f64>) -> TensorData {
        TensorData {
            shape: view.shape().to_vec(),
            data: view.iter().copied().collect(),
        }
    }
}

/// Model checkpoint: config, tokenizer state, parameter tensors and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: LMConfig,
    pub tokenizer: TokenizerState,
    pub seed: u64,
    pub tensors: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    pub fn capture(model: &TinyLm, tokenizer: &Tokenizer) -> Checkpoint {
        let names = model.params.tensor_names();
        let views = model.params.views();
        let tensors = names
            .into_iter()
            .zip(views.iter())
            .map(|(name, view)| (name, TensorData::from_view(view)))
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: model.cfg.clone(),
            tokenizer: tokenizer.state(),
            seed: model.cfg.seed,
            tensors,
        }
    }

    /// Rebuilds the model and tokenizer. Tensor names and shapes must match
    /// the stored config.
    pub fn restore(&self) -> Result<(TinyLm, Tokenizer)> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {}",
                self.format_version
            )));
        }
        let tokenizer = Tokenizer::from_state(&self.tokenizer)?;
        let mut model = TinyLm::new(self.config.clone())?;
        let names = model.params.tensor_names();
        let mut views = model.params.views_mut();
        for (name, view) in names.iter().zip(views.iter_mut()) {
            let stored = self.tensors.get(name).ok_or_else(|| {
                Error::Config(format!("checkpoint missing tensor '{name}'"))
            })?;
            if stored.shape != view.shape() {
                return Err(Error::Config(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    stored.shape,
                    view.shape()
                )));
            }
            for (dst, src) in view.iter_mut().zip(stored.data.iter()) {
                *dst = *src;
            }
        }
        Ok((model, tokenizer))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_vec(self).expect("checkpoint serialization");
        atomic_write(path, &json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }
}

/// SHA-256 over every parameter tensor (name, shape and little-endian bytes)
/// in a stable order. Used by the Stage-2 freeze check.
pub fn param_hash(model: &TinyLm) -> String {
    let mut hasher = Sha256::new();
    let names = model.params.tensor_names();
    for (name, view) in names.iter().zip(model.params.views()) {
        hasher.update(name.as_bytes());
        for dim in view.shape() {
            hasher.update((*dim as u64).to_le_bytes());
        }
        for x in view.iter() {
            hasher.update(x.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spanprep::{CLOSE_DELIM, OPEN_DELIM};
    use crate::tinylm::model::ForwardRequest;

    fn build() -> (TinyLm, Tokenizer) {
        let tokenizer = Tokenizer::ascii()
            .with_special_tokens(&[OPEN_DELIM, CLOSE_DELIM])
            .unwrap();
        let model = TinyLm::new(LMConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            ffn_mult: 2,
            max_seq_len: 16,
            vocab_size: tokenizer.vocab_size(),
            seed: 21,
        })
        .unwrap();
        (model, tokenizer)
    }

    #[test]
    fn roundtrip_preserves_behavior() {
        let dir = tempfile::tempdir().unwrap();
        let (model, tokenizer) = build();
        let path = dir.path().join("model.ckpt.json");
        Checkpoint::capture(&model, &tokenizer).save(&path).unwrap();
        let (restored, restored_tok) = Checkpoint::load(&path).unwrap().restore().unwrap();
        assert_eq!(restored_tok.vocab_size(), tokenizer.vocab_size());
        let req = ForwardRequest::plain(vec![5, 9, 3]);
        assert_eq!(
            model.forward(&req).unwrap(),
            restored.forward(&req).unwrap()
        );
        assert_eq!(param_hash(&model), param_hash(&restored));
    }

    #[test]
    fn hash_detects_single_weight_change() {
        let (mut model, _) = build();
        let before = param_hash(&model);
        model.params.tok_emb[(0, 0)] += 1e-9;
        assert_ne!(before, param_hash(&model));
    }

    #[test]
    fn restore_rejects_missing_tensor() {
        let (model, tokenizer) = build();
        let mut ckpt = Checkpoint::capture(&model, &tokenizer);
        ckpt.tensors.remove("tok_emb");
        assert!(ckpt.restore().is_err());
    }
}
