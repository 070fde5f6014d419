//! Run configuration for the command-line surface. One TOML file, explicit
//! seeds, secrets only via named environment variables.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::builder::Measure;
use crate::client::ClientConfig;
use crate::error::{Error, Result};
use crate::imagine::GenLimits;
use crate::pitchworld::WorldConfig;
use crate::tinylm::LMConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl PathsConfig {
    pub fn checkpoints(&self) -> PathBuf {
        self.checkpoint_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("checkpoints"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSection {
    /// Segment-annotation JSONL (waveform paths resolve next to it).
    pub annotations: PathBuf,
    #[serde(default = "default_measures")]
    pub measures: Vec<Measure>,
    #[serde(default = "default_min_n")]
    pub min_n: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_measures() -> Vec<Measure> {
    vec![Measure::Duration, Measure::Loudness]
}

fn default_min_n() -> usize {
    30
}

fn default_alpha() -> f64 {
    0.01
}

/// Where Stage-1 training data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpanSource {
    /// Synthetic pitch micro-world (no external inputs).
    #[default]
    Synthetic,
    /// (context, span, answer) triples JSONL annotated with the template.
    Triples,
    /// Triples annotated through the external completion client.
    Client,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpansSection {
    #[serde(default)]
    pub source: SpanSource,
    /// Triples JSONL for the non-synthetic sources.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default = "default_n_train")]
    pub synthetic_train: usize,
    #[serde(default = "default_n_test")]
    pub synthetic_test: usize,
}

fn default_n_train() -> usize {
    2000
}

fn default_n_test() -> usize {
    500
}

impl Default for SpansSection {
    fn default() -> Self {
        SpansSection {
            source: SpanSource::Synthetic,
            input: None,
            synthetic_train: default_n_train(),
            synthetic_test: default_n_test(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Hashed character n-grams (the reference encoder).
    #[default]
    Ngram,
    /// Micro-world encoder backed by the world file written by `prep-spans`.
    PitchWorld,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderSection {
    #[serde(default)]
    pub kind: EncoderKind,
    #[serde(default = "default_d_enc")]
    pub dim: usize,
}

fn default_d_enc() -> usize {
    16
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            kind: EncoderKind::Ngram,
            dim: default_d_enc(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectorSection {
    #[serde(default = "default_d_hidden")]
    pub d_hidden: usize,
}

fn default_d_hidden() -> usize {
    32
}

impl Default for ProjectorSection {
    fn default() -> Self {
        ProjectorSection {
            d_hidden: default_d_hidden(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSection {
    /// task name -> dataset path
    pub datasets: std::collections::BTreeMap<String, PathBuf>,
    #[serde(default = "default_engines")]
    pub engines: Vec<String>,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default = "default_max_events")]
    pub max_imagination_events: usize,
    /// Injection semantics for the imagine engine (ablation switch).
    #[serde(default)]
    pub injection: crate::imagine::InjectionMode,
}

fn default_engines() -> Vec<String> {
    vec!["majority".into(), "imagine".into()]
}

fn default_max_new_tokens() -> usize {
    16
}

fn default_max_events() -> usize {
    4
}

impl EvalSection {
    pub fn limits(&self) -> GenLimits {
        GenLimits {
            max_new_tokens: self.max_new_tokens,
            max_imagination_events: self.max_imagination_events,
        }
    }
}

fn default_lm() -> LMConfig {
    LMConfig {
        n_layers: 2,
        n_heads: 4,
        d_model: 64,
        ffn_mult: 2,
        max_seq_len: 96,
        vocab_size: 0, // filled from the tokenizer
        seed: 5,
    }
}

/// Whole-run configuration. Every seed is explicit; flags may override the
/// global seed and output root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub bench: Option<BenchSection>,
    #[serde(default)]
    pub spans: SpansSection,
    #[serde(default)]
    pub world: Option<WorldConfig>,
    #[serde(default = "default_lm")]
    pub model: LMConfig,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub projector: ProjectorSection,
    #[serde(default = "TrainConfig::stage1_defaults")]
    pub stage1: TrainConfig,
    #[serde(default = "TrainConfig::stage2_defaults")]
    pub stage2: TrainConfig,
    #[serde(default)]
    pub eval: Option<EvalSection>,
    #[serde(default)]
    pub client: Option<ClientConfig>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!(
            "{}: {e}",
            path.display()
        )))?;
        Ok(cfg)
    }

    /// Standard file locations under the output root.
    pub fn spans_path(&self) -> PathBuf {
        self.paths.out_dir.join("spans.jsonl")
    }

    pub fn world_path(&self) -> PathBuf {
        self.paths.out_dir.join("world.json")
    }

    pub fn test_items_path(&self) -> PathBuf {
        self.paths.out_dir.join("test-items.jsonl")
    }

    pub fn stage1_checkpoint(&self) -> PathBuf {
        self.paths.checkpoints().join("stage1-final.json")
    }

    pub fn stage2_checkpoint(&self) -> PathBuf {
        self.paths.checkpoints().join("stage2-final.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 7
            [paths]
            out_dir = "out"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.stage1.epochs, 10);
        assert_eq!(cfg.stage1.grad_accum_steps, 16);
        assert_eq!(cfg.stage2.weight_decay, 0.01);
        assert_eq!(cfg.spans.source, SpanSource::Synthetic);
        assert_eq!(cfg.paths.checkpoints(), PathBuf::from("out/checkpoints"));
    }

    #[test]
    fn full_config_roundtrips() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 7
            [paths]
            out_dir = "out"
            checkpoint_dir = "ckpt"
            [bench]
            annotations = "data/ann.jsonl"
            measures = ["duration"]
            min_n = 10
            alpha = 0.05
            [spans]
            source = "synthetic"
            synthetic_train = 100
            synthetic_test = 50
            [world]
            n_objects = 40
            n_train_objects = 30
            seed = 3
            [encoder]
            kind = "pitch_world"
            dim = 16
            [eval]
            datasets = { pitch = "out/test-items.jsonl" }
            engines = ["majority", "imagine"]
            [client]
            endpoint = "http://localhost:9000/complete"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.bench.as_ref().unwrap().min_n, 10);
        assert_eq!(cfg.encoder.kind, EncoderKind::PitchWorld);
        assert_eq!(cfg.eval.as_ref().unwrap().engines.len(), 2);
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
    }
}
