//! Synthetic pitch-comparison micro-world: named sound objects with a hidden
//! pitch ranking, an encoder that exposes the ranking, and the end-to-end
//! two-stage experiment built on them.
//!
//! Train and test items use disjoint object sets, so a model can only answer
//! test questions through the injected encoder signal, never by memorizing
//! object pitches.

use std::collections::{HashMap, HashSet};

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{Dataset, QAItem, TaskKind};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, extract_completed_spans, span_f1, PlainDecodeEngine, PromptTemplate,
    SpanScore, CHOICE_LETTERS,
};
use crate::imagine::{
    GenLimits, HashedNgramEncoder, ImagineEngine, Projector, ProjectorConfig, TextEncoder,
};
use crate::spanprep::{ImaginationExample, CLOSE_DELIM, OPEN_DELIM};
use crate::tinylm::{generate_greedy, LMConfig, StepAction, TinyLm, Tokenizer};
use crate::trainer::{train_stage1, train_stage2, TrainConfig, TrainReport};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// World shape: object count, train/test object split, seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_objects: usize,
    pub n_train_objects: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_objects: 200,
            n_train_objects: 150,
            seed: 2024,
        }
    }
}

/// Named sound objects with hidden pitch ranks in [-1, 1].
#[derive(Debug, Clone)]
pub struct PitchWorld {
    pub ranks: HashMap<String, f64>,
    pub train_objects: Vec<String>,
    pub test_objects: Vec<String>,
}

fn syllable_name(rng: &mut ChaCha12Rng) -> String {
    let mut name = String::with_capacity(6);
    for _ in 0..3 {
        name.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        name.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
    }
    name
}

impl PitchWorld {
    pub fn generate(cfg: &WorldConfig) -> Result<PitchWorld> {
        if cfg.n_train_objects == 0 || cfg.n_train_objects >= cfg.n_objects {
            return Err(Error::Config(
                "world needs a nonempty train/test object split".into(),
            ));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let mut names: Vec<String> = Vec::with_capacity(cfg.n_objects);
        let mut seen = HashSet::new();
        while names.len() < cfg.n_objects {
            let name = syllable_name(&mut rng);
            if seen.insert(name.clone()) {
                names.push(name);
            }
        }
        // hidden ranking: evenly spaced in [-1, 1] over a shuffled order
        let mut order: Vec<usize> = (0..cfg.n_objects).collect();
        order.shuffle(&mut rng);
        let mut ranks = HashMap::new();
        for (slot, &obj) in order.iter().enumerate() {
            let rank = 2.0 * slot as f64 / (cfg.n_objects - 1) as f64 - 1.0;
            ranks.insert(names[obj].clone(), rank);
        }
        let train_objects = names[..cfg.n_train_objects].to_vec();
        let test_objects = names[cfg.n_train_objects..].to_vec();
        Ok(PitchWorld {
            ranks,
            train_objects,
            test_objects,
        })
    }

    fn items_from(&self, pool: &[String], n: usize, seed: u64, id_prefix: &str) -> Result<Dataset> {
        let max_pairs = pool.len() * (pool.len() - 1);
        if n > max_pairs {
            return Err(Error::Config(format!(
                "requested {n} items but only {max_pairs} distinct ordered pairs exist"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut used: HashSet<(usize, usize)> = HashSet::new();
        let mut items = Vec::with_capacity(n);
        while items.len() < n {
            let i = rng.random_range(0..pool.len());
            let j = rng.random_range(0..pool.len());
            if i == j || !used.insert((i, j)) {
                continue;
            }
            let a = &pool[i];
            let b = &pool[j];
            let answer = if self.ranks[a] > self.ranks[b] { 0 } else { 1 };
            items.push(QAItem {
                id: format!("{id_prefix}-{:05}", items.len()),
                task: TaskKind::Pitch,
                question: "Which pitch is higher?".into(),
                choices: vec![a.clone(), b.clone()],
                answer,
                metadata: Default::default(),
            });
        }
        Dataset::new(TaskKind::Pitch, items)
    }

    pub fn train_items(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.items_from(&self.train_objects, n, seed, "pw-train")
    }

    pub fn test_items(&self, n: usize, seed: u64) -> Result<Dataset> {
        self.items_from(&self.test_objects, n, seed, "pw-test")
    }

    /// Gold span for an item: both object names, presentation order.
    pub fn gold_span(item: &QAItem) -> String {
        format!("{} {}", item.choices[0], item.choices[1])
    }

    /// Training record: the formatted prompt as context, a single span
    /// holding both names, then the answer letter.
    pub fn example_for_item(item: &QAItem, template: &PromptTemplate) -> Result<ImaginationExample> {
        let context = crate::eval::format_prompt(item, template)?;
        let span = Self::gold_span(item);
        let letter = CHOICE_LETTERS[item.answer];
        let reasoning = format!("{OPEN_DELIM}{span}{CLOSE_DELIM}{letter}");
        let example = ImaginationExample {
            context,
            reasoning: reasoning.clone(),
            answer_text: letter.to_string(),
            answer_char_range: (reasoning.len() - 1, reasoning.len()),
            metadata: Default::default(),
        };
        example.validate()?;
        Ok(example)
    }

    pub fn encoder(&self, dim: usize) -> PitchWorldEncoder {
        PitchWorldEncoder::new(self.ranks.clone(), dim)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = WorldFile {
            ranks: self.ranks.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            train_objects: self.train_objects.clone(),
            test_objects: self.test_objects.clone(),
        };
        let json = serde_json::to_vec_pretty(&file).expect("world serialization");
        crate::manifest::atomic_write(path, &json)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<PitchWorld> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: WorldFile = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(PitchWorld {
            ranks: file.ranks.into_iter().collect(),
            train_objects: file.train_objects,
            test_objects: file.test_objects,
        })
    }
}

/// On-disk form of a micro-world (deterministic key order).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldFile {
    pub ranks: std::collections::BTreeMap<String, f64>,
    pub train_objects: Vec<String>,
    pub test_objects: Vec<String>,
}

/// Encoder whose vectors expose the pitch ranking: the first components carry
/// the ranks of the first two known words of the span (and their difference);
/// the rest is a hashed n-gram sketch of the span text.
pub struct PitchWorldEncoder {
    ranks: HashMap<String, f64>,
    ngrams: HashedNgramEncoder,
    dim: usize,
}

const NUMERIC_DIMS: usize = 4;

impl PitchWorldEncoder {
    pub fn new(ranks: HashMap<String, f64>, dim: usize) -> PitchWorldEncoder {
        assert!(dim > NUMERIC_DIMS, "encoder dimension too small");
        PitchWorldEncoder {
            ranks,
            ngrams: HashedNgramEncoder::new(dim - NUMERIC_DIMS),
            dim,
        }
    }
}

impl TextEncoder for PitchWorldEncoder {
    fn version(&self) -> &str {
        "pitch-world-v1"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_text(&self, span: &str) -> Array1<f64> {
        let mut v = Array1::zeros(self.dim);
        let words: Vec<&str> = span.split_whitespace().collect();
        let r1 = words
            .first()
            .and_then(|w| self.ranks.get(*w))
            .copied()
            .unwrap_or(0.0);
        let r2 = words
            .get(1)
            .and_then(|w| self.ranks.get(*w))
            .copied()
            .unwrap_or(0.0);
        let both_known = words.len() >= 2
            && self.ranks.contains_key(words[0])
            && self.ranks.contains_key(words[1]);
        v[0] = r1;
        v[1] = r2;
        v[2] = r1 - r2;
        v[3] = if both_known { 1.0 } else { 0.0 };
        let sketch = self.ngrams.encode_text(span);
        for (i, &x) in sketch.iter().enumerate() {
            v[NUMERIC_DIMS + i] = 0.25 * x;
        }
        v
    }
}

/// Everything the end-to-end experiment needs, with tuned defaults.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub lm: LMConfig,
    pub d_enc: usize,
    pub d_hidden: usize,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub limits: GenLimits,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut stage1 = TrainConfig::stage1_defaults();
        // a randomly initialized model needs a larger step than a pretrained one
        stage1.learning_rate = 1e-3;
        stage1.grad_accum_steps = 4;
        stage1.seed = 7;
        let mut stage2 = TrainConfig::stage2_defaults();
        stage2.learning_rate = 1e-2;
        stage2.epochs = 6;
        stage2.batch_size = 16;
        stage2.seed = 11;
        ExperimentConfig {
            world: WorldConfig::default(),
            n_train: 2000,
            n_test: 500,
            lm: LMConfig {
                n_layers: 2,
                n_heads: 4,
                d_model: 64,
                ffn_mult: 2,
                max_seq_len: 96,
                vocab_size: 0, // set from the tokenizer
                seed: 5,
            },
            d_enc: 16,
            d_hidden: 32,
            stage1,
            stage2,
            // the fixed-width template needs exactly 16 reasoning tokens
            limits: GenLimits {
                max_new_tokens: 16,
                max_imagination_events: 4,
            },
        }
    }
}

/// Metrics from one full run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub span_score: SpanScore,
    pub accuracy_injected: f64,
    pub accuracy_no_injection: f64,
    pub accuracy_untrained_projector: f64,
    pub stage1: TrainReport,
    pub stage2: TrainReport,
}

/// Stage-1 span predictions on a dataset via plain greedy decoding.
pub fn predict_spans(
    model: &TinyLm,
    tokenizer: &Tokenizer,
    dataset: &Dataset,
    template: &PromptTemplate,
    limits: &GenLimits,
) -> Result<Vec<Vec<String>>> {
    use rayon::prelude::*;
    dataset
        .items
        .par_iter()
        .map(|item| {
            let prompt = tokenizer.encode(&crate::eval::format_prompt(item, template)?);
            let mut trace = generate_greedy(
                model,
                &prompt,
                limits.max_new_tokens,
                &[tokenizer.eos_id()],
                |_, _| StepAction::Continue,
            )?;
            trace.text = tokenizer.decode(trace.emitted());
            Ok(extract_completed_spans(&trace.text))
        })
        .collect()
}

/// Runs the full pipeline: stage-1 SFT, span F1 on held-out items, stage-2
/// projector training, then test accuracy with injection, without injection,
/// and with an untrained projector.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let template = PromptTemplate::default_qa();
    let world = PitchWorld::generate(&cfg.world)?;
    let train = world.train_items(cfg.n_train, cfg.world.seed ^ 0xA11CE)?;
    let test = world.test_items(cfg.n_test, cfg.world.seed ^ 0xB0B)?;
    let examples: Vec<ImaginationExample> = train
        .items
        .iter()
        .map(|item| PitchWorld::example_for_item(item, &template))
        .collect::<Result<_>>()?;

    let tokenizer = Tokenizer::ascii().with_special_tokens(&[OPEN_DELIM, CLOSE_DELIM])?;
    let mut lm_cfg = cfg.lm.clone();
    lm_cfg.vocab_size = tokenizer.vocab_size();
    let mut model = TinyLm::new(lm_cfg)?;

    let stage1 = train_stage1(&mut model, &tokenizer, &examples, &cfg.stage1, None)?;

    let predicted = predict_spans(&model, &tokenizer, &test, &template, &cfg.limits)?;
    let gold: Vec<Vec<String>> = test
        .items
        .iter()
        .map(|item| vec![PitchWorld::gold_span(item)])
        .collect();
    let span_score = span_f1(&predicted, &gold);

    let proj_cfg = ProjectorConfig {
        d_enc: cfg.d_enc,
        d_hidden: cfg.d_hidden,
        d_model: model.cfg.d_model,
        seed: cfg.world.seed ^ 0x9E3779B9,
    };
    let untrained = Projector::new(proj_cfg.clone())?;
    let mut projector = Projector::new(proj_cfg)?;
    let encoder = world.encoder(cfg.d_enc);
    let stage2 = train_stage2(
        &model,
        &tokenizer,
        &mut projector,
        &encoder,
        &examples,
        &cfg.stage2,
        None,
    )?;

    let engine = ImagineEngine::new(
        model.clone(),
        tokenizer.clone(),
        projector,
        Box::new(world.encoder(cfg.d_enc)),
    )?;
    let injected = evaluate(&engine, &test, &template, &cfg.limits)?;
    let plain = evaluate(
        &PlainDecodeEngine {
            engine: &engine,
            label: "no-injection".into(),
        },
        &test,
        &template,
        &cfg.limits,
    )?;
    let untrained_engine = ImagineEngine::new(
        model,
        tokenizer,
        untrained,
        Box::new(world.encoder(cfg.d_enc)),
    )?;
    let untrained_eval = evaluate(&untrained_engine, &test, &template, &cfg.limits)?;

    Ok(ExperimentOutcome {
        span_score,
        accuracy_injected: injected.accuracy,
        accuracy_no_injection: plain.accuracy,
        accuracy_untrained_projector: untrained_eval.accuracy,
        stage1,
        stage2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_is_deterministic_and_disjoint() {
        let cfg = WorldConfig::default();
        let a = PitchWorld::generate(&cfg).unwrap();
        let b = PitchWorld::generate(&cfg).unwrap();
        assert_eq!(a.train_objects, b.train_objects);
        assert_eq!(a.test_objects, b.test_objects);
        assert_eq!(a.train_objects.len(), 150);
        assert_eq!(a.test_objects.len(), 50);
        let train: HashSet<&String> = a.train_objects.iter().collect();
        assert!(a.test_objects.iter().all(|o| !train.contains(o)));
        // six-character names over the base alphabet
        assert!(a.train_objects.iter().all(|o| o.len() == 6));
    }

    #[test]
    fn items_have_valid_gold_and_distinct_pairs() {
        let world = PitchWorld::generate(&WorldConfig::default()).unwrap();
        let d = world.train_items(300, 1).unwrap();
        let mut pairs = HashSet::new();
        for item in &d.items {
            assert!(pairs.insert((item.choices[0].clone(), item.choices[1].clone())));
            let hi = &item.choices[item.answer];
            let lo = &item.choices[1 - item.answer];
            assert!(world.ranks[hi] > world.ranks[lo]);
        }
    }

    #[test]
    fn gold_answers_roughly_balanced() {
        let world = PitchWorld::generate(&WorldConfig::default()).unwrap();
        let d = world.train_items(400, 9).unwrap();
        let zeros = d.items.iter().filter(|i| i.answer == 0).count();
        // 3 sigma for n=400, p=0.5 is 30
        assert!((zeros as i64 - 200).abs() <= 30, "zeros = {zeros}");
    }

    #[test]
    fn example_layout_is_fixed_width() {
        let world = PitchWorld::generate(&WorldConfig::default()).unwrap();
        let template = PromptTemplate::default_qa();
        let d = world.train_items(20, 3).unwrap();
        let lens: HashSet<usize> = d
            .items
            .iter()
            .map(|i| {
                let ex = PitchWorld::example_for_item(i, &template).unwrap();
                ex.context.len() + ex.reasoning.len()
            })
            .collect();
        assert_eq!(lens.len(), 1, "examples vary in length: {lens:?}");
    }

    #[test]
    fn encoder_exposes_rank_difference() {
        let world = PitchWorld::generate(&WorldConfig::default()).unwrap();
        let enc = world.encoder(16);
        let a = &world.train_objects[0];
        let b = &world.train_objects[1];
        let v = enc.encode_text(&format!("{a} {b}"));
        assert_eq!(v[0], world.ranks[a]);
        assert_eq!(v[1], world.ranks[b]);
        assert!((v[2] - (world.ranks[a] - world.ranks[b])).abs() < 1e-12);
        assert_eq!(v[3], 1.0);
        // unknown words carry no rank signal
        let u = enc.encode_text("zzzzzz yyyyyy");
        assert_eq!(u[0], 0.0);
        assert_eq!(u[3], 0.0);
    }

    #[test]
    fn examples_validate_and_tokenize() {
        let world = PitchWorld::generate(&WorldConfig::default()).unwrap();
        let template = PromptTemplate::default_qa();
        let tokenizer = Tokenizer::ascii()
            .with_special_tokens(&[OPEN_DELIM, CLOSE_DELIM])
            .unwrap();
        let d = world.train_items(10, 3).unwrap();
        for item in &d.items {
            let ex = PitchWorld::example_for_item(item, &template).unwrap();
            let batch = crate::trainer::build_stage2_mask(&ex, &tokenizer).unwrap();
            assert_eq!(batch.span_pairs.len(), 1);
            assert_eq!(batch.answer_positions.len(), 1);
        }
    }
}
