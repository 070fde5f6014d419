//! The two fine-tuning stages: span-detection SFT with selective loss
//! masking, then projector-only training against a frozen model.

pub mod optim;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagine::{Projector, ProjectorParams, TextEncoder};
use crate::spanprep::{ImaginationExample, CLOSE_DELIM, OPEN_DELIM};
use crate::tinylm::{
    masked_cross_entropy_with_grad, Checkpoint, ForwardRequest, ParamSet, TinyLm, Tokenizer,
};

pub use optim::{clip_global_norm, AdamW, AdamWConfig, TensorCollection};

/// Which target positions Stage 1 supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Delimiters and span contents only.
    #[default]
    SpanOnly,
    /// Every reasoning token except the answer segment.
    AllButAnswer,
}

/// Hyperparameters for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
    #[serde(default)]
    pub mask_mode: MaskMode,
}

impl TrainConfig {
    /// Stage-1 defaults: 10 epochs, batch 4, accumulation 16, lr 1e-5, no
    /// weight decay.
    pub fn stage1_defaults() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 4,
            grad_accum_steps: 16,
            learning_rate: 1e-5,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
            mask_mode: MaskMode::SpanOnly,
        }
    }

    /// Stage-2 defaults: 10 epochs, batch 4, lr 1e-4, weight decay 0.01.
    pub fn stage2_defaults() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 4,
            grad_accum_steps: 1,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            seed: 0,
            mask_mode: MaskMode::SpanOnly,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.batch_size == 0
            || self.grad_accum_steps == 0
            || self.learning_rate < 0.0
            || self.weight_decay < 0.0
            || self.grad_clip <= 0.0
        {
            return Err(Error::Config("invalid training configuration".into()));
        }
        Ok(())
    }

    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.grad_accum_steps
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One tokenized training sequence with target mask and span/answer indices.
/// Indices refer to the full token sequence (context + reasoning + eos);
/// `mask[j]` governs the prediction of token `j + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub tokens: Vec<u32>,
    pub prompt_tokens: usize,
    pub mask: Vec<bool>,
    pub span_pairs: Vec<(usize, usize)>,
    pub answer_positions: Vec<usize>,
}

impl MaskedBatch {
    /// Model inputs: every token except the last.
    pub fn inputs(&self) -> &[u32] {
        &self.tokens[..self.tokens.len() - 1]
    }

    /// Prediction targets: every token except the first.
    pub fn targets(&self) -> &[u32] {
        &self.tokens[1..]
    }
}

/// Token indices of a validated example: full sequence, span delimiter pairs
/// and the answer segment (answer tokens plus the terminal eos).
pub fn tokenize_example(
    example: &ImaginationExample,
    tokenizer: &Tokenizer,
) -> Result<MaskedBatch> {
    example.validate()?;
    let open_id = tokenizer
        .token_id(OPEN_DELIM)
        .ok_or_else(|| Error::TokenizerContract("open delimiter not in vocabulary".into()))?;
    let close_id = tokenizer
        .token_id(CLOSE_DELIM)
        .ok_or_else(|| Error::TokenizerContract("close delimiter not in vocabulary".into()))?;

    let ctx_ids = tokenizer.encode(&example.context);
    let prompt_tokens = ctx_ids.len();
    let reasoning = tokenizer.encode_with_offsets(&example.reasoning);

    let mut tokens = ctx_ids;
    let mut span_pairs = Vec::new();
    let mut open_at: Option<usize> = None;
    let mut answer_positions = Vec::new();
    let (ans_start, ans_end) = example.answer_char_range;
    for (i, (id, range)) in reasoning.iter().enumerate() {
        let pos = prompt_tokens + i;
        if *id == open_id {
            if open_at.is_some() {
                return Err(Error::TokenizerContract("nested open delimiter".into()));
            }
            open_at = Some(pos);
        } else if *id == close_id {
            let open = open_at.take().ok_or_else(|| {
                Error::TokenizerContract("close delimiter without open".into())
            })?;
            span_pairs.push((open, pos));
        }
        if range.start < ans_end && ans_start < range.end {
            answer_positions.push(pos);
        }
        tokens.push(*id);
    }
    if open_at.is_some() {
        return Err(Error::TokenizerContract("unclosed delimiter".into()));
    }
    let expected_spans = example.span_texts().len();
    if span_pairs.len() != expected_spans {
        return Err(Error::TokenizerContract(format!(
            "tokenizer produced {} spans, text has {expected_spans} (split delimiter?)",
            span_pairs.len()
        )));
    }
    tokens.push(tokenizer.eos_id());

    Ok(MaskedBatch {
        tokens,
        prompt_tokens,
        mask: Vec::new(),
        span_pairs,
        answer_positions,
    })
}

/// Stage-1 mask: supervise delimiters and span contents ([`MaskMode::SpanOnly`])
/// or everything except the answer segment ([`MaskMode::AllButAnswer`]).
/// Context positions are never supervised.
pub fn build_stage1_mask(
    example: &ImaginationExample,
    tokenizer: &Tokenizer,
    mode: MaskMode,
) -> Result<MaskedBatch> {
    let mut batch = tokenize_example(example, tokenizer)?;
    let answers: HashSet<usize> = batch.answer_positions.iter().copied().collect();
    let n = batch.tokens.len();
    let mut mask = vec![false; n - 1];
    for (j, m) in mask.iter_mut().enumerate() {
        let token_idx = j + 1;
        if token_idx < batch.prompt_tokens || answers.contains(&token_idx) {
            continue;
        }
        *m = match mode {
            MaskMode::SpanOnly => batch
                .span_pairs
                .iter()
                .any(|&(open, close)| token_idx >= open && token_idx <= close),
            MaskMode::AllButAnswer => token_idx >= batch.prompt_tokens,
        };
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Domain("stage-1 mask has no active positions".into()));
    }
    batch.mask = mask;
    Ok(batch)
}

/// Stage-2 mask: supervise only the answer segment.
pub fn build_stage2_mask(
    example: &ImaginationExample,
    tokenizer: &Tokenizer,
) -> Result<MaskedBatch> {
    let mut batch = tokenize_example(example, tokenizer)?;
    let n = batch.tokens.len();
    let mut mask = vec![false; n - 1];
    for &pos in &batch.answer_positions {
        if pos >= 1 {
            mask[pos - 1] = true;
        }
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Domain("stage-2 mask has no active positions".into()));
    }
    batch.mask = mask;
    Ok(batch)
}

/// Loss curve and checkpoint paths from one training run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per optimizer step.
    pub losses: Vec<f64>,
    pub epochs_completed: usize,
    pub checkpoints: Vec<PathBuf>,
}

fn shuffled_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ ((epoch as u64) << 32));
    order.shuffle(&mut rng);
    order
}

/// Stage 1: full-model SFT on span-masked examples. Reproducible given the
/// seed; aborts on non-finite loss with a reference to the last saved epoch
/// checkpoint.
pub fn train_stage1(
    model: &mut TinyLm,
    tokenizer: &Tokenizer,
    examples: &[ImaginationExample],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Domain("no training examples".into()));
    }
    if tokenizer.token_id(OPEN_DELIM).is_none() || tokenizer.token_id(CLOSE_DELIM).is_none() {
        return Err(Error::TokenizerContract(
            "tokenizer must be extended with the imagination delimiters before stage 1".into(),
        ));
    }
    let batches: Vec<MaskedBatch> = examples
        .iter()
        .map(|ex| build_stage1_mask(ex, tokenizer, cfg.mask_mode))
        .collect::<Result<_>>()?;

    let mut opt = AdamW::new(cfg.adamw(), &model.params);
    let mut report = TrainReport::default();
    let mut last_good: Option<PathBuf> = None;

    for epoch in 0..cfg.epochs {
        let order = shuffled_order(batches.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.effective_batch()) {
            let mut acc = ParamSet::zeros(&model.cfg);
            let mut acc_loss = 0.0;
            let weight = 1.0 / chunk.len() as f64;
            for &idx in chunk {
                let batch = &batches[idx];
                let req = ForwardRequest::plain(batch.inputs().to_vec());
                let (logits, cache) = model.forward_with_cache(&req)?;
                let (loss, d_logits) = masked_cross_entropy_with_grad(
                    &logits,
                    batch.targets(),
                    &batch.mask,
                    true,
                )?;
                if !loss.is_finite() {
                    return Err(Error::TrainingAborted {
                        msg: format!("non-finite loss at epoch {epoch}"),
                        last_good,
                    });
                }
                let mut d_logits = d_logits.expect("gradient requested");
                d_logits.mapv_inplace(|x| x * weight);
                let grads = model.backward(&req, &cache, &d_logits);
                acc.add_assign(&grads.params);
                acc_loss += loss * weight;
            }
            clip_global_norm(&mut acc, cfg.grad_clip);
            opt.step(&mut model.params, &acc);
            report.losses.push(acc_loss);
        }
        report.epochs_completed = epoch + 1;
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(format!("stage1-epoch-{:03}.json", epoch + 1));
            Checkpoint::capture(model, tokenizer).save(&path)?;
            last_good = Some(path.clone());
            report.checkpoints.push(path);
        }
    }
    if let Some(dir) = checkpoint_dir {
        let path = dir.join("stage1-final.json");
        Checkpoint::capture(model, tokenizer).save(&path)?;
        report.checkpoints.push(path);
    }
    Ok(report)
}

/// Stage 2: the model is frozen (taken by shared reference); teacher-forced
/// gold spans are encoded, projected and injected at each close delimiter, and
/// only the projector receives updates from the answer-token loss.
pub fn train_stage2(
    model: &TinyLm,
    tokenizer: &Tokenizer,
    projector: &mut Projector,
    encoder: &dyn TextEncoder,
    examples: &[ImaginationExample],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Domain("no training examples".into()));
    }
    if projector.cfg.d_model != model.cfg.d_model {
        return Err(Error::Config(format!(
            "projector output dimension {} does not match model hidden size {}",
            projector.cfg.d_model, model.cfg.d_model
        )));
    }
    if projector.cfg.d_enc != encoder.dim() {
        return Err(Error::Config(format!(
            "projector input dimension {} does not match encoder dimension {}",
            projector.cfg.d_enc,
            encoder.dim()
        )));
    }
    let batches: Vec<MaskedBatch> = examples
        .iter()
        .map(|ex| build_stage2_mask(ex, tokenizer))
        .collect::<Result<_>>()?;
    // span texts are fixed per example; encode once
    let span_texts: Vec<Vec<String>> = examples.iter().map(|ex| ex.span_texts()).collect();

    let mut opt = AdamW::new(cfg.adamw(), &projector.params);
    let mut report = TrainReport::default();
    let mut last_good: Option<PathBuf> = None;

    for epoch in 0..cfg.epochs {
        let order = shuffled_order(batches.len(), cfg.seed, epoch);
        for chunk in order.chunks(cfg.effective_batch()) {
            let mut acc = ProjectorParams::zeros(&projector.cfg);
            let mut acc_loss = 0.0;
            let weight = 1.0 / chunk.len() as f64;
            for &idx in chunk {
                let batch = &batches[idx];
                let texts = &span_texts[idx];
                if texts.len() != batch.span_pairs.len() {
                    return Err(Error::TokenizerContract(
                        "span count mismatch between text and tokens".into(),
                    ));
                }
                let mut req = ForwardRequest::plain(batch.inputs().to_vec());
                let mut caches = Vec::with_capacity(texts.len());
                for (text, &(_, close)) in texts.iter().zip(&batch.span_pairs) {
                    let encoded = encoder.encode_text(text);
                    let (v, cache) = projector.forward_cached(&encoded)?;
                    req.embedding_overrides.insert(close, v);
                    caches.push((close, cache));
                }
                let (logits, fwd_cache) = model.forward_with_cache(&req)?;
                let (loss, d_logits) = masked_cross_entropy_with_grad(
                    &logits,
                    batch.targets(),
                    &batch.mask,
                    true,
                )?;
                if !loss.is_finite() {
                    return Err(Error::TrainingAborted {
                        msg: format!("non-finite loss at epoch {epoch}"),
                        last_good,
                    });
                }
                let mut d_logits = d_logits.expect("gradient requested");
                d_logits.mapv_inplace(|x| x * weight);
                let grads = model.backward(&req, &fwd_cache, &d_logits);
                for (close, cache) in &caches {
                    projector.backward(cache, grads.d_input.row(*close), &mut acc);
                }
                acc_loss += loss * weight;
            }
            clip_global_norm(&mut acc, cfg.grad_clip);
            opt.step(&mut projector.params, &acc);
            report.losses.push(acc_loss);
        }
        report.epochs_completed = epoch + 1;
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(format!("stage2-epoch-{:03}.json", epoch + 1));
            projector.save(&path)?;
            last_good = Some(path.clone());
            report.checkpoints.push(path);
        }
    }
    if let Some(dir) = checkpoint_dir {
        let path = dir.join("stage2-final.json");
        projector.save(&path)?;
        report.checkpoints.push(path);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagine::{HashedNgramEncoder, ProjectorConfig};
    use crate::spanprep::annotate_with_template;
    use crate::tinylm::{param_hash, LMConfig};

    fn tokenizer() -> Tokenizer {
        Tokenizer::ascii()
            .with_special_tokens(&[OPEN_DELIM, CLOSE_DELIM])
            .unwrap()
    }

    fn model(tok: &Tokenizer, seed: u64) -> TinyLm {
        TinyLm::new(LMConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            ffn_mult: 2,
            max_seq_len: 160,
            vocab_size: tok.vocab_size(),
            seed,
        })
        .unwrap()
    }

    fn example() -> ImaginationExample {
        annotate_with_template("Which is higher: flute or tuba?", "a flute note", "A").unwrap()
    }

    #[test]
    fn stage1_mask_covers_spans_not_answers() {
        let tok = tokenizer();
        let ex = example();
        let batch = build_stage1_mask(&ex, &tok, MaskMode::SpanOnly).unwrap();
        assert_eq!(batch.span_pairs.len(), 1);
        let (open, close) = batch.span_pairs[0];
        // every span-related target position is active
        for idx in open..=close {
            assert!(batch.mask[idx - 1], "span token {idx} not supervised");
        }
        // answer positions are never supervised
        for &pos in &batch.answer_positions {
            assert!(!batch.mask[pos - 1], "answer token {pos} supervised");
        }
        // context targets are never supervised
        for j in 0..batch.prompt_tokens.saturating_sub(1) {
            assert!(!batch.mask[j]);
        }
    }

    #[test]
    fn stage1_mask_boundary_close_then_answer() {
        // close delimiter supervised, first answer token not
        let tok = tokenizer();
        let ex = example();
        let batch = build_stage1_mask(&ex, &tok, MaskMode::SpanOnly).unwrap();
        let (_, close) = batch.span_pairs[0];
        assert!(batch.mask[close - 1]);
        let first_answer = batch.answer_positions[0];
        assert!(!batch.mask[first_answer - 1]);
    }

    #[test]
    fn broad_mask_supervises_connectives() {
        let tok = tokenizer();
        let ex = example();
        let narrow = build_stage1_mask(&ex, &tok, MaskMode::SpanOnly).unwrap();
        let broad = build_stage1_mask(&ex, &tok, MaskMode::AllButAnswer).unwrap();
        let n_narrow = narrow.mask.iter().filter(|&&m| m).count();
        let n_broad = broad.mask.iter().filter(|&&m| m).count();
        assert!(n_broad > n_narrow);
        for &pos in &broad.answer_positions {
            assert!(!broad.mask[pos - 1]);
        }
    }

    #[test]
    fn two_span_example_masks_both() {
        let tok = tokenizer();
        let reasoning = format!(
            "{OPEN_DELIM}a{CLOSE_DELIM} vs {OPEN_DELIM}b{CLOSE_DELIM} gives A."
        );
        let pos = reasoning.rfind("A.").unwrap();
        let ex = ImaginationExample {
            context: "q".into(),
            reasoning,
            answer_text: "A".into(),
            answer_char_range: (pos, pos + 1),
            metadata: Default::default(),
        };
        let batch = build_stage1_mask(&ex, &tok, MaskMode::SpanOnly).unwrap();
        assert_eq!(batch.span_pairs.len(), 2);
    }

    #[test]
    fn stage2_mask_is_answers_only() {
        let tok = tokenizer();
        let ex = example();
        let batch = build_stage2_mask(&ex, &tok).unwrap();
        let active: Vec<usize> = batch
            .mask
            .iter()
            .enumerate()
            .filter_map(|(j, &m)| m.then_some(j + 1))
            .collect();
        assert_eq!(active, batch.answer_positions);
    }

    #[test]
    fn zero_lr_stage1_leaves_parameters_unchanged() {
        let tok = tokenizer();
        let mut m = model(&tok, 1);
        let before = param_hash(&m);
        let mut cfg = TrainConfig::stage1_defaults();
        cfg.epochs = 1;
        cfg.learning_rate = 0.0;
        train_stage1(&mut m, &tok, &[example()], &cfg, None).unwrap();
        assert_eq!(before, param_hash(&m));
    }

    #[test]
    fn stage1_is_deterministic_across_runs() {
        let tok = tokenizer();
        let examples = vec![
            example(),
            annotate_with_template("Louder: horn or leaf?", "a horn blast", "B").unwrap(),
        ];
        let mut cfg = TrainConfig::stage1_defaults();
        cfg.epochs = 2;
        cfg.learning_rate = 1e-3;
        let mut m1 = model(&tok, 5);
        let r1 = train_stage1(&mut m1, &tok, &examples, &cfg, None).unwrap();
        let mut m2 = model(&tok, 5);
        let r2 = train_stage1(&mut m2, &tok, &examples, &cfg, None).unwrap();
        assert_eq!(param_hash(&m1), param_hash(&m2));
        assert_eq!(r1.losses, r2.losses);
    }

    #[test]
    fn stage1_loss_decreases_with_training() {
        let tok = tokenizer();
        let mut m = model(&tok, 9);
        let examples: Vec<ImaginationExample> = (0..8)
            .map(|i| {
                annotate_with_template(
                    &format!("q{i}: which is higher?"),
                    "a flute note",
                    if i % 2 == 0 { "A" } else { "B" },
                )
                .unwrap()
            })
            .collect();
        let mut cfg = TrainConfig::stage1_defaults();
        cfg.epochs = 10;
        cfg.batch_size = 4;
        cfg.grad_accum_steps = 2;
        cfg.learning_rate = 3e-3;
        let report = train_stage1(&mut m, &tok, &examples, &cfg, None).unwrap();
        let steps_per_epoch = report.losses.len() / 10;
        let first: f64 =
            report.losses[..steps_per_epoch].iter().sum::<f64>() / steps_per_epoch as f64;
        let last: f64 = report.losses[report.losses.len() - steps_per_epoch..]
            .iter()
            .sum::<f64>()
            / steps_per_epoch as f64;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn non_finite_loss_aborts_with_last_good_reference() {
        let tok = tokenizer();
        let dir = tempfile::tempdir().unwrap();
        let mut m = model(&tok, 3);
        // poison the weight-tied head so the very first loss is non-finite
        m.params.tok_emb[(5, 0)] = f64::INFINITY;
        let mut cfg = TrainConfig::stage1_defaults();
        cfg.epochs = 2;
        let err = train_stage1(&mut m, &tok, &[example()], &cfg, Some(dir.path())).unwrap_err();
        match err {
            Error::TrainingAborted { last_good, .. } => assert!(last_good.is_none()),
            other => panic!("expected training abort, got {other}"),
        }
    }

    #[test]
    fn stage2_freezes_model_and_moves_projector() {
        let tok = tokenizer();
        let m = model(&tok, 2);
        let encoder = HashedNgramEncoder::new(12);
        let mut projector = Projector::new(ProjectorConfig {
            d_enc: 12,
            d_hidden: 8,
            d_model: m.cfg.d_model,
            seed: 4,
        })
        .unwrap();
        let proj_before = projector.params.clone();
        let model_before = param_hash(&m);
        let mut cfg = TrainConfig::stage2_defaults();
        cfg.epochs = 2;
        cfg.learning_rate = 1e-2;
        train_stage2(&m, &tok, &mut projector, &encoder, &[example()], &cfg, None).unwrap();
        assert_eq!(model_before, param_hash(&m), "model changed during stage 2");
        assert_ne!(proj_before, projector.params, "projector did not train");
    }

    #[test]
    fn stage2_zero_lr_projector_unchanged() {
        let tok = tokenizer();
        let m = model(&tok, 2);
        let encoder = HashedNgramEncoder::new(12);
        let mut projector = Projector::new(ProjectorConfig {
            d_enc: 12,
            d_hidden: 8,
            d_model: m.cfg.d_model,
            seed: 4,
        })
        .unwrap();
        let before = projector.params.clone();
        let mut cfg = TrainConfig::stage2_defaults();
        cfg.epochs = 1;
        cfg.learning_rate = 0.0;
        cfg.weight_decay = 0.0;
        train_stage2(&m, &tok, &mut projector, &encoder, &[example()], &cfg, None).unwrap();
        assert_eq!(before, projector.params);
    }

    #[test]
    fn stage2_rejects_dimension_mismatch() {
        let tok = tokenizer();
        let m = model(&tok, 2);
        let encoder = HashedNgramEncoder::new(12);
        let mut projector = Projector::new(ProjectorConfig {
            d_enc: 12,
            d_hidden: 8,
            d_model: m.cfg.d_model + 1,
            seed: 4,
        })
        .unwrap();
        let cfg = TrainConfig::stage2_defaults();
        let err = train_stage2(&m, &tok, &mut projector, &encoder, &[example()], &cfg, None)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn stage1_defaults_match_documented_values() {
        let cfg = TrainConfig::stage1_defaults();
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.grad_accum_steps, 16);
        assert_eq!(cfg.learning_rate, 1e-5);
        assert_eq!(cfg.weight_decay, 0.0);
        let cfg2 = TrainConfig::stage2_defaults();
        assert_eq!(cfg2.epochs, 10);
        assert_eq!(cfg2.batch_size, 4);
        assert_eq!(cfg2.learning_rate, 1e-4);
        assert_eq!(cfg2.weight_decay, 0.01);
        assert_eq!(cfg2.grad_accum_steps, 1);
    }
}
