//! Minimal decoder-only LM: tokenizer, model, greedy decoding with step
//! hooks, and checkpointing.

pub mod checkpoint;
pub mod model;
pub mod tokenizer;

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1};

use crate::error::Result;
use crate::trace::{GenerationTrace, StepActionKind, StepRecord};

pub use checkpoint::{param_hash, Checkpoint, TensorData};
pub use model::{
    masked_cross_entropy, masked_cross_entropy_with_grad, ForwardRequest, Gradients, LMConfig,
    ParamSet, TinyLm,
};
pub use tokenizer::{Tokenizer, TokenizerState, EOS_ID, UNK_ID};

/// Decision returned by a generation step hook after each emitted token.
pub enum StepAction {
    Continue,
    Stop,
    /// Merge these input-embedding overrides and recompute the forward pass
    /// before emitting the next token.
    Reforward {
        overrides: BTreeMap<usize, Array1<f64>>,
    },
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> u32 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy decoding. After each emitted token the hook may continue, stop, or
/// request a re-forward with additional embedding overrides (which persist for
/// the rest of the generation). Deterministic for fixed weights and prompt.
pub fn generate_greedy(
    model: &TinyLm,
    prompt: &[u32],
    max_new_tokens: usize,
    stop_tokens: &[u32],
    mut hook: impl FnMut(&GenerationTrace, u32) -> StepAction,
) -> Result<GenerationTrace> {
    let mut req = ForwardRequest::plain(prompt.to_vec());
    let mut trace = GenerationTrace::new(prompt);

    loop {
        if trace.emitted_count() >= max_new_tokens {
            trace.truncated = true;
            break;
        }
        if req.token_ids.len() >= model.cfg.max_seq_len {
            trace.truncated = true;
            break;
        }
        let logits = model.forward(&req)?;
        let next = argmax(logits.row(logits.nrows() - 1));
        req.token_ids.push(next);
        trace.tokens.push(next);

        let mut record = StepRecord {
            token: next,
            action: StepActionKind::Continue,
        };
        match hook(&trace, next) {
            StepAction::Continue => {}
            StepAction::Stop => {
                record.action = StepActionKind::Stop;
                trace.steps.push(record);
                break;
            }
            StepAction::Reforward { overrides } => {
                record.action = StepActionKind::Reforward;
                req.embedding_overrides.extend(overrides);
            }
        }
        trace.steps.push(record);
        if stop_tokens.contains(&next) {
            break;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    fn tiny_model(seed: u64) -> TinyLm {
        TinyLm::new(LMConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            ffn_mult: 2,
            max_seq_len: 12,
            vocab_size: 9,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn argmax_ties_break_low() {
        let row = Array1::from(vec![1.0, 3.0, 3.0, 0.0]);
        assert_eq!(argmax(row.view()), 1);
    }

    #[test]
    fn generation_is_deterministic() {
        let model = tiny_model(5);
        let a = generate_greedy(&model, &[1, 2], 6, &[], |_, _| StepAction::Continue).unwrap();
        let b = generate_greedy(&model, &[1, 2], 6, &[], |_, _| StepAction::Continue).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.emitted_count(), 6);
        assert!(a.truncated);
    }

    #[test]
    fn stop_token_ends_generation() {
        let model = tiny_model(5);
        let free = generate_greedy(&model, &[1, 2], 8, &[], |_, _| StepAction::Continue).unwrap();
        let stop = free.emitted()[2];
        let first_hit = free.emitted().iter().position(|&t| t == stop).unwrap();
        let stopped =
            generate_greedy(&model, &[1, 2], 8, &[stop], |_, _| StepAction::Continue).unwrap();
        assert_eq!(stopped.emitted().last(), Some(&stop));
        assert_eq!(stopped.emitted_count(), first_hit + 1);
        assert!(!stopped.truncated);
    }

    #[test]
    fn hook_stop_ends_generation() {
        let model = tiny_model(5);
        let t = generate_greedy(&model, &[1, 2], 8, &[], |trace, _| {
            if trace.emitted_count() == 2 {
                StepAction::Stop
            } else {
                StepAction::Continue
            }
        })
        .unwrap();
        assert_eq!(t.emitted_count(), 2);
        assert_eq!(t.steps.last().unwrap().action, StepActionKind::Stop);
    }

    #[test]
    fn identity_reforward_changes_nothing() {
        let model = tiny_model(9);
        let plain = generate_greedy(&model, &[1, 2], 6, &[], |_, _| StepAction::Continue).unwrap();
        let hooked = generate_greedy(&model, &[1, 2], 6, &[], |trace, token| {
            // override the just-emitted position with the token's own embedding
            let pos = trace.tokens.len() - 1;
            let mut overrides = BTreeMap::new();
            overrides.insert(pos, model.params.tok_emb.row(token as usize).to_owned());
            StepAction::Reforward { overrides }
        })
        .unwrap();
        assert_eq!(plain.tokens, hooked.tokens);
        assert!(hooked
            .steps
            .iter()
            .all(|s| s.action == StepActionKind::Reforward));
    }
}
