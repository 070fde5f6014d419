//! Inference-time imagination: detect the close delimiter, encode the span,
//! project it into the model's hidden space, inject, and resume decoding.

pub mod encoder;
pub mod projector;

use std::collections::BTreeMap;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spanprep::{CLOSE_DELIM, OPEN_DELIM};
use crate::tinylm::{generate_greedy, StepAction, TinyLm, Tokenizer, EOS_ID};
use crate::trace::{GenerationTrace, ImaginationEvent};

pub use encoder::{fnv1a64, vector_fingerprint, HashedNgramEncoder, TextEncoder};
pub use projector::{Projector, ProjectorCache, ProjectorConfig, ProjectorParams};

/// Whether the projected vector replaces the close delimiter's input
/// embedding or is added to it. Replacement is the default; addition is kept
/// for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    #[default]
    Replace,
    Add,
}

/// Decoding limits.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GenLimits {
    pub max_new_tokens: usize,
    pub max_imagination_events: usize,
}

impl Default for GenLimits {
    fn default() -> Self {
        GenLimits {
            max_new_tokens: 64,
            max_imagination_events: 4,
        }
    }
}

/// Extracts the span closed by the final token of `tokens`: the decoded text
/// strictly between the most recent unmatched open delimiter and the close,
/// whitespace-trimmed.
pub fn extract_current_span(
    tokens: &[u32],
    tokenizer: &Tokenizer,
) -> Result<(String, usize, usize)> {
    let open_id = tokenizer
        .token_id(OPEN_DELIM)
        .ok_or_else(|| Error::TokenizerContract("open delimiter not in vocabulary".into()))?;
    let close_id = tokenizer
        .token_id(CLOSE_DELIM)
        .ok_or_else(|| Error::TokenizerContract("close delimiter not in vocabulary".into()))?;
    let close_pos = tokens.len().checked_sub(1).ok_or_else(|| {
        Error::MalformedSpan("empty token sequence".into())
    })?;
    if tokens[close_pos] != close_id {
        return Err(Error::MalformedSpan(
            "last token is not the close delimiter".into(),
        ));
    }
    // walk back to the most recent unmatched open
    let mut open_pos = None;
    for i in (0..close_pos).rev() {
        if tokens[i] == close_id {
            break;
        }
        if tokens[i] == open_id {
            open_pos = Some(i);
            break;
        }
    }
    let open_pos = open_pos
        .ok_or_else(|| Error::MalformedSpan("no matching open delimiter".into()))?;
    let text = tokenizer.decode(&tokens[open_pos + 1..close_pos]);
    let span = text.trim().to_string();
    if span.is_empty() {
        return Err(Error::EmptySpan(open_pos));
    }
    Ok((span, open_pos, close_pos))
}

/// A frozen model, tokenizer, projector and encoder wired for imagination
/// decoding. Immutable during inference; concurrent generations are safe.
pub struct ImagineEngine {
    pub model: TinyLm,
    pub tokenizer: Tokenizer,
    pub projector: Projector,
    pub encoder: Box<dyn TextEncoder>,
    pub injection: InjectionMode,
}

impl ImagineEngine {
    pub fn new(
        model: TinyLm,
        tokenizer: Tokenizer,
        projector: Projector,
        encoder: Box<dyn TextEncoder>,
    ) -> Result<ImagineEngine> {
        if tokenizer.token_id(OPEN_DELIM).is_none() || tokenizer.token_id(CLOSE_DELIM).is_none() {
            return Err(Error::TokenizerContract(
                "tokenizer lacks the imagination delimiters".into(),
            ));
        }
        if tokenizer.vocab_size() > model.cfg.vocab_size {
            return Err(Error::Config(format!(
                "tokenizer vocabulary {} exceeds model vocabulary {}",
                tokenizer.vocab_size(),
                model.cfg.vocab_size
            )));
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
        Ok(ImagineEngine {
            model,
            tokenizer,
            projector,
            encoder,
            injection: InjectionMode::Replace,
        })
    }

    pub fn with_injection(mut self, mode: InjectionMode) -> ImagineEngine {
        self.injection = mode;
        self
    }

    /// Encodes and projects the span closed by the last token, returning the
    /// injection vector and the trace event.
    pub fn imagine_and_inject(
        &self,
        tokens: &[u32],
    ) -> Result<(usize, Array1<f64>, ImaginationEvent)> {
        let (span, open_pos, close_pos) = extract_current_span(tokens, &self.tokenizer)?;
        let encoded = self.encoder.encode_text(&span);
        let projected = self.projector.forward(&encoded)?;
        let vector = match self.injection {
            InjectionMode::Replace => projected,
            InjectionMode::Add => {
                let close_id = tokens[close_pos] as usize;
                &projected + &self.model.params.tok_emb.row(close_id)
            }
        };
        let event = ImaginationEvent {
            span_text: span,
            open_pos,
            close_pos,
            vector_fingerprint: vector_fingerprint(&encoded),
            injection_pos: close_pos,
        };
        Ok((close_pos, vector, event))
    }

    /// Greedy decoding with the imagination hook: every emitted close
    /// delimiter pauses generation, injects the projected span embedding and
    /// resumes. Malformed or empty spans skip injection and are noted in the
    /// trace.
    pub fn generate_with_imagination(
        &self,
        prompt: &[u32],
        limits: &GenLimits,
    ) -> Result<GenerationTrace> {
        let close_id = self
            .tokenizer
            .token_id(CLOSE_DELIM)
            .expect("validated in constructor");
        let mut events: Vec<ImaginationEvent> = Vec::new();
        let mut notes: Vec<String> = Vec::new();

        let mut trace = generate_greedy(
            &self.model,
            prompt,
            limits.max_new_tokens,
            &[EOS_ID],
            |trace, token| {
                if token != close_id {
                    return StepAction::Continue;
                }
                if events.len() >= limits.max_imagination_events {
                    notes.push(format!(
                        "imagination event limit {} reached at position {}",
                        limits.max_imagination_events,
                        trace.tokens.len() - 1
                    ));
                    return StepAction::Continue;
                }
                match self.imagine_and_inject(&trace.tokens) {
                    Ok((pos, vector, event)) => {
                        events.push(event);
                        let mut overrides = BTreeMap::new();
                        overrides.insert(pos, vector);
                        StepAction::Reforward { overrides }
                    }
                    Err(e) => {
                        notes.push(format!("injection skipped: {e}"));
                        StepAction::Continue
                    }
                }
            },
        )?;
        trace.events = events;
        trace.notes = notes;
        trace.text = self.tokenizer.decode(trace.emitted());
        debug_assert!(trace.events_well_formed());
        Ok(trace)
    }

    /// Plain greedy decoding with no imagination hook, for baselines.
    pub fn generate_plain(&self, prompt: &[u32], limits: &GenLimits) -> Result<GenerationTrace> {
        let mut trace = generate_greedy(
            &self.model,
            prompt,
            limits.max_new_tokens,
            &[EOS_ID],
            |_, _| StepAction::Continue,
        )?;
        trace.text = self.tokenizer.decode(trace.emitted());
        Ok(trace)
    }

    pub fn encode_prompt(&self, text: &str) -> Vec<u32> {
        self.tokenizer.encode(text)
    }
}
