//! Generation traces: every emitted token, hook action and imagination event
//! of one decoding run.

use serde::{Deserialize, Serialize};

/// What the step hook decided after a token was emitted (payload-free form
/// kept in the trace).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepActionKind {
    Continue,
    Stop,
    Reforward,
}

/// One emitted token and the hook action that followed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub token: u32,
    pub action: StepActionKind,
}

/// One pause/encode/inject event. `injection_pos` always equals `close_pos`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImaginationEvent {
    pub span_text: String,
    pub open_pos: usize,
    pub close_pos: usize,
    pub vector_fingerprint: String,
    pub injection_pos: usize,
}

/// Ordered record of one generation: prompt, emitted tokens, hook actions,
/// imagination events and the decoded text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GenerationTrace {
    pub prompt_len: usize,
    /// Full token sequence including the prompt.
    pub tokens: Vec<u32>,
    pub steps: Vec<StepRecord>,
    pub events: Vec<ImaginationEvent>,
    /// Diagnostics such as skipped injections.
    pub notes: Vec<String>,
    /// Decoded text of the emitted (non-prompt) tokens.
    pub text: String,
    /// Parsed answer index, filled by the evaluation harness.
    pub answer_index: Option<usize>,
    pub truncated: bool,
}

impl GenerationTrace {
    pub fn new(prompt: &[u32]) -> GenerationTrace {
        GenerationTrace {
            prompt_len: prompt.len(),
            tokens: prompt.to_vec(),
            ..Default::default()
        }
    }

    /// Tokens emitted after the prompt.
    pub fn emitted(&self) -> &[u32] {
        &self.tokens[self.prompt_len..]
    }

    pub fn emitted_count(&self) -> usize {
        self.tokens.len() - self.prompt_len
    }

    /// Events must be matched and ordered; injection happens at the close
    /// delimiter.
    pub fn events_well_formed(&self) -> bool {
        let mut last_close = 0usize;
        for ev in &self.events {
            if ev.open_pos >= ev.close_pos
                || ev.injection_pos != ev.close_pos
                || ev.open_pos < last_close
            {
                return false;
            }
            last_close = ev.close_pos;
        }
        true
    }
}
