//! Stage-1 training data: reasoning texts whose auditory-knowledge spans are
//! wrapped in imagination delimiters.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::client::{ClientError, TextCompletionClient};
use crate::error::{Error, Result};

/// Opens an imagination span.
pub const OPEN_DELIM: &str = "[imagine/]";
/// Closes an imagination span.
pub const CLOSE_DELIM: &str = "[/imagine]";

/// Default few-shot prompt used when annotating with an external client.
/// Kept as a versioned fixture file next to the crate sources.
pub const DEFAULT_FEWSHOT_PROMPT: &str = include_str!("../fixtures/fewshot_prompt.txt");

/// A delimiter-structure violation. Violations are values, not errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpanViolation {
    /// A close delimiter appeared with no open span.
    CloseBeforeOpen { at: usize },
    /// An open delimiter appeared inside an open span.
    NestedOpen { at: usize },
    /// The text ended with an open span.
    UnclosedOpen { at: usize },
    /// A span was empty after trimming.
    EmptySpan { at: usize },
}

impl std::fmt::Display for SpanViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpanViolation::CloseBeforeOpen { at } => {
                write!(f, "close delimiter before any open at byte {at}")
            }
            SpanViolation::NestedOpen { at } => write!(f, "nested open delimiter at byte {at}"),
            SpanViolation::UnclosedOpen { at } => write!(f, "unclosed open delimiter at byte {at}"),
            SpanViolation::EmptySpan { at } => write!(f, "empty span at byte {at}"),
        }
    }
}

/// Byte layout of one well-formed span within a text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanRange {
    /// Start of the open delimiter.
    pub open_start: usize,
    /// Content between the delimiters.
    pub content: Range<usize>,
    /// One past the end of the close delimiter.
    pub close_end: usize,
}

impl SpanRange {
    /// Full extent including both delimiters.
    pub fn full(&self) -> Range<usize> {
        self.open_start..self.close_end
    }
}

/// Scans for spans, checking alternation, non-nesting and non-emptiness.
pub fn scan_spans(text: &str) -> std::result::Result<Vec<SpanRange>, SpanViolation> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut open_at: Option<usize> = None;
    let mut pos = 0usize;
    while pos < bytes.len() {
        if bytes[pos..].starts_with(OPEN_DELIM.as_bytes()) {
            if open_at.is_some() {
                return Err(SpanViolation::NestedOpen { at: pos });
            }
            open_at = Some(pos);
            pos += OPEN_DELIM.len();
        } else if bytes[pos..].starts_with(CLOSE_DELIM.as_bytes()) {
            let start = match open_at.take() {
                Some(s) => s,
                None => return Err(SpanViolation::CloseBeforeOpen { at: pos }),
            };
            let content = start + OPEN_DELIM.len()..pos;
            if text[content.clone()].trim().is_empty() {
                return Err(SpanViolation::EmptySpan { at: start });
            }
            spans.push(SpanRange {
                open_start: start,
                content,
                close_end: pos + CLOSE_DELIM.len(),
            });
            pos += CLOSE_DELIM.len();
        } else {
            pos += 1;
        }
    }
    if let Some(at) = open_at {
        return Err(SpanViolation::UnclosedOpen { at });
    }
    Ok(spans)
}

/// Pure check of delimiter structure; `Ok` or a violation description.
pub fn validate_annotation(text: &str) -> std::result::Result<(), SpanViolation> {
    scan_spans(text).map(|_| ())
}

/// One training record: a context, reasoning text containing at least one
/// well-formed imagination span, and the answer segment's location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImaginationExample {
    pub context: String,
    pub reasoning: String,
    pub answer_text: String,
    /// Byte offsets of `answer_text` within `reasoning`.
    pub answer_char_range: (usize, usize),
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ImaginationExample {
    pub fn validate(&self) -> Result<()> {
        let spans = scan_spans(&self.reasoning).map_err(|v| Error::Validation {
            id: short_id(&self.context),
            msg: v.to_string(),
        })?;
        if spans.is_empty() {
            return Err(Error::Validation {
                id: short_id(&self.context),
                msg: "reasoning contains no imagination span".into(),
            });
        }
        if self.answer_text.is_empty() {
            return Err(Error::Validation {
                id: short_id(&self.context),
                msg: "answer text is empty".into(),
            });
        }
        let (start, end) = self.answer_char_range;
        if start > end
            || end > self.reasoning.len()
            || !self.reasoning.is_char_boundary(start)
            || !self.reasoning.is_char_boundary(end)
        {
            return Err(Error::Validation {
                id: short_id(&self.context),
                msg: format!("answer range ({start}, {end}) out of bounds"),
            });
        }
        if self.reasoning[start..end] != self.answer_text {
            return Err(Error::Validation {
                id: short_id(&self.context),
                msg: "answer range does not match answer text".into(),
            });
        }
        for span in &spans {
            let full = span.full();
            if start < full.end && full.start < end {
                return Err(Error::Validation {
                    id: short_id(&self.context),
                    msg: "answer range overlaps an imagination span".into(),
                });
            }
        }
        Ok(())
    }

    /// Trimmed contents of every span in the reasoning.
    pub fn span_texts(&self) -> Vec<String> {
        scan_spans(&self.reasoning)
            .map(|spans| {
                spans
                    .iter()
                    .map(|s| self.reasoning[s.content.clone()].trim().to_string())
                    .collect()
            })
            .unwrap_or_default()
    }
}

fn short_id(context: &str) -> String {
    context.chars().take(32).collect()
}

/// Rewrites delimiter literals so user-provided text cannot break span
/// structure.
fn defang(text: &str) -> String {
    text.replace(OPEN_DELIM, "(imagine)")
        .replace(CLOSE_DELIM, "(/imagine)")
}

/// Deterministic template annotation: one span around the hint, answer at the
/// end.
pub fn annotate_with_template(
    context: &str,
    span_hint: &str,
    answer: &str,
) -> Result<ImaginationExample> {
    if span_hint.trim().is_empty() {
        return Err(Error::Domain("span hint must be non-empty".into()));
    }
    if answer.trim().is_empty() {
        return Err(Error::Domain("answer must be non-empty".into()));
    }
    let hint = defang(span_hint.trim());
    let answer = defang(answer.trim());
    let prefix = format!(
        "To compare, consider {OPEN_DELIM} {hint} {CLOSE_DELIM}. Therefore the answer is "
    );
    let reasoning = format!("{prefix}{answer}.");
    let example = ImaginationExample {
        context: context.to_string(),
        reasoning,
        answer_text: answer.clone(),
        answer_char_range: (prefix.len(), prefix.len() + answer.len()),
        metadata: BTreeMap::from([("annotator".to_string(), "template".to_string())]),
    };
    example.validate()?;
    Ok(example)
}

/// Retry policy and prompt fixture for client-backed annotation.
#[derive(Debug, Clone)]
pub struct AnnotatePolicy {
    pub max_attempts: usize,
    pub fewshot_prompt: String,
}

impl Default for AnnotatePolicy {
    fn default() -> Self {
        AnnotatePolicy {
            max_attempts: 2,
            fewshot_prompt: DEFAULT_FEWSHOT_PROMPT.to_string(),
        }
    }
}

fn build_prompt(policy: &AnnotatePolicy, context: &str, span_hint: &str, answer: &str) -> String {
    policy
        .fewshot_prompt
        .replace("{context}", context)
        .replace("{span}", span_hint)
        .replace("{answer}", answer)
}

enum AttemptFailure {
    Malformed(String),
    Transport(ClientError),
}

fn try_accept(
    context: &str,
    span_hint: &str,
    answer: &str,
    generated: &str,
) -> std::result::Result<ImaginationExample, String> {
    let spans = scan_spans(generated).map_err(|v| v.to_string())?;
    if spans.is_empty() {
        return Err("no imagination span in generation".into());
    }
    let hint = span_hint.trim();
    let hint_covered = spans
        .iter()
        .any(|s| generated[s.content.clone()].contains(hint));
    if !hint_covered {
        return Err(format!("no span contains the hint '{hint}'"));
    }
    // answer segment: last occurrence outside any span
    let answer = answer.trim();
    let mut found: Option<(usize, usize)> = None;
    let mut search_from = 0usize;
    while let Some(rel) = generated[search_from..].find(answer) {
        let start = search_from + rel;
        let end = start + answer.len();
        let overlaps = spans.iter().any(|s| {
            let full = s.full();
            start < full.end && full.start < end
        });
        if !overlaps {
            found = Some((start, end));
        }
        search_from = start + 1;
    }
    let (start, end) = found.ok_or_else(|| {
        format!("answer '{answer}' does not occur outside spans")
    })?;
    let example = ImaginationExample {
        context: context.to_string(),
        reasoning: generated.to_string(),
        answer_text: answer.to_string(),
        answer_char_range: (start, end),
        metadata: BTreeMap::from([("annotator".to_string(), "client".to_string())]),
    };
    example.validate().map_err(|e| e.to_string())?;
    Ok(example)
}

/// Annotates via an external completion client, retrying malformed
/// generations up to the policy limit and then falling back to
/// [`annotate_with_template`] (flagged in metadata). Transport failures after
/// the retry limit surface as upstream errors.
pub fn annotate_with_client(
    context: &str,
    span_hint: &str,
    answer: &str,
    client: &dyn TextCompletionClient,
    policy: &AnnotatePolicy,
) -> Result<ImaginationExample> {
    if span_hint.trim().is_empty() {
        return Err(Error::Domain("span hint must be non-empty".into()));
    }
    let prompt = build_prompt(policy, context, span_hint, answer);
    let mut last_failure: Option<AttemptFailure> = None;
    for _ in 0..policy.max_attempts.max(1) {
        match client.complete(&prompt) {
            Ok(generated) => match try_accept(context, span_hint, answer, &generated) {
                Ok(example) => return Ok(example),
                Err(reason) => last_failure = Some(AttemptFailure::Malformed(reason)),
            },
            Err(e) => last_failure = Some(AttemptFailure::Transport(e)),
        }
    }
    match last_failure.expect("at least one attempt") {
        AttemptFailure::Transport(e) => Err(Error::Upstream {
            request_id: e.request_id,
            msg: e.msg,
        }),
        AttemptFailure::Malformed(reason) => {
            let mut example = annotate_with_template(context, span_hint, answer)?;
            example
                .metadata
                .insert("fallback".to_string(), "template".to_string());
            example.metadata.insert("fallback_reason".to_string(), reason);
            Ok(example)
        }
    }
}

/// Annotates a batch, preserving input order. Malformed generations fall back
/// per item; a transport failure aborts the batch.
pub fn annotate_batch_with_client(
    triples: &[(String, String, String)],
    client: &(dyn TextCompletionClient + Sync),
    policy: &AnnotatePolicy,
    max_concurrency: usize,
) -> Result<Vec<ImaginationExample>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        triples
            .par_iter()
            .map(|(ctx, hint, ans)| annotate_with_client(ctx, hint, ans, client, policy))
            .collect()
    })
}

/// Writes examples as JSONL.
pub fn write_examples(examples: &[ImaginationExample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for ex in examples {
        let line = serde_json::to_string(ex).expect("example serialization");
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads and validates examples from JSONL.
pub fn read_examples(path: impl AsRef<Path>) -> Result<Vec<ImaginationExample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: ImaginationExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        ex.validate()?;
        out.push(ex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct ScriptedClient {
        responses: Mutex<Vec<std::result::Result<String, ClientError>>>,
    }

    impl ScriptedClient {
        fn new(responses: Vec<std::result::Result<String, ClientError>>) -> ScriptedClient {
            ScriptedClient {
                responses: Mutex::new(responses),
            }
        }
    }

    impl TextCompletionClient for ScriptedClient {
        fn complete(&self, _prompt: &str) -> std::result::Result<String, ClientError> {
            let mut lock = self.responses.lock().unwrap();
            if lock.is_empty() {
                Err(ClientError {
                    request_id: "exhausted".into(),
                    msg: "script exhausted".into(),
                })
            } else {
                lock.remove(0)
            }
        }
    }

    fn transport_err() -> ClientError {
        ClientError {
            request_id: "req-42".into(),
            msg: "connection refused".into(),
        }
    }

    #[test]
    fn validate_accepts_single_span() {
        assert!(validate_annotation("[imagine/] a [/imagine]").is_ok());
    }

    #[test]
    fn validate_rejects_nesting() {
        let got = validate_annotation("[imagine/] a [imagine/] b [/imagine]");
        assert!(matches!(got, Err(SpanViolation::NestedOpen { .. })));
    }

    #[test]
    fn validate_rejects_close_before_open() {
        let got = validate_annotation("[/imagine] a");
        assert!(matches!(got, Err(SpanViolation::CloseBeforeOpen { at: 0 })));
    }

    #[test]
    fn validate_rejects_unclosed() {
        let got = validate_annotation("x [imagine/] y");
        assert!(matches!(got, Err(SpanViolation::UnclosedOpen { .. })));
    }

    #[test]
    fn validate_rejects_empty_span() {
        let got = validate_annotation("[imagine/]   [/imagine]");
        assert!(matches!(got, Err(SpanViolation::EmptySpan { .. })));
    }

    #[test]
    fn template_contains_hint_in_span() {
        let ex =
            annotate_with_template("ctx", "the sound of machinery", "higher").unwrap();
        assert!(ex
            .reasoning
            .contains("[imagine/] the sound of machinery [/imagine]"));
        assert_eq!(ex.span_texts(), vec!["the sound of machinery".to_string()]);
        assert_eq!(
            &ex.reasoning[ex.answer_char_range.0..ex.answer_char_range.1],
            "higher"
        );
    }

    #[test]
    fn template_is_deterministic() {
        let a = annotate_with_template("c", "hint", "lower").unwrap();
        let b = annotate_with_template("c", "hint", "lower").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn template_escapes_delimiters_in_answer() {
        let ex = annotate_with_template("c", "hint", "x [/imagine] y").unwrap();
        ex.validate().unwrap();
        assert_eq!(ex.span_texts().len(), 1);
    }

    #[test]
    fn client_passthrough_of_wellformed_generation() {
        let good = "Listen: [imagine/] a dog barking [/imagine]. So the answer is lower.";
        let client = ScriptedClient::new(vec![Ok(good.to_string())]);
        let ex = annotate_with_client("ctx", "a dog barking", "lower", &client, &Default::default())
            .unwrap();
        assert_eq!(ex.reasoning, good);
        assert_eq!(ex.metadata["annotator"], "client");
        ex.validate().unwrap();
    }

    #[test]
    fn malformed_twice_falls_back_to_template() {
        let bad = "no spans here lower".to_string();
        let client = ScriptedClient::new(vec![Ok(bad.clone()), Ok(bad)]);
        let ex = annotate_with_client("ctx", "hint", "lower", &client, &Default::default())
            .unwrap();
        assert_eq!(ex.metadata["fallback"], "template");
        ex.validate().unwrap();
    }

    #[test]
    fn empty_span_generation_is_retried() {
        let bad = "x [imagine/] [/imagine] lower".to_string();
        let good = "x [imagine/] hint [/imagine] lower".to_string();
        let client = ScriptedClient::new(vec![Ok(bad), Ok(good.clone())]);
        let ex = annotate_with_client("ctx", "hint", "lower", &client, &Default::default())
            .unwrap();
        assert_eq!(ex.reasoning, good);
        assert_eq!(ex.metadata["annotator"], "client");
    }

    #[test]
    fn transport_failures_surface_with_request_id() {
        let client = ScriptedClient::new(vec![Err(transport_err()), Err(transport_err())]);
        let err = annotate_with_client("ctx", "hint", "lower", &client, &Default::default())
            .unwrap_err();
        match err {
            Error::Upstream { request_id, .. } => assert_eq!(request_id, "req-42"),
            other => panic!("expected upstream error, got {other}"),
        }
    }

    #[test]
    fn batch_preserves_order_and_pairs() {
        let good = |h: &str, a: &str| format!("t [imagine/] {h} [/imagine] so {a}.");
        let client = ScriptedClient::new(
            (0..4)
                .map(|i| Ok(good(&format!("hint{i}"), &format!("ans{i}"))))
                .collect(),
        );
        let triples: Vec<(String, String, String)> = (0..4)
            .map(|i| {
                (
                    format!("ctx{i}"),
                    format!("hint{i}"),
                    format!("ans{i}"),
                )
            })
            .collect();
        // single-threaded so the scripted responses line up with inputs
        let got = annotate_batch_with_client(&triples, &client, &Default::default(), 1).unwrap();
        assert_eq!(got.len(), 4);
        for (i, ex) in got.iter().enumerate() {
            assert_eq!(ex.context, format!("ctx{i}"));
            assert_eq!(ex.answer_text, format!("ans{i}"));
        }
    }

    #[test]
    fn examples_roundtrip_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("examples.jsonl");
        let examples = vec![
            annotate_with_template("c1", "h1", "higher").unwrap(),
            annotate_with_template("c2", "h2", "lower").unwrap(),
        ];
        write_examples(&examples, &path).unwrap();
        assert_eq!(read_examples(&path).unwrap(), examples);
    }
}
