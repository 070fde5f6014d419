//! Evaluation harness: prompt formatting, answer parsing, accuracy scoring,
//! span F1 and the per-task report table.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::{majority_class, Dataset, QAItem, TaskKind};
use crate::error::{Error, Result};
use crate::imagine::{GenLimits, ImagineEngine};
use crate::trace::GenerationTrace;

pub const CHOICE_LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

/// Prompt template with `{question}` and `{choices}` placeholders. Choices
/// render as `A. ...` lines in stored order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate(String);

impl PromptTemplate {
    pub fn new(template: impl Into<String>) -> Result<PromptTemplate> {
        let template = template.into();
        if !template.contains("{question}") || !template.contains("{choices}") {
            return Err(Error::Template(
                "prompt template needs {question} and {choices} placeholders".into(),
            ));
        }
        Ok(PromptTemplate(template))
    }

    /// Plain default: question, lettered choices, then an answer cue.
    pub fn default_qa() -> PromptTemplate {
        PromptTemplate("{question}\n{choices}\nAnswer:".into())
    }
}

/// Deterministic prompt for one item.
pub fn format_prompt(item: &QAItem, template: &PromptTemplate) -> Result<String> {
    if item.choices.len() > CHOICE_LETTERS.len() {
        return Err(Error::Template(format!(
            "item '{}' has {} choices, templates support up to {}",
            item.id,
            item.choices.len(),
            CHOICE_LETTERS.len()
        )));
    }
    let choices = item
        .choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {}", CHOICE_LETTERS[i], c))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(template
        .0
        .replace("{question}", &item.question)
        .replace("{choices}", &choices))
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Matching cascade: (1) last standalone choice letter, (2) last normalized
/// choice-text occurrence, (3) unparsed. Never returns an index out of range.
pub fn parse_answer(generated: &str, item: &QAItem) -> Option<usize> {
    let n = item.choices.len();

    // (1) last standalone letter within range
    let chars: Vec<char> = generated.chars().collect();
    let mut best: Option<usize> = None;
    for (i, &ch) in chars.iter().enumerate() {
        let idx = match CHOICE_LETTERS.iter().position(|&l| l == ch) {
            Some(idx) if idx < n => idx,
            _ => continue,
        };
        let prev_ok = i == 0 || !chars[i - 1].is_alphanumeric();
        let next_ok = i + 1 >= chars.len() || !chars[i + 1].is_alphanumeric();
        if prev_ok && next_ok {
            best = Some(idx);
        }
    }
    if best.is_some() {
        return best;
    }

    // (2) last exact normalized choice-text occurrence; later end wins, then
    // longer match, then lower index
    let text = normalize(generated);
    let mut winner: Option<(usize, usize, usize)> = None; // (end, len, idx)
    for (idx, choice) in item.choices.iter().enumerate() {
        let needle = normalize(choice);
        if needle.is_empty() {
            continue;
        }
        let mut from = 0usize;
        let mut last_end = None;
        while let Some(rel) = text[from..].find(&needle) {
            let start = from + rel;
            last_end = Some(start + needle.len());
            from = start + 1;
        }
        if let Some(end) = last_end {
            let candidate = (end, needle.len(), idx);
            winner = Some(match winner {
                None => candidate,
                Some(cur) => {
                    if (candidate.0, candidate.1) > (cur.0, cur.1) {
                        candidate
                    } else {
                        cur
                    }
                }
            });
        }
    }
    winner.map(|(_, _, idx)| idx)
}

/// Anything that can answer a formatted prompt.
pub trait EvalEngine: Sync {
    fn name(&self) -> &str;
    fn answer(&self, prompt: &str, limits: &GenLimits) -> Result<EngineOutput>;
}

/// One engine response: raw text plus an optional decoding trace.
#[derive(Debug, Clone)]
pub struct EngineOutput {
    pub text: String,
    pub trace: Option<GenerationTrace>,
}

impl EvalEngine for ImagineEngine {
    fn name(&self) -> &str {
        "imagine"
    }

    fn answer(&self, prompt: &str, limits: &GenLimits) -> Result<EngineOutput> {
        let ids = self.encode_prompt(prompt);
        let trace = self.generate_with_imagination(&ids, limits)?;
        Ok(EngineOutput {
            text: trace.text.clone(),
            trace: Some(trace),
        })
    }
}

/// Adapter running an [`ImagineEngine`] without the injection hook.
pub struct PlainDecodeEngine<'a> {
    pub engine: &'a ImagineEngine,
    pub label: String,
}

impl EvalEngine for PlainDecodeEngine<'_> {
    fn name(&self) -> &str {
        &self.label
    }

    fn answer(&self, prompt: &str, limits: &GenLimits) -> Result<EngineOutput> {
        let ids = self.engine.encode_prompt(prompt);
        let trace = self.engine.generate_plain(&ids, limits)?;
        Ok(EngineOutput {
            text: trace.text.clone(),
            trace: Some(trace),
        })
    }
}

/// Constant-letter baseline answering with the dataset's majority gold index.
pub struct MajorityBaseline {
    letter: char,
}

impl MajorityBaseline {
    pub fn for_dataset(dataset: &Dataset) -> MajorityBaseline {
        let (idx, _) = majority_class(dataset);
        MajorityBaseline {
            letter: CHOICE_LETTERS[idx],
        }
    }
}

impl EvalEngine for MajorityBaseline {
    fn name(&self) -> &str {
        "Majority Class"
    }

    fn answer(&self, _prompt: &str, _limits: &GenLimits) -> Result<EngineOutput> {
        Ok(EngineOutput {
            text: self.letter.to_string(),
            trace: None,
        })
    }
}

/// Per-item outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub prediction: Option<usize>,
    pub gold: usize,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<String>,
    #[serde(skip)]
    pub trace: Option<GenerationTrace>,
}

/// Accuracy summary for one engine on one task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub engine: String,
    pub task: TaskKind,
    pub n: usize,
    pub n_correct: usize,
    pub n_unparsed: usize,
    pub accuracy: f64,
    pub items: Vec<ItemRecord>,
}

/// Runs one generation per item (items evaluated in parallel, merged in
/// dataset order). Engine failures mark the item unparsed and the run
/// continues. Unparsed counts as incorrect.
pub fn evaluate(
    engine: &dyn EvalEngine,
    dataset: &Dataset,
    template: &PromptTemplate,
    limits: &GenLimits,
) -> Result<EvalResult> {
    let items: Vec<ItemRecord> = dataset
        .items
        .par_iter()
        .map(|item| {
            let prompt = match format_prompt(item, template) {
                Ok(p) => p,
                Err(e) => {
                    return ItemRecord {
                        id: item.id.clone(),
                        prediction: None,
                        gold: item.answer,
                        correct: false,
                        error: Some(e.to_string()),
                        trace_ref: None,
                        trace: None,
                    }
                }
            };
            match engine.answer(&prompt, limits) {
                Ok(mut output) => {
                    let prediction = parse_answer(&output.text, item);
                    if let Some(trace) = output.trace.as_mut() {
                        trace.answer_index = prediction;
                    }
                    ItemRecord {
                        id: item.id.clone(),
                        prediction,
                        gold: item.answer,
                        correct: prediction == Some(item.answer),
                        error: None,
                        trace_ref: None,
                        trace: output.trace,
                    }
                }
                Err(e) => ItemRecord {
                    id: item.id.clone(),
                    prediction: None,
                    gold: item.answer,
                    correct: false,
                    error: Some(e.to_string()),
                    trace_ref: None,
                    trace: None,
                },
            }
        })
        .collect();

    let n = items.len();
    let n_correct = items.iter().filter(|r| r.correct).count();
    let n_unparsed = items.iter().filter(|r| r.prediction.is_none()).count();
    Ok(EvalResult {
        engine: engine.name().to_string(),
        task: dataset.task,
        n,
        n_correct,
        n_unparsed,
        accuracy: if n == 0 { 0.0 } else { n_correct as f64 / n as f64 },
        items,
    })
}

/// Collects completed `[imagine/] ... [/imagine]` spans from generated text,
/// tolerating dangling delimiters. Measurement helper for span F1; strict
/// validation lives in `spanprep`.
pub fn extract_completed_spans(text: &str) -> Vec<String> {
    use crate::spanprep::{CLOSE_DELIM, OPEN_DELIM};
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut open_end: Option<usize> = None;
    let mut pos = 0usize;
    while pos < bytes.len() {
        if bytes[pos..].starts_with(OPEN_DELIM.as_bytes()) {
            // a fresh open supersedes any dangling one
            pos += OPEN_DELIM.len();
            open_end = Some(pos);
        } else if bytes[pos..].starts_with(CLOSE_DELIM.as_bytes()) {
            if let Some(start) = open_end.take() {
                let content = text[start..pos].trim();
                if !content.is_empty() {
                    spans.push(content.to_string());
                }
            }
            pos += CLOSE_DELIM.len();
        } else {
            pos += 1;
        }
    }
    spans
}

/// Micro-averaged exact-match span scoring over normalized span-text sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn span_f1(predicted: &[Vec<String>], gold: &[Vec<String>]) -> SpanScore {
    assert_eq!(
        predicted.len(),
        gold.len(),
        "span_f1 needs aligned example lists"
    );
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (pred, gold) in predicted.iter().zip(gold) {
        let pset: BTreeSet<String> = pred.iter().map(|s| normalize(s)).collect();
        let gset: BTreeSet<String> = gold.iter().map(|s| normalize(s)).collect();
        tp += pset.intersection(&gset).count();
        fp += pset.difference(&gset).count();
        fn_ += gset.difference(&pset).count();
    }
    let total_gold = tp + fn_;
    let total_pred = tp + fp;
    if total_gold == 0 && total_pred == 0 {
        return SpanScore {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let precision = if total_pred == 0 {
        0.0
    } else {
        tp as f64 / total_pred as f64
    };
    let recall = if total_gold == 0 {
        0.0
    } else {
        tp as f64 / total_gold as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    SpanScore {
        precision,
        recall,
        f1,
    }
}

/// Per-engine accuracy row, percentages to two decimals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub engine: String,
    pub accuracy_pct: BTreeMap<TaskKind, f64>,
}

/// Rendered report: text table plus a JSON value with the same content.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub table: String,
}

fn pct(x: f64) -> f64 {
    (x * 10000.0).round() / 100.0
}

/// Builds the per-task table. With a named baseline row, other rows show
/// deltas against it.
pub fn report(results: &[EvalResult], baseline: Option<&str>) -> Report {
    let mut order: Vec<String> = Vec::new();
    let mut rows_map: BTreeMap<String, BTreeMap<TaskKind, f64>> = BTreeMap::new();
    for r in results {
        if !rows_map.contains_key(&r.engine) {
            order.push(r.engine.clone());
        }
        rows_map.entry(r.engine.clone()).or_default().insert(r.task, r.accuracy);
    }
    let rows: Vec<ReportRow> = order
        .iter()
        .map(|engine| ReportRow {
            engine: engine.clone(),
            accuracy_pct: rows_map[engine]
                .iter()
                .map(|(task, acc)| (*task, pct(*acc)))
                .collect(),
        })
        .collect();

    let mut table = String::new();
    if !rows.is_empty() {
        let name_width = rows
            .iter()
            .map(|r| r.engine.len())
            .chain(std::iter::once("Method".len()))
            .max()
            .unwrap();
        let col_width = 18usize;
        table.push_str(&format!("{:<name_width$}", "Method"));
        for task in TaskKind::ALL {
            table.push_str(&format!(" | {:>col_width$}", task.display_name()));
        }
        table.push('\n');
        table.push_str(&"-".repeat(name_width + (col_width + 3) * TaskKind::ALL.len()));
        table.push('\n');
        let base_row = baseline.and_then(|b| rows.iter().find(|r| r.engine == b));
        for row in &rows {
            table.push_str(&format!("{:<name_width$}", row.engine));
            for task in TaskKind::ALL {
                let cell = match row.accuracy_pct.get(&task) {
                    Some(v) => {
                        let mut s = format!("{v:.2}");
                        if let Some(base) = base_row {
                            if base.engine != row.engine {
                                if let Some(b) = base.accuracy_pct.get(&task) {
                                    s.push_str(&format!(" ({:+.2})", v - b));
                                }
                            }
                        }
                        s
                    }
                    None => "-".to_string(),
                };
                table.push_str(&format!(" | {cell:>col_width$}"));
            }
            table.push('\n');
        }
    }
    Report {
        rows,
        baseline: baseline.map(|s| s.to_string()),
        table,
    }
}
