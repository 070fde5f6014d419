//! Benchmark domain types: tasks, QA items, JSONL datasets and the
//! majority-class baseline.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five benchmark tasks. Comparison tasks are binary choice; the
/// recognition and reasoning tasks are 4-way multiple choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Pitch,
    Duration,
    Loudness,
    AnimalSound,
    AuditoryContext,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::Pitch,
        TaskKind::Duration,
        TaskKind::Loudness,
        TaskKind::AnimalSound,
        TaskKind::AuditoryContext,
    ];

    /// Required number of answer choices for items of this task.
    pub fn choice_count(self) -> usize {
        match self {
            TaskKind::Pitch | TaskKind::Duration | TaskKind::Loudness => 2,
            TaskKind::AnimalSound | TaskKind::AuditoryContext => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Pitch => "pitch",
            TaskKind::Duration => "duration",
            TaskKind::Loudness => "loudness",
            TaskKind::AnimalSound => "animal_sound",
            TaskKind::AuditoryContext => "auditory_context",
        }
    }

    pub fn parse(s: &str) -> Option<TaskKind> {
        match s {
            "pitch" => Some(TaskKind::Pitch),
            "duration" => Some(TaskKind::Duration),
            "loudness" => Some(TaskKind::Loudness),
            "animal_sound" => Some(TaskKind::AnimalSound),
            "auditory_context" => Some(TaskKind::AuditoryContext),
            _ => None,
        }
    }

    /// Column label used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            TaskKind::Pitch => "Pitch",
            TaskKind::Duration => "Duration",
            TaskKind::Loudness => "Loudness",
            TaskKind::AnimalSound => "Animal Sound",
            TaskKind::AuditoryContext => "Auditory Context",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One benchmark question. Serialized field order is fixed
/// (id, task, question, choices, answer, metadata) so files are diff-stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub task: TaskKind,
    pub question: String,
    pub choices: Vec<String>,
    /// Gold answer as an index into `choices`.
    pub answer: usize,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

fn normalize_choice(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl QAItem {
    /// Checks answer bounds, per-task choice arity and pairwise choice
    /// distinctness (after whitespace/case normalization).
    pub fn validate(&self) -> Result<()> {
        let expected = self.task.choice_count();
        if self.choices.len() != expected {
            return Err(Error::Validation {
                id: self.id.clone(),
                msg: format!(
                    "task {} requires {} choices, found {}",
                    self.task,
                    expected,
                    self.choices.len()
                ),
            });
        }
        if self.answer >= self.choices.len() {
            return Err(Error::Validation {
                id: self.id.clone(),
                msg: format!(
                    "answer index {} out of range for {} choices",
                    self.answer,
                    self.choices.len()
                ),
            });
        }
        let mut seen = HashSet::new();
        for c in &self.choices {
            if !seen.insert(normalize_choice(c)) {
                return Err(Error::Validation {
                    id: self.id.clone(),
                    msg: format!("duplicate choice '{c}' after normalization"),
                });
            }
        }
        Ok(())
    }
}

/// A homogeneous, validated list of QA items for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub items: Vec<QAItem>,
}

impl Dataset {
    /// Builds a dataset, enforcing homogeneity, id uniqueness and per-item
    /// invariants.
    pub fn new(task: TaskKind, items: Vec<QAItem>) -> Result<Dataset> {
        let mut ids = HashSet::new();
        for item in &items {
            item.validate()?;
            if item.task != task {
                return Err(Error::Validation {
                    id: item.id.clone(),
                    msg: format!("task {} does not match dataset task {}", item.task, task),
                });
            }
            if !ids.insert(item.id.clone()) {
                return Err(Error::Validation {
                    id: item.id.clone(),
                    msg: "duplicate item id".into(),
                });
            }
        }
        Ok(Dataset { task, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Reads a JSONL dataset. Parse failures name the offending line; invariant
/// violations name the offending item id. Item order follows line order.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut items: Vec<QAItem> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: QAItem = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        items.push(item);
    }

    let task = match items.first() {
        Some(first) => first.task,
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "empty dataset file has no task marker".into(),
            })
        }
    };
    Dataset::new(task, items)
}

/// Writes a dataset as JSONL, one item per line. `read_dataset` reproduces the
/// input exactly.
pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for item in &dataset.items {
        // serde_json never fails on these value types
        let line = serde_json::to_string(item).expect("QAItem serialization");
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Accuracy of always predicting the most frequent gold index. Ties break
/// toward the lowest index.
pub fn majority_class_accuracy(dataset: &Dataset) -> Result<f64> {
    if dataset.items.is_empty() {
        return Err(Error::Domain(
            "majority-class accuracy is undefined on an empty dataset".into(),
        ));
    }
    let (_, count) = majority_class(dataset);
    Ok(count as f64 / dataset.items.len() as f64)
}

/// Most frequent gold index and its count; ties break toward the lowest index.
pub fn majority_class(dataset: &Dataset) -> (usize, usize) {
    let n_choices = dataset.task.choice_count();
    let mut counts = vec![0usize; n_choices];
    for item in &dataset.items {
        counts[item.answer] += 1;
    }
    let mut best = 0usize;
    for (idx, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = idx;
        }
    }
    (best, counts[best])
}

/// Manifest entry for one task file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub item_count: usize,
    pub sha256: String,
}

/// Maps each task to its dataset file, count and content hash.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchManifest {
    pub tasks: BTreeMap<TaskKind, ManifestEntry>,
}

impl BenchManifest {
    pub fn insert_file(&mut self, task: TaskKind, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let count = bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count();
        self.tasks.insert(
            task,
            ManifestEntry {
                path: path.to_string_lossy().into_owned(),
                item_count: count,
                sha256: crate::manifest::sha256_hex(&bytes),
            },
        );
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("manifest serialization");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<BenchManifest> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }
}
