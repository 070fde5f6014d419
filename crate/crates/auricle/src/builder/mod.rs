//! Statistical benchmark construction: per-class measurements from segment
//! annotations, IQR filtering, significance-tested pair selection and
//! comparison-question generation.

pub mod audio;
pub mod stats;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{Dataset, QAItem, TaskKind};
use crate::error::{Error, Result};

pub use audio::{load_waveform, peak_dbfs, slice_segment, DBFS_FLOOR};
pub use stats::{iqr_filter, quantile_sorted, welch_p_value};

/// A segment-level waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
}

/// One segment-level annotation: a labeled time span within a clip, optionally
/// carrying the segment's samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentAnnotation {
    pub clip_id: String,
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
    pub samples: Option<Waveform>,
}

impl SegmentAnnotation {
    pub fn validate(&self) -> Result<()> {
        if !(self.start_s >= 0.0 && self.end_s > self.start_s) {
            return Err(Error::Validation {
                id: self.clip_id.clone(),
                msg: format!("invalid segment bounds [{}, {})", self.start_s, self.end_s),
            });
        }
        if let Some(w) = &self.samples {
            let expected = ((self.end_s - self.start_s) * w.sample_rate_hz).round();
            if (w.samples.len() as f64 - expected).abs() > 1.0 {
                return Err(Error::Validation {
                    id: self.clip_id.clone(),
                    msg: format!(
                        "segment has {} samples, expected about {expected}",
                        w.samples.len()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Per-class measurement summary (count, mean, unbiased variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: String,
    pub values: Vec<f64>,
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
}

impl ClassStats {
    pub fn from_values(label: impl Into<String>, values: Vec<f64>) -> Result<ClassStats> {
        if values.is_empty() {
            return Err(Error::Domain("class stats require at least one value".into()));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let variance = if n < 2 {
            0.0
        } else {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
        };
        Ok(ClassStats {
            label: label.into(),
            values,
            n,
            mean,
            variance,
        })
    }
}

/// Which measurement a comparison benchmark is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Duration,
    Loudness,
}

impl Measure {
    pub fn task(self) -> TaskKind {
        match self {
            Measure::Duration => TaskKind::Duration,
            Measure::Loudness => TaskKind::Loudness,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Duration => "duration",
            Measure::Loudness => "loudness",
        }
    }
}

/// Extracts the per-annotation measurement: segment length for duration, peak
/// dBFS for loudness.
fn measure_annotation(a: &SegmentAnnotation, measure: Measure) -> Result<f64> {
    match measure {
        Measure::Duration => Ok(a.duration_s()),
        Measure::Loudness => {
            let w = a.samples.as_ref().ok_or_else(|| Error::MissingData {
                clip_id: a.clip_id.clone(),
                msg: "loudness measure requires waveform samples".into(),
            })?;
            peak_dbfs(&w.samples)
        }
    }
}

/// Groups annotations by label and summarizes the chosen measure. Grouping
/// preserves input multiplicity.
pub fn compute_class_stats(
    annotations: &[SegmentAnnotation],
    measure: Measure,
) -> Result<BTreeMap<String, ClassStats>> {
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for a in annotations {
        a.validate()?;
        grouped
            .entry(a.label.clone())
            .or_default()
            .push(measure_annotation(a, measure)?);
    }
    grouped
        .into_iter()
        .map(|(label, values)| {
            let stats = ClassStats::from_values(label.clone(), values)?;
            Ok((label, stats))
        })
        .collect()
}

/// A label pair whose means differ significantly. `label_hi` always has the
/// larger mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificantPair {
    pub label_hi: String,
    pub label_lo: String,
    pub p_value: f64,
    pub mean_gap: f64,
}

#[derive(Debug, Clone)]
struct PairOutcome {
    label_hi: String,
    label_lo: String,
    p_value: Option<f64>,
    note: Option<String>,
}

fn evaluate_pairs(stats: &BTreeMap<String, ClassStats>, min_n: usize) -> Vec<PairOutcome> {
    let surviving: Vec<&ClassStats> = stats.values().filter(|s| s.n >= min_n).collect();
    let mut outcomes = Vec::new();
    for i in 0..surviving.len() {
        for j in (i + 1)..surviving.len() {
            let (a, b) = (surviving[i], surviving[j]);
            let (hi, lo) = if a.mean >= b.mean { (a, b) } else { (b, a) };
            match welch_p_value(a, b) {
                Ok(p) => outcomes.push(PairOutcome {
                    label_hi: hi.label.clone(),
                    label_lo: lo.label.clone(),
                    p_value: Some(p),
                    note: None,
                }),
                Err(e) => outcomes.push(PairOutcome {
                    label_hi: hi.label.clone(),
                    label_lo: lo.label.clone(),
                    p_value: None,
                    note: Some(e.to_string()),
                }),
            }
        }
    }
    outcomes
}

/// Drops classes below `min_n`, Welch-tests every remaining unordered pair and
/// keeps pairs with p < alpha, oriented so `label_hi` has the larger mean.
/// Sorted by ascending p, ties broken lexicographically. Fewer than two
/// surviving classes yields an empty list.
pub fn select_significant_pairs(
    stats: &BTreeMap<String, ClassStats>,
    min_n: usize,
    alpha: f64,
) -> Vec<SignificantPair> {
    let mut pairs: Vec<SignificantPair> = evaluate_pairs(stats, min_n)
        .into_iter()
        .filter_map(|o| {
            let p = o.p_value?;
            if p < alpha {
                let gap = stats[&o.label_hi].mean - stats[&o.label_lo].mean;
                Some(SignificantPair {
                    label_hi: o.label_hi,
                    label_lo: o.label_lo,
                    p_value: p,
                    mean_gap: gap,
                })
            } else {
                None
            }
        })
        .collect();
    pairs.sort_by(|a, b| {
        a.p_value
            .partial_cmp(&b.p_value)
            .unwrap()
            .then_with(|| a.label_hi.cmp(&b.label_hi))
            .then_with(|| a.label_lo.cmp(&b.label_lo))
    });
    pairs
}

/// Instantiates comparison questions from significant pairs. Each template
/// must contain both `{a}` and `{b}` placeholders; choice order is randomized
/// by `seed` and the gold index tracks the higher-mean label.
pub fn generate_comparison_items(
    pairs: &[SignificantPair],
    kind: TaskKind,
    templates: &[String],
    seed: u64,
) -> Result<Dataset> {
    if !matches!(kind, TaskKind::Duration | TaskKind::Loudness) {
        return Err(Error::Domain(format!(
            "comparison items are built for duration or loudness, not {kind}"
        )));
    }
    if templates.is_empty() {
        return Err(Error::Template("no question templates supplied".into()));
    }
    for t in templates {
        if !t.contains("{a}") || !t.contains("{b}") {
            return Err(Error::Template(format!(
                "template '{t}' must contain both {{a}} and {{b}} placeholders"
            )));
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(pairs.len() * templates.len());
    for pair in pairs {
        for template in templates {
            let hi_first: bool = rng.random();
            let (first, second) = if hi_first {
                (&pair.label_hi, &pair.label_lo)
            } else {
                (&pair.label_lo, &pair.label_hi)
            };
            let question = template.replace("{a}", first).replace("{b}", second);
            let answer = if hi_first { 0 } else { 1 };
            let mut metadata = BTreeMap::new();
            metadata.insert("label_hi".into(), pair.label_hi.clone());
            metadata.insert("label_lo".into(), pair.label_lo.clone());
            metadata.insert("p_value".into(), format!("{:e}", pair.p_value));
            metadata.insert("mean_gap".into(), format!("{}", pair.mean_gap));
            items.push(QAItem {
                id: format!("{}-{:05}", kind.as_str(), items.len()),
                task: kind,
                question,
                choices: vec![first.clone(), second.clone()],
                answer,
                metadata,
            });
        }
    }
    Dataset::new(kind, items)
}

/// JSONL record describing one segment annotation on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub clip_id: String,
    pub label: String,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waveform: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate_hz: Option<f64>,
}

/// Loads annotations from JSONL. Waveform paths resolve relative to the
/// annotation file's directory; referenced files are sliced to the segment.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<SegmentAnnotation>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        let samples = match (&rec.waveform, rec.sample_rate_hz) {
            (Some(rel), Some(rate)) => {
                let clip = load_waveform(base.join(rel))?;
                let seg = slice_segment(&clip, rate, rec.start_s, rec.end_s, &rec.clip_id)?;
                Some(Waveform {
                    samples: seg,
                    sample_rate_hz: rate,
                })
            }
            (Some(_), None) => {
                return Err(Error::MissingData {
                    clip_id: rec.clip_id.clone(),
                    msg: "waveform reference without sample_rate_hz".into(),
                })
            }
            _ => None,
        };
        let ann = SegmentAnnotation {
            clip_id: rec.clip_id,
            label: rec.label,
            start_s: rec.start_s,
            end_s: rec.end_s,
            samples,
        };
        ann.validate()?;
        out.push(ann);
    }
    Ok(out)
}

/// Audit record for one class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassAudit {
    pub label: String,
    pub n_raw: usize,
    pub n_outliers_removed: usize,
    pub n_final: usize,
    pub retained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_reason: Option<String>,
}

/// Audit record for one evaluated pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairAudit {
    pub label_a: String,
    pub label_b: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Full audit of one construction run: per-class filtering and per-pair
/// significance outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub measure: String,
    pub min_n: usize,
    pub alpha: f64,
    pub classes: Vec<ClassAudit>,
    pub pairs: Vec<PairAudit>,
    pub n_items: usize,
}

/// Output of the end-to-end construction pipeline.
#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub dataset: Dataset,
    pub audit: AuditReport,
}

/// Pipeline parameters. `min_n` and `alpha` default to 30 and 0.01.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildParams {
    pub measure: Measure,
    pub min_n: usize,
    pub alpha: f64,
    pub templates: Vec<String>,
    pub seed: u64,
}

impl BuildParams {
    pub fn new(measure: Measure, seed: u64) -> BuildParams {
        let noun = match measure {
            Measure::Duration => "longer",
            Measure::Loudness => "louder",
        };
        BuildParams {
            measure,
            min_n: 30,
            alpha: 0.01,
            templates: vec![format!(
                "Which sound is typically {noun}: the sound of {{a}} or the sound of {{b}}?"
            )],
            seed,
        }
    }
}

/// Runs the full construction pipeline: per-class IQR filtering, minimum-count
/// filtering, pairwise significance testing and question generation.
pub fn build_comparison_dataset(
    annotations: &[SegmentAnnotation],
    params: &BuildParams,
) -> Result<BuildOutcome> {
    // raw per-class measurements
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for a in annotations {
        a.validate()?;
        grouped
            .entry(a.label.clone())
            .or_default()
            .push(measure_annotation(a, params.measure)?);
    }

    let mut classes = Vec::new();
    let mut stats: BTreeMap<String, ClassStats> = BTreeMap::new();
    for (label, values) in &grouped {
        let kept = iqr_filter(values)?;
        let n_raw = values.len();
        let n_final = kept.len();
        let retained = n_final >= params.min_n;
        classes.push(ClassAudit {
            label: label.clone(),
            n_raw,
            n_outliers_removed: n_raw - n_final,
            n_final,
            retained,
            drop_reason: (!retained)
                .then(|| format!("count {n_final} below minimum {}", params.min_n)),
        });
        if retained {
            stats.insert(label.clone(), ClassStats::from_values(label.clone(), kept)?);
        }
    }

    let outcomes = evaluate_pairs(&stats, params.min_n);
    let pairs_audit: Vec<PairAudit> = outcomes
        .iter()
        .map(|o| PairAudit {
            label_a: o.label_hi.clone(),
            label_b: o.label_lo.clone(),
            p_value: o.p_value,
            significant: o.p_value.map(|p| p < params.alpha).unwrap_or(false),
            note: o.note.clone(),
        })
        .collect();

    let selected = select_significant_pairs(&stats, params.min_n, params.alpha);
    let dataset = generate_comparison_items(
        &selected,
        params.measure.task(),
        &params.templates,
        params.seed,
    )?;

    let audit = AuditReport {
        measure: params.measure.as_str().to_string(),
        min_n: params.min_n,
        alpha: params.alpha,
        classes,
        pairs: pairs_audit,
        n_items: dataset.len(),
    };
    Ok(BuildOutcome { dataset, audit })
}
