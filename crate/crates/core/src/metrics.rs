//! Accuracy, macro F-score and mean IoU over predictions joined to reference
//! records by id.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{load_records, DatasetRecord, LineError};
use crate::geometry::{BoundingBox, ImageDims};
use crate::reward::iou;
use crate::trace::normalize_answer;

pub const F_SCORE_AVERAGING: &str = "macro over ground-truth classes";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no pairs to evaluate")]
    EmptyInput,
    #[error(
        "prediction ids do not match ground truth: {} without prediction, {} unknown",
        missing.len(),
        unknown.len()
    )]
    IdMismatch {
        /// Ground-truth ids with no prediction.
        missing: Vec<String>,
        /// Prediction ids absent from the ground truth.
        unknown: Vec<String>,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("prediction line {line}: {message}")]
    BadPrediction { line: usize, message: String },
    #[error("ground truth has {} invalid record(s)", .0.len())]
    InvalidGroundTruth(Vec<LineError>),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    pub answer: String,
    #[serde(default)]
    pub bbox: Option<BoundingBox>,
}

/// Fraction of `(predicted, truth)` pairs that match exactly.
pub fn accuracy<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hits = pairs.iter().filter(|(p, t)| p.as_ref() == t.as_ref()).count();
    Ok(hits as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: String,
    /// Number of records whose truth is this class.
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class statistics for every ground-truth class, sorted by class name.
pub fn class_table<S: AsRef<str>>(pairs: &[(S, S)]) -> Vec<ClassStats> {
    let mut support: BTreeMap<&str, usize> = BTreeMap::new();
    let mut predicted: BTreeMap<&str, usize> = BTreeMap::new();
    let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
    for (p, t) in pairs {
        let (p, t) = (p.as_ref(), t.as_ref());
        *support.entry(t).or_default() += 1;
        *predicted.entry(p).or_default() += 1;
        if p == t {
            *tp.entry(t).or_default() += 1;
        }
    }
    support
        .iter()
        .map(|(&class, &support)| {
            let predicted = predicted.get(class).copied().unwrap_or(0);
            let true_positives = tp.get(class).copied().unwrap_or(0);
            let precision = if predicted == 0 {
                0.0
            } else {
                true_positives as f64 / predicted as f64
            };
            let recall = true_positives as f64 / support as f64;
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassStats {
                class: class.to_string(),
                support,
                predicted,
                true_positives,
                precision,
                recall,
                f1,
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1 over the classes present in the truths.
pub fn macro_fscore<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let table = class_table(pairs);
    Ok(table.iter().map(|c| c.f1).sum::<f64>() / table.len() as f64)
}

/// Mean IoU of `(predicted, truth)` boxes. Missing or invalid predictions
/// score 0.
pub fn mean_iou(pairs: &[(Option<BoundingBox>, BoundingBox)]) -> Result<f64, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total: f64 = pairs
        .iter()
        .map(|(p, t)| p.and_then(|p| iou(&p, t).ok()).unwrap_or(0.0))
        .sum();
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    pub f_score: f64,
    pub f_score_averaging: String,
    /// Over records whose truth has a box; absent when none do.
    pub miou: Option<f64>,
    pub n: usize,
    pub n_with_box: usize,
    pub per_class: Vec<ClassStats>,
}

/// Joins predictions to references by id and scores them. Answers are
/// normalized on both sides.
pub fn evaluate(
    predictions: &[Prediction],
    truths: &[DatasetRecord],
) -> Result<EvalReport, MetricsError> {
    let mut by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
    for p in predictions {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(MetricsError::DuplicateId(p.id.clone()));
        }
    }
    let mut seen = BTreeSet::new();
    for t in truths {
        if !seen.insert(t.id.as_str()) {
            return Err(MetricsError::DuplicateId(t.id.clone()));
        }
    }
    let missing: Vec<String> = truths
        .iter()
        .filter(|t| !by_id.contains_key(t.id.as_str()))
        .map(|t| t.id.clone())
        .collect();
    let unknown: Vec<String> = by_id
        .keys()
        .filter(|id| !seen.contains(*id))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() || !unknown.is_empty() {
        return Err(MetricsError::IdMismatch { missing, unknown });
    }

    let answers: Vec<(String, String)> = truths
        .iter()
        .map(|t| (normalize_answer(&by_id[t.id.as_str()].answer), normalize_answer(&t.answer)))
        .collect();
    let boxes: Vec<(Option<BoundingBox>, BoundingBox)> = truths
        .iter()
        .filter_map(|t| t.bbox.map(|b| (by_id[t.id.as_str()].bbox, b)))
        .collect();
    Ok(EvalReport {
        acc: accuracy(&answers)?,
        f_score: macro_fscore(&answers)?,
        f_score_averaging: F_SCORE_AVERAGING.into(),
        miou: if boxes.is_empty() {
            None
        } else {
            Some(mean_iou(&boxes)?)
        },
        n: truths.len(),
        n_with_box: boxes.len(),
        per_class: class_table(&answers),
    })
}

pub fn read_predictions<R: BufRead>(reader: R) -> Result<Vec<Prediction>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| MetricsError::BadPrediction {
            line: i + 1,
            message: e.to_string(),
        })?;
        if p.bbox.is_some_and(|b| !b.is_valid()) {
            return Err(MetricsError::BadPrediction {
                line: i + 1,
                message: format!("degenerate box for `{}`", p.id),
            });
        }
        out.push(p);
    }
    Ok(out)
}

/// Reads both files and evaluates. Every reference record must validate.
pub fn eval_report(
    predictions: impl AsRef<Path>,
    ground_truth: impl AsRef<Path>,
    frame: ImageDims,
) -> Result<EvalReport, MetricsError> {
    let preds = read_predictions(BufReader::new(File::open(predictions)?))?;
    let loaded = load_records(ground_truth, frame)?;
    if !loaded.errors.is_empty() {
        return Err(MetricsError::InvalidGroundTruth(loaded.errors));
    }
    evaluate(&preds, &loaded.records)
}
