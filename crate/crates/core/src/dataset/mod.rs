//! Dataset records for surgical VQLA reasoning data: the schema, a validator
//! with named errors, the SFT/RFT split, summary statistics and JSONL export.

mod record;
mod split;
mod validate;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use record::{
    record_id, CoTChain, CotStage, DatasetRecord, QuestionType, RecordKind, StageLabel,
    StageOrderViolation,
};
pub use split::{sft_cot_count, split_dataset, split_dataset_by, Split, SplitError, SplitUnit};
pub use validate::{validate_record, RecordError, RecordErrorKind, RECORD_FIELDS};

use crate::geometry::{BoundingBox, ImageDims};

/// Composition of the published 54k-record release, kept for reference. The Visual-QA
/// total is reported two ways (33,324 and 33,342), so both are listed and
/// neither is enforced.
pub mod reference_counts {
    pub const COT: usize = 12_255;
    pub const GROUNDING_QA: usize = 8_902;
    pub const VISUAL_QA_REPORTED: [usize; 2] = [33_324, 33_342];
    pub const SFT_FRACTION: f64 = 0.8;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_cot: usize,
    pub n_visual_qa: usize,
    pub n_grounding_qa: usize,
    pub per_question_type: BTreeMap<QuestionType, usize>,
}

impl DatasetStats {
    pub fn total(&self) -> usize {
        self.n_cot + self.n_visual_qa + self.n_grounding_qa
    }
}

pub fn dataset_stats(records: &[DatasetRecord]) -> DatasetStats {
    let mut stats = DatasetStats {
        n_cot: 0,
        n_visual_qa: 0,
        n_grounding_qa: 0,
        per_question_type: QuestionType::ALL.iter().map(|&q| (q, 0)).collect(),
    };
    for r in records {
        match r.kind {
            RecordKind::CoT => stats.n_cot += 1,
            RecordKind::VisualQA => stats.n_visual_qa += 1,
            RecordKind::GroundingQA => stats.n_grounding_qa += 1,
        }
        *stats.per_question_type.entry(r.question_type).or_default() += 1;
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TrainingStage {
    Sft,
    Rft,
}

/// RFT lines carry the prompt and the verifiable targets only; the reference
/// rationale is dropped because RFT learns from rewards.
#[derive(Serialize)]
struct RftLine<'a> {
    id: &'a str,
    kind: RecordKind,
    image_id: &'a str,
    question: &'a str,
    question_type: QuestionType,
    answer: &'a str,
    bbox: Option<BoundingBox>,
}

/// Writes training lines and returns how many were written.
///
/// SFT writes every record in full. RFT writes CoT-kind records only, without
/// their stage texts.
pub fn write_training_lines<W: Write>(
    records: &[DatasetRecord],
    stage: TrainingStage,
    mut out: W,
) -> io::Result<usize> {
    let mut written = 0;
    for r in records {
        let line = match stage {
            TrainingStage::Sft => serde_json::to_string(r),
            TrainingStage::Rft if r.kind == RecordKind::CoT => serde_json::to_string(&RftLine {
                id: &r.id,
                kind: r.kind,
                image_id: &r.image_id,
                question: &r.question,
                question_type: r.question_type,
                answer: &r.answer,
                bbox: r.bbox,
            }),
            TrainingStage::Rft => continue,
        }
        .map_err(io::Error::other)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        written += 1;
    }
    out.flush()?;
    Ok(written)
}

pub fn export_training_file(
    records: &[DatasetRecord],
    stage: TrainingStage,
    path: impl AsRef<Path>,
) -> io::Result<usize> {
    let file = File::create(path)?;
    write_training_lines(records, stage, BufWriter::new(file))
}

/// A rejected line: 1-based line number plus the record error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub error: RecordError,
}

/// Result of reading a JSONL file: every valid record plus every rejection.
#[derive(Debug, Clone, Default)]
pub struct LoadedRecords {
    pub records: Vec<DatasetRecord>,
    pub errors: Vec<LineError>,
}

/// Reads and validates JSONL records. Blank lines are skipped.
pub fn read_records<R: BufRead>(reader: R, frame: ImageDims) -> io::Result<LoadedRecords> {
    let mut loaded = LoadedRecords::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = match serde_json::from_str::<serde_json::Value>(&line) {
            Ok(v) => validate_record(&v, frame),
            Err(e) => Err(RecordError {
                record_id: validate::UNKNOWN_ID.to_string(),
                kind: RecordErrorKind::MalformedJson(e.to_string()),
            }),
        };
        match outcome {
            Ok(r) => loaded.records.push(r),
            Err(error) => loaded.errors.push(LineError { line: i + 1, error }),
        }
    }
    Ok(loaded)
}

pub fn load_records(path: impl AsRef<Path>, frame: ImageDims) -> io::Result<LoadedRecords> {
    read_records(BufReader::new(File::open(path)?), frame)
}
