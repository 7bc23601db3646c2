use serde_json::{Map, Value};
use thiserror::Error;

use super::record::{CoTChain, CotStage, DatasetRecord, QuestionType, RecordKind, StageLabel};
use crate::geometry::{BoundingBox, ImageDims};
use crate::trace::normalize_answer;

/// Field names of a record line, in on-disk order.
pub const RECORD_FIELDS: [&str; 8] = [
    "id",
    "kind",
    "image_id",
    "question",
    "question_type",
    "answer",
    "bbox",
    "cot",
];

pub(crate) const UNKNOWN_ID: &str = "<unknown>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordErrorKind {
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("field `{field}` is not allowed: {reason}")]
    ForbiddenField { field: String, reason: &'static str },
    #[error("invalid value for `{field}`: {detail}")]
    InvalidValue { field: String, detail: String },
    #[error("bad stage order in `cot`: {0}")]
    BadStageOrder(String),
    #[error("`answer` is empty after normalization")]
    EmptyAnswer,
    #[error("`bbox` {bbox} lies outside the {width}x{height} frame")]
    BoxOutOfFrame {
        bbox: BoundingBox,
        width: u32,
        height: u32,
    },
    #[error("`bbox` {0} is degenerate (needs x1 < x2 and y1 < y2)")]
    DegenerateBox(BoundingBox),
    #[error("line is not a JSON object")]
    NotAnObject,
    #[error("line is not valid JSON: {0}")]
    MalformedJson(String),
}

impl RecordErrorKind {
    /// Stable machine-readable name.
    pub fn name(&self) -> &'static str {
        match self {
            RecordErrorKind::MissingField(_) => "MissingField",
            RecordErrorKind::ForbiddenField { .. } => "ForbiddenField",
            RecordErrorKind::InvalidValue { .. } => "InvalidValue",
            RecordErrorKind::BadStageOrder(_) => "BadStageOrder",
            RecordErrorKind::EmptyAnswer => "EmptyAnswer",
            RecordErrorKind::BoxOutOfFrame { .. } => "BoxOutOfFrame",
            RecordErrorKind::DegenerateBox(_) => "DegenerateBox",
            RecordErrorKind::NotAnObject => "NotAnObject",
            RecordErrorKind::MalformedJson(_) => "MalformedJson",
        }
    }

    /// The offending field, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            RecordErrorKind::MissingField(f) => Some(f),
            RecordErrorKind::ForbiddenField { field, .. }
            | RecordErrorKind::InvalidValue { field, .. } => Some(field),
            RecordErrorKind::BadStageOrder(_) => Some("cot"),
            RecordErrorKind::EmptyAnswer => Some("answer"),
            RecordErrorKind::BoxOutOfFrame { .. } | RecordErrorKind::DegenerateBox(_) => {
                Some("bbox")
            }
            RecordErrorKind::NotAnObject | RecordErrorKind::MalformedJson(_) => None,
        }
    }
}

/// A rejected record, tagged with its id (or `<unknown>` when the id itself
/// could not be read).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("record `{record_id}`: {kind}")]
pub struct RecordError {
    pub record_id: String,
    pub kind: RecordErrorKind,
}

/// Checks a parsed JSON line against the record schema and returns the typed
/// record. Answers are stored in normalized form.
pub fn validate_record(raw: &Value, frame: ImageDims) -> Result<DatasetRecord, RecordError> {
    let Some(obj) = raw.as_object() else {
        return Err(RecordError {
            record_id: UNKNOWN_ID.to_string(),
            kind: RecordErrorKind::NotAnObject,
        });
    };
    let record_id = obj
        .get("id")
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    let fail = |kind: RecordErrorKind| RecordError {
        record_id: record_id.clone().unwrap_or_else(|| UNKNOWN_ID.to_string()),
        kind,
    };
    check_record(obj, record_id.as_deref(), frame).map_err(fail)
}

fn check_record(
    obj: &Map<String, Value>,
    id: Option<&str>,
    frame: ImageDims,
) -> Result<DatasetRecord, RecordErrorKind> {
    if let Some(extra) = obj.keys().find(|k| !RECORD_FIELDS.contains(&k.as_str())) {
        return Err(RecordErrorKind::ForbiddenField {
            field: extra.clone(),
            reason: "not part of the record schema",
        });
    }
    let id = id.ok_or(RecordErrorKind::MissingField("id"))?;
    let kind_raw = required_str(obj, "kind")?;
    let kind: RecordKind = kind_raw.parse().map_err(|_| RecordErrorKind::InvalidValue {
        field: "kind".into(),
        detail: format!("unknown kind `{kind_raw}`"),
    })?;
    let image_id = required_str(obj, "image_id")?;
    let question = required_str(obj, "question")?;
    let qt_raw = required_str(obj, "question_type")?;
    let question_type: QuestionType =
        qt_raw.parse().map_err(|_| RecordErrorKind::InvalidValue {
            field: "question_type".into(),
            detail: format!("unknown question type `{qt_raw}`"),
        })?;
    let answer = normalize_answer(required_str(obj, "answer")?);
    if answer.is_empty() {
        return Err(RecordErrorKind::EmptyAnswer);
    }
    let bbox = optional(obj, "bbox").map(parse_box).transpose()?;
    if let Some(b) = bbox {
        if !b.is_valid() {
            return Err(RecordErrorKind::DegenerateBox(b));
        }
        if !b.within(frame) {
            return Err(RecordErrorKind::BoxOutOfFrame {
                bbox: b,
                width: frame.width,
                height: frame.height,
            });
        }
    }
    let cot = optional(obj, "cot").map(parse_cot).transpose()?;

    match kind {
        RecordKind::GroundingQA if bbox.is_none() => {
            return Err(RecordErrorKind::MissingField("bbox"))
        }
        RecordKind::VisualQA if bbox.is_some() => {
            return Err(RecordErrorKind::ForbiddenField {
                field: "bbox".into(),
                reason: "VisualQA records carry no box",
            })
        }
        _ => {}
    }
    match (&cot, kind) {
        (None, RecordKind::CoT) => return Err(RecordErrorKind::MissingField("cot")),
        (Some(_), RecordKind::VisualQA | RecordKind::GroundingQA) => {
            return Err(RecordErrorKind::ForbiddenField {
                field: "cot".into(),
                reason: "only CoT records carry a reasoning chain",
            })
        }
        (Some(chain), RecordKind::CoT) => chain
            .check_for(question_type)
            .map_err(|v| RecordErrorKind::BadStageOrder(v.to_string()))?,
        _ => {}
    }

    Ok(DatasetRecord {
        id: id.to_string(),
        kind,
        image_id: image_id.to_string(),
        question: question.to_string(),
        question_type,
        answer,
        bbox,
        cot,
    })
}

fn required_str<'a>(
    obj: &'a Map<String, Value>,
    field: &'static str,
) -> Result<&'a str, RecordErrorKind> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(RecordErrorKind::MissingField(field)),
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(RecordErrorKind::InvalidValue {
            field: field.into(),
            detail: format!("expected a string, found {}", json_type(other)),
        }),
    }
}

fn optional<'a>(obj: &'a Map<String, Value>, field: &str) -> Option<&'a Value> {
    obj.get(field).filter(|v| !v.is_null())
}

fn parse_box(v: &Value) -> Result<BoundingBox, RecordErrorKind> {
    let invalid = |detail: String| RecordErrorKind::InvalidValue {
        field: "bbox".into(),
        detail,
    };
    let items = v
        .as_array()
        .ok_or_else(|| invalid(format!("expected [x1,y1,x2,y2], found {}", json_type(v))))?;
    if items.len() != 4 {
        return Err(invalid(format!("expected 4 coordinates, found {}", items.len())));
    }
    let mut c = [0u32; 4];
    for (slot, item) in c.iter_mut().zip(items) {
        *slot = item
            .as_u64()
            .and_then(|n| u32::try_from(n).ok())
            .ok_or_else(|| invalid(format!("coordinate {item} is not a non-negative integer")))?;
    }
    Ok(BoundingBox {
        x1: c[0],
        y1: c[1],
        x2: c[2],
        y2: c[3],
    })
}

fn parse_cot(v: &Value) -> Result<CoTChain, RecordErrorKind> {
    let items = v.as_array().ok_or_else(|| RecordErrorKind::InvalidValue {
        field: "cot".into(),
        detail: format!("expected a list of stages, found {}", json_type(v)),
    })?;
    let mut stages = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let invalid = |detail: String| RecordErrorKind::InvalidValue {
            field: format!("cot[{i}]"),
            detail,
        };
        let obj = item
            .as_object()
            .ok_or_else(|| invalid("expected an object with `stage` and `text`".into()))?;
        let stage_raw = obj
            .get("stage")
            .and_then(Value::as_str)
            .ok_or_else(|| invalid("missing `stage`".into()))?;
        let stage: StageLabel = stage_raw
            .parse()
            .map_err(|_| invalid(format!("unknown stage `{stage_raw}`")))?;
        let text = obj
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| invalid("missing `text`".into()))?;
        stages.push(CotStage {
            stage,
            text: text.to_string(),
        });
    }
    Ok(CoTChain::new(stages))
}

fn json_type(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}
