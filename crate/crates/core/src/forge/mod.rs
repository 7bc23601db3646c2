//! Turns frame annotations into staged reasoning chains and sub-question
//! records by querying a chat-completions endpoint once per sub-question.

mod client;
#[cfg(feature = "http")]
pub mod stub;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    record_id, CoTChain, CotStage, DatasetRecord, QuestionType, RecordKind, StageLabel,
};
use crate::geometry::BoundingBox;

#[cfg(feature = "http")]
pub use client::UreqTransport;
pub use client::{
    chat_request, fetch_sub_answers, read_completion, AuditEntry, AuditLog, ChatTransport,
    EndpointConfig, TransportError, API_KEY_ENV,
};

pub const TEMPLATE_VERSION: u32 = 1;

const SYSTEM_TEMPLATE: &str = include_str!("../../assets/prompts/system.txt");
const ORGAN_TEMPLATE: &str = include_str!("../../assets/prompts/organ.txt");
const LOCATION_TEMPLATE: &str = include_str!("../../assets/prompts/instrument_location.txt");
const STATE_TEMPLATE: &str = include_str!("../../assets/prompts/instrument_state.txt");

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("no prompt template for question type {0}")]
    UnsupportedQuestionType(QuestionType),
    #[error("no answer for slot {0}")]
    MissingSlot(SlotId),
    #[error("endpoint returned HTTP {status}")]
    HttpError { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

impl ForgeError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ForgeError::HttpError { .. }
                | ForgeError::MalformedResponse(_)
                | ForgeError::Timeout
                | ForgeError::Transport(_)
        )
    }
}

/// One annotated instrument, passed to the generator as context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentBox {
    pub label: String,
    pub bbox: BoundingBox,
}

/// A frame-level question with its reference answer and boxes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub image_id: String,
    pub question: String,
    pub question_type: QuestionType,
    pub answer: String,
    #[serde(default)]
    pub bbox: Option<BoundingBox>,
    #[serde(default)]
    pub instruments: Vec<InstrumentBox>,
}

/// A stage and the position of a sub-question within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct SlotId {
    pub stage: StageLabel,
    pub ordinal: usize,
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.stage, self.ordinal)
    }
}

impl From<SlotId> for String {
    fn from(s: SlotId) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for SlotId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        let bad = || format!("bad slot id {s:?}");
        let (stage, ordinal) = s.split_once('#').ok_or_else(bad)?;
        Ok(SlotId {
            stage: stage.parse().map_err(|_| bad())?,
            ordinal: ordinal.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuestion {
    pub slot: SlotId,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPack {
    pub image_id: String,
    pub question_type: QuestionType,
    pub template_version: u32,
    pub system_prompt: String,
    pub sub_questions: Vec<SubQuestion>,
    /// Reference boxes handed to the generator.
    pub context: Vec<InstrumentBox>,
}

impl PromptPack {
    pub fn slots(&self) -> impl Iterator<Item = SlotId> + '_ {
        self.sub_questions.iter().map(|s| s.slot)
    }

    /// Sub-questions whose answers become visual QA records.
    pub fn visual_slots(&self) -> impl Iterator<Item = &SubQuestion> + '_ {
        self.sub_questions.iter().filter(|s| {
            matches!(s.slot.stage, StageLabel::VisualAnalysis | StageLabel::ContactAnalysis)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Generated,
    ManuallyEdited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubAnswerSet {
    pub answers: BTreeMap<SlotId, String>,
    pub provenance: Provenance,
}

impl SubAnswerSet {
    pub fn generated(answers: BTreeMap<SlotId, String>) -> Self {
        Self { answers, provenance: Provenance::Generated }
    }

    /// Replaces one answer, marking the set as edited by hand.
    pub fn edit(&mut self, slot: SlotId, text: impl Into<String>) {
        self.answers.insert(slot, text.into());
        self.provenance = Provenance::ManuallyEdited;
    }

    fn get(&self, slot: SlotId) -> Result<&str, ForgeError> {
        self.answers
            .get(&slot)
            .map(String::as_str)
            .ok_or(ForgeError::MissingSlot(slot))
    }
}

/// Parses a template: `#` lines are comments, every other non-blank line is
/// `Stage: prompt`.
fn parse_template(text: &str) -> Vec<(StageLabel, &str)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (stage, prompt) = l.split_once(':').expect("template line has a stage");
            let stage = stage.trim().parse().expect("template stage is a stage label");
            (stage, prompt.trim())
        })
        .collect()
}

fn system_prompt() -> String {
    SYSTEM_TEMPLATE
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

fn describe_instruments(instruments: &[InstrumentBox]) -> String {
    if instruments.is_empty() {
        return "none annotated".into();
    }
    instruments
        .iter()
        .map(|i| format!("{} at {}", i.label, i.bbox))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn build_prompt_pack(annotation: &Annotation) -> Result<PromptPack, ForgeError> {
    let template = match annotation.question_type {
        QuestionType::Organ => ORGAN_TEMPLATE,
        QuestionType::InstrumentLocation => LOCATION_TEMPLATE,
        QuestionType::InstrumentState => STATE_TEMPLATE,
        other => return Err(ForgeError::UnsupportedQuestionType(other)),
    };
    let instruments = describe_instruments(&annotation.instruments);
    let mut counts: BTreeMap<StageLabel, usize> = BTreeMap::new();
    let sub_questions = parse_template(template)
        .into_iter()
        .map(|(stage, prompt)| {
            let ordinal = counts.entry(stage).or_default();
            let slot = SlotId { stage, ordinal: *ordinal };
            *ordinal += 1;
            SubQuestion {
                slot,
                prompt: prompt
                    .replace("{question}", &annotation.question)
                    .replace("{answer}", &annotation.answer)
                    .replace("{instruments}", &instruments),
            }
        })
        .collect();
    Ok(PromptPack {
        image_id: annotation.image_id.clone(),
        question_type: annotation.question_type,
        template_version: TEMPLATE_VERSION,
        system_prompt: system_prompt(),
        sub_questions,
        context: annotation.instruments.clone(),
    })
}

fn sentence(text: &str) -> String {
    let t = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if t.ends_with(['.', '!', '?']) {
        t
    } else {
        format!("{t}.")
    }
}

/// Joins each stage's answers, in canonical stage order, into a chain.
pub fn assemble_cot(answers: &SubAnswerSet, pack: &PromptPack) -> Result<CoTChain, ForgeError> {
    let mut by_stage: BTreeMap<StageLabel, Vec<String>> = BTreeMap::new();
    for q in &pack.sub_questions {
        by_stage
            .entry(q.slot.stage)
            .or_default()
            .push(sentence(answers.get(q.slot)?));
    }
    let stages = StageLabel::CANONICAL
        .into_iter()
        .filter_map(|stage| {
            by_stage.remove(&stage).map(|parts| CotStage {
                stage,
                text: parts.join(" "),
            })
        })
        .collect();
    Ok(CoTChain::new(stages))
}

/// Hands out `{image_id}#{kind}#{n}` ids, counting per image and kind.
#[derive(Debug, Default)]
pub struct IdAllocator {
    next: BTreeMap<(String, RecordKind), usize>,
}

impl IdAllocator {
    pub fn next(&mut self, image_id: &str, kind: RecordKind) -> String {
        let n = self.next.entry((image_id.to_string(), kind)).or_default();
        let id = record_id(image_id, kind, *n);
        *n += 1;
        id
    }
}

/// Visual sub-question answers become visual QA records and every context box
/// a grounding record whose answer is the instrument label.
pub fn compile_qa_pairs(
    answers: &SubAnswerSet,
    pack: &PromptPack,
    ids: &mut IdAllocator,
) -> Result<Vec<DatasetRecord>, ForgeError> {
    let mut out = Vec::new();
    for q in pack.visual_slots() {
        out.push(DatasetRecord {
            id: ids.next(&pack.image_id, RecordKind::VisualQA),
            kind: RecordKind::VisualQA,
            image_id: pack.image_id.clone(),
            question: q.prompt.clone(),
            question_type: QuestionType::VisualSub,
            answer: crate::trace::normalize_answer(answers.get(q.slot)?),
            bbox: None,
            cot: None,
        });
    }
    for inst in &pack.context {
        out.push(DatasetRecord {
            id: ids.next(&pack.image_id, RecordKind::GroundingQA),
            kind: RecordKind::GroundingQA,
            image_id: pack.image_id.clone(),
            question: format!("Locate the {} in the frame.", inst.label),
            question_type: QuestionType::GroundingSub,
            answer: crate::trace::normalize_answer(&inst.label),
            bbox: Some(inst.bbox),
            cot: None,
        });
    }
    Ok(out)
}

pub fn cot_record(annotation: &Annotation, chain: CoTChain, id: String) -> DatasetRecord {
    DatasetRecord {
        id,
        kind: RecordKind::CoT,
        image_id: annotation.image_id.clone(),
        question: annotation.question.clone(),
        question_type: annotation.question_type,
        answer: crate::trace::normalize_answer(&annotation.answer),
        bbox: annotation.bbox,
        cot: Some(chain),
    }
}

/// Result of forging one annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Forged {
    pub pack: PromptPack,
    pub answers: SubAnswerSet,
    pub chain: CoTChain,
}

#[derive(Debug)]
pub struct ForgeOutcome {
    pub records: Vec<DatasetRecord>,
    /// Position of the failed annotation in the input, with its error.
    pub failures: Vec<(usize, ForgeError)>,
}

/// Forges every annotation with at most `max_inflight` packs in flight, then
/// allocates ids in input order so the output does not depend on scheduling.
pub fn forge_annotations<T, W>(
    annotations: &[Annotation],
    endpoint: &EndpointConfig,
    transport: &T,
    audit: &AuditLog<W>,
    max_inflight: usize,
) -> ForgeOutcome
where
    T: ChatTransport + Sync,
    W: Write + Send,
{
    let slots: Vec<Mutex<Option<Result<Forged, ForgeError>>>> =
        annotations.iter().map(|_| Mutex::new(None)).collect();
    let cursor = AtomicUsize::new(0);
    let workers = max_inflight.clamp(1, annotations.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                let Some(a) = annotations.get(i) else { break };
                let result = build_prompt_pack(a).and_then(|pack| {
                    let answers = fetch_sub_answers(&pack, endpoint, transport, audit)?;
                    let chain = assemble_cot(&answers, &pack)?;
                    Ok(Forged { pack, answers, chain })
                });
                *slots[i].lock().expect("result slot") = Some(result);
            });
        }
    });

    let mut ids = IdAllocator::default();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, (a, slot)) in annotations.iter().zip(slots).enumerate() {
        match slot.into_inner().expect("result slot").expect("every annotation visited") {
            Ok(f) => {
                let id = ids.next(&a.image_id, RecordKind::CoT);
                records.push(cot_record(a, f.chain, id));
                match compile_qa_pairs(&f.answers, &f.pack, &mut ids) {
                    Ok(qa) => records.extend(qa),
                    Err(e) => failures.push((i, e)),
                }
            }
            Err(e) => failures.push((i, e)),
        }
    }
    ForgeOutcome { records, failures }
}
