use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordKind {
    CoT,
    VisualQA,
    GroundingQA,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::CoT => "CoT",
            RecordKind::VisualQA => "VisualQA",
            RecordKind::GroundingQA => "GroundingQA",
        }
    }
}

impl FromStr for RecordKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "CoT" => Ok(RecordKind::CoT),
            "VisualQA" => Ok(RecordKind::VisualQA),
            "GroundingQA" => Ok(RecordKind::GroundingQA),
            _ => Err(()),
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Question taxonomy. The first three are the surgical VQLA question families;
/// the `*Sub` types tag sub-question records compiled from the CoT workflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionType {
    Organ,
    InstrumentLocation,
    InstrumentState,
    VisualSub,
    GroundingSub,
}

impl QuestionType {
    pub const ALL: [QuestionType; 5] = [
        QuestionType::Organ,
        QuestionType::InstrumentLocation,
        QuestionType::InstrumentState,
        QuestionType::VisualSub,
        QuestionType::GroundingSub,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Organ => "Organ",
            QuestionType::InstrumentLocation => "InstrumentLocation",
            QuestionType::InstrumentState => "InstrumentState",
            QuestionType::VisualSub => "VisualSub",
            QuestionType::GroundingSub => "GroundingSub",
        }
    }
}

impl FromStr for QuestionType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        QuestionType::ALL
            .into_iter()
            .find(|q| q.as_str() == s)
            .ok_or(())
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reasoning stages in their canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StageLabel {
    Planning,
    Principle,
    VisualAnalysis,
    Comparison,
    ContactAnalysis,
    Conclusion,
}

impl StageLabel {
    pub const CANONICAL: [StageLabel; 6] = [
        StageLabel::Planning,
        StageLabel::Principle,
        StageLabel::VisualAnalysis,
        StageLabel::Comparison,
        StageLabel::ContactAnalysis,
        StageLabel::Conclusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageLabel::Planning => "Planning",
            StageLabel::Principle => "Principle",
            StageLabel::VisualAnalysis => "VisualAnalysis",
            StageLabel::Comparison => "Comparison",
            StageLabel::ContactAnalysis => "ContactAnalysis",
            StageLabel::Conclusion => "Conclusion",
        }
    }

    /// Heading used when a chain is rendered as free text.
    pub fn heading(self) -> &'static str {
        match self {
            StageLabel::Planning => "Planning",
            StageLabel::Principle => "Principle",
            StageLabel::VisualAnalysis => "Visual analysis",
            StageLabel::Comparison => "Comparison",
            StageLabel::ContactAnalysis => "Contact analysis",
            StageLabel::Conclusion => "Conclusion",
        }
    }

    /// Stages a chain must carry for a question type.
    pub fn required_for(question_type: QuestionType) -> Vec<StageLabel> {
        StageLabel::CANONICAL
            .into_iter()
            .filter(|s| {
                *s != StageLabel::ContactAnalysis || question_type == QuestionType::InstrumentState
            })
            .collect()
    }
}

impl FromStr for StageLabel {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        StageLabel::CANONICAL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or(())
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CotStage {
    pub stage: StageLabel,
    pub text: String,
}

/// An ordered chain of reasoning stages ending in a conclusion.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoTChain {
    pub stages: Vec<CotStage>,
}

/// Why a chain's stage sequence is unacceptable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageOrderViolation {
    Empty,
    OutOfOrder { stage: StageLabel, after: StageLabel },
    ConclusionNotLast,
    ContactOutsideStateQuestion,
}

impl fmt::Display for StageOrderViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageOrderViolation::Empty => f.write_str("chain has no stages"),
            StageOrderViolation::OutOfOrder { stage, after } => {
                write!(f, "{stage} appears after {after}")
            }
            StageOrderViolation::ConclusionNotLast => f.write_str("Conclusion is not the final stage"),
            StageOrderViolation::ContactOutsideStateQuestion => {
                f.write_str("ContactAnalysis is only allowed for InstrumentState questions")
            }
        }
    }
}

impl CoTChain {
    pub fn new(stages: Vec<CotStage>) -> Self {
        Self { stages }
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn labels(&self) -> impl Iterator<Item = StageLabel> + '_ {
        self.stages.iter().map(|s| s.stage)
    }

    pub fn stage_text(&self, label: StageLabel) -> Option<&str> {
        self.stages
            .iter()
            .find(|s| s.stage == label)
            .map(|s| s.text.as_str())
    }

    /// Checks the sequence rules without reference to a question type:
    /// strictly canonical order and a final Conclusion.
    pub fn check_order(&self) -> Result<(), StageOrderViolation> {
        let last = self.stages.last().ok_or(StageOrderViolation::Empty)?;
        for pair in self.stages.windows(2) {
            if pair[1].stage <= pair[0].stage {
                return Err(StageOrderViolation::OutOfOrder {
                    stage: pair[1].stage,
                    after: pair[0].stage,
                });
            }
        }
        if last.stage != StageLabel::Conclusion {
            return Err(StageOrderViolation::ConclusionNotLast);
        }
        Ok(())
    }

    pub fn check_for(&self, question_type: QuestionType) -> Result<(), StageOrderViolation> {
        self.check_order()?;
        if question_type != QuestionType::InstrumentState
            && self.labels().any(|l| l == StageLabel::ContactAnalysis)
        {
            return Err(StageOrderViolation::ContactOutsideStateQuestion);
        }
        Ok(())
    }

    /// Free-text rendering, one `Heading: text` line per stage.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for s in &self.stages {
            out.push_str(s.stage.heading());
            out.push_str(": ");
            out.push_str(&s.text);
            out.push('\n');
        }
        out
    }
}

/// One dataset line. Field order here is the on-disk field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub kind: RecordKind,
    pub image_id: String,
    pub question: String,
    pub question_type: QuestionType,
    pub answer: String,
    pub bbox: Option<BoundingBox>,
    pub cot: Option<CoTChain>,
}

/// Builds `{image_id}#{kind}#{ordinal}` identifiers.
pub fn record_id(image_id: &str, kind: RecordKind, ordinal: usize) -> String {
    format!("{image_id}#{kind}#{ordinal}")
}
