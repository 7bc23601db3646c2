use serde::{Deserialize, Serialize};

use super::policy::SampledAction;
use super::scene::{target_name, AnchorGrid, Question, SceneSpec, Target};
use super::vocab;
use crate::dataset::{QuestionType, StageLabel};
use crate::geometry::{BoundingBox, Quadrant};

/// A rollout decoded into its three components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutAction {
    /// Index into the answer vocabulary.
    pub answer: usize,
    pub stated: Quadrant,
    pub anchor: usize,
}

impl RolloutAction {
    pub fn from_choices(choices: &[usize]) -> Option<Self> {
        match *choices {
            [answer, stated, anchor] => Some(Self {
                answer,
                stated: Quadrant::from_index(stated)?,
                anchor,
            }),
            _ => None,
        }
    }

    pub fn from_sampled(s: &SampledAction) -> Option<Self> {
        Self::from_choices(&s.choices)
    }

    pub fn choices(&self) -> Vec<usize> {
        vec![self.answer, self.stated.index(), self.anchor]
    }

    pub fn answer_text(&self) -> &'static str {
        vocab::answer_text(self.answer).expect("answer index in vocabulary")
    }

    pub fn bbox(&self, grid: &AnchorGrid) -> BoundingBox {
        grid.anchor(self.anchor).expect("anchor index in grid")
    }
}

fn stage_line(stage: StageLabel, text: &str) -> String {
    format!("{}: {}\n", stage.heading(), text)
}

/// Writes the staged reasoning and markers for one action.
///
/// Visual analysis lists where each instrument really is; the Conclusion
/// states the action's quadrant, which need not agree with its box.
pub fn emit_trace(
    action: &RolloutAction,
    scene: &SceneSpec,
    question: &Question,
    grid: &AnchorGrid,
) -> String {
    let target = target_name(scene, question.target);
    let mut out = String::new();
    out += &stage_line(
        StageLabel::Planning,
        &format!("Identify the {target} named in the question, survey the instruments in view, then settle on one answer."),
    );
    let principle = match question.question_type {
        QuestionType::Organ => "The operated organ is the tissue the instruments converge on.".to_string(),
        QuestionType::InstrumentState => {
            format!("The state of the {target} follows from its jaws and its contact with tissue.")
        }
        _ => format!("The position of the {target} is read from where its tip sits in the frame."),
    };
    out += &stage_line(StageLabel::Principle, &principle);
    let seen: Vec<String> = scene
        .instruments
        .iter()
        .map(|i| format!("the {} at the {}", i.name(), i.placement.quadrant.term()))
        .collect();
    out += &stage_line(
        StageLabel::VisualAnalysis,
        &format!("{} instrument(s) in view: {}.", seen.len(), seen.join(", ")),
    );
    out += &stage_line(
        StageLabel::Comparison,
        &format!("The region proposed below is the best match for the {target}."),
    );
    if question.question_type == QuestionType::InstrumentState {
        let detail = match question.target {
            Target::Instrument(_) => format!("The {target} is in contact with the surrounding tissue."),
            Target::Organ => "No instrument contact is assessed.".to_string(),
        };
        out += &stage_line(StageLabel::ContactAnalysis, &detail);
    }
    out += &stage_line(
        StageLabel::Conclusion,
        &format!("The {target} lies at the {} of the frame.", action.stated.term()),
    );
    out += &format!(
        "<answer>{}</answer>\n<box>{}</box>\n",
        action.answer_text(),
        action.bbox(grid)
    );
    out
}
