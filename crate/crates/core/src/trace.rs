//! Turns free-text rollouts into the pieces the rewards score.
//!
//! Output grammar understood here:
//!
//! ```text
//! Planning: ...
//! Visual analysis: ...
//! Conclusion: ... located at the left-bottom ...
//! <answer>left-bottom</answer>
//! <box>[x1,y1,x2,y2]</box>
//! ```
//!
//! Stage headings are optional. When several markers of one kind appear the
//! last one wins. Parsing never fails; anything that cannot be read is absent.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::{CoTChain, CotStage, StageLabel};
use crate::geometry::{BoundingBox, Quadrant};

static ANSWER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)<answer>(.*?)</answer>").unwrap());
static BOX_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<box>(.*?)</box>").unwrap());
static MARKER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)<answer>.*?</answer>|<box>.*?</box>").unwrap());
static COORDS_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*\[\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\]\s*$").unwrap()
});
static SPATIAL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(?:(left|right)[\s_-]+(top|bottom|upper|lower)|(top|bottom|upper|lower)[\s_-]+(left|right))\b",
    )
    .unwrap()
});
static HEADING_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?im)^[ \t*#]*(planning|principle(?:[ \t_-]*analysis)?|visual[ \t_-]*analysis|comparison|contact[ \t_-]*analysis|conclusion)[ \t*]*:",
    )
    .unwrap()
});

/// Lowercases, trims, collapses internal whitespace and strips trailing
/// sentence punctuation.
pub fn normalize_answer(text: &str) -> String {
    let collapsed = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    collapsed
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?') || c.is_whitespace())
        .to_string()
}

/// Quadrant terms in order of appearance. Accepts either word order, spaces,
/// hyphens or underscores, and `upper`/`lower` for `top`/`bottom`.
pub fn extract_spatial_terms(text: &str) -> Vec<Quadrant> {
    SPATIAL_RE
        .captures_iter(text)
        .filter_map(|c| {
            let (horizontal, vertical) = match (c.get(1), c.get(2)) {
                (Some(h), Some(v)) => (h.as_str(), v.as_str()),
                _ => (c.get(4)?.as_str(), c.get(3)?.as_str()),
            };
            Some(quadrant_from_words(horizontal, vertical))
        })
        .collect()
}

fn quadrant_from_words(horizontal: &str, vertical: &str) -> Quadrant {
    let right = horizontal.eq_ignore_ascii_case("right");
    let bottom = vertical.eq_ignore_ascii_case("bottom") || vertical.eq_ignore_ascii_case("lower");
    match (right, bottom) {
        (false, false) => Quadrant::LeftTop,
        (true, false) => Quadrant::RightTop,
        (false, true) => Quadrant::LeftBottom,
        (true, true) => Quadrant::RightBottom,
    }
}

fn stage_from_heading(heading: &str) -> StageLabel {
    let h = heading.to_ascii_lowercase();
    if h.starts_with("planning") {
        StageLabel::Planning
    } else if h.starts_with("principle") {
        StageLabel::Principle
    } else if h.starts_with("visual") {
        StageLabel::VisualAnalysis
    } else if h.starts_with("comparison") {
        StageLabel::Comparison
    } else if h.starts_with("contact") {
        StageLabel::ContactAnalysis
    } else {
        StageLabel::Conclusion
    }
}

/// A quadrant term found in the reasoning, with the stage it sits in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialMention {
    pub quadrant: Quadrant,
    pub stage: Option<StageLabel>,
}

/// Structured view of one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedTrace {
    /// The rollout with answer and box markers removed.
    pub reasoning_text: String,
    pub stages: Option<CoTChain>,
    /// Normalized final answer.
    pub answer: Option<String>,
    pub bbox: Option<BoundingBox>,
    pub spatial_mentions: Vec<SpatialMention>,
    pub q_inferred: Option<Quadrant>,
}

/// The quadrant a trace commits to: the last mention inside the Conclusion
/// stage when the text is split into stages and has a Conclusion, otherwise
/// the last mention anywhere.
pub fn select_inferred(mentions: &[SpatialMention], stages_delimited: bool) -> Option<Quadrant> {
    let has_conclusion = stages_delimited
        && mentions
            .iter()
            .any(|m| m.stage == Some(StageLabel::Conclusion));
    if has_conclusion {
        mentions
            .iter()
            .rev()
            .find(|m| m.stage == Some(StageLabel::Conclusion))
            .map(|m| m.quadrant)
    } else {
        mentions.last().map(|m| m.quadrant)
    }
}

pub fn parse_trace(text: &str) -> ParsedTrace {
    let answer = ANSWER_RE
        .captures_iter(text)
        .last()
        .map(|c| normalize_answer(&c[1]));
    let bbox = BOX_RE
        .captures_iter(text)
        .last()
        .and_then(|c| parse_coords(&c[1]));
    let reasoning_text = MARKER_RE.replace_all(text, "").trim().to_string();

    let headings: Vec<(usize, usize, StageLabel)> = HEADING_RE
        .captures_iter(&reasoning_text)
        .map(|c| {
            let whole = c.get(0).unwrap();
            (whole.start(), whole.end(), stage_from_heading(&c[1]))
        })
        .collect();
    let stages_delimited = !headings.is_empty();

    let mut stages = Vec::with_capacity(headings.len());
    let mut spatial_mentions = Vec::new();
    if stages_delimited {
        // Text before the first heading belongs to no stage.
        collect_mentions(&reasoning_text[..headings[0].0], None, &mut spatial_mentions);
        for (i, &(_, body_start, label)) in headings.iter().enumerate() {
            let body_end = headings.get(i + 1).map_or(reasoning_text.len(), |h| h.0);
            let body = &reasoning_text[body_start..body_end];
            collect_mentions(body, Some(label), &mut spatial_mentions);
            stages.push(CotStage {
                stage: label,
                text: body.trim().to_string(),
            });
        }
    } else {
        collect_mentions(&reasoning_text, None, &mut spatial_mentions);
    }

    let q_inferred = select_inferred(&spatial_mentions, stages_delimited);
    ParsedTrace {
        reasoning_text,
        stages: stages_delimited.then(|| CoTChain::new(stages)),
        answer,
        bbox,
        spatial_mentions,
        q_inferred,
    }
}

fn collect_mentions(text: &str, stage: Option<StageLabel>, out: &mut Vec<SpatialMention>) {
    out.extend(
        extract_spatial_terms(text)
            .into_iter()
            .map(|quadrant| SpatialMention { quadrant, stage }),
    );
}

fn parse_coords(inner: &str) -> Option<BoundingBox> {
    let c = COORDS_RE.captures(inner)?;
    let n = |i: usize| c[i].parse::<u32>().ok();
    BoundingBox::new(n(1)?, n(2)?, n(3)?, n(4)?)
}
