use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::policy::PolicyParams;
use super::vocab::{self, INSTRUMENTS, ORGANS, STATES};
use crate::dataset::QuestionType;
use crate::geometry::{BoundingBox, ImageDims, Quadrant};
use crate::reward::GroundTruth;
use crate::rng::{self, SplitMix64};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub dims: ImageDims,
    /// Anchors per quadrant side; the grid holds `4 * k * k` boxes.
    pub anchors_per_side: usize,
    /// Anchor size as a fraction of the quadrant size.
    pub anchor_scale: f64,
    /// Maximum edge jitter of reference boxes, as a fraction of anchor size.
    pub jitter: f64,
    /// Minimum gap between any box and its quadrant border, in pixels.
    pub margin: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dims: ImageDims::ENDOVIS,
            anchors_per_side: 4,
            anchor_scale: 0.8,
            jitter: 0.1,
            margin: 4,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        if self.anchors_per_side == 0 {
            return bad("anchors_per_side must be >= 1".into());
        }
        if !(self.anchor_scale > 0.0 && self.anchor_scale <= 1.0) {
            return bad(format!("anchor_scale must lie in (0, 1], got {}", self.anchor_scale));
        }
        if !(self.jitter >= 0.0 && self.jitter < 0.5) {
            return bad(format!("jitter must lie in [0, 0.5), got {}", self.jitter));
        }
        if self.margin < 4 {
            return bad(format!("margin must be >= 4 px, got {}", self.margin));
        }
        for q in Quadrant::ALL {
            let cell = q.cell(self.dims);
            let usable_w = cell.width() as i64 - 2 * self.margin as i64;
            let usable_h = cell.height() as i64 - 2 * self.margin as i64;
            let (aw, ah) = anchor_size(cell, self.anchor_scale);
            if usable_w < aw.max(1) as i64 || usable_h < ah.max(1) as i64 {
                return bad(format!("frame {}x{} is too small for the anchor grid", self.dims.width, self.dims.height));
            }
        }
        Ok(())
    }
}

fn anchor_size(cell: BoundingBox, scale: f64) -> (u32, u32) {
    let w = (cell.width() as f64 * scale).round().max(1.0) as u32;
    let h = (cell.height() as f64 * scale).round().max(1.0) as u32;
    (w, h)
}

/// A `k x k` grid of equal boxes inside every quadrant.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    k: usize,
    boxes: Vec<BoundingBox>,
}

impl AnchorGrid {
    pub fn new(cfg: &EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let k = cfg.anchors_per_side;
        let m = cfg.margin;
        let mut boxes = Vec::with_capacity(4 * k * k);
        let offset = |i: usize, span: u32, size: u32| -> u32 {
            let free = span - 2 * m - size;
            if k == 1 {
                m + free / 2
            } else {
                m + ((free as f64) * i as f64 / (k - 1) as f64).round() as u32
            }
        };
        for q in Quadrant::ALL {
            let cell = q.cell(cfg.dims);
            let (aw, ah) = anchor_size(cell, cfg.anchor_scale);
            let (cw, ch) = (cell.width() as u32, cell.height() as u32);
            for r in 0..k {
                for c in 0..k {
                    let x1 = cell.x1 + offset(c, cw, aw);
                    let y1 = cell.y1 + offset(r, ch, ah);
                    boxes.push(BoundingBox { x1, y1, x2: x1 + aw, y2: y1 + ah });
                }
            }
        }
        Ok(Self { k, boxes })
    }

    pub fn per_side(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn index(&self, q: Quadrant, row: usize, col: usize) -> usize {
        (q.index() * self.k + row) * self.k + col
    }

    /// Inverse of [`AnchorGrid::index`].
    pub fn position(&self, index: usize) -> (Quadrant, usize, usize) {
        let per_q = self.k * self.k;
        let q = Quadrant::from_index(index / per_q).expect("anchor index in range");
        let rest = index % per_q;
        (q, rest / self.k, rest % self.k)
    }

    pub fn anchor(&self, index: usize) -> Option<BoundingBox> {
        self.boxes.get(index).copied()
    }
}

/// A box placed in the scene, remembering the anchor it was drawn around.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub quadrant: Quadrant,
    pub row: usize,
    pub col: usize,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneInstrument {
    /// Index into [`INSTRUMENTS`].
    pub kind: usize,
    /// Index into [`STATES`].
    pub state: usize,
    pub placement: Placement,
}

impl SceneInstrument {
    pub fn name(&self) -> &'static str {
        INSTRUMENTS[self.kind]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub dims: ImageDims,
    pub instruments: Vec<SceneInstrument>,
    /// Index into [`ORGANS`].
    pub organ: usize,
    pub organ_region: Placement,
}

impl SceneSpec {
    pub fn organ_name(&self) -> &'static str {
        ORGANS[self.organ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Organ,
    /// Position in [`SceneSpec::instruments`].
    Instrument(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub text: String,
    pub question_type: QuestionType,
    pub target: Target,
    pub truth: GroundTruth,
}

pub const TOY_QUESTION_TYPES: [QuestionType; 3] = [
    QuestionType::Organ,
    QuestionType::InstrumentLocation,
    QuestionType::InstrumentState,
];

/// Length of the encoding produced by [`features`].
pub fn feature_dim(k: usize) -> usize {
    vocab::ANSWER_CLASSES + 4 + 8 * k
}

fn place(grid: &AnchorGrid, cfg: &EnvConfig, q: Quadrant, rng: &mut SplitMix64) -> Placement {
    let k = grid.per_side();
    let (row, col) = (rng::below(rng, k), rng::below(rng, k));
    let anchor = grid.anchor(grid.index(q, row, col)).expect("anchor in grid");
    let cell = q.cell(cfg.dims);
    let m = cfg.margin as i64;
    let (lo_x, hi_x) = (cell.x1 as i64 + m, cell.x2 as i64 - m);
    let (lo_y, hi_y) = (cell.y1 as i64 + m, cell.y2 as i64 - m);
    let jx = (anchor.width() as f64 * cfg.jitter).floor() as i64;
    let jy = (anchor.height() as f64 * cfg.jitter).floor() as i64;
    let mut jit = |v: u32, j: i64| v as i64 + rng::between(rng, -j, j);
    let x1 = jit(anchor.x1, jx).clamp(lo_x, hi_x - 1);
    let y1 = jit(anchor.y1, jy).clamp(lo_y, hi_y - 1);
    let x2 = jit(anchor.x2, jx).clamp(x1 + 1, hi_x);
    let y2 = jit(anchor.y2, jy).clamp(y1 + 1, hi_y);
    Placement {
        quadrant: q,
        row,
        col,
        bbox: BoundingBox {
            x1: x1 as u32,
            y1: y1 as u32,
            x2: x2 as u32,
            y2: y2 as u32,
        },
    }
}

/// Draws 1 to 3 instruments of distinct kinds in distinct quadrants, plus the
/// organ region.
pub fn sample_scene(cfg: &EnvConfig, grid: &AnchorGrid, rng: &mut SplitMix64) -> SceneSpec {
    let count = 1 + rng::below(rng, 3);
    let mut quadrants = Quadrant::ALL;
    rng::shuffle(rng, &mut quadrants);
    let mut kinds: Vec<usize> = (0..INSTRUMENTS.len()).collect();
    rng::shuffle(rng, &mut kinds);
    let instruments = (0..count)
        .map(|i| {
            let state = rng::below(rng, STATES.len());
            SceneInstrument {
                kind: kinds[i],
                state,
                placement: place(grid, cfg, quadrants[i], rng),
            }
        })
        .collect();
    let organ = rng::below(rng, ORGANS.len());
    let organ_q = Quadrant::ALL[rng::below(rng, 4)];
    SceneSpec {
        dims: cfg.dims,
        instruments,
        organ,
        organ_region: place(grid, cfg, organ_q, rng),
    }
}

/// Asks about the organ or about one instrument present in the scene.
pub fn render_question(scene: &SceneSpec, rng: &mut SplitMix64) -> Question {
    let question_type = TOY_QUESTION_TYPES[rng::below(rng, TOY_QUESTION_TYPES.len())];
    if question_type == QuestionType::Organ {
        return Question {
            text: "What organ is being operated?".into(),
            question_type,
            target: Target::Organ,
            truth: GroundTruth {
                answer: scene.organ_name().into(),
                bbox: Some(scene.organ_region.bbox),
                question_type,
            },
        };
    }
    let i = rng::below(rng, scene.instruments.len());
    let inst = &scene.instruments[i];
    let (text, answer) = if question_type == QuestionType::InstrumentLocation {
        (
            format!("Where is the {} located?", inst.name()),
            inst.placement.quadrant.term(),
        )
    } else {
        (
            format!("What is the state of the {}?", inst.name()),
            STATES[inst.state],
        )
    };
    Question {
        text,
        question_type,
        target: Target::Instrument(i),
        truth: GroundTruth {
            answer: answer.into(),
            bbox: Some(inst.placement.bbox),
            question_type,
        },
    }
}

pub fn target_placement(scene: &SceneSpec, target: Target) -> Placement {
    match target {
        Target::Organ => scene.organ_region,
        Target::Instrument(i) => scene.instruments[i].placement,
    }
}

pub fn target_name(scene: &SceneSpec, target: Target) -> &'static str {
    match target {
        Target::Organ => scene.organ_name(),
        Target::Instrument(i) => scene.instruments[i].name(),
    }
}

/// One-hot encoding of the question and its target: the question type
/// crossed with the attribute it asks about (organ, quadrant or state), then
/// the target's quadrant, quadrant crossed with anchor row, and quadrant
/// crossed with anchor column.
pub fn features(scene: &SceneSpec, question: &Question, k: usize) -> Vec<f64> {
    let mut f = vec![0.0; feature_dim(k)];
    let p = target_placement(scene, question.target);
    let asked = match (question.question_type, question.target) {
        (QuestionType::InstrumentState, Target::Instrument(i)) => {
            vocab::state_answer(scene.instruments[i].state)
        }
        (QuestionType::InstrumentLocation, _) => vocab::quadrant_answer(p.quadrant),
        _ => vocab::organ_answer(scene.organ),
    };
    f[asked] = 1.0;
    let mut at = vocab::ANSWER_CLASSES;
    let q = p.quadrant.index();
    f[at + q] = 1.0;
    at += 4;
    f[at + q * k + p.row] = 1.0;
    at += 4 * k;
    f[at + q * k + p.col] = 1.0;
    f
}

/// Zero-initialised toy policy with heads answer, stated quadrant and anchor.
/// The answer head reads the asked attribute, the stated-quadrant head the
/// target's quadrant, and the anchor head its quadrant, row and column.
pub fn initial_policy(grid: &AnchorGrid) -> PolicyParams {
    let d = feature_dim(grid.per_side());
    let quadrant = vocab::ANSWER_CLASSES..vocab::ANSWER_CLASSES + 4;
    PolicyParams::zeros_with_inputs(
        vec![vocab::ANSWER_CLASSES, 4, grid.len()],
        d,
        vec![0..vocab::ANSWER_CLASSES, quadrant.clone(), quadrant.start..d],
    )
}
