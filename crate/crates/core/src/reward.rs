//! Rule-based rewards for localized answers.
//!
//! * visual grounding: the IoU with the reference box, zeroed below `tau`
//! * linguistic answer: exact match of normalized answers
//! * multimodal coherence: the predicted box center falls in the quadrant the
//!   reasoning claims
//!
//! The composite is a weighted sum over the components that apply to the
//! question. Missing prediction pieces score zero instead of erroring.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetRecord, QuestionType};
use crate::geometry::{BoundingBox, ImageDims, Quadrant};
use crate::trace::{normalize_answer, ParsedTrace};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("degenerate box {0}: needs x1 < x2 and y1 < y2")]
    DegenerateBox(BoundingBox),
    #[error("point ({x}, {y}) is outside the {width}x{height} frame")]
    OutOfFrame {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("invalid reward config: {0}")]
    Config(String),
}

/// Intersection over union on half-open pixel regions.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64, RewardError> {
    for bx in [a, b] {
        if !bx.is_valid() {
            return Err(RewardError::DegenerateBox(*bx));
        }
    }
    let iw = u64::from(a.x2.min(b.x2).saturating_sub(a.x1.max(b.x1)));
    let ih = u64::from(a.y2.min(b.y2).saturating_sub(a.y1.max(b.y1)));
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Ok(inter as f64 / union as f64)
}

/// IoU when it reaches `tau`, zero otherwise. No prediction scores zero.
pub fn vg_reward(
    truth: &BoundingBox,
    pred: Option<&BoundingBox>,
    tau: f64,
) -> Result<f64, RewardError> {
    let Some(pred) = pred else {
        return Ok(0.0);
    };
    let overlap = iou(truth, pred)?;
    Ok(if overlap >= tau { overlap } else { 0.0 })
}

/// 1 when the normalized answers are equal. A missing prediction scores 0.
pub fn la_reward(truth: &str, pred: Option<&str>) -> f64 {
    match pred {
        Some(p) if normalize_answer(truth) == normalize_answer(p) => 1.0,
        _ => 0.0,
    }
}

/// Quadrant of a point, splitting at `W/2` and `H/2` with the right and bottom
/// halves closed on their left/top edge.
pub fn quadrant_of(center: (f64, f64), dims: ImageDims) -> Result<Quadrant, RewardError> {
    let (x, y) = center;
    let (w, h) = (f64::from(dims.width), f64::from(dims.height));
    if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
        return Err(RewardError::OutOfFrame {
            x,
            y,
            width: dims.width,
            height: dims.height,
        });
    }
    let right = x >= w / 2.0;
    let bottom = y >= h / 2.0;
    Ok(match (right, bottom) {
        (false, false) => Quadrant::LeftTop,
        (true, false) => Quadrant::RightTop,
        (false, true) => Quadrant::LeftBottom,
        (true, true) => Quadrant::RightBottom,
    })
}

/// 1 when the predicted box center lies in the claimed quadrant.
pub fn mc_reward(pred: Option<&BoundingBox>, claimed: Option<Quadrant>, dims: ImageDims) -> f64 {
    match (pred, claimed) {
        (Some(b), Some(q)) if quadrant_of(b.center(), dims).is_ok_and(|actual| actual == q) => 1.0,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// IoU acceptance threshold for the grounding reward.
    pub tau: f64,
    pub w_vg: f64,
    pub w_la: f64,
    pub w_mc: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            w_vg: 1.0,
            w_la: 1.0,
            w_mc: 1.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(RewardError::Config(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        let weights = [("w_vg", self.w_vg), ("w_la", self.w_la), ("w_mc", self.w_mc)];
        if let Some((name, w)) = weights.iter().find(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err(RewardError::Config(format!(
                "{name} must be a finite non-negative weight, got {w}"
            )));
        }
        if weights.iter().all(|(_, w)| *w == 0.0) {
            return Err(RewardError::Config("at least one weight must be positive".into()));
        }
        Ok(())
    }
}

/// The parts of a reference record the rewards look at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub answer: String,
    pub bbox: Option<BoundingBox>,
    pub question_type: QuestionType,
}

impl From<&DatasetRecord> for GroundTruth {
    fn from(r: &DatasetRecord) -> Self {
        Self {
            answer: r.answer.clone(),
            bbox: r.bbox,
            question_type: r.question_type,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_vg: f64,
    pub r_la: f64,
    pub r_mc: f64,
    pub composite: f64,
    pub vg_applies: bool,
    pub la_applies: bool,
    pub mc_applies: bool,
}

impl RewardBreakdown {
    /// Largest composite reachable under `cfg` for this applicability pattern.
    pub fn max_composite(&self, cfg: &RewardConfig) -> f64 {
        let mut max = 0.0;
        if self.vg_applies {
            max += cfg.w_vg;
        }
        if self.la_applies {
            max += cfg.w_la;
        }
        if self.mc_applies {
            max += cfg.w_mc;
        }
        max
    }
}

/// Scores one parsed rollout.
///
/// Grounding applies when the reference has a box; coherence applies to
/// location questions and whenever the reference has a box; the answer reward
/// always applies. Components that do not apply are reported as 0.
pub fn composite_reward(
    trace: &ParsedTrace,
    truth: &GroundTruth,
    cfg: &RewardConfig,
    dims: ImageDims,
) -> RewardBreakdown {
    let vg_applies = truth.bbox.is_some();
    let mc_applies = truth.question_type == QuestionType::InstrumentLocation || truth.bbox.is_some();

    let r_vg = truth
        .bbox
        .map(|b| vg_reward(&b, trace.bbox.as_ref(), cfg.tau).unwrap_or(0.0))
        .unwrap_or(0.0);
    let r_la = la_reward(&truth.answer, trace.answer.as_deref());
    let r_mc = if mc_applies {
        mc_reward(trace.bbox.as_ref(), trace.q_inferred, dims)
    } else {
        0.0
    };

    let mut composite = cfg.w_la * r_la;
    if vg_applies {
        composite += cfg.w_vg * r_vg;
    }
    if mc_applies {
        composite += cfg.w_mc * r_mc;
    }
    RewardBreakdown {
        r_vg,
        r_la,
        r_mc,
        composite,
        vg_applies,
        la_applies: true,
        mc_applies,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse_trace;
    use proptest::prelude::*;

    fn bx(x1: u32, y1: u32, x2: u32, y2: u32) -> BoundingBox {
        BoundingBox { x1, y1, x2, y2 }
    }

    /// Counts unit cells of the union's bounding region covered by each box.
    fn raster_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let (mut inter, mut union) = (0u64, 0u64);
        for x in a.x1.min(b.x1)..a.x2.max(b.x2) {
            for y in a.y1.min(b.y1)..a.y2.max(b.y2) {
                let in_a = (a.x1..a.x2).contains(&x) && (a.y1..a.y2).contains(&y);
                let in_b = (b.x1..b.x2).contains(&x) && (b.y1..b.y2).contains(&y);
                inter += u64::from(in_a && in_b);
                union += u64::from(in_a || in_b);
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = bx(0, 0, 10, 10);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &bx(20, 20, 30, 30)).unwrap(), 0.0);
        let half = iou(&a, &bx(5, 0, 15, 10)).unwrap();
        assert!((half - raster_iou(&a, &bx(5, 0, 15, 10))).abs() < 1e-12);
        assert!((half - 0.333_333).abs() < 1e-6);
        // Touching edges share no cell.
        assert_eq!(iou(&a, &bx(10, 0, 20, 10)).unwrap(), 0.0);
    }

    #[test]
    fn iou_rejects_degenerate() {
        assert_eq!(
            iou(&bx(5, 5, 5, 9), &bx(0, 0, 10, 10)),
            Err(RewardError::DegenerateBox(bx(5, 5, 5, 9)))
        );
    }

    #[test]
    fn vg_piecewise() {
        let truth = bx(0, 0, 10, 10);
        // IoU 0.8: [0,0,10,8] inside truth.
        let p = bx(0, 0, 10, 8);
        assert!((vg_reward(&truth, Some(&p), 0.5).unwrap() - 0.8).abs() < 1e-12);
        // IoU 0.4
        let p = bx(0, 0, 10, 4);
        assert_eq!(vg_reward(&truth, Some(&p), 0.5).unwrap(), 0.0);
        // IoU exactly 0.5 at tau 0.5 is kept.
        let p = bx(0, 0, 10, 5);
        assert_eq!(vg_reward(&truth, Some(&p), 0.5).unwrap(), 0.5);
        assert_eq!(vg_reward(&truth, None, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn la_examples() {
        assert_eq!(la_reward("kidney", Some("kidney")), 1.0);
        assert_eq!(la_reward("cutting", Some("cauterization")), 0.0);
        assert_eq!(la_reward("left-top", Some("Left-Top ")), 1.0);
        assert_eq!(la_reward("kidney", Some("")), 0.0);
        assert_eq!(la_reward("kidney", None), 0.0);
    }

    #[test]
    fn quadrant_examples() {
        let d = ImageDims::ENDOVIS;
        assert_eq!(quadrant_of((100.0, 100.0), d).unwrap(), Quadrant::LeftTop);
        assert_eq!(quadrant_of((640.0, 512.0), d).unwrap(), Quadrant::RightBottom);
        assert_eq!(quadrant_of((1200.0, 100.0), d).unwrap(), Quadrant::RightTop);
        assert_eq!(quadrant_of((639.5, 512.0), d).unwrap(), Quadrant::LeftBottom);
        assert!(matches!(
            quadrant_of((1281.0, 5.0), d),
            Err(RewardError::OutOfFrame { .. })
        ));
    }

    #[test]
    fn mc_examples() {
        let d = ImageDims::ENDOVIS;
        let lt = bx(100, 100, 200, 200);
        assert_eq!(mc_reward(Some(&lt), Some(Quadrant::LeftTop), d), 1.0);
        assert_eq!(mc_reward(Some(&lt), Some(Quadrant::RightBottom), d), 0.0);
        assert_eq!(mc_reward(Some(&lt), None, d), 0.0);
        assert_eq!(mc_reward(None, Some(Quadrant::LeftTop), d), 0.0);
        // A box whose center leaves the frame cannot cohere.
        assert_eq!(mc_reward(Some(&bx(2000, 0, 2100, 10)), Some(Quadrant::RightTop), d), 0.0);
    }

    fn location_truth(b: BoundingBox) -> GroundTruth {
        GroundTruth {
            answer: "left-top".into(),
            bbox: Some(b),
            question_type: QuestionType::InstrumentLocation,
        }
    }

    #[test]
    fn composite_examples() {
        let cfg = RewardConfig::default();
        let d = ImageDims::ENDOVIS;
        let truth = location_truth(bx(100, 100, 300, 300));

        let perfect = parse_trace(
            "Conclusion: it is at the left-top.\n<answer>left-top</answer><box>[100,100,300,300]</box>",
        );
        let r = composite_reward(&perfect, &truth, &cfg, d);
        assert_eq!(r.composite, 3.0);
        assert_eq!(r.max_composite(&cfg), 3.0);

        let no_box = parse_trace("Conclusion: it is at the left-top.\n<answer>left-top</answer>");
        assert_eq!(composite_reward(&no_box, &truth, &cfg, d).composite, 1.0);

        // IoU 0.6: a 200x120 box inside the 200x200 truth; claimed quadrant wrong.
        let partial = parse_trace(
            "Conclusion: it is at the right-bottom.\n<answer>left-top</answer><box>[100,100,300,220]</box>",
        );
        let r = composite_reward(&partial, &truth, &cfg, d);
        assert!((r.r_vg - 0.6).abs() < 1e-12);
        assert_eq!(r.r_mc, 0.0);
        assert!((r.composite - 1.6).abs() < 1e-12);
    }

    #[test]
    fn applicability_follows_truth() {
        let cfg = RewardConfig::default();
        let d = ImageDims::ENDOVIS;
        let trace = parse_trace("<answer>cutting</answer><box>[0,0,10,10]</box> top left");
        let state = GroundTruth {
            answer: "cutting".into(),
            bbox: None,
            question_type: QuestionType::InstrumentState,
        };
        let r = composite_reward(&trace, &state, &cfg, d);
        assert!(!r.vg_applies && !r.mc_applies && r.la_applies);
        assert_eq!((r.r_mc, r.composite), (0.0, 1.0));

        let location = GroundTruth {
            bbox: None,
            ..location_truth(bx(0, 0, 1, 1))
        };
        let r = composite_reward(&trace, &location, &cfg, d);
        assert!(r.mc_applies && !r.vg_applies);
        assert_eq!(r.r_mc, 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(RewardConfig::default().validate().is_ok());
        for bad in [
            RewardConfig { tau: 0.0, ..Default::default() },
            RewardConfig { tau: 1.0, ..Default::default() },
            RewardConfig { w_vg: -1.0, ..Default::default() },
            RewardConfig { w_vg: 0.0, w_la: 0.0, w_mc: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    fn arb_box(max: u32) -> impl Strategy<Value = BoundingBox> {
        (0..max, 0..max, 1..max, 1..max).prop_map(move |(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_properties(a in arb_box(60), b in arb_box(60), dx in 0u32..500, dy in 0u32..500) {
            let ab = iou(&a, &b).unwrap();
            prop_assert_eq!(ab, iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - raster_iou(&a, &b)).abs() < 1e-9);
            let shift = |r: BoundingBox| bx(r.x1 + dx, r.y1 + dy, r.x2 + dx, r.y2 + dy);
            prop_assert_eq!(ab, iou(&shift(a), &shift(b)).unwrap());
        }

        #[test]
        fn vg_is_monotone_in_overlap(h1 in 1u32..=100, h2 in 1u32..=100, tau in 0.05f64..0.95) {
            // Sub-boxes of a 100x100 truth: IoU = h / 100.
            let truth = bx(0, 0, 100, 100);
            let (lo, hi) = (h1.min(h2), h1.max(h2));
            let r_lo = vg_reward(&truth, Some(&bx(0, 0, 100, lo)), tau).unwrap();
            let r_hi = vg_reward(&truth, Some(&bx(0, 0, 100, hi)), tau).unwrap();
            prop_assert!(r_lo <= r_hi);
        }

        #[test]
        fn composite_is_linear_in_weights(
            w_vg in 0.0f64..3.0, w_la in 0.0f64..3.0, w_mc in 0.0f64..3.0, h in 1u32..=200
        ) {
            let d = ImageDims::ENDOVIS;
            let cfg = RewardConfig { tau: 0.5, w_vg, w_la, w_mc };
            let truth = location_truth(bx(100, 100, 300, 300));
            let trace = parse_trace(&format!(
                "Conclusion: left-top\n<answer>left-top</answer><box>[100,100,300,{}]</box>", 100 + h
            ));
            let r = composite_reward(&trace, &truth, &cfg, d);
            let expected = w_vg * r.r_vg + w_la * r.r_la + w_mc * r.r_mc;
            prop_assert!((r.composite - expected).abs() < 1e-12);
            prop_assert!(r.composite <= r.max_composite(&cfg) + 1e-12);
        }
    }
}
