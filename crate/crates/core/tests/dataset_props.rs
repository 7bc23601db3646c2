use proptest::prelude::*;
use surgvqla_core::dataset::{
    sft_cot_count, split_dataset, validate_record, CoTChain, CotStage, DatasetRecord,
    QuestionType, RecordKind, StageLabel,
};
use surgvqla_core::{BoundingBox, ImageDims};

fn arb_box() -> impl Strategy<Value = BoundingBox> {
    (0u32..1200, 0u32..1000, 1u32..80, 1u32..24)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
}

fn arb_record() -> impl Strategy<Value = DatasetRecord> {
    (0usize..3, 0usize..4, "[a-z]{1,8}( [a-z]{1,8}){0,3}", arb_box(), 0usize..5)
        .prop_map(|(kind, seq, answer, bbox, frame)| {
            let image_id = format!("seq_{seq}/frame{frame:03}");
            let (kind, question_type, bbox, cot) = match kind {
                0 => {
                    let qt = QuestionType::InstrumentState;
                    let stages = StageLabel::required_for(qt)
                        .into_iter()
                        .map(|stage| CotStage { stage, text: format!("{stage} text") })
                        .collect();
                    (RecordKind::CoT, qt, Some(bbox), Some(CoTChain::new(stages)))
                }
                1 => (RecordKind::VisualQA, QuestionType::VisualSub, None, None),
                _ => (RecordKind::GroundingQA, QuestionType::GroundingSub, Some(bbox), None),
            };
            DatasetRecord {
                id: format!("{image_id}#{kind}#0"),
                kind,
                image_id,
                question: "What is shown?".into(),
                question_type,
                answer,
                bbox,
                cot,
            }
        })
}

fn arb_dataset() -> impl Strategy<Value = Vec<DatasetRecord>> {
    prop::collection::vec(arb_record(), 1..60).prop_map(|mut rs| {
        for (i, r) in rs.iter_mut().enumerate() {
            r.id = format!("{}#{}#{i}", r.image_id, r.kind);
        }
        rs
    })
}

proptest! {
    #[test]
    fn records_survive_serialisation(r in arb_record()) {
        let v = serde_json::to_value(&r).unwrap();
        prop_assert_eq!(validate_record(&v, ImageDims::ENDOVIS).unwrap(), r);
    }

    #[test]
    fn split_is_a_partition(rs in arb_dataset(), seed in any::<u64>(), frac in 0.05f64..0.95) {
        let split = split_dataset(&rs, frac, seed).unwrap();
        prop_assert_eq!(split.sft.len() + split.rft.len(), rs.len());
        prop_assert!(split.rft.iter().all(|r| r.kind == RecordKind::CoT));
        let n_cot = rs.iter().filter(|r| r.kind == RecordKind::CoT).count();
        prop_assert_eq!(split.rft.len(), n_cot - sft_cot_count(n_cot, frac));
        let mut ids: Vec<_> = split.sft.iter().chain(&split.rft).map(|r| r.id.clone()).collect();
        ids.sort();
        let mut want: Vec<_> = rs.iter().map(|r| r.id.clone()).collect();
        want.sort();
        prop_assert_eq!(ids, want);
        prop_assert_eq!(split_dataset(&rs, frac, seed).unwrap(), split);
    }
}
