use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::record::{DatasetRecord, RecordKind};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SplitError {
    #[error("cannot split an empty dataset")]
    EmptyDataset,
    #[error("sft fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
}

/// What the shuffle treats as an indivisible unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    /// Every CoT record is drawn independently.
    #[default]
    Record,
    /// CoT records sharing a video sequence (the `image_id` segment before the
    /// first `/`) stay on the same side.
    Sequence,
}

impl std::str::FromStr for SplitUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "record" => Ok(SplitUnit::Record),
            "sequence" => Ok(SplitUnit::Sequence),
            other => Err(format!("unknown split unit `{other}` (record|sequence)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub sft: Vec<DatasetRecord>,
    pub rft: Vec<DatasetRecord>,
}

/// Number of CoT records kept for SFT: `fraction * n_cot`, rounded half-up.
pub fn sft_cot_count(n_cot: usize, sft_fraction: f64) -> usize {
    // The small slack keeps decimal halves (0.15 * 10) from rounding down.
    ((sft_fraction * n_cot as f64) + 0.5 + 1e-9).floor() as usize
}

/// Partitions records into SFT and RFT sets.
///
/// Non-CoT records always go to SFT. CoT records are shuffled with a
/// SplitMix64 stream seeded by `seed`; the first `round(fraction * n_cot)`
/// go to SFT and the rest to RFT. Both outputs keep input order.
pub fn split_dataset(
    records: &[DatasetRecord],
    sft_fraction: f64,
    seed: u64,
) -> Result<Split, SplitError> {
    split_dataset_by(records, sft_fraction, seed, SplitUnit::Record)
}

pub fn split_dataset_by(
    records: &[DatasetRecord],
    sft_fraction: f64,
    seed: u64,
    unit: SplitUnit,
) -> Result<Split, SplitError> {
    if records.is_empty() {
        return Err(SplitError::EmptyDataset);
    }
    if !(sft_fraction > 0.0 && sft_fraction < 1.0) {
        return Err(SplitError::BadFraction(sft_fraction));
    }
    let cot_idx: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.kind == RecordKind::CoT)
        .map(|(i, _)| i)
        .collect();
    let target = sft_cot_count(cot_idx.len(), sft_fraction);
    let mut to_rft = vec![false; records.len()];
    let mut rng = rng::seeded(seed);

    match unit {
        SplitUnit::Record => {
            let mut order = cot_idx;
            rng::shuffle(&mut rng, &mut order);
            for &i in &order[target..] {
                to_rft[i] = true;
            }
        }
        SplitUnit::Sequence => {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for &i in &cot_idx {
                groups.entry(sequence_key(&records[i].image_id)).or_default().push(i);
            }
            let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
            rng::shuffle(&mut rng, &mut groups);
            // Greedy fill: a sequence joins SFT only if it fits under the target.
            let mut kept = 0;
            for g in groups {
                if kept + g.len() <= target {
                    kept += g.len();
                } else {
                    for i in g {
                        to_rft[i] = true;
                    }
                }
            }
        }
    }

    let mut split = Split::default();
    for (r, rft) in records.iter().zip(to_rft) {
        if rft {
            split.rft.push(r.clone());
        } else {
            split.sft.push(r.clone());
        }
    }
    Ok(split)
}

fn sequence_key(image_id: &str) -> &str {
    image_id.split('/').next().unwrap_or(image_id)
}
