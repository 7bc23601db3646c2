//! Answer classes of the toy environment, modelled on the EndoVis-18 VQLA
//! label set: one organ, thirteen instrument states and four locations.
//!
//! The lists are versioned; bump [`VOCAB_VERSION`] whenever an entry changes,
//! since trained parameters index into them.

use crate::geometry::Quadrant;

pub const VOCAB_VERSION: &str = "endovis18-vqla/v1";

pub const INSTRUMENTS: [&str; 7] = [
    "bipolar-forceps",
    "prograsp-forceps",
    "large-needle-driver",
    "monopolar-curved-scissors",
    "ultrasound-probe",
    "suction-instrument",
    "clip-applier",
];

pub const STATES: [&str; 13] = [
    "idle",
    "grasping",
    "retraction",
    "tissue-manipulation",
    "tool-manipulation",
    "cutting",
    "cauterization",
    "suction",
    "looping",
    "suturing",
    "clipping",
    "staple",
    "ultrasound-sensing",
];

pub const ORGANS: [&str; 1] = ["kidney"];

/// Size of the answer head: organs, then states, then quadrant terms.
pub const ANSWER_CLASSES: usize = ORGANS.len() + STATES.len() + Quadrant::ALL.len();

pub fn answer_text(index: usize) -> Option<&'static str> {
    if index < ORGANS.len() {
        return Some(ORGANS[index]);
    }
    let index = index - ORGANS.len();
    if index < STATES.len() {
        return Some(STATES[index]);
    }
    Quadrant::from_index(index - STATES.len()).map(Quadrant::term)
}

pub fn organ_answer(organ: usize) -> usize {
    organ
}

pub fn state_answer(state: usize) -> usize {
    ORGANS.len() + state
}

pub fn quadrant_answer(q: Quadrant) -> usize {
    ORGANS.len() + STATES.len() + q.index()
}

pub fn answer_index(text: &str) -> Option<usize> {
    (0..ANSWER_CLASSES).find(|&i| answer_text(i) == Some(text))
}
