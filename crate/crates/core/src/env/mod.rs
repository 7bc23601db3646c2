//! Synthetic surgical scenes and a small linear policy, used to run the whole
//! reinforcement loop at desk scale.

mod emit;
pub mod policy;
mod scene;
mod train;
pub mod vocab;

pub use emit::{emit_trace, RolloutAction};
pub use policy::{policy_sample, PolicyError, PolicyParams, SampledAction};
pub use scene::{
    feature_dim, features, initial_policy, render_question, sample_scene, target_name,
    target_placement, AnchorGrid, EnvConfig, EnvError, Placement, Question, SceneInstrument,
    SceneSpec, Target, TOY_QUESTION_TYPES,
};
pub use train::{run_rft, IterationStats, TrainError, TrainingReport};
