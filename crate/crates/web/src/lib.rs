//! Browser bindings for three interactive views: scoring a reasoning trace,
//! inspecting one optimisation group, and training the toy policy.
//!
//! Each operation has a plain Rust form returning JSON, used by native tests,
//! and a thin `wasm_bindgen` export for the page.

use serde::Serialize;
use serde_json::json;
use thiserror::Error;
use wasm_bindgen::prelude::*;

use surgvqla_core::env::{run_rft, EnvConfig, TrainError};
use surgvqla_core::grpo::{
    group_advantages, grpo_objective_with, kl_estimate, GrpoConfig, GrpoError, ObjectiveMode,
    RolloutGroup,
};
use surgvqla_core::reward::{composite_reward, GroundTruth, RewardConfig, RewardError};
use surgvqla_core::trace::parse_trace;
use surgvqla_core::ImageDims;

/// Longest toy run the page may request.
pub const MAX_ITERATIONS: usize = 5_000;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("bad input: {0}")]
    Input(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Parses a trace and scores it against `truth_json`, a reference of the form
/// `{"answer", "bbox", "question_type"}`.
pub fn score_trace(
    trace: &str,
    truth_json: &str,
    reward: RewardConfig,
    width: u32,
    height: u32,
) -> Result<String, DemoError> {
    let truth: GroundTruth = serde_json::from_str(truth_json)?;
    let dims = ImageDims::new(width, height).ok_or(DemoError::Input("empty frame".into()))?;
    reward.validate()?;
    let parsed = parse_trace(trace);
    let breakdown = composite_reward(&parsed, &truth, &reward, dims);
    Ok(json!({
        "answer": parsed.answer,
        "bbox": parsed.bbox,
        "stated_quadrant": parsed.q_inferred,
        "stages": parsed.stages.map(|c| c.labels().map(|l| l.to_string()).collect::<Vec<_>>()),
        "reward": breakdown,
        "max_composite": breakdown.max_composite(&reward),
    })
    .to_string())
}

#[derive(Serialize)]
struct SampleTerm {
    advantage: f64,
    ratio: f64,
    surrogate: f64,
    kl: f64,
}

/// Breaks one group's objective into per-sample terms. `log_ratios[i]` is
/// `log pi_theta - log pi_old` and `ref_log_ratios[i]` is
/// `log pi_ref - log pi_theta` for sample `i`.
pub fn group_terms(
    rewards: &[f64],
    log_ratios: &[f64],
    ref_log_ratios: &[f64],
    beta: f64,
    epsilon: f64,
    clipped: bool,
) -> Result<String, DemoError> {
    if rewards.len() != log_ratios.len() || rewards.len() != ref_log_ratios.len() {
        return Err(DemoError::Input("rewards and ratios differ in length".into()));
    }
    let cfg = GrpoConfig {
        beta,
        epsilon,
        objective_mode: if clipped { ObjectiveMode::Clipped } else { ObjectiveMode::AsWritten },
        group_size: rewards.len(),
        ..GrpoConfig::default()
    };
    cfg.validate()?;
    let group = RolloutGroup {
        logp_theta: vec![0.0; rewards.len()],
        logp_old: log_ratios.iter().map(|r| -r).collect(),
        logp_ref: ref_log_ratios.to_vec(),
        rewards: rewards.to_vec(),
    };
    let adv = group_advantages(rewards)?;
    let objective = grpo_objective_with(&group, &adv.values, &cfg)?;
    // With every advantage zeroed only the penalty remains; restoring one
    // advantage isolates that sample's surrogate.
    let n = rewards.len();
    let penalty_only = grpo_objective_with(&group, &vec![0.0; n], &cfg)?;
    let terms = (0..n)
        .map(|i| {
            let mut masked = vec![0.0; n];
            masked[i] = adv.values[i];
            let with_i = grpo_objective_with(&group, &masked, &cfg)?;
            Ok(SampleTerm {
                advantage: adv.values[i],
                ratio: log_ratios[i].exp(),
                surrogate: (with_i - penalty_only) * n as f64,
                kl: kl_estimate(0.0, group.logp_ref[i])?,
            })
        })
        .collect::<Result<Vec<_>, GrpoError>>()?;
    Ok(json!({ "mean": adv.mean, "std": adv.std, "objective": objective, "terms": terms }).to_string())
}

fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for (i, x) in xs.iter().enumerate() {
        sum += x;
        if i >= w {
            sum -= xs[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Trains the toy policy and returns smoothed reward and mismatch curves.
pub fn train_curve(
    seed: u64,
    iterations: usize,
    learning_rate: f64,
    w_mc: f64,
    window: usize,
) -> Result<String, DemoError> {
    if iterations == 0 || iterations > MAX_ITERATIONS {
        return Err(DemoError::Input(format!("iterations must lie in 1..={MAX_ITERATIONS}")));
    }
    let grpo = GrpoConfig { seed, iterations, learning_rate, ..GrpoConfig::default() };
    let reward = RewardConfig { w_mc, ..RewardConfig::default() };
    let report = run_rft(&EnvConfig::default(), &grpo, &reward)?;
    let rewards: Vec<f64> = report.iterations.iter().map(|r| r.mean_reward).collect();
    let mismatch: Vec<f64> = report.iterations.iter().map(|r| r.mismatch_rate).collect();
    Ok(json!({
        "max_composite": report.max_composite,
        "mean_reward": smooth(&rewards, window),
        "mismatch_rate": smooth(&mismatch, window),
        "final_mean_reward": report.final_mean_reward(window),
        "final_mismatch_rate": report.final_mismatch_rate(window),
    })
    .to_string())
}

#[wasm_bindgen(js_name = scoreTrace)]
#[allow(clippy::too_many_arguments)]
pub fn score_trace_js(
    trace: &str,
    truth_json: &str,
    tau: f64,
    w_vg: f64,
    w_la: f64,
    w_mc: f64,
    width: u32,
    height: u32,
) -> Result<String, JsError> {
    let reward = RewardConfig { tau, w_vg, w_la, w_mc };
    Ok(score_trace(trace, truth_json, reward, width, height)?)
}

#[wasm_bindgen(js_name = groupTerms)]
pub fn group_terms_js(
    rewards: &[f64],
    log_ratios: &[f64],
    ref_log_ratios: &[f64],
    beta: f64,
    epsilon: f64,
    clipped: bool,
) -> Result<String, JsError> {
    Ok(group_terms(rewards, log_ratios, ref_log_ratios, beta, epsilon, clipped)?)
}

#[wasm_bindgen(js_name = trainCurve)]
pub fn train_curve_js(
    seed: u64,
    iterations: usize,
    learning_rate: f64,
    w_mc: f64,
    window: usize,
) -> Result<String, JsError> {
    Ok(train_curve(seed, iterations, learning_rate, w_mc, window)?)
}
