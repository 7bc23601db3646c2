use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::emit::{emit_trace, RolloutAction};
use super::policy::{policy_sample, PolicyError, PolicyParams};
use super::scene::{
    features, initial_policy, render_question, sample_scene, AnchorGrid, EnvConfig, EnvError,
};
use crate::grpo::{
    group_advantages, grpo_gradient_with, kl_estimate, update_step, GrpoConfig, GrpoError,
    RolloutGroup,
};
use crate::reward::{composite_reward, quadrant_of, RewardConfig, RewardError};
use crate::rng;
use crate::trace::parse_trace;

const SCENE_STREAM: u64 = 1;
const ROLLOUT_STREAM: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Per-iteration summary; one JSONL line each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iter: usize,
    pub mean_reward: f64,
    pub mean_vg: f64,
    pub mean_la: f64,
    pub mean_mc: f64,
    /// Fraction of rollouts whose stated quadrant differs from their box's.
    pub mismatch_rate: f64,
    /// Group mean of the KL estimate to the reference policy.
    pub kl_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub iterations: Vec<IterationStats>,
    /// Largest composite any rollout could earn.
    pub max_composite: f64,
    pub initial_params: PolicyParams,
    pub final_params: PolicyParams,
}

fn window<'a>(
    rows: &'a [IterationStats],
    n: usize,
) -> impl Iterator<Item = &'a IterationStats> + 'a {
    rows[rows.len().saturating_sub(n)..].iter()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl TrainingReport {
    pub fn final_mean_reward(&self, n: usize) -> f64 {
        mean(window(&self.iterations, n).map(|r| r.mean_reward))
    }

    pub fn final_mismatch_rate(&self, n: usize) -> f64 {
        mean(window(&self.iterations, n).map(|r| r.mismatch_rate))
    }

    /// Euclidean distance of the final parameters from the initial ones.
    pub fn param_drift(&self) -> f64 {
        self.final_params
            .weights
            .iter()
            .zip(&self.initial_params.weights)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for row in &self.iterations {
            serde_json::to_writer(&mut out, row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

/// Runs the sample, emit, parse, score and update loop from zero weights, with
/// the starting policy as the KL reference.
pub fn run_rft(
    env: &EnvConfig,
    grpo: &GrpoConfig,
    reward: &RewardConfig,
) -> Result<TrainingReport, TrainError> {
    let grid = AnchorGrid::new(env)?;
    grpo.validate()?;
    reward.validate()?;
    let k = grid.per_side();
    let initial = initial_policy(&grid);
    let reference = initial.clone();
    let mut params = initial.clone();
    let t = grpo.temperature;
    let g = grpo.group_size;
    let mut rows = Vec::with_capacity(grpo.iterations);
    let mut max_composite = 0.0f64;

    for iter in 0..grpo.iterations {
        let mut scene_rng = rng::stream(grpo.seed, &[SCENE_STREAM, iter as u64]);
        let scene = sample_scene(env, &grid, &mut scene_rng);
        let question = render_question(&scene, &mut scene_rng);
        let f = features(&scene, &question, k);

        let sampled = policy_sample(&params, &f, t, grpo.seed, &[ROLLOUT_STREAM, iter as u64], g)?;
        let mut rewards = Vec::with_capacity(g);
        let (mut vg, mut la, mut mc, mut mismatches) = (0.0, 0.0, 0.0, 0usize);
        for s in &sampled {
            let action = RolloutAction::from_sampled(s).expect("three-head action");
            let parsed = parse_trace(&emit_trace(&action, &scene, &question, &grid));
            let r = composite_reward(&parsed, &question.truth, reward, env.dims);
            max_composite = max_composite.max(r.max_composite(reward));
            let box_q = parsed
                .bbox
                .map(|b| quadrant_of(b.center(), env.dims))
                .transpose()?;
            if box_q.is_none() || box_q != parsed.q_inferred {
                mismatches += 1;
            }
            vg += r.r_vg;
            la += r.r_la;
            mc += r.r_mc;
            rewards.push(r.composite);
        }

        let logp_old: Vec<f64> = sampled.iter().map(|s| s.logp).collect();
        let logp_ref = sampled
            .iter()
            .map(|s| reference.log_prob(&f, &s.choices, t))
            .collect::<Result<Vec<_>, _>>()?;
        let kl = logp_old
            .iter()
            .zip(&logp_ref)
            .map(|(&th, &rf)| kl_estimate(th, rf))
            .collect::<Result<Vec<_>, _>>()?;
        let advantages = group_advantages(&rewards)?;

        for _ in 0..grpo.inner_epochs {
            let (logp_theta, grads): (Vec<f64>, Vec<Vec<f64>>) = sampled
                .iter()
                .map(|s| params.log_prob_grad(&f, &s.choices, t))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .unzip();
            let group = RolloutGroup {
                logp_theta,
                logp_old: logp_old.clone(),
                logp_ref: logp_ref.clone(),
                rewards: rewards.clone(),
            };
            let grad = grpo_gradient_with(&group, &advantages.values, &grads, grpo)?;
            params.weights = update_step(&params.weights, &grad, grpo.learning_rate)?;
        }
        if params.weights.iter().any(|w| !w.is_finite()) {
            return Err(GrpoError::NonFinite("parameters").into());
        }

        let n = g as f64;
        rows.push(IterationStats {
            iter,
            mean_reward: rewards.iter().sum::<f64>() / n,
            mean_vg: vg / n,
            mean_la: la / n,
            mean_mc: mc / n,
            mismatch_rate: mismatches as f64 / n,
            kl_mean: kl.iter().sum::<f64>() / n,
        });
    }

    Ok(TrainingReport {
        iterations: rows,
        max_composite,
        initial_params: initial,
        final_params: params,
    })
}
