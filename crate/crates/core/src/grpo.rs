//! Group relative policy optimization on sequence-level log-probabilities.
//!
//! For a group of `G` outputs sampled for one question:
//!
//! ```text
//! A_i   = (r_i - mean(r)) / std(r)                      population std
//! k_i   = rho_i - ln(rho_i) - 1,  rho_i = pi_ref(o_i) / pi_theta(o_i)
//! J     = 1/G * sum_i [ s_i - beta * k_i ]
//! s_i   = ratio_i * A_i                                  (as written)
//!       = min(ratio_i * A_i, clip(ratio_i, 1-eps, 1+eps) * A_i)   (clipped)
//! ratio_i = pi_theta(o_i) / pi_old(o_i)
//! ```
//!
//! The objective is maximized; `update_step` takes an ascent step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Groups whose reward spread is at or below this are treated as ties.
pub const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("group has {0} outputs; at least 2 are needed")]
    GroupTooSmall(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Unclipped ratio-weighted advantage.
    AsWritten,
    /// PPO-style pessimistic clipping of the ratio.
    #[default]
    Clipped,
}

impl std::str::FromStr for ObjectiveMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "as_written" | "aswritten" => Ok(ObjectiveMode::AsWritten),
            "clipped" => Ok(ObjectiveMode::Clipped),
            other => Err(format!("unknown objective mode `{other}` (as_written|clipped)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    /// KL penalty coefficient.
    pub beta: f64,
    /// Clip radius for the ratio.
    pub epsilon: f64,
    pub objective_mode: ObjectiveMode,
    pub group_size: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Gradient steps taken on each sampled group. With 1, the ratio is
    /// exactly 1 at the step.
    pub inner_epochs: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.04,
            epsilon: 0.2,
            objective_mode: ObjectiveMode::Clipped,
            group_size: 4,
            temperature: 0.7,
            learning_rate: 1e-6,
            iterations: 2_000,
            seed: 0,
            inner_epochs: 1,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |msg: String| Err(GrpoError::Config(msg));
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be finite and >= 0, got {}", self.beta));
        }
        if self.objective_mode == ObjectiveMode::Clipped
            && !(self.epsilon > 0.0 && self.epsilon < 1.0)
        {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.group_size < 2 {
            return bad(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.inner_epochs == 0 {
            return bad("inner_epochs must be >= 1".into());
        }
        Ok(())
    }
}

/// Normalized advantages for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the rewards.
    pub std: f64,
}

/// Standardizes rewards within a group. Tied groups get all-zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Result<AdvantageSet, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::NonFinite("rewards"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let values = if std > DEGENERATE_STD {
        rewards.iter().map(|r| (r - mean) / std).collect()
    } else {
        vec![0.0; rewards.len()]
    };
    Ok(AdvantageSet { values, mean, std })
}

/// Per-sample KL estimate `rho - ln(rho) - 1` with `rho = exp(logp_ref - logp_theta)`.
/// Non-negative, and zero exactly when the two log-probabilities agree.
pub fn kl_estimate(logp_theta: f64, logp_ref: f64) -> Result<f64, GrpoError> {
    if !logp_theta.is_finite() || !logp_ref.is_finite() {
        return Err(GrpoError::NonFinite("log-probabilities"));
    }
    let log_rho = logp_ref - logp_theta;
    // exp_m1 keeps precision when the two are close.
    Ok((log_rho.exp_m1() - log_rho).max(0.0))
}

/// Sampled outputs of one group with their log-probabilities and rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub logp_theta: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn check(&self) -> Result<(), GrpoError> {
        let g = self.rewards.len();
        if g < 2 {
            return Err(GrpoError::GroupTooSmall(g));
        }
        for arr in [&self.logp_theta, &self.logp_old, &self.logp_ref] {
            if arr.len() != g {
                return Err(GrpoError::DimensionMismatch {
                    expected: g,
                    found: arr.len(),
                });
            }
        }
        let all = self
            .logp_theta
            .iter()
            .chain(&self.logp_old)
            .chain(&self.logp_ref);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(GrpoError::NonFinite("log-probabilities"));
        }
        Ok(())
    }
}

/// Per-output terms shared by the objective and its gradient.
struct Term {
    surrogate: f64,
    /// d surrogate / d logp_theta
    d_surrogate: f64,
    kl: f64,
    /// d kl / d logp_theta = 1 - rho
    d_kl: f64,
}

fn terms(
    group: &RolloutGroup,
    advantages: &[f64],
    cfg: &GrpoConfig,
) -> Result<Vec<Term>, GrpoError> {
    (0..group.len())
        .map(|i| {
            let ratio = (group.logp_theta[i] - group.logp_old[i]).exp();
            let a = advantages[i];
            let (surrogate, d_surrogate) = match cfg.objective_mode {
                ObjectiveMode::AsWritten => (ratio * a, ratio * a),
                ObjectiveMode::Clipped => {
                    let lo = 1.0 - cfg.epsilon;
                    let hi = 1.0 + cfg.epsilon;
                    let clipped = ratio.clamp(lo, hi);
                    let unclipped_term = ratio * a;
                    let clipped_term = clipped * a;
                    if unclipped_term <= clipped_term {
                        (unclipped_term, ratio * a)
                    } else {
                        // Only reachable with the ratio outside [lo, hi],
                        // where the clipped term is constant.
                        (clipped_term, 0.0)
                    }
                }
            };
            let log_rho = group.logp_ref[i] - group.logp_theta[i];
            let kl = kl_estimate(group.logp_theta[i], group.logp_ref[i])?;
            Ok(Term {
                surrogate,
                d_surrogate,
                kl,
                d_kl: -log_rho.exp_m1(),
            })
        })
        .collect()
}

/// The GRPO objective for one group, advantages computed from its rewards.
pub fn grpo_objective(group: &RolloutGroup, cfg: &GrpoConfig) -> Result<f64, GrpoError> {
    group.check()?;
    let adv = group_advantages(&group.rewards)?;
    grpo_objective_with(group, &adv.values, cfg)
}

/// The objective with caller-supplied advantages.
pub fn grpo_objective_with(
    group: &RolloutGroup,
    advantages: &[f64],
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    group.check()?;
    if advantages.len() != group.len() {
        return Err(GrpoError::DimensionMismatch {
            expected: group.len(),
            found: advantages.len(),
        });
    }
    let g = group.len() as f64;
    let total = terms(group, advantages, cfg)?
        .iter()
        .map(|t| t.surrogate - cfg.beta * t.kl)
        .sum::<f64>();
    Ok(total / g)
}

/// Anything that can report `grad_theta log pi_theta(o)` for the outputs of a
/// group.
pub trait ScoreFunction {
    /// Number of policy parameters.
    fn num_params(&self) -> usize;
    /// Log-probability of output `index` and its gradient.
    fn logp_and_grad(&self, index: usize) -> (f64, Vec<f64>);
}

/// Exact gradient of [`grpo_objective`] with `logp_old` and `logp_ref` held
/// fixed. `score_grads[i]` is the gradient of `logp_theta[i]`.
pub fn grpo_gradient(
    group: &RolloutGroup,
    score_grads: &[Vec<f64>],
    cfg: &GrpoConfig,
) -> Result<Vec<f64>, GrpoError> {
    group.check()?;
    let adv = group_advantages(&group.rewards)?;
    grpo_gradient_with(group, &adv.values, score_grads, cfg)
}

pub fn grpo_gradient_with(
    group: &RolloutGroup,
    advantages: &[f64],
    score_grads: &[Vec<f64>],
    cfg: &GrpoConfig,
) -> Result<Vec<f64>, GrpoError> {
    group.check()?;
    if score_grads.len() != group.len() || advantages.len() != group.len() {
        return Err(GrpoError::DimensionMismatch {
            expected: group.len(),
            found: score_grads.len().min(advantages.len()),
        });
    }
    let dim = score_grads[0].len();
    if let Some(bad) = score_grads.iter().find(|g| g.len() != dim) {
        return Err(GrpoError::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    let inv_g = 1.0 / group.len() as f64;
    let mut grad = vec![0.0; dim];
    for (term, score) in terms(group, advantages, cfg)?.iter().zip(score_grads) {
        let coef = inv_g * (term.d_surrogate - cfg.beta * term.d_kl);
        if coef != 0.0 {
            for (g, s) in grad.iter_mut().zip(score) {
                *g += coef * s;
            }
        }
    }
    Ok(grad)
}

/// Gradient for a group whose `logp_theta` and score gradients come from a
/// policy.
pub fn grpo_gradient_for<P: ScoreFunction>(
    policy: &P,
    logp_old: &[f64],
    logp_ref: &[f64],
    rewards: &[f64],
    cfg: &GrpoConfig,
) -> Result<Vec<f64>, GrpoError> {
    let (logp_theta, grads): (Vec<f64>, Vec<Vec<f64>>) =
        (0..rewards.len()).map(|i| policy.logp_and_grad(i)).unzip();
    if let Some(g) = grads.iter().find(|g| g.len() != policy.num_params()) {
        return Err(GrpoError::DimensionMismatch {
            expected: policy.num_params(),
            found: g.len(),
        });
    }
    let group = RolloutGroup {
        logp_theta,
        logp_old: logp_old.to_vec(),
        logp_ref: logp_ref.to_vec(),
        rewards: rewards.to_vec(),
    };
    grpo_gradient(&group, &grads, cfg)
}

/// Gradient ascent step `params + lr * gradient`.
pub fn update_step(
    params: &[f64],
    gradient: &[f64],
    learning_rate: f64,
) -> Result<Vec<f64>, GrpoError> {
    if params.len() != gradient.len() {
        return Err(GrpoError::DimensionMismatch {
            expected: params.len(),
            found: gradient.len(),
        });
    }
    Ok(params
        .iter()
        .zip(gradient)
        .map(|(p, g)| p + learning_rate * g)
        .collect())
}
