//! Multi-head linear softmax policy.
//!
//! Every head scores its classes with `W_h f` and samples from
//! `softmax(W_h f / T)`. An action picks one class per head and its
//! log-probability is the sum over heads, so
//!
//! ```text
//! d logp / d W_h[j, :] = (1[j = a_h] - p_h[j]) / T * f
//! ```

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, SplitMix64};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("action component {value} is outside head {head} with {size} classes")]
    OutOfSupport { head: usize, value: usize, size: usize },
    #[error("action has {found} components, policy has {expected} heads")]
    HeadCount { expected: usize, found: usize },
    #[error("feature vector has length {found}, expected {expected}")]
    FeatureDim { expected: usize, found: usize },
}

/// Weights of all heads, row-major: one row per class (heads stacked in order),
/// one column per feature. Head `h` reads only the features in `inputs[h]`;
/// its weights outside that range stay zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub head_sizes: Vec<usize>,
    pub feature_dim: usize,
    pub inputs: Vec<Range<usize>>,
    pub weights: Vec<f64>,
}

/// One sampled action with its log-probability at the sampling temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledAction {
    pub choices: Vec<usize>,
    pub logp: f64,
}

fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logits.iter().map(|l| (l - max) / temperature).collect();
    let lse = scaled.iter().map(|s| s.exp()).sum::<f64>().ln();
    scaled.iter().map(|s| s - lse).collect()
}

impl PolicyParams {
    /// Zero weights, every head reading every feature.
    pub fn zeros(head_sizes: Vec<usize>, feature_dim: usize) -> Self {
        let inputs = vec![0..feature_dim; head_sizes.len()];
        Self::zeros_with_inputs(head_sizes, feature_dim, inputs)
    }

    /// # Panics
    /// If `inputs` does not give one in-bounds range per head.
    pub fn zeros_with_inputs(
        head_sizes: Vec<usize>,
        feature_dim: usize,
        inputs: Vec<Range<usize>>,
    ) -> Self {
        assert_eq!(inputs.len(), head_sizes.len(), "one input range per head");
        assert!(inputs.iter().all(|r| r.start <= r.end && r.end <= feature_dim));
        let rows: usize = head_sizes.iter().sum();
        Self {
            weights: vec![0.0; rows * feature_dim],
            head_sizes,
            feature_dim,
            inputs,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }

    /// First row, class count and input range of every head.
    fn heads(&self) -> impl Iterator<Item = (usize, usize, Range<usize>)> + '_ {
        self.head_sizes
            .iter()
            .zip(&self.inputs)
            .scan(0, |start, (&size, input)| {
                let s = *start;
                *start += size;
                Some((s, size, input.clone()))
            })
    }

    fn check_features(&self, features: &[f64]) -> Result<(), PolicyError> {
        if features.len() != self.feature_dim {
            return Err(PolicyError::FeatureDim {
                expected: self.feature_dim,
                found: features.len(),
            });
        }
        Ok(())
    }

    /// Raw logits per head.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<Vec<f64>>, PolicyError> {
        self.check_features(features)?;
        let d = self.feature_dim;
        Ok(self
            .heads()
            .map(|(start, size, input)| {
                (start..start + size)
                    .map(|row| {
                        self.weights[row * d + input.start..row * d + input.end]
                            .iter()
                            .zip(&features[input.clone()])
                            .map(|(w, f)| w * f)
                            .sum()
                    })
                    .collect()
            })
            .collect())
    }

    /// Log-probabilities per head at `temperature`.
    pub fn head_log_probs(
        &self,
        features: &[f64],
        temperature: f64,
    ) -> Result<Vec<Vec<f64>>, PolicyError> {
        Ok(self
            .logits(features)?
            .iter()
            .map(|l| log_softmax(l, temperature))
            .collect())
    }

    fn check_action(&self, choices: &[usize]) -> Result<(), PolicyError> {
        if choices.len() != self.head_sizes.len() {
            return Err(PolicyError::HeadCount {
                expected: self.head_sizes.len(),
                found: choices.len(),
            });
        }
        for (head, (&value, &size)) in choices.iter().zip(&self.head_sizes).enumerate() {
            if value >= size {
                return Err(PolicyError::OutOfSupport { head, value, size });
            }
        }
        Ok(())
    }

    pub fn log_prob(
        &self,
        features: &[f64],
        choices: &[usize],
        temperature: f64,
    ) -> Result<f64, PolicyError> {
        self.check_action(choices)?;
        let lp = self.head_log_probs(features, temperature)?;
        Ok(lp.iter().zip(choices).map(|(h, &c)| h[c]).sum())
    }

    /// Log-probability of an action and its gradient with respect to every
    /// weight.
    pub fn log_prob_grad(
        &self,
        features: &[f64],
        choices: &[usize],
        temperature: f64,
    ) -> Result<(f64, Vec<f64>), PolicyError> {
        self.check_action(choices)?;
        let lp = self.head_log_probs(features, temperature)?;
        let d = self.feature_dim;
        let mut grad = vec![0.0; self.weights.len()];
        let mut logp = 0.0;
        for ((start, _, input), (head_lp, &choice)) in self.heads().zip(lp.iter().zip(choices)) {
            logp += head_lp[choice];
            for (j, l) in head_lp.iter().enumerate() {
                let indicator = if j == choice { 1.0 } else { 0.0 };
                let coef = (indicator - l.exp()) / temperature;
                if coef == 0.0 {
                    continue;
                }
                let row = (start + j) * d;
                let row = &mut grad[row + input.start..row + input.end];
                for (g, f) in row.iter_mut().zip(&features[input.clone()]) {
                    *g = coef * f;
                }
            }
        }
        Ok((logp, grad))
    }

    /// Draws one action from `rng`.
    pub fn sample(
        &self,
        features: &[f64],
        temperature: f64,
        rng: &mut SplitMix64,
    ) -> Result<SampledAction, PolicyError> {
        let lp = self.head_log_probs(features, temperature)?;
        let mut logp = 0.0;
        let choices = lp
            .iter()
            .map(|head| {
                let probs: Vec<f64> = head.iter().map(|l| l.exp()).collect();
                let c = rng::categorical(rng, &probs);
                logp += head[c];
                c
            })
            .collect();
        Ok(SampledAction { choices, logp })
    }

    pub fn argmax(&self, features: &[f64]) -> Result<Vec<usize>, PolicyError> {
        Ok(self
            .logits(features)?
            .iter()
            .map(|l| {
                l.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }
}

/// Samples `count` actions; action `i` uses the stream `(seed, key.., i)`, so
/// each draw is reproducible on its own.
pub fn policy_sample(
    params: &PolicyParams,
    features: &[f64],
    temperature: f64,
    seed: u64,
    key: &[u64],
    count: usize,
) -> Result<Vec<SampledAction>, PolicyError> {
    (0..count)
        .map(|i| {
            let mut path = key.to_vec();
            path.push(i as u64);
            params.sample(features, temperature, &mut rng::stream(seed, &path))
        })
        .collect()
}
