//! Probability-sampled supervision.
//!
//! The training caption and its `k` group sentences all act as candidate
//! ground truths. Their raw scores are `[λ, P_{t,s1}, …, P_{t,sk}]` (λ for the
//! caption itself, hybrid retrieval scores for the rest) and a softmax turns
//! them into a distribution. The loss is either the softmax-weighted mixture
//! of per-candidate cross-entropies or the cross-entropy of one candidate
//! drawn from that distribution.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionTarget {
    /// Token sequences; index 0 is the training caption.
    pub candidates: Vec<Vec<u32>>,
    pub raw_scores: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn build_target(
    caption: Vec<u32>,
    group: Vec<Vec<u32>>,
    group_scores: &[f64],
    lambda: f64,
) -> Result<SupervisionTarget> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(
            "lambda",
            format!("{lambda} must be a positive finite number"),
        ));
    }
    if group.len() != group_scores.len() {
        return Err(Error::DimensionMismatch {
            expected: group.len(),
            found: group_scores.len(),
        });
    }
    if group_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("group scores".into()));
    }
    let mut raw_scores = Vec::with_capacity(group.len() + 1);
    raw_scores.push(lambda);
    raw_scores.extend_from_slice(group_scores);
    let probs = softmax(&raw_scores);
    let mut candidates = Vec::with_capacity(group.len() + 1);
    candidates.push(caption);
    candidates.extend(group);
    Ok(SupervisionTarget {
        candidates,
        raw_scores,
        probs,
    })
}

impl SupervisionTarget {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Inverse-CDF draw from `probs`.
    pub fn sample_with(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            cum += p;
            if u < cum {
                return i;
            }
        }
        // u landed in the rounding gap above the last cumulative sum.
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

pub fn sample_target(target: &SupervisionTarget, seed: u64) -> usize {
    target.sample_with(&mut seed::rng(seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// `Σ_i probs[i] · CE_i`.
    #[default]
    Mixture,
    /// `CE_j` for one `j` drawn from `probs`.
    Sampled,
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixture" => Ok(LossMode::Mixture),
            "sampled" => Ok(LossMode::Sampled),
            other => Err(Error::invalid(
                "loss",
                format!("unknown loss mode {other:?} (expected mixture or sampled)"),
            )),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Mixture => "mixture",
            LossMode::Sampled => "sampled",
        })
    }
}

/// Per-candidate loss weights: `probs` for the mixture, a one-hot vector for
/// sampled supervision. The loss and its gradient are both linear in these.
pub fn loss_weights(target: &SupervisionTarget, mode: LossMode, seed: u64) -> Vec<f64> {
    match mode {
        LossMode::Mixture => target.probs.clone(),
        LossMode::Sampled => {
            let j = sample_target(target, seed);
            let mut w = vec![0.0; target.len()];
            w[j] = 1.0;
            w
        }
    }
}

pub fn pss_loss(
    per_candidate_ce: &[f64],
    target: &SupervisionTarget,
    mode: LossMode,
    seed: u64,
) -> Result<f64> {
    if per_candidate_ce.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            found: per_candidate_ce.len(),
        });
    }
    if per_candidate_ce.iter().any(|&c| !(c >= 0.0)) {
        return Err(Error::invalid(
            "cross-entropy",
            "values must be nonnegative",
        ));
    }
    Ok(loss_weights(target, mode, seed)
        .iter()
        .zip(per_candidate_ce)
        .filter(|(w, _)| **w != 0.0)
        .map(|(w, c)| w * c)
        .sum())
}
