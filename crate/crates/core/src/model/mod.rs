//! Fusion module and compact causal transformer decoder.
//!
//! The fusion module maps the `k+1` context slots (main vector first, then
//! the semantic group) through a shared FFN and one bidirectional
//! self-attention layer. The fused slots are projected to the decoder width
//! and occupy context positions `0..=k`; caption tokens follow from position
//! `k+1`. All gradients are analytic (see [`layers`]).

pub mod checkpoint;
mod layers;
pub mod ops;
pub mod params;
pub mod vocab;

use crate::error::{Error, Result};
pub use params::{Tensor, Weights};
use vocab::BOS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Width of sentence/frame embeddings and of the fusion module.
    pub embed_dim: usize,
    /// Decoder width.
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub fusion_heads: usize,
    pub fusion_ffn_dim: usize,
    pub vocab_size: usize,
    /// Upper bound on `k + 1`.
    pub max_slots: usize,
    /// Upper bound on caption length, EOS included.
    pub max_tokens: usize,
    /// Adds learned slot position embeddings before the fusion FFN.
    pub fusion_positions: bool,
}

fn default_heads(dim: usize) -> usize {
    [4, 2, 1]
        .into_iter()
        .find(|&h| dim.is_multiple_of(h))
        .unwrap_or(1)
}

impl ModelConfig {
    /// Desk-scale defaults: width 64, 2 layers, 4 heads.
    pub fn desk(embed_dim: usize, vocab_size: usize) -> Self {
        ModelConfig {
            embed_dim,
            model_dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            fusion_heads: default_heads(embed_dim),
            fusion_ffn_dim: 4 * embed_dim,
            vocab_size,
            max_slots: 21,
            max_tokens: 32,
            fusion_positions: false,
        }
    }

    /// Full-scale constants: 512-wide embeddings, 4096-wide feed-forward
    /// layers, GPT-2-small depth.
    pub fn full(vocab_size: usize) -> Self {
        ModelConfig {
            embed_dim: 512,
            model_dim: 512,
            layers: 12,
            heads: 8,
            ffn_dim: 4096,
            fusion_heads: 8,
            fusion_ffn_dim: 4096,
            vocab_size,
            max_slots: 21,
            max_tokens: 32,
            fusion_positions: false,
        }
    }

    /// A very small model for tests and gradient checks.
    pub fn tiny(embed_dim: usize, vocab_size: usize) -> Self {
        ModelConfig {
            embed_dim,
            model_dim: embed_dim,
            layers: 2,
            heads: 2,
            ffn_dim: 2 * embed_dim,
            fusion_heads: 2,
            fusion_ffn_dim: 2 * embed_dim,
            vocab_size,
            max_slots: 6,
            max_tokens: 10,
            fusion_positions: false,
        }
    }

    pub fn context_len(&self) -> usize {
        self.max_slots + self.max_tokens
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("model_dim", self.model_dim),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("fusion_heads", self.fusion_heads),
            ("fusion_ffn_dim", self.fusion_ffn_dim),
            ("max_slots", self.max_slots),
            ("max_tokens", self.max_tokens),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(
                "heads",
                format!(
                    "{} heads do not divide model width {}",
                    self.heads, self.model_dim
                ),
            ));
        }
        if !self.embed_dim.is_multiple_of(self.fusion_heads) {
            return Err(Error::invalid(
                "fusion_heads",
                format!(
                    "{} heads do not divide embedding width {}",
                    self.fusion_heads, self.embed_dim
                ),
            ));
        }
        if self.vocab_size <= vocab::UNK as usize {
            return Err(Error::invalid(
                "vocab_size",
                "must exceed the reserved control tokens",
            ));
        }
        Ok(())
    }
}

/// Model weights plus AdamW moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights,
    pub first_moment: Weights,
    pub second_moment: Weights,
    pub step: u64,
}

/// One training example: context slots (main vector first) and candidate
/// captions with their loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub slots: Vec<Vec<f64>>,
    pub candidates: Vec<Vec<u32>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Mean per-token cross-entropy of each candidate; `None` where the
    /// weight is zero and the candidate was skipped.
    pub per_candidate: Vec<Option<f64>>,
    /// `Σ weight_i · CE_i`.
    pub loss: f64,
}

pub fn init_params(config: ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let weights = Weights::init(&config, seed);
    Ok(ModelParams::from_weights(config, weights))
}

impl ModelParams {
    pub fn from_weights(config: ModelConfig, weights: Weights) -> Self {
        let zeros = Weights::zeros(&config);
        ModelParams {
            config,
            weights,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step: 0,
        }
    }

    fn flatten_slots(&self, slots: &[Vec<f64>]) -> Result<Vec<f64>> {
        if slots.is_empty() {
            return Err(Error::Empty("fusion slots"));
        }
        if slots.len() > self.config.max_slots {
            return Err(Error::invalid(
                "k",
                format!(
                    "{} slots exceed the model's maximum of {}",
                    slots.len(),
                    self.config.max_slots
                ),
            ));
        }
        let mut flat = Vec::with_capacity(slots.len() * self.config.embed_dim);
        for s in slots {
            if s.len() != self.config.embed_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.config.embed_dim,
                    found: s.len(),
                });
            }
            flat.extend_from_slice(s);
        }
        Ok(flat)
    }

    fn check_tokens(&self, ids: &[u32], max: usize) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if ids.len() > max {
            return Err(Error::invalid(
                "tokens",
                format!("sequence of {} exceeds the maximum of {max}", ids.len()),
            ));
        }
        if let Some(&id) = ids
            .iter()
            .find(|&&id| id as usize >= self.config.vocab_size)
        {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Runs the fusion module over `[main, group…]`; returns `k+1` vectors
    /// in input order.
    pub fn fuse(&self, main: &[f64], group: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut slots = Vec::with_capacity(group.len() + 1);
        slots.push(main.to_vec());
        slots.extend(group.iter().cloned());
        let flat = self.flatten_slots(&slots)?;
        let (out, _) = layers::fusion_forward(&self.weights.fusion, &self.config, &flat);
        Ok(out
            .chunks_exact(self.config.embed_dim)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Causal logits (`T × v`) for input tokens `ids` conditioned on the
    /// fused `prefix`.
    pub fn logits(&self, prefix: &[Vec<f64>], ids: &[u32]) -> Result<Vec<Vec<f64>>> {
        let flat = self.flatten_slots(prefix)?;
        self.check_tokens(ids, self.config.max_tokens)?;
        let (logits, _) = layers::decoder_forward(&self.weights.decoder, &self.config, &flat, ids);
        Ok(logits
            .chunks_exact(self.config.vocab_size)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Log-probabilities of the next token after `ids`.
    pub fn next_log_probs(&self, prefix: &[Vec<f64>], ids: &[u32]) -> Result<Vec<f64>> {
        let logits = self.logits(prefix, ids)?;
        Ok(ops::log_softmax(logits.last().expect("nonempty ids")))
    }

    /// Mean per-token negative log-likelihood of `candidate` (which ends with
    /// EOS) under teacher forcing.
    pub fn teacher_forced_ce(&self, prefix: &[Vec<f64>], candidate: &[u32]) -> Result<f64> {
        let ids = teacher_inputs(candidate);
        let logits = self.logits(prefix, &ids)?;
        Ok(logits
            .iter()
            .zip(candidate)
            .map(|(row, &y)| ops::log_sum_exp(row) - row[y as usize])
            .sum::<f64>()
            / candidate.len() as f64)
    }

    fn check_example(&self, ex: &Example) -> Result<Vec<f64>> {
        if ex.candidates.len() != ex.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: ex.candidates.len(),
                found: ex.weights.len(),
            });
        }
        for c in &ex.candidates {
            self.check_tokens(c, self.config.max_tokens)?;
        }
        self.flatten_slots(&ex.slots)
    }

    /// Weighted teacher-forced loss without gradients.
    pub fn loss(&self, ex: &Example) -> Result<LossReport> {
        let flat = self.check_example(ex)?;
        let (fused, _) = layers::fusion_forward(&self.weights.fusion, &self.config, &flat);
        let mut per_candidate = Vec::with_capacity(ex.candidates.len());
        let mut loss = 0.0;
        for (cand, &w) in ex.candidates.iter().zip(&ex.weights) {
            if w == 0.0 {
                per_candidate.push(None);
                continue;
            }
            let (logits, _) = layers::decoder_forward(
                &self.weights.decoder,
                &self.config,
                &fused,
                &teacher_inputs(cand),
            );
            let ce = cross_entropy(&logits, cand, self.config.vocab_size, None);
            loss += w * ce;
            per_candidate.push(Some(ce));
        }
        Ok(LossReport {
            per_candidate,
            loss,
        })
    }

    /// Weighted teacher-forced loss; accumulates its exact gradient into
    /// `grads` (which must have this model's shapes).
    pub fn loss_and_grad(&self, ex: &Example, grads: &mut Weights) -> Result<LossReport> {
        let flat = self.check_example(ex)?;
        let cfg = &self.config;
        let (fused, ftrace) = layers::fusion_forward(&self.weights.fusion, cfg, &flat);
        let mut dfused = vec![0.0; fused.len()];
        let mut per_candidate = Vec::with_capacity(ex.candidates.len());
        let mut loss = 0.0;
        for (cand, &w) in ex.candidates.iter().zip(&ex.weights) {
            if w == 0.0 {
                per_candidate.push(None);
                continue;
            }
            let (logits, trace) =
                layers::decoder_forward(&self.weights.decoder, cfg, &fused, &teacher_inputs(cand));
            let mut dlogits = vec![0.0; logits.len()];
            let ce = cross_entropy(&logits, cand, cfg.vocab_size, Some((&mut dlogits, w)));
            let dprefix = layers::decoder_backward(
                &self.weights.decoder,
                cfg,
                &trace,
                &dlogits,
                &mut grads.decoder,
            );
            ops::add_into(&mut dfused, &dprefix);
            loss += w * ce;
            per_candidate.push(Some(ce));
        }
        layers::fusion_backward(
            &self.weights.fusion,
            cfg,
            &ftrace,
            &dfused,
            &mut grads.fusion,
        );
        Ok(LossReport {
            per_candidate,
            loss,
        })
    }
}

/// Decoder inputs for teacher forcing: BOS followed by all but the last
/// target token.
pub fn teacher_inputs(candidate: &[u32]) -> Vec<u32> {
    let mut ids = Vec::with_capacity(candidate.len());
    ids.push(BOS);
    ids.extend_from_slice(&candidate[..candidate.len().saturating_sub(1)]);
    ids
}

/// Mean NLL over rows; optionally writes `weight · ∂CE/∂logits`.
fn cross_entropy(
    logits: &[f64],
    targets: &[u32],
    v: usize,
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let t = targets.len() as f64;
    let mut total = 0.0;
    match grad {
        None => {
            for (row, &y) in logits.chunks_exact(v).zip(targets) {
                total += ops::log_sum_exp(row) - row[y as usize];
            }
        }
        Some((dlogits, w)) => {
            for ((row, drow), &y) in logits
                .chunks_exact(v)
                .zip(dlogits.chunks_exact_mut(v))
                .zip(targets)
            {
                let lse = ops::log_sum_exp(row);
                total += lse - row[y as usize];
                for (d, &z) in drow.iter_mut().zip(row) {
                    *d = (z - lse).exp() * w / t;
                }
                drow[y as usize] -= w / t;
            }
        }
    }
    total / t
}
