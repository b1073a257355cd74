//! Training loop: per caption retrieve a semantic group, perturb it, fuse,
//! score every candidate caption under teacher forcing, weight the
//! cross-entropies by the supervision distribution and take an AdamW step
//! per batch.
//!
//! A held-out slice of the bank drives early stopping. All randomness is
//! derived from [`TrainConfig::seed`]; a run is bit-reproducible and does not
//! depend on the number of worker threads.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::bank::{compute_stats, SentenceBank};
use crate::error::{Error, Result};
use crate::model::vocab::Vocabulary;
use crate::model::{init_params, Example, ModelConfig, ModelParams, Weights};
use crate::noise::{NoiseMode, NoiseModel};
use crate::par;
use crate::seed;
use crate::similarity::{check_sigma, select_group, Query, SemanticGroup};
use crate::supervision::{build_target, loss_weights, LossMode, SupervisionTarget};

// Stream labels for seed derivation.
const SPLIT: u64 = 1;
const INIT: u64 = 2;
const SHUFFLE: u64 = 3;
const NOISE: u64 = 4;
const SAMPLE: u64 = 5;
const EVAL: u64 = 6;

/// Examples per gradient chunk. Chunks are the unit of parallel work and are
/// reduced in order, so the chunk size (not the thread count) fixes the
/// floating-point summation order.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sigma: f64,
    pub lambda: f64,
    pub k: usize,
    pub noise: NoiseMode,
    pub loss: LossMode,
    /// When false, only the training caption supervises (weights `[1, 0, …]`).
    pub pss: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub heldout_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    /// Global L2 clipping threshold for the batch gradient.
    pub grad_clip: Option<f64>,
    /// Draw fresh group noise every epoch; otherwise each caption keeps one
    /// noise draw for the whole run.
    pub redraw_noise: bool,
    pub seed: u64,
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub fusion_positions: bool,
    pub max_tokens: usize,
    pub min_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma: 0.5,
            lambda: 1.0,
            k: 5,
            noise: NoiseMode::ElementWise,
            loss: LossMode::Mixture,
            pss: true,
            learning_rate: 1e-4,
            batch_size: 256,
            max_epochs: 20,
            patience: 3,
            heldout_fraction: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            adam_eps: 1e-8,
            grad_clip: None,
            redraw_noise: true,
            seed: 0,
            model_dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            fusion_positions: false,
            max_tokens: 32,
            min_count: 1,
        }
    }
}

fn parse<T: FromStr>(key: &'static str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(key, format!("cannot parse {value:?}")))
}

fn parse_bool(key: &'static str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::invalid(
            key,
            format!("expected a boolean, got {value:?}"),
        )),
    }
}

impl TrainConfig {
    /// Sets one field by its key-value name. Keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim().replace('_', "-").as_str() {
            "sigma" => self.sigma = parse("sigma", value)?,
            "lambda" => self.lambda = parse("lambda", value)?,
            "k" => self.k = parse("k", value)?,
            "noise" => self.noise = value.trim().parse()?,
            "loss" => self.loss = value.trim().parse()?,
            "pss" => self.pss = parse_bool("pss", value)?,
            "lr" | "learning-rate" => self.learning_rate = parse("learning-rate", value)?,
            "batch-size" => self.batch_size = parse("batch-size", value)?,
            "epochs" | "max-epochs" => self.max_epochs = parse("epochs", value)?,
            "patience" => self.patience = parse("patience", value)?,
            "heldout-fraction" => self.heldout_fraction = parse("heldout-fraction", value)?,
            "beta1" => self.beta1 = parse("beta1", value)?,
            "beta2" => self.beta2 = parse("beta2", value)?,
            "weight-decay" => self.weight_decay = parse("weight-decay", value)?,
            "adam-eps" => self.adam_eps = parse("adam-eps", value)?,
            "grad-clip" => {
                self.grad_clip = match value.trim() {
                    "none" | "" => None,
                    v => Some(parse("grad-clip", v)?),
                }
            }
            "redraw-noise" => self.redraw_noise = parse_bool("redraw-noise", value)?,
            "seed" => self.seed = parse("seed", value)?,
            "model-dim" => self.model_dim = parse("model-dim", value)?,
            "layers" => self.layers = parse("layers", value)?,
            "heads" => self.heads = parse("heads", value)?,
            "ffn-dim" => self.ffn_dim = parse("ffn-dim", value)?,
            "fusion-positions" => self.fusion_positions = parse_bool("fusion-positions", value)?,
            "max-tokens" => self.max_tokens = parse("max-tokens", value)?,
            "min-count" => self.min_count = parse("min-count", value)?,
            other => {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("unknown training option {other:?}"),
                })
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines (or `key value`); `#` starts a comment.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(char::is_whitespace))
                .ok_or_else(|| Error::Parse {
                    line: i + 1,
                    message: format!("expected `key = value`, found {line:?}"),
                })?;
            self.set(key, value).map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse {
                    line: i + 1,
                    message,
                },
                other => Error::Parse {
                    line: i + 1,
                    message: other.to_string(),
                },
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma)?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(
                "lambda",
                format!("{} must be positive", self.lambda),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning-rate",
                format!("{} must be positive", self.learning_rate),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch-size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if !(0.0..0.5).contains(&self.heldout_fraction) {
            return Err(Error::invalid("heldout-fraction", "must lie in [0, 0.5)"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(name, format!("{b} is outside [0, 1)")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight-decay", "must be nonnegative"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam-eps", "must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::invalid("grad-clip", "must be positive"));
            }
        }
        if self.max_tokens == 0 {
            return Err(Error::invalid("max-tokens", "must be at least 1"));
        }
        Ok(())
    }

    pub fn model_config(&self, embed_dim: usize, vocab_size: usize) -> ModelConfig {
        let mut c = ModelConfig::desk(embed_dim, vocab_size);
        c.model_dim = self.model_dim;
        c.layers = self.layers;
        c.heads = self.heads;
        c.ffn_dim = self.ffn_dim;
        c.fusion_positions = self.fusion_positions;
        c.max_tokens = self.max_tokens;
        c.max_slots = c.max_slots.max(self.k + 1);
        c
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            eps: self.adam_eps,
        }
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("sigma", self.sigma.to_string()),
            ("lambda", self.lambda.to_string()),
            ("k", self.k.to_string()),
            ("noise", self.noise.to_string()),
            ("loss", self.loss.to_string()),
            ("pss", self.pss.to_string()),
            ("learning-rate", self.learning_rate.to_string()),
            ("batch-size", self.batch_size.to_string()),
            ("epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("heldout-fraction", self.heldout_fraction.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("weight-decay", self.weight_decay.to_string()),
            ("adam-eps", self.adam_eps.to_string()),
            (
                "grad-clip",
                self.grad_clip.map_or("none".into(), |c| c.to_string()),
            ),
            ("redraw-noise", self.redraw_noise.to_string()),
            ("seed", self.seed.to_string()),
            ("model-dim", self.model_dim.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("ffn-dim", self.ffn_dim.to_string()),
            ("fusion-positions", self.fusion_positions.to_string()),
            ("max-tokens", self.max_tokens.to_string()),
            ("min-count", self.min_count.to_string()),
        ]
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

/// One AdamW update of a flat parameter slice. `step` is the 1-based step
/// count used for bias correction.
pub fn adamw_update(
    theta: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    step: u64,
    hp: &AdamW,
) {
    let bc1 = 1.0 - hp.beta1.powf(step as f64);
    let bc2 = 1.0 - hp.beta2.powf(step as f64);
    let decay = 1.0 - hp.lr * hp.weight_decay;
    for i in 0..theta.len() {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        theta[i] = theta[i] * decay - hp.lr * mhat / (vhat.sqrt() + hp.eps);
    }
}

/// Applies [`adamw_update`] to every tensor, advancing `params.step`.
pub fn adamw_step(params: &mut ModelParams, grads: &Weights, hp: &AdamW) -> Result<()> {
    if !params.weights.same_shape(grads) {
        return Err(Error::invalid(
            "grads",
            "gradient shapes differ from the parameters",
        ));
    }
    params.step += 1;
    let step = params.step;
    let thetas = params.weights.tensors_mut();
    let ms = params.first_moment.tensors_mut();
    let vs = params.second_moment.tensors_mut();
    for (((t, m), v), g) in thetas.into_iter().zip(ms).zip(vs).zip(grads.tensors()) {
        adamw_update(&mut t.data, &mut m.data, &mut v.data, &g.data, step, hp);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub epoch: usize,
    /// `None` for the end-of-epoch summary.
    pub batch: Option<usize>,
    pub loss: f64,
    pub heldout_loss: Option<f64>,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let batch = self.batch.map_or("end".to_string(), |b| b.to_string());
        let held = self
            .heldout_loss
            .map_or("-".to_string(), |h| format!("{h:.6}"));
        write!(f, "{}\t{}\t{:.6}\t{}", self.epoch, batch, self.loss, held)
    }
}

/// Training log. Epoch 0 is a forward-only pass with the initial parameters;
/// later epochs report the mean training loss over their batches.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn epoch_summaries(&self) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(|r| r.batch.is_none())
    }

    /// Number of completed training epochs.
    pub fn epochs(&self) -> usize {
        self.epoch_summaries().filter(|r| r.epoch > 0).count()
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.epoch_summaries()
            .find(|r| r.epoch == 0)
            .map(|r| r.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_summaries()
            .filter(|r| r.epoch > 0)
            .last()
            .map(|r| r.loss)
    }

    /// Tab-separated `epoch batch loss heldout_loss` lines with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tbatch\tloss\theldout_loss\n");
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub log: TrainLog,
    /// Epoch whose parameters were returned (0 if no epoch improved on the
    /// initial held-out loss).
    pub best_epoch: usize,
}

/// A caption with its retrieved group and supervision target, fixed for the
/// whole run.
struct Prepared {
    id: u64,
    caption: Vec<f64>,
    group: SemanticGroup,
    target: SupervisionTarget,
}

/// Deterministic split into (train, held-out) bank indices.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed::derive(seed, &[SPLIT])));
    let mut n_held = (fraction * n as f64).round() as usize;
    if fraction > 0.0 && n >= 2 {
        n_held = n_held.max(1);
    }
    n_held = n_held.min(n.saturating_sub(1));
    let mut held = idx[..n_held].to_vec();
    let mut train = idx[n_held..].to_vec();
    held.sort_unstable();
    train.sort_unstable();
    (train, held)
}

struct Context<'a> {
    config: &'a TrainConfig,
    noise: NoiseModel,
}

impl Context<'_> {
    fn example(&self, p: &Prepared, noise_seed: u64, weights: Vec<f64>) -> Result<Example> {
        let group = self.noise.apply_group(&p.group, noise_seed)?;
        let mut slots = Vec::with_capacity(group.len() + 1);
        slots.push(p.caption.clone());
        slots.extend(group.members.into_iter().map(|m| m.embedding));
        Ok(Example {
            slots,
            candidates: p.target.candidates.clone(),
            weights,
        })
    }

    fn weights(&self, p: &Prepared, seed: u64) -> Vec<f64> {
        if !self.config.pss {
            let mut w = vec![0.0; p.target.len()];
            w[0] = 1.0;
            return w;
        }
        loss_weights(&p.target, self.config.loss, seed)
    }

    fn eval_weights(&self, p: &Prepared) -> Vec<f64> {
        if self.config.pss {
            p.target.probs.clone()
        } else {
            self.weights(p, 0)
        }
    }

    /// Mean loss without gradients, fixed noise, expected supervision.
    fn evaluate(&self, params: &ModelParams, items: &[Prepared]) -> Result<f64> {
        if items.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let seed = self.config.seed;
        let losses = par::map(items, |p| {
            let ex = self.example(p, seed::derive(seed, &[EVAL, p.id]), self.eval_weights(p))?;
            params.loss(&ex).map(|r| r.loss)
        });
        let mut total = 0.0;
        for l in losses {
            total += l?;
        }
        Ok(total / items.len() as f64)
    }
}

fn prepare(
    bank: &SentenceBank,
    retrieval: &SentenceBank,
    indices: &[usize],
    self_in_retrieval: bool,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<Vec<Prepared>> {
    let encode = |text: &str| vocab.encode(text, config.max_tokens);
    par::map_range(indices.len(), |pos| {
        let i = indices[pos];
        let r = bank.record(i);
        let query = Query {
            embedding: &r.embedding,
            tokens: &r.tokens,
            bank_index: self_in_retrieval.then_some(pos),
        };
        let group = select_group(&query, retrieval, config.sigma, config.k, true)?;
        let texts: Vec<Vec<u32>> = group
            .indices()
            .iter()
            .map(|&j| encode(&retrieval.record(j).text))
            .collect();
        let target = build_target(encode(&r.text), texts, &group.scores(), config.lambda)?;
        Ok(Prepared {
            id: i as u64,
            caption: r.embedding.iter().map(|&x| f64::from(x)).collect(),
            group,
            target,
        })
    })
    .into_iter()
    .collect()
}

/// Trains a model on `bank`.
///
/// The vocabulary is built from all bank texts. A held-out slice of the bank
/// (see [`split_indices`]) is removed from the retrieval pool and used for
/// early stopping; the parameters with the lowest held-out loss are
/// returned.
pub fn train(bank: &SentenceBank, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let vocab = Vocabulary::build(
        bank.records().iter().map(|r| r.text.as_str()),
        config.min_count,
    );
    let model_cfg = config.model_config(bank.dim(), vocab.len());
    let mut params = init_params(model_cfg, seed::derive(config.seed, &[INIT]))?;

    let (train_idx, held_idx) = split_indices(bank.len(), config.heldout_fraction, config.seed);
    let train_bank = bank.subset(&train_idx)?;
    if config.k >= train_bank.len() {
        return Err(Error::invalid(
            "k",
            format!(
                "{} needs more than {} training sentences",
                config.k,
                train_bank.len()
            ),
        ));
    }
    let stats = config
        .noise
        .needs_stats()
        .then(|| compute_stats(&train_bank));
    let ctx = Context {
        config,
        noise: NoiseModel::new(config.noise, stats.as_ref(), bank.dim())?,
    };
    let train_items = prepare(bank, &train_bank, &train_idx, true, &vocab, config)?;
    let held_items = prepare(bank, &train_bank, &held_idx, false, &vocab, config)?;
    log::info!(
        "training on {} captions ({} held out), {} parameters, vocabulary {}",
        train_items.len(),
        held_items.len(),
        params.weights.param_count(),
        vocab.len()
    );

    let mut log = TrainLog::default();
    let held_loss = |p: &ModelParams| -> Result<Option<f64>> {
        if held_items.is_empty() {
            Ok(None)
        } else {
            ctx.evaluate(p, &held_items).map(Some)
        }
    };
    let initial = ctx.evaluate(&params, &train_items)?;
    let initial_held = held_loss(&params)?;
    log.records.push(LogRecord {
        epoch: 0,
        batch: None,
        loss: initial,
        heldout_loss: initial_held,
    });

    let mut best = (
        initial_held.unwrap_or(f64::INFINITY),
        0usize,
        params.weights.clone(),
    );
    let mut stale = 0;
    let hp = config.adamw();
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut seed::rng(seed::derive(
            config.seed,
            &[SHUFFLE, epoch as u64],
        )));
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (grads, loss) = batch_gradient(&ctx, &params, &train_items, batch, epoch as u64)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss or gradient at epoch {epoch}, batch {b}"
                )));
            }
            let mut grads = grads;
            if let Some(clip) = config.grad_clip {
                let norm = grads.l2_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            adamw_step(&mut params, &grads, &hp)?;
            epoch_loss += loss * batch.len() as f64;
            log.records.push(LogRecord {
                epoch,
                batch: Some(b),
                loss,
                heldout_loss: None,
            });
        }
        let mean = epoch_loss / train_items.len() as f64;
        let held = held_loss(&params)?;
        log.records.push(LogRecord {
            epoch,
            batch: None,
            loss: mean,
            heldout_loss: held,
        });
        log::info!("epoch {epoch}: loss {mean:.4} held-out {held:?}");
        match held {
            Some(h) if h < best.0 => {
                best = (h, epoch, params.weights.clone());
                stale = 0;
            }
            Some(_) => {
                stale += 1;
                if stale >= config.patience.max(1) {
                    log::info!("early stop after epoch {epoch}");
                    break;
                }
            }
            None => best = (f64::INFINITY, epoch, params.weights.clone()),
        }
    }
    let best_epoch = best.1;
    if best_epoch != log.epochs() {
        params.weights = best.2;
    }
    Ok(TrainOutput {
        params,
        vocab,
        log,
        best_epoch,
    })
}

/// Mean loss and gradient over `batch` (indices into `items`).
fn batch_gradient(
    ctx: &Context<'_>,
    params: &ModelParams,
    items: &[Prepared],
    batch: &[usize],
    epoch: u64,
) -> Result<(Weights, f64)> {
    let seed = ctx.config.seed;
    let chunks: Vec<&[usize]> = batch.chunks(GRAD_CHUNK).collect();
    let parts = par::map(&chunks, |chunk| -> Result<(Weights, f64)> {
        let mut g = Weights::zeros(&params.config);
        let mut loss = 0.0;
        for &i in *chunk {
            let p = &items[i];
            let noise_seed = if ctx.config.redraw_noise {
                seed::derive(seed, &[NOISE, epoch, p.id])
            } else {
                seed::derive(seed, &[NOISE, p.id])
            };
            let w = ctx.weights(p, seed::derive(seed, &[SAMPLE, epoch, p.id]));
            let ex = ctx.example(p, noise_seed, w)?;
            loss += params.loss_and_grad(&ex, &mut g)?.loss;
        }
        Ok((g, loss))
    });
    let mut total = Weights::zeros(&params.config);
    let mut loss = 0.0;
    for part in parts {
        let (g, l) = part?;
        total.add_scaled(&g, 1.0);
        loss += l;
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((total, loss / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp(lr: f64, wd: f64) -> AdamW {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: wd,
            eps: 1e-8,
        }
    }

    #[test]
    fn adamw_first_step_is_lr() {
        let (mut t, mut m, mut v) = ([0.5], [0.0], [0.0]);
        adamw_update(&mut t, &mut m, &mut v, &[1.0], 1, &hp(0.1, 0.0));
        let expect = 0.5 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((t[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn adamw_decay_only() {
        let (mut t, mut m, mut v) = ([2.0, -1.0], [0.0; 2], [0.0; 2]);
        adamw_update(&mut t, &mut m, &mut v, &[0.0, 0.0], 1, &hp(0.01, 0.1));
        assert_eq!(t, [2.0 * (1.0 - 0.001), -(1.0 - 0.001)]);
        let (mut t, mut m, mut v) = ([2.0], [0.0], [0.0]);
        adamw_update(&mut t, &mut m, &mut v, &[0.0], 1, &hp(0.01, 0.0));
        assert_eq!(t, [2.0]);
    }

    #[test]
    fn config_kv_and_validation() {
        let mut c = TrainConfig::default();
        c.apply_kv("# comment\nsigma = 0.3\nk 2\nnoise = scalar\nlearning_rate=0.001\n")
            .unwrap();
        assert_eq!(
            (c.sigma, c.k, c.noise, c.learning_rate),
            (0.3, 2, NoiseMode::ScalarSigma, 0.001)
        );
        let err = c.apply_kv("sigma = 0.1\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        c.sigma = 1.5;
        assert!(matches!(
            c.validate(),
            Err(Error::InvalidParameter { name: "sigma", .. })
        ));
        let c = TrainConfig {
            lambda: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let text = TrainConfig::default().to_string();
        assert!(text.starts_with("sigma=0.5 lambda=1 k=5 noise=element-wise"));
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (a, b) = split_indices(100, 0.05, 9);
        assert_eq!((a.len(), b.len()), (95, 5));
        assert_eq!(split_indices(100, 0.05, 9), (a.clone(), b.clone()));
        assert!(b.iter().all(|i| !a.contains(i)));
        assert_eq!(split_indices(10, 0.05, 1).1.len(), 1);
        assert_eq!(split_indices(1, 0.05, 1).1.len(), 0);
        assert_eq!(split_indices(10, 0.0, 1).1.len(), 0);
    }

    #[test]
    fn log_format() {
        let log = TrainLog {
            records: vec![
                LogRecord {
                    epoch: 0,
                    batch: None,
                    loss: 3.0,
                    heldout_loss: Some(3.1),
                },
                LogRecord {
                    epoch: 1,
                    batch: Some(0),
                    loss: 2.5,
                    heldout_loss: None,
                },
                LogRecord {
                    epoch: 1,
                    batch: None,
                    loss: 2.5,
                    heldout_loss: Some(2.9),
                },
            ],
        };
        assert_eq!(
            log.to_tsv(),
            "epoch\tbatch\tloss\theldout_loss\n0\tend\t3.000000\t3.100000\n1\t0\t2.500000\t-\n1\tend\t2.500000\t2.900000\n"
        );
        assert_eq!(
            (log.initial_loss(), log.final_loss(), log.epochs()),
            (Some(3.0), Some(2.5), 1)
        );
    }
}
