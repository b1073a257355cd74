//! Caption generation from frame embeddings.
//!
//! Frames are averaged into a content vector and `k` frames are sampled
//! uniformly (endpoints included) to form the semantic group. Every one of
//! these vectors is projected into the text embedding space as a
//! temperature-softmax-weighted sum of bank embeddings, the `k+1` projected
//! vectors are fused, and the decoder is searched with a length-normalized
//! beam.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use crate::bank::SentenceBank;
use crate::binio::{put_f32s, Reader};
use crate::error::{Error, Result};
use crate::model::vocab::{Vocabulary, BOS, EOS, PAD};
use crate::model::{ops, ModelParams};
use crate::supervision::softmax;

const MAGIC: &[u8; 4] = b"SGCF";
const VERSION: u32 = 1;

/// Precomputed frame embeddings of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub video_id: String,
    dim: usize,
    frames: Vec<Vec<f32>>,
}

impl FrameSet {
    pub fn new(video_id: impl Into<String>, frames: Vec<Vec<f32>>) -> Result<Self> {
        let dim = frames.first().ok_or(Error::Empty("frame set"))?.len();
        if dim == 0 {
            return Err(Error::Empty("frame embedding"));
        }
        for f in &frames {
            if f.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: f.len(),
                });
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("frame embedding".into()));
            }
        }
        Ok(FrameSet {
            video_id: video_id.into(),
            dim,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> &[Vec<f32>] {
        &self.frames
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let id_len = u32::try_from(self.video_id.len())
            .map_err(|_| Error::invalid("video-id", "too long"))?;
        let mut out =
            Vec::with_capacity(20 + self.video_id.len() + self.frames.len() * self.dim * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(self.video_id.as_bytes());
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for f in &self.frames {
            put_f32s(&mut out, f.iter().copied());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        rd.magic(MAGIC, VERSION)?;
        let id_len = rd.u32("video-id length")? as usize;
        let video_id = rd.utf8(id_len, "video id")?;
        let n = rd.u32("frame count")? as usize;
        let d = rd.u32("dimension")? as usize;
        if n == 0 {
            return Err(Error::Empty("frame file"));
        }
        if d == 0 {
            return Err(Error::Empty("frame embedding"));
        }
        if (n as u64) * (d as u64) * 4 > bytes.len() as u64 {
            return Err(Error::Truncated(format!(
                "frame file declaring {n}×{d} values"
            )));
        }
        let mut frames = Vec::with_capacity(n);
        for i in 0..n {
            frames.push(rd.f32s(d, &format!("frame {i}"))?);
        }
        rd.finish()?;
        FrameSet::new(video_id, frames)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        FrameSet::from_bytes(&fs::read(path)?)
    }
}

/// Mean of all frames.
pub fn pool_frames(frames: &FrameSet) -> Vec<f64> {
    let mut mean = vec![0.0; frames.dim];
    for f in &frames.frames {
        for (m, &x) in mean.iter_mut().zip(f) {
            *m += f64::from(x);
        }
    }
    let n = frames.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// `num / den` rounded to nearest, ties to even.
fn round_div(num: usize, den: usize) -> usize {
    let (q, r) = (num / den, num % den);
    match (2 * r).cmp(&den) {
        Ordering::Less => q,
        Ordering::Greater => q + 1,
        Ordering::Equal => q + (q & 1),
    }
}

/// Indices `round(j·(n−1)/(k−1))` for `j = 0..k`; the middle frame for
/// `k = 1`, nothing for `k = 0`. Repeats when `k > n`.
pub fn sample_frame_indices(n: usize, k: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Empty("frame set"));
    }
    Ok(match k {
        0 => Vec::new(),
        1 => vec![round_div(n - 1, 2)],
        _ => (0..k).map(|j| round_div(j * (n - 1), k - 1)).collect(),
    })
}

pub fn sample_frames(frames: &FrameSet, k: usize) -> Result<Vec<Vec<f64>>> {
    Ok(sample_frame_indices(frames.len(), k)?
        .into_iter()
        .map(|i| frames.frames[i].iter().map(|&x| f64::from(x)).collect())
        .collect())
}

/// Softmax over bank sentences of `cosine(visual, T_i) / tau`.
///
/// A zero visual vector has no direction; every sentence then gets the same
/// weight and a warning is logged.
pub fn domain_transfer_weights(visual: &[f64], bank: &SentenceBank, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau", format!("{tau} must be positive")));
    }
    if visual.len() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: visual.len(),
        });
    }
    if visual.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("visual embedding".into()));
    }
    let vnorm = ops::dot(visual, visual).sqrt();
    if vnorm == 0.0 {
        log::warn!("zero visual vector: domain transfer falls back to the bank mean");
        return Ok(vec![1.0 / bank.len() as f64; bank.len()]);
    }
    let scaled: Vec<f64> = bank
        .records()
        .iter()
        .zip(bank.norms())
        .map(|(r, &n)| {
            let cos = if n == 0.0 {
                0.0
            } else {
                let dot: f64 = r
                    .embedding
                    .iter()
                    .zip(visual)
                    .map(|(&a, &b)| f64::from(a) * b)
                    .sum();
                (dot / (vnorm * n)).clamp(-1.0, 1.0)
            };
            cos / tau
        })
        .collect();
    Ok(softmax(&scaled))
}

/// Projects `visual` into the text embedding space.
pub fn domain_transfer(visual: &[f64], bank: &SentenceBank, tau: f64) -> Result<Vec<f64>> {
    let weights = domain_transfer_weights(visual, bank, tau)?;
    let mut out = vec![0.0; bank.dim()];
    for (r, &w) in bank.records().iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        for (o, &x) in out.iter_mut().zip(&r.embedding) {
            *o += w * f64::from(x);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionHypothesis {
    /// Generated tokens, without BOS; ends with EOS when `finished`.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

impl CaptionHypothesis {
    /// Log-probability per generated token.
    pub fn score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }
}

fn rank_hypotheses(a: &CaptionHypothesis, b: &CaptionHypothesis) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn check_max_len(params: &ModelParams, max_len: usize) -> Result<()> {
    if max_len == 0 {
        return Err(Error::invalid("max-len", "must be at least 1"));
    }
    if max_len > params.config.max_tokens {
        return Err(Error::invalid(
            "max-len",
            format!(
                "{max_len} exceeds the model's {} token positions",
                params.config.max_tokens
            ),
        ));
    }
    Ok(())
}

/// Next-token log-probabilities with PAD and BOS excluded.
fn step_log_probs(params: &ModelParams, prefix: &[Vec<f64>], tokens: &[u32]) -> Result<Vec<f64>> {
    let mut ids = Vec::with_capacity(tokens.len() + 1);
    ids.push(BOS);
    ids.extend_from_slice(tokens);
    let mut logits = params.logits(prefix, &ids)?.pop().expect("nonempty input");
    logits[PAD as usize] = f64::NEG_INFINITY;
    logits[BOS as usize] = f64::NEG_INFINITY;
    Ok(ops::log_softmax(&logits))
}

/// Highest-probability token at every step; ties go to the lower id.
pub fn greedy(
    params: &ModelParams,
    prefix: &[Vec<f64>],
    max_len: usize,
) -> Result<CaptionHypothesis> {
    check_max_len(params, max_len)?;
    let mut hyp = CaptionHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while hyp.tokens.len() < max_len {
        let lp = step_log_probs(params, prefix, &hyp.tokens)?;
        let (best, &l) = lp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("nonempty vocabulary");
        hyp.tokens.push(best as u32);
        hyp.log_prob += l;
        if best as u32 == EOS {
            hyp.finished = true;
            break;
        }
    }
    Ok(hyp)
}

/// Beam search. Expansions are pruned by cumulative log-probability; a
/// hypothesis leaves the beam when it emits EOS. Returned hypotheses (finished
/// ones plus any still open at `max_len`) are ranked by [`CaptionHypothesis::score`].
pub fn beam_search(
    params: &ModelParams,
    prefix: &[Vec<f64>],
    beam_size: usize,
    max_len: usize,
) -> Result<Vec<CaptionHypothesis>> {
    check_max_len(params, max_len)?;
    if beam_size == 0 {
        return Err(Error::invalid("beam", "must be at least 1"));
    }
    let mut live = vec![CaptionHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut done = Vec::new();
    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut expansions = Vec::with_capacity(live.len() * beam_size);
        for h in &live {
            let lp = step_log_probs(params, prefix, &h.tokens)?;
            let mut order: Vec<usize> = (0..lp.len()).filter(|&t| lp[t].is_finite()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            for &t in order.iter().take(beam_size) {
                let mut tokens = h.tokens.clone();
                tokens.push(t as u32);
                expansions.push(CaptionHypothesis {
                    tokens,
                    log_prob: h.log_prob + lp[t],
                    finished: t as u32 == EOS,
                });
            }
        }
        expansions.sort_by(|a, b| {
            b.log_prob
                .total_cmp(&a.log_prob)
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        expansions.truncate(beam_size);
        live.clear();
        for h in expansions {
            if h.finished {
                done.push(h);
            } else {
                live.push(h);
            }
        }
    }
    done.extend(live);
    done.sort_by(rank_hypotheses);
    Ok(done)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateConfig {
    pub k: usize,
    pub tau: f64,
    pub beam_size: usize,
    pub max_len: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            k: 5,
            tau: 0.01,
            beam_size: 5,
            max_len: 30,
        }
    }
}

/// The fused prefix for a video: pooled vector first, then the `k` sampled
/// frames, each domain-transferred before fusion.
pub fn video_prefix(
    frames: &FrameSet,
    bank: &SentenceBank,
    params: &ModelParams,
    k: usize,
    tau: f64,
) -> Result<Vec<Vec<f64>>> {
    if frames.dim() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: frames.dim(),
        });
    }
    let main = domain_transfer(&pool_frames(frames), bank, tau)?;
    let group = sample_frames(frames, k)?
        .iter()
        .map(|f| domain_transfer(f, bank, tau))
        .collect::<Result<Vec<_>>>()?;
    params.fuse(&main, &group)
}

/// Ranked caption hypotheses for one video.
pub fn generate(
    frames: &FrameSet,
    bank: &SentenceBank,
    params: &ModelParams,
    config: &GenerateConfig,
) -> Result<Vec<CaptionHypothesis>> {
    let prefix = video_prefix(frames, bank, params, config.k, config.tau)?;
    beam_search(params, &prefix, config.beam_size, config.max_len)
}

/// One output line: `video-id <TAB> caption <TAB> normalized log-prob`.
pub fn format_caption(video_id: &str, hyp: &CaptionHypothesis, vocab: &Vocabulary) -> String {
    format!(
        "{video_id}\t{}\t{:.6}",
        vocab.decode(&hyp.tokens),
        hyp.score()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::SentenceRecord;
    use crate::model::{init_params, ModelConfig};

    fn bank(embs: &[&[f32]]) -> SentenceBank {
        SentenceBank::build(
            embs.iter()
                .enumerate()
                .map(|(i, e)| {
                    SentenceRecord::new(format!("s{i}"), Vec::<String>::new(), e.to_vec())
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pooling() {
        let f = FrameSet::new("v", vec![vec![0.0, 0.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(pool_frames(&f), vec![1.0, 2.0]);
        let one = FrameSet::new("v", vec![vec![0.25, -1.0]]).unwrap();
        assert_eq!(pool_frames(&one), vec![0.25, -1.0]);
        assert!(FrameSet::new("v", vec![]).is_err());
    }

    #[test]
    fn frame_sampling_formula() {
        assert_eq!(sample_frame_indices(10, 5).unwrap(), vec![0, 2, 4, 7, 9]);
        assert_eq!(sample_frame_indices(9, 1).unwrap(), vec![4]);
        assert_eq!(
            sample_frame_indices(6, 6).unwrap(),
            (0..6).collect::<Vec<_>>()
        );
        assert_eq!(sample_frame_indices(2, 5).unwrap(), vec![0, 0, 0, 1, 1]);
        assert_eq!(sample_frame_indices(1, 3).unwrap(), vec![0, 0, 0]);
        assert!(sample_frame_indices(4, 0).unwrap().is_empty());
    }

    #[test]
    fn transfer_cases() {
        let b = bank(&[&[1.0, 2.0, 3.0]]);
        let out = domain_transfer(&[0.3, -1.0, 0.2], &b, 0.01).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 3.0]);
        let b = bank(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let out = domain_transfer(&[1.0, 1.0], &b, 0.01).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-12 && (out[1] - 0.5).abs() < 1e-12);
        let zero = domain_transfer(&[0.0, 0.0], &b, 0.01).unwrap();
        assert_eq!(zero, vec![0.5, 0.5]);
        assert!(domain_transfer(&[1.0, 0.0], &b, 0.0).is_err());
        let sharp = domain_transfer(&[1.0, 0.2], &b, 1e-6).unwrap();
        assert!((sharp[0] - 1.0).abs() < 1e-9 && sharp[1].abs() < 1e-9);
    }

    #[test]
    fn frame_file_round_trip() {
        let f = FrameSet::new("vid-é", vec![vec![1.0, 2.0], vec![-3.5, 0.25]]).unwrap();
        let bytes = f.to_bytes().unwrap();
        assert_eq!(FrameSet::from_bytes(&bytes).unwrap(), f);
        assert!(matches!(
            FrameSet::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated(_))
        ));
        let mut bad = bytes.clone();
        bad[3] = b'B';
        assert!(matches!(FrameSet::from_bytes(&bad), Err(Error::Format(_))));
    }

    fn model(seed: u64) -> ModelParams {
        let cfg = ModelConfig::tiny(8, 15);
        let mut p = init_params(cfg.clone(), seed).unwrap();
        p.weights = crate::model::Weights::init_with_std(&cfg, seed, 0.5);
        p
    }

    #[test]
    fn beam_one_is_greedy() {
        let p = model(1);
        let prefix = vec![vec![0.3; 8], vec![-0.2; 8]];
        let g = greedy(&p, &prefix, 8).unwrap();
        let b = beam_search(&p, &prefix, 1, 8).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].tokens, g.tokens);
        assert!((b[0].log_prob - g.log_prob).abs() < 1e-12);
    }

    #[test]
    fn unfinished_at_max_len() {
        let p = model(2);
        let prefix = vec![vec![0.1; 8]];
        let h = greedy(&p, &prefix, 1).unwrap();
        assert_eq!(h.tokens.len(), 1);
        assert_eq!(h.finished, h.tokens[0] == EOS);
        for h in beam_search(&p, &prefix, 3, 2).unwrap() {
            assert!(h.tokens.len() <= 2);
            assert_eq!(h.finished, h.tokens.last() == Some(&EOS));
            assert!(h.log_prob <= 0.0);
        }
        assert!(greedy(&p, &prefix, 11).is_err());
    }
}
