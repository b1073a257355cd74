//! Parameter tensors for the fusion module and the decoder.
//!
//! Gradients and optimizer moments reuse the same [`Weights`] type, so
//! every update is a zip over [`Weights::tensors`] in declaration order.
//! That order is also the on-disk checkpoint order.

use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    fn normal(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Self {
        let dist = Normal::new(0.0, std).expect("positive std");
        Tensor {
            rows,
            cols,
            data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    /// Slot position embeddings; `0 × d` when positions are disabled.
    pub pos: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub prefix_w: Tensor,
    pub prefix_b: Tensor,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub blocks: Vec<BlockWeights>,
    pub lnf_g: Tensor,
    pub lnf_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub fusion: FusionWeights,
    pub decoder: DecoderWeights,
}

/// Std of the random normal initialization for matrices and embeddings.
pub const INIT_STD: f64 = 0.02;

impl Weights {
    /// All-zero weights with the shapes `config` implies.
    pub fn zeros(config: &ModelConfig) -> Self {
        Self::build(config, &mut |r, c, _| Tensor::zeros(r, c))
    }

    /// Scaled random initialization, deterministic per seed.
    ///
    /// Matrices and embeddings are `N(0, 0.02²)`; the output projections of
    /// residual branches in the decoder are further scaled by `1/√(2L)`.
    /// Layer-norm gains start at 1, biases at 0.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        Self::init_with_std(config, seed, INIT_STD)
    }

    pub fn init_with_std(config: &ModelConfig, seed: u64, std: f64) -> Self {
        let mut rng = seed::rng(seed);
        let resid = std / ((2 * config.layers.max(1)) as f64).sqrt();
        Self::build(config, &mut |r, c, kind| match kind {
            Init::Normal => Tensor::normal(r, c, std, &mut rng),
            Init::Residual => Tensor::normal(r, c, resid, &mut rng),
            Init::Zero => Tensor::zeros(r, c),
            Init::One => Tensor::filled(r, c, 1.0),
        })
    }

    fn build(cfg: &ModelConfig, make: &mut dyn FnMut(usize, usize, Init) -> Tensor) -> Self {
        let e = cfg.embed_dim;
        let d = cfg.model_dim;
        let slots = if cfg.fusion_positions {
            cfg.max_slots
        } else {
            0
        };
        let fusion = FusionWeights {
            pos: make(slots, e, Init::Normal),
            ffn_w1: make(e, cfg.fusion_ffn_dim, Init::Normal),
            ffn_b1: make(1, cfg.fusion_ffn_dim, Init::Zero),
            ffn_w2: make(cfg.fusion_ffn_dim, e, Init::Normal),
            ffn_b2: make(1, e, Init::Zero),
            wq: make(e, e, Init::Normal),
            wk: make(e, e, Init::Normal),
            wv: make(e, e, Init::Normal),
            wo: make(e, e, Init::Normal),
        };
        let prefix_w = make(e, d, Init::Normal);
        let prefix_b = make(1, d, Init::Zero);
        let tok_emb = make(cfg.vocab_size, d, Init::Normal);
        let pos_emb = make(cfg.context_len(), d, Init::Normal);
        let blocks = (0..cfg.layers)
            .map(|_| BlockWeights {
                ln1_g: make(1, d, Init::One),
                ln1_b: make(1, d, Init::Zero),
                wq: make(d, d, Init::Normal),
                wk: make(d, d, Init::Normal),
                wv: make(d, d, Init::Normal),
                wo: make(d, d, Init::Residual),
                ln2_g: make(1, d, Init::One),
                ln2_b: make(1, d, Init::Zero),
                ffn_w1: make(d, cfg.ffn_dim, Init::Normal),
                ffn_b1: make(1, cfg.ffn_dim, Init::Zero),
                ffn_w2: make(cfg.ffn_dim, d, Init::Residual),
                ffn_b2: make(1, d, Init::Zero),
            })
            .collect();
        let decoder = DecoderWeights {
            prefix_w,
            prefix_b,
            tok_emb,
            pos_emb,
            blocks,
            lnf_g: make(1, d, Init::One),
            lnf_b: make(1, d, Init::Zero),
            out_w: make(d, cfg.vocab_size, Init::Normal),
            out_b: make(1, cfg.vocab_size, Init::Zero),
        };
        Weights { fusion, decoder }
    }

    /// Tensors with their names, in declaration (checkpoint) order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let f = &self.fusion;
        let dec = &self.decoder;
        let mut out: Vec<(String, &Tensor)> = vec![
            ("fusion.pos".into(), &f.pos),
            ("fusion.ffn_w1".into(), &f.ffn_w1),
            ("fusion.ffn_b1".into(), &f.ffn_b1),
            ("fusion.ffn_w2".into(), &f.ffn_w2),
            ("fusion.ffn_b2".into(), &f.ffn_b2),
            ("fusion.wq".into(), &f.wq),
            ("fusion.wk".into(), &f.wk),
            ("fusion.wv".into(), &f.wv),
            ("fusion.wo".into(), &f.wo),
            ("decoder.prefix_w".into(), &dec.prefix_w),
            ("decoder.prefix_b".into(), &dec.prefix_b),
            ("decoder.tok_emb".into(), &dec.tok_emb),
            ("decoder.pos_emb".into(), &dec.pos_emb),
        ];
        for (i, b) in dec.blocks.iter().enumerate() {
            let p = format!("decoder.block{i}");
            out.extend([
                (format!("{p}.ln1_g"), &b.ln1_g),
                (format!("{p}.ln1_b"), &b.ln1_b),
                (format!("{p}.wq"), &b.wq),
                (format!("{p}.wk"), &b.wk),
                (format!("{p}.wv"), &b.wv),
                (format!("{p}.wo"), &b.wo),
                (format!("{p}.ln2_g"), &b.ln2_g),
                (format!("{p}.ln2_b"), &b.ln2_b),
                (format!("{p}.ffn_w1"), &b.ffn_w1),
                (format!("{p}.ffn_b1"), &b.ffn_b1),
                (format!("{p}.ffn_w2"), &b.ffn_w2),
                (format!("{p}.ffn_b2"), &b.ffn_b2),
            ]);
        }
        out.extend([
            ("decoder.lnf_g".into(), &dec.lnf_g),
            ("decoder.lnf_b".into(), &dec.lnf_b),
            ("decoder.out_w".into(), &dec.out_w),
            ("decoder.out_b".into(), &dec.out_b),
        ]);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    /// Mutable tensors in the same order as [`Weights::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let f = &mut self.fusion;
        let dec = &mut self.decoder;
        let mut out: Vec<&mut Tensor> = vec![
            &mut f.pos,
            &mut f.ffn_w1,
            &mut f.ffn_b1,
            &mut f.ffn_w2,
            &mut f.ffn_b2,
            &mut f.wq,
            &mut f.wk,
            &mut f.wv,
            &mut f.wo,
            &mut dec.prefix_w,
            &mut dec.prefix_b,
            &mut dec.tok_emb,
            &mut dec.pos_emb,
        ];
        for b in &mut dec.blocks {
            out.extend([
                &mut b.ln1_g,
                &mut b.ln1_b,
                &mut b.wq,
                &mut b.wk,
                &mut b.wv,
                &mut b.wo,
                &mut b.ln2_g,
                &mut b.ln2_b,
                &mut b.ffn_w1,
                &mut b.ffn_b1,
                &mut b.ffn_w2,
                &mut b.ffn_b2,
            ]);
        }
        out.extend([
            &mut dec.lnf_g,
            &mut dec.lnf_b,
            &mut dec.out_w,
            &mut dec.out_b,
        ]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Weights, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// True when every tensor has the same shape as in `other`.
    pub fn same_shape(&self, other: &Weights) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|(x, y)| x.rows == y.rows && x.cols == y.cols)
    }
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Residual,
    Zero,
    One,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listing_orders_agree() {
        let cfg = ModelConfig::tiny(8, 12);
        let mut w = Weights::init(&cfg, 1);
        let shapes: Vec<(usize, usize)> = w.tensors().iter().map(|t| (t.rows, t.cols)).collect();
        let shapes_mut: Vec<(usize, usize)> =
            w.tensors_mut().iter().map(|t| (t.rows, t.cols)).collect();
        assert_eq!(shapes, shapes_mut);
        assert_eq!(w.named_tensors().len(), 13 + 12 * cfg.layers + 4);
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::tiny(8, 12);
        assert_eq!(Weights::init(&cfg, 5), Weights::init(&cfg, 5));
        assert_ne!(Weights::init(&cfg, 5), Weights::init(&cfg, 6));
    }
}
