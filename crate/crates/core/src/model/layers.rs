//! Forward passes that record activations, and the matching backward passes.
//!
//! Fusion (over `P = k+1` slots of width `e`):
//!
//! ```text
//! X  = slots (+ slot positions)
//! H  = X + W2·gelu(W1·X + b1) + b2        shared FFN, residual
//! O  = H + MHSA(H)                        bidirectional, residual
//! ```
//!
//! Decoder (width `D`, pre-norm blocks, causal over prefix + tokens):
//!
//! ```text
//! x[0..P]   = O·Wp + bp + pos[0..P]
//! x[P..P+T] = tok_emb[ids] + pos[P..P+T]
//! block:  x = x + MHSA(LN1(x));  x = x + FFN(LN2(x))
//! logits    = LNf(x[P..]) · Wout + bout
//! ```

use super::ops::{self, AttnCache, AttnGrads, AttnWeights, LnCache};
use super::params::{BlockWeights, DecoderWeights, FusionWeights};
use super::ModelConfig;

pub(crate) struct FusionTrace {
    x: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    hidden: Vec<f64>,
    attn: AttnCache,
}

fn fusion_attn(w: &FusionWeights) -> AttnWeights<'_> {
    AttnWeights {
        wq: &w.wq.data,
        wk: &w.wk.data,
        wv: &w.wv.data,
        wo: &w.wo.data,
    }
}

/// `slots` is `P × e`, row-major.
pub(crate) fn fusion_forward(
    w: &FusionWeights,
    cfg: &ModelConfig,
    slots: &[f64],
) -> (Vec<f64>, FusionTrace) {
    let e = cfg.embed_dim;
    let f = cfg.fusion_ffn_dim;
    let p = slots.len() / e;
    let mut x = slots.to_vec();
    if cfg.fusion_positions {
        ops::add_into(&mut x, &w.pos.data[..p * e]);
    }
    let mut pre = ops::matmul(&x, &w.ffn_w1.data, p, e, f);
    ops::add_bias(&mut pre, &w.ffn_b1.data);
    let act: Vec<f64> = pre.iter().map(|&v| ops::gelu(v)).collect();
    let mut hidden = ops::matmul(&act, &w.ffn_w2.data, p, f, e);
    ops::add_bias(&mut hidden, &w.ffn_b2.data);
    ops::add_into(&mut hidden, &x);
    let (mut out, attn) = ops::attention(&hidden, &fusion_attn(w), e, cfg.fusion_heads, false);
    ops::add_into(&mut out, &hidden);
    (
        out,
        FusionTrace {
            x,
            pre,
            act,
            hidden,
            attn,
        },
    )
}

pub(crate) fn fusion_backward(
    w: &FusionWeights,
    cfg: &ModelConfig,
    trace: &FusionTrace,
    dout: &[f64],
    g: &mut FusionWeights,
) {
    let e = cfg.embed_dim;
    let f = cfg.fusion_ffn_dim;
    let p = dout.len() / e;
    let mut dhidden = dout.to_vec();
    ops::attention_back(
        dout,
        &trace.hidden,
        &trace.attn,
        &fusion_attn(w),
        AttnGrads {
            wq: &mut g.wq.data,
            wk: &mut g.wk.data,
            wv: &mut g.wv.data,
            wo: &mut g.wo.data,
        },
        e,
        cfg.fusion_heads,
        false,
        &mut dhidden,
    );
    let mut dx = dhidden.clone();
    ops::bias_back(&dhidden, &mut g.ffn_b2.data);
    let mut dact = vec![0.0; p * f];
    ops::matmul_back(
        &trace.act,
        &w.ffn_w2.data,
        &dhidden,
        p,
        f,
        e,
        Some(&mut dact),
        &mut g.ffn_w2.data,
    );
    let dpre: Vec<f64> = dact
        .iter()
        .zip(&trace.pre)
        .map(|(&da, &z)| da * ops::gelu_grad(z))
        .collect();
    ops::bias_back(&dpre, &mut g.ffn_b1.data);
    ops::matmul_back(
        &trace.x,
        &w.ffn_w1.data,
        &dpre,
        p,
        e,
        f,
        Some(&mut dx),
        &mut g.ffn_w1.data,
    );
    if cfg.fusion_positions {
        ops::add_into(&mut g.pos.data[..p * e], &dx);
    }
}

struct BlockTrace {
    ln1: LnCache,
    a: Vec<f64>,
    attn: AttnCache,
    ln2: LnCache,
    b: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

pub(crate) struct DecoderTrace {
    prefix: Vec<f64>,
    ids: Vec<u32>,
    blocks: Vec<BlockTrace>,
    lnf: LnCache,
    z: Vec<f64>,
}

fn block_attn(b: &BlockWeights) -> AttnWeights<'_> {
    AttnWeights {
        wq: &b.wq.data,
        wk: &b.wk.data,
        wv: &b.wv.data,
        wo: &b.wo.data,
    }
}

fn block_forward(b: &BlockWeights, cfg: &ModelConfig, x: Vec<f64>) -> (Vec<f64>, BlockTrace) {
    let d = cfg.model_dim;
    let f = cfg.ffn_dim;
    let n = x.len() / d;
    let (a, ln1) = ops::layer_norm(&x, &b.ln1_g.data, &b.ln1_b.data);
    let (att, attn) = ops::attention(&a, &block_attn(b), d, cfg.heads, true);
    let mut x1 = x;
    ops::add_into(&mut x1, &att);
    let (bn, ln2) = ops::layer_norm(&x1, &b.ln2_g.data, &b.ln2_b.data);
    let mut pre = ops::matmul(&bn, &b.ffn_w1.data, n, d, f);
    ops::add_bias(&mut pre, &b.ffn_b1.data);
    let act: Vec<f64> = pre.iter().map(|&v| ops::gelu(v)).collect();
    let mut ffn = ops::matmul(&act, &b.ffn_w2.data, n, f, d);
    ops::add_bias(&mut ffn, &b.ffn_b2.data);
    ops::add_into(&mut x1, &ffn);
    (
        x1,
        BlockTrace {
            ln1,
            a,
            attn,
            ln2,
            b: bn,
            pre,
            act,
        },
    )
}

/// Returns `dx` given `dout` for one block.
fn block_backward(
    b: &BlockWeights,
    cfg: &ModelConfig,
    t: &BlockTrace,
    dout: &[f64],
    g: &mut BlockWeights,
) -> Vec<f64> {
    let d = cfg.model_dim;
    let f = cfg.ffn_dim;
    let n = dout.len() / d;
    // FFN branch
    let mut dx1 = dout.to_vec();
    ops::bias_back(dout, &mut g.ffn_b2.data);
    let mut dact = vec![0.0; n * f];
    ops::matmul_back(
        &t.act,
        &b.ffn_w2.data,
        dout,
        n,
        f,
        d,
        Some(&mut dact),
        &mut g.ffn_w2.data,
    );
    let dpre: Vec<f64> = dact
        .iter()
        .zip(&t.pre)
        .map(|(&da, &z)| da * ops::gelu_grad(z))
        .collect();
    ops::bias_back(&dpre, &mut g.ffn_b1.data);
    let mut db = vec![0.0; n * d];
    ops::matmul_back(
        &t.b,
        &b.ffn_w1.data,
        &dpre,
        n,
        d,
        f,
        Some(&mut db),
        &mut g.ffn_w1.data,
    );
    ops::layer_norm_back(
        &db,
        &t.ln2,
        &b.ln2_g.data,
        &mut dx1,
        &mut g.ln2_g.data,
        &mut g.ln2_b.data,
    );
    // attention branch
    let mut dx = dx1.clone();
    let mut da = vec![0.0; n * d];
    ops::attention_back(
        &dx1,
        &t.a,
        &t.attn,
        &block_attn(b),
        AttnGrads {
            wq: &mut g.wq.data,
            wk: &mut g.wk.data,
            wv: &mut g.wv.data,
            wo: &mut g.wo.data,
        },
        d,
        cfg.heads,
        true,
        &mut da,
    );
    ops::layer_norm_back(
        &da,
        &t.ln1,
        &b.ln1_g.data,
        &mut dx,
        &mut g.ln1_g.data,
        &mut g.ln1_b.data,
    );
    dx
}

/// `prefix` is `P × e` (fused slots), `ids` the `T` input token ids.
/// Returns `T × v` logits.
pub(crate) fn decoder_forward(
    w: &DecoderWeights,
    cfg: &ModelConfig,
    prefix: &[f64],
    ids: &[u32],
) -> (Vec<f64>, DecoderTrace) {
    let e = cfg.embed_dim;
    let d = cfg.model_dim;
    let v = cfg.vocab_size;
    let p = prefix.len() / e;
    let t = ids.len();
    let n = p + t;
    let mut x = ops::matmul(prefix, &w.prefix_w.data, p, e, d);
    ops::add_bias(&mut x, &w.prefix_b.data);
    x.reserve(t * d);
    for &id in ids {
        x.extend_from_slice(w.tok_emb.row(id as usize));
    }
    ops::add_into(&mut x, &w.pos_emb.data[..n * d]);
    let mut blocks = Vec::with_capacity(w.blocks.len());
    for b in &w.blocks {
        let (next, trace) = block_forward(b, cfg, x);
        blocks.push(trace);
        x = next;
    }
    let (z, lnf) = ops::layer_norm(&x[p * d..], &w.lnf_g.data, &w.lnf_b.data);
    let mut logits = ops::matmul(&z, &w.out_w.data, t, d, v);
    ops::add_bias(&mut logits, &w.out_b.data);
    (
        logits,
        DecoderTrace {
            prefix: prefix.to_vec(),
            ids: ids.to_vec(),
            blocks,
            lnf,
            z,
        },
    )
}

/// Accumulates parameter gradients and returns `d prefix` (`P × e`).
pub(crate) fn decoder_backward(
    w: &DecoderWeights,
    cfg: &ModelConfig,
    trace: &DecoderTrace,
    dlogits: &[f64],
    g: &mut DecoderWeights,
) -> Vec<f64> {
    let e = cfg.embed_dim;
    let d = cfg.model_dim;
    let v = cfg.vocab_size;
    let p = trace.prefix.len() / e;
    let t = trace.ids.len();
    let n = p + t;

    ops::bias_back(dlogits, &mut g.out_b.data);
    let mut dz = vec![0.0; t * d];
    ops::matmul_back(
        &trace.z,
        &w.out_w.data,
        dlogits,
        t,
        d,
        v,
        Some(&mut dz),
        &mut g.out_w.data,
    );
    let mut dx = vec![0.0; n * d];
    ops::layer_norm_back(
        &dz,
        &trace.lnf,
        &w.lnf_g.data,
        &mut dx[p * d..],
        &mut g.lnf_g.data,
        &mut g.lnf_b.data,
    );
    for ((b, bt), bg) in w
        .blocks
        .iter()
        .zip(&trace.blocks)
        .zip(g.blocks.iter_mut())
        .rev()
    {
        dx = block_backward(b, cfg, bt, &dx, bg);
    }
    ops::add_into(&mut g.pos_emb.data[..n * d], &dx);
    for (i, &id) in trace.ids.iter().enumerate() {
        ops::add_into(
            g.tok_emb.row_mut(id as usize),
            &dx[(p + i) * d..(p + i + 1) * d],
        );
    }
    let dpx = &dx[..p * d];
    ops::bias_back(dpx, &mut g.prefix_b.data);
    let mut dprefix = vec![0.0; p * e];
    ops::matmul_back(
        &trace.prefix,
        &w.prefix_w.data,
        dpx,
        p,
        e,
        d,
        Some(&mut dprefix),
        &mut g.prefix_w.data,
    );
    dprefix
}
