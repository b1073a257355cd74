//! Dense kernels over row-major `f64` slices, each with its backward pass.
//!
//! Shapes are passed explicitly. Backward functions *accumulate* into their
//! gradient outputs so that several uses of one weight sum correctly.

pub const LN_EPS: f64 = 1e-5;

/// `x (n×k) · w (k×m)`.
pub fn matmul(x: &[f64], w: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), n * k);
    debug_assert_eq!(w.len(), k * m);
    let mut out = vec![0.0; n * m];
    for (xi, oi) in x.chunks_exact(k).zip(out.chunks_exact_mut(m)) {
        for (&a, wp) in xi.iter().zip(w.chunks_exact(m)) {
            if a != 0.0 {
                for (o, &b) in oi.iter_mut().zip(wp) {
                    *o += a * b;
                }
            }
        }
    }
    out
}

/// Backward of [`matmul`]: `dx += dy·wᵀ`, `dw += xᵀ·dy`.
pub fn matmul_back(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    n: usize,
    k: usize,
    m: usize,
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
) {
    debug_assert_eq!(dy.len(), n * m);
    if let Some(dx) = dx {
        for (dxi, dyi) in dx.chunks_exact_mut(k).zip(dy.chunks_exact(m)) {
            for (d, wp) in dxi.iter_mut().zip(w.chunks_exact(m)) {
                *d += dot(dyi, wp);
            }
        }
    }
    for (xi, dyi) in x.chunks_exact(k).zip(dy.chunks_exact(m)) {
        for (&a, dwp) in xi.iter().zip(dw.chunks_exact_mut(m)) {
            if a != 0.0 {
                for (g, &d) in dwp.iter_mut().zip(dyi) {
                    *g += a * d;
                }
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add_bias(y: &mut [f64], b: &[f64]) {
    for row in y.chunks_exact_mut(b.len()) {
        for (v, &bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

pub fn bias_back(dy: &[f64], db: &mut [f64]) {
    let m = db.len();
    for row in dy.chunks_exact(m) {
        for (g, &d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
}

pub fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

/// Row-wise layer norm of an `n×d` matrix.
pub fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let d = g.len();
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = h * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_back(
    dy: &[f64],
    cache: &LnCache,
    g: &[f64],
    dx: &mut [f64],
    dg: &mut [f64],
    db: &mut [f64],
) {
    let d = g.len();
    let mut dxhat = vec![0.0; d];
    for (i, &r) in cache.rstd.iter().enumerate() {
        let dyi = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        for j in 0..d {
            dg[j] += dyi[j] * xh[j];
            db[j] += dyi[j];
            dxhat[j] = dyi[j] * g[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dot(&dxhat, xh) / d as f64;
        for j in 0..d {
            dx[i * d + j] += r * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

/// Projection weights of one multi-head self-attention layer (no biases).
pub struct AttnWeights<'a> {
    pub wq: &'a [f64],
    pub wk: &'a [f64],
    pub wv: &'a [f64],
    pub wo: &'a [f64],
}

pub struct AttnGrads<'a> {
    pub wq: &'a mut [f64],
    pub wk: &'a mut [f64],
    pub wv: &'a mut [f64],
    pub wo: &'a mut [f64],
}

pub struct AttnCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads × n × n`; masked entries are exactly 0.
    probs: Vec<f64>,
    ctx: Vec<f64>,
}

/// Multi-head self-attention over `n` rows of width `d`, returning `ctx·wo`.
pub fn attention(
    x: &[f64],
    w: &AttnWeights<'_>,
    d: usize,
    heads: usize,
    causal: bool,
) -> (Vec<f64>, AttnCache) {
    let n = x.len() / d;
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let q = matmul(x, w.wq, n, d, d);
    let k = matmul(x, w.wk, n, d, d);
    let v = matmul(x, w.wv, n, d, d);
    let mut probs = vec![0.0; heads * n * n];
    let mut ctx = vec![0.0; n * d];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..n {
            let qi = &q[i * d + off..i * d + off + hd];
            let span = if causal { i + 1 } else { n };
            let p = &mut probs[(h * n + i) * n..(h * n + i) * n + n];
            let mut max = f64::NEG_INFINITY;
            for j in 0..span {
                let s = dot(qi, &k[j * d + off..j * d + off + hd]) * scale;
                p[j] = s;
                max = max.max(s);
            }
            let mut sum = 0.0;
            for pj in &mut p[..span] {
                *pj = (*pj - max).exp();
                sum += *pj;
            }
            let ci = &mut ctx[i * d + off..i * d + off + hd];
            for j in 0..span {
                p[j] /= sum;
                let vj = &v[j * d + off..j * d + off + hd];
                for (c, &vv) in ci.iter_mut().zip(vj) {
                    *c += p[j] * vv;
                }
            }
        }
    }
    let out = matmul(&ctx, w.wo, n, d, d);
    (
        out,
        AttnCache {
            q,
            k,
            v,
            probs,
            ctx,
        },
    )
}

pub fn attention_back(
    dout: &[f64],
    x: &[f64],
    cache: &AttnCache,
    w: &AttnWeights<'_>,
    grads: AttnGrads<'_>,
    d: usize,
    heads: usize,
    causal: bool,
    dx: &mut [f64],
) {
    let n = x.len() / d;
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dctx = vec![0.0; n * d];
    matmul_back(&cache.ctx, w.wo, dout, n, d, d, Some(&mut dctx), grads.wo);

    let mut dq = vec![0.0; n * d];
    let mut dk = vec![0.0; n * d];
    let mut dv = vec![0.0; n * d];
    let mut dp = vec![0.0; n];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..n {
            let span = if causal { i + 1 } else { n };
            let p = &cache.probs[(h * n + i) * n..(h * n + i) * n + n];
            let dci = &dctx[i * d + off..i * d + off + hd];
            let mut weighted = 0.0;
            for j in 0..span {
                dp[j] = dot(dci, &cache.v[j * d + off..j * d + off + hd]);
                weighted += p[j] * dp[j];
                let dvj = &mut dv[j * d + off..j * d + off + hd];
                for (g, &c) in dvj.iter_mut().zip(dci) {
                    *g += p[j] * c;
                }
            }
            for j in 0..span {
                let ds = p[j] * (dp[j] - weighted) * scale;
                if ds == 0.0 {
                    continue;
                }
                for t in 0..hd {
                    dq[i * d + off + t] += ds * cache.k[j * d + off + t];
                    dk[j * d + off + t] += ds * cache.q[i * d + off + t];
                }
            }
        }
    }
    matmul_back(x, w.wq, &dq, n, d, d, Some(&mut *dx), grads.wq);
    matmul_back(x, w.wk, &dk, n, d, d, Some(&mut *dx), grads.wk);
    matmul_back(x, w.wv, &dv, n, d, d, Some(dx), grads.wv);
}

/// `log Σ exp(row)`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|v| v - lse).collect()
}
