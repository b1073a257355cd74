//! Independent reference implementations used as test oracles.
//!
//! These are written for clarity, not speed, and share no code with the
//! library beyond its data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::Rng;
use sgcap::bank::{SentenceBank, SentenceRecord};
use sgcap::seed;

pub fn random_bank(n: usize, d: usize, vocab: usize, seed_: u64) -> SentenceBank {
    let mut rng = seed::rng(seed_);
    let records = (0..n)
        .map(|i| {
            let n_tok = rng.random_range(0..5);
            let tokens: Vec<String> = (0..n_tok)
                .map(|_| format!("w{}", rng.random_range(0..vocab)))
                .collect();
            let emb: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            SentenceRecord::new(format!("sentence {i}"), tokens, emb)
        })
        .collect();
    SentenceBank::build(records).unwrap()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let a: HashSet<&String> = a.iter().collect();
    let b: HashSet<&String> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(&b).count() as f64 / union as f64
    }
}

/// Sorts all `(index, score)` pairs by score descending then index
/// ascending and keeps the first `k`.
pub fn top_k(scores: &[(usize, f64)], k: usize) -> Vec<(usize, f64)> {
    let mut all = scores.to_vec();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

fn grams(t: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for i in 0..t.len().saturating_sub(n - 1) {
        if i + n <= t.len() {
            *m.entry(t[i..i + n].join(" ")).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU with closest-reference brevity penalty, no smoothing.
/// Inputs are pre-tokenized space-separated strings.
pub fn bleu(corpus: &[(&str, Vec<&str>)], n: usize) -> f64 {
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    let mut c_total = 0.0;
    let mut r_total = 0.0;
    for (cand, refs) in corpus {
        let c = words(cand);
        let rs: Vec<Vec<String>> = refs.iter().map(|r| words(r)).collect();
        c_total += c.len() as f64;
        let mut best = rs[0].len();
        for r in &rs {
            let (d_new, d_old) = (
                (r.len() as i64 - c.len() as i64).abs(),
                (best as i64 - c.len() as i64).abs(),
            );
            if d_new < d_old || (d_new == d_old && r.len() < best) {
                best = r.len();
            }
        }
        r_total += best as f64;
        for k in 1..=n {
            for (g, cnt) in grams(&c, k) {
                let max_ref = rs
                    .iter()
                    .map(|r| grams(r, k).get(&g).copied().unwrap_or(0))
                    .max()
                    .unwrap();
                num[k - 1] += cnt.min(max_ref) as f64;
                den[k - 1] += cnt as f64;
            }
        }
    }
    if num.contains(&0.0) {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for k in 0..n {
        log_sum += (num[k] / den[k]).ln();
    }
    let bp = if c_total > r_total {
        1.0
    } else {
        (1.0 - r_total / c_total).exp()
    };
    bp * (log_sum / n as f64).exp()
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

pub fn rouge_l(corpus: &[(&str, Vec<&str>)]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut total = 0.0;
    for (cand, refs) in corpus {
        let c = words(cand);
        let mut ps = Vec::new();
        let mut rs = Vec::new();
        for r in refs {
            let r = words(r);
            let l = lcs_len(&c, &r) as f64;
            ps.push(l / c.len() as f64);
            rs.push(l / r.len() as f64);
        }
        let p = ps.iter().cloned().fold(0.0, f64::max);
        let r = rs.iter().cloned().fold(0.0, f64::max);
        if p > 0.0 && r > 0.0 {
            total += (1.0 + beta2) * p * r / (r + beta2 * p);
        }
    }
    total / corpus.len() as f64
}

/// CIDEr-D: tf-idf n-gram vectors (n = 1..4), document frequency over the
/// reference sets, min-clipped cosine, Gaussian length penalty (sigma 6),
/// averaged over n and references, times 10.
pub fn cider_d(corpus: &[(&str, Vec<&str>)]) -> f64 {
    let mut df: BTreeMap<String, f64> = BTreeMap::new();
    for (_, refs) in corpus {
        let mut present = BTreeSet::new();
        for r in refs {
            for n in 1..=4 {
                present.extend(grams(&words(r), n).into_keys());
            }
        }
        for g in present {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let big_n = (corpus.len() as f64).ln();
    let vectorize = |t: &[String]| -> Vec<BTreeMap<String, f64>> {
        (1..=4)
            .map(|n| {
                grams(t, n)
                    .into_iter()
                    .map(|(g, c)| {
                        let d = df.get(&g).copied().unwrap_or(0.0).max(1.0);
                        let w = c as f64 * (big_n - d.ln());
                        (g, w)
                    })
                    .collect()
            })
            .collect()
    };
    let mut sum = 0.0;
    for (cand, refs) in corpus {
        let c = words(cand);
        let vc = vectorize(&c);
        let mut per_ref = 0.0;
        for r in refs {
            let r = words(r);
            let vr = vectorize(&r);
            let delta = c.len() as f64 - r.len() as f64;
            let pen = (-delta * delta / 72.0).exp();
            let mut s = 0.0;
            for n in 0..4 {
                let mut dot = 0.0;
                for (g, &x) in &vc[n] {
                    if let Some(&y) = vr[n].get(g) {
                        dot += x.min(y) * y;
                    }
                }
                let nc = vc[n].values().map(|x| x * x).sum::<f64>().sqrt();
                let nr = vr[n].values().map(|x| x * x).sum::<f64>().sqrt();
                if nc > 0.0 && nr > 0.0 {
                    dot /= nc * nr;
                }
                s += dot * pen;
            }
            per_ref += s / 4.0;
        }
        sum += per_ref / refs.len() as f64 * 10.0;
    }
    sum / corpus.len() as f64
}

/// The fixed five-pair metric corpus.
pub fn metric_corpus() -> Vec<(&'static str, Vec<&'static str>)> {
    vec![
        (
            "a man is riding a horse",
            vec![
                "a man rides a horse",
                "a person is riding a horse on a beach",
            ],
        ),
        (
            "two dogs play in the snow",
            vec!["two dogs are playing in the snow", "dogs run through snow"],
        ),
        (
            "a woman is cooking",
            vec![
                "a woman cooks pasta in a kitchen",
                "someone is cooking food",
            ],
        ),
        (
            "a cat sits on a chair",
            vec!["a cat is sitting on a wooden chair"],
        ),
        (
            "people dance on a stage",
            vec![
                "a group of people dance on stage",
                "dancers perform on a stage",
                "people are dancing",
            ],
        ),
    ]
}
