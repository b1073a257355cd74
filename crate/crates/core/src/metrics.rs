//! Corpus-level caption metrics: BLEU-1..4, ROUGE-L and CIDEr-D.
//!
//! All text goes through [`text::normalize`] (lowercase, punctuation
//! stripped, whitespace split) before scoring. Conventions follow the
//! widely used COCO caption evaluation code, with one difference: BLEU uses
//! no smoothing, so a corpus with zero matches at some order scores 0.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::par;
use crate::text;

/// ROUGE-L recall weight.
pub const ROUGE_BETA: f64 = 1.2;
/// CIDEr-D Gaussian length-penalty width.
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_MAX_N: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(candidate: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::Empty("reference list"));
        }
        Ok(EvalPair {
            candidate,
            references,
        })
    }

    /// Normalizes and tokenizes raw strings.
    pub fn from_text(candidate: &str, references: &[&str]) -> Result<Self> {
        EvalPair::new(
            text::normalize(candidate),
            references.iter().map(|r| text::normalize(r)).collect(),
        )
    }
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn check_nonempty(pairs: &[EvalPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    if pairs.iter().any(|p| p.references.is_empty()) {
        return Err(Error::Empty("reference list"));
    }
    Ok(())
}

/// Corpus BLEU-`n`: clipped n-gram precisions pooled over the corpus,
/// geometric mean over orders `1..=n`, brevity penalty against the closest
/// reference length (ties to the shorter).
pub fn bleu(pairs: &[EvalPair], n: usize) -> Result<f64> {
    if !(1..=4).contains(&n) {
        return Err(Error::invalid("n", format!("{n} is outside 1..=4")));
    }
    check_nonempty(pairs)?;
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for p in pairs {
        let c = p.candidate.len();
        cand_len += c;
        ref_len += p
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(c), l))
            .expect("nonempty references");
        for order in 1..=n {
            let cand = ngrams(&p.candidate, order);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &p.references {
                for (g, cnt) in ngrams(r, order) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(cnt);
                }
            }
            for (g, cnt) in &cand {
                matched[order - 1] += (*cnt).min(max_ref.get(g).copied().unwrap_or(0));
                total[order - 1] += cnt;
            }
        }
    }
    if cand_len == 0 || matched.contains(&0) {
        return Ok(0.0);
    }
    let log_p: f64 = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / n as f64;
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * log_p.exp())
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L of one pair: best precision and best recall over references,
/// combined into an F-measure with [`ROUGE_BETA`].
pub fn rouge_l_pair(pair: &EvalPair) -> f64 {
    if pair.candidate.is_empty() {
        return 0.0;
    }
    let (mut prec, mut rec) = (0.0f64, 0.0f64);
    for r in &pair.references {
        if r.is_empty() {
            continue;
        }
        let l = lcs(&pair.candidate, r) as f64;
        prec = prec.max(l / pair.candidate.len() as f64);
        rec = rec.max(l / r.len() as f64);
    }
    if prec == 0.0 || rec == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * prec * rec / (rec + b2 * prec)
}

/// Mean of [`rouge_l_pair`] over the corpus.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64> {
    check_nonempty(pairs)?;
    Ok(pairs.iter().map(rouge_l_pair).sum::<f64>() / pairs.len() as f64)
}

/// TF-IDF n-gram vectors of one sentence, their norms and its length.
struct CiderVec<'a> {
    vecs: Vec<HashMap<&'a [String], f64>>,
    norms: Vec<f64>,
    len: usize,
}

fn cider_vec<'a>(tokens: &'a [String], df: &HashMap<&[String], usize>, log_n: f64) -> CiderVec<'a> {
    let mut vecs = Vec::with_capacity(CIDER_MAX_N);
    let mut norms = Vec::with_capacity(CIDER_MAX_N);
    for n in 1..=CIDER_MAX_N {
        let v: HashMap<&[String], f64> = ngrams(tokens, n)
            .into_iter()
            .map(|(g, tf)| {
                let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
                (g, tf as f64 * (log_n - d.ln()))
            })
            .collect();
        norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
        vecs.push(v);
    }
    CiderVec {
        vecs,
        norms,
        len: tokens.len(),
    }
}

fn cider_sim(hyp: &CiderVec<'_>, r: &CiderVec<'_>) -> f64 {
    let delta = hyp.len as f64 - r.len as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..CIDER_MAX_N {
        let mut val = 0.0;
        for (g, &h) in &hyp.vecs[n] {
            if let Some(&rv) = r.vecs[n].get(g) {
                val += h.min(rv) * rv;
            }
        }
        if hyp.norms[n] != 0.0 && r.norms[n] != 0.0 {
            val /= hyp.norms[n] * r.norms[n];
        }
        total += val * penalty;
    }
    total / CIDER_MAX_N as f64
}

/// Per-pair CIDEr-D scores. Document frequencies count, for each n-gram,
/// the pairs whose reference set contains it; the IDF base is the number of
/// pairs.
pub fn cider_d_scores(pairs: &[EvalPair]) -> Result<Vec<f64>> {
    check_nonempty(pairs)?;
    if pairs.len() < 2 {
        return Err(Error::invalid(
            "pairs",
            "CIDEr-D needs at least two candidates for document frequencies",
        ));
    }
    let mut df: HashMap<&[String], usize> = HashMap::new();
    for p in pairs {
        let mut seen: HashMap<&[String], ()> = HashMap::new();
        for r in &p.references {
            for n in 1..=CIDER_MAX_N {
                if r.len() >= n {
                    for g in r.windows(n) {
                        seen.insert(g, ());
                    }
                }
            }
        }
        for g in seen.into_keys() {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (pairs.len() as f64).ln();
    Ok(par::map(pairs, |p| {
        let hyp = cider_vec(&p.candidate, &df, log_n);
        let sum: f64 = p
            .references
            .iter()
            .map(|r| cider_sim(&hyp, &cider_vec(r, &df, log_n)))
            .sum();
        sum / p.references.len() as f64 * 10.0
    }))
}

/// Mean of [`cider_d_scores`].
pub fn cider_d(pairs: &[EvalPair]) -> Result<f64> {
    let s = cider_d_scores(pairs)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    /// BLEU-1 through BLEU-4.
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    /// `None` for single-pair corpora.
    pub cider_d: Option<f64>,
}

pub fn evaluate(pairs: &[EvalPair]) -> Result<Scores> {
    let mut b = [0.0; 4];
    for (n, v) in b.iter_mut().enumerate() {
        *v = bleu(pairs, n + 1)?;
    }
    Ok(Scores {
        bleu: b,
        rouge_l: rouge_l(pairs)?,
        cider_d: if pairs.len() >= 2 {
            Some(cider_d(pairs)?)
        } else {
            None
        },
    })
}

/// Reads `video-id <TAB> text [<TAB> …]` lines; further columns are ignored.
/// Blank lines and `#` comments are skipped.
pub fn read_records(reader: impl BufRead) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let id = cols.next().unwrap_or("");
        let text = cols.next().ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected `video-id <TAB> text`".into(),
        })?;
        out.push((id.to_owned(), text.to_owned()));
    }
    Ok(out)
}

/// Joins candidate records with all references of the same video id, in
/// candidate order. Only the first candidate per id is used.
pub fn pair_records(
    candidates: &[(String, String)],
    references: &[(String, String)],
) -> Result<Vec<EvalPair>> {
    let mut refs: BTreeMap<&str, Vec<Vec<String>>> = BTreeMap::new();
    for (id, t) in references {
        refs.entry(id).or_default().push(text::normalize(t));
    }
    let mut seen = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    for (id, t) in candidates {
        if !seen.insert(id.as_str()) {
            continue;
        }
        let r = refs
            .get(id.as_str())
            .ok_or_else(|| Error::Format(format!("no references for video {id:?}")))?;
        pairs.push(EvalPair::new(text::normalize(t), r.clone())?);
    }
    if pairs.is_empty() {
        return Err(Error::Empty("candidate set"));
    }
    Ok(pairs)
}
