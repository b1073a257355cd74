//! Key-sentence selection: cosine + Jaccard hybrid scoring and Top-K
//! retrieval of a semantic group from the sentence bank.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use crate::bank::SentenceBank;
use crate::error::{Error, Result};
use crate::par;

/// Cosine similarity in double precision. Zero-norm vectors score 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("cosine input".into()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    Ok(cosine_from_parts(dot, na.sqrt(), nb.sqrt()))
}

fn cosine_from_parts(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        0.0
    } else {
        (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
    }
}

/// `|A ∩ B| / |A ∪ B|`, with two empty sets scoring 0.
pub fn jaccard_similarity(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn check_sigma(sigma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&sigma) {
        Ok(())
    } else {
        Err(Error::invalid(
            "sigma",
            format!("{sigma} is outside [0, 1]"),
        ))
    }
}

/// `σ·cosine + (1 − σ)·jaccard`.
pub fn hybrid_score(cosine: f64, jaccard: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(sigma * cosine + (1.0 - sigma) * jaccard)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub index: usize,
    pub cosine: f64,
    pub jaccard: f64,
    pub hybrid: f64,
}

/// A retrieval query: an embedding, its token set and, when the query is
/// itself a bank sentence, its bank index.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub embedding: &'a [f32],
    pub tokens: &'a BTreeSet<String>,
    pub bank_index: Option<usize>,
}

impl<'a> Query<'a> {
    pub fn from_bank(bank: &'a SentenceBank, index: usize) -> Self {
        let r = bank.record(index);
        Query {
            embedding: &r.embedding,
            tokens: &r.tokens,
            bank_index: Some(index),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMember {
    pub index: usize,
    pub embedding: Vec<f64>,
    pub score: f64,
}

/// Top-K retrieved sentences, ordered by hybrid score (nonincreasing), ties
/// by ascending bank index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SemanticGroup {
    pub members: Vec<GroupMember>,
}

impl SemanticGroup {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.index).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.score).collect()
    }

    pub fn embeddings(&self) -> Vec<Vec<f64>> {
        self.members.iter().map(|m| m.embedding.clone()).collect()
    }
}

/// Scores every bank sentence against `query`.
pub fn score_all(
    query: &Query<'_>,
    bank: &SentenceBank,
    sigma: f64,
) -> Result<Vec<ScoredCandidate>> {
    check_sigma(sigma)?;
    if query.embedding.len() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            found: query.embedding.len(),
        });
    }
    let q: Vec<f64> = query.embedding.iter().map(|&x| f64::from(x)).collect();
    let q_norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let out = bank
        .records()
        .iter()
        .zip(bank.norms())
        .enumerate()
        .map(|(index, (r, &norm))| {
            let dot: f64 = q
                .iter()
                .zip(&r.embedding)
                .map(|(a, &b)| a * f64::from(b))
                .sum();
            let cosine = cosine_from_parts(dot, q_norm, norm);
            let jaccard = jaccard_similarity(query.tokens, &r.tokens);
            ScoredCandidate {
                index,
                cosine,
                jaccard,
                hybrid: sigma * cosine + (1.0 - sigma) * jaccard,
            }
        })
        .collect();
    Ok(out)
}

fn rank(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.hybrid.total_cmp(&a.hybrid).then(a.index.cmp(&b.index))
}

/// Selects the `k` highest-scoring bank sentences for `query`.
///
/// With `exclude_self`, the query's own bank index is never returned. `k = 0`
/// yields an empty group.
pub fn select_group(
    query: &Query<'_>,
    bank: &SentenceBank,
    sigma: f64,
    k: usize,
    exclude_self: bool,
) -> Result<SemanticGroup> {
    let excluded = if exclude_self { query.bank_index } else { None };
    let available = bank.len() - usize::from(excluded.is_some_and(|i| i < bank.len()));
    if k > available {
        return Err(Error::invalid(
            "k",
            format!("{k} exceeds the {available} selectable sentences in the bank"),
        ));
    }
    if k == 0 {
        return Ok(SemanticGroup::default());
    }
    let mut scored = score_all(query, bank, sigma)?;
    if let Some(skip) = excluded {
        scored.retain(|c| c.index != skip);
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank);
        scored.truncate(k);
    }
    scored.sort_by(rank);
    let members = scored
        .into_iter()
        .map(|c| GroupMember {
            index: c.index,
            embedding: bank
                .embedding(c.index)
                .iter()
                .map(|&x| f64::from(x))
                .collect(),
            score: c.hybrid,
        })
        .collect();
    Ok(SemanticGroup { members })
}

/// Runs [`select_group`] for every bank index in `queries`, self-excluded.
pub fn select_groups_for_bank(
    bank: &SentenceBank,
    queries: &[usize],
    sigma: f64,
    k: usize,
) -> Result<Vec<SemanticGroup>> {
    par::map(queries, |&i| {
        select_group(&Query::from_bank(bank, i), bank, sigma, k, true)
    })
    .into_iter()
    .collect()
}
