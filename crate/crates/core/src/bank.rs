//! Sentence bank: caption texts, noun/verb token sets and text embeddings.
//!
//! The bank is the single text-side resource used at every stage. Retrieval
//! scores training captions against it, noise injection draws on its
//! per-dimension variance, and inference projects frame embeddings onto it.
//!
//! # File format (`SGCB`, version 1, little-endian)
//!
//! ```text
//! magic     4 bytes  "SGCB"
//! version   u32      1
//! N_s       u64      number of records
//! d         u32      embedding dimension
//! N_s × {
//!     text_len  u32, text bytes (UTF-8)
//!     n_tokens  u16, n_tokens × { len u16, bytes (UTF-8) }
//!     d × f32   embedding
//! }
//! ```
//!
//! Statistics are never stored; they are recomputed from the embeddings.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufRead;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::binio::{put_f32s, Reader};
use crate::error::{Error, Result};
use crate::text;

const MAGIC: &[u8; 4] = b"SGCB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    pub text: String,
    /// Lowercase noun/verb lemmas.
    pub tokens: BTreeSet<String>,
    pub embedding: Vec<f32>,
}

impl SentenceRecord {
    pub fn new(
        text: impl Into<String>,
        tokens: impl IntoIterator<Item = String>,
        embedding: Vec<f32>,
    ) -> Self {
        SentenceRecord {
            text: text.into(),
            tokens: tokens.into_iter().collect(),
            embedding,
        }
    }
}

/// Immutable, ordered collection of records sharing one embedding dimension.
///
/// Record indices are stable identifiers used by retrieval and supervision.
#[derive(Debug, Clone)]
pub struct SentenceBank {
    records: Vec<SentenceRecord>,
    dim: usize,
    norms: Vec<f64>,
}

impl PartialEq for SentenceBank {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.records == other.records
    }
}

impl SentenceBank {
    pub fn build(records: Vec<SentenceRecord>) -> Result<Self> {
        let first = records.first().ok_or(Error::Empty("sentence corpus"))?;
        let dim = first.embedding.len();
        if dim == 0 {
            return Err(Error::invalid("embedding", "dimension must be positive"));
        }
        for (i, r) in records.iter().enumerate() {
            if r.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.embedding.len(),
                });
            }
            if r.embedding.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of record {i}")));
            }
        }
        let norms = records
            .iter()
            .map(|r| {
                r.embedding
                    .iter()
                    .map(|&x| f64::from(x) * f64::from(x))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        Ok(SentenceBank {
            records,
            dim,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[SentenceRecord] {
        &self.records
    }

    pub fn record(&self, index: usize) -> &SentenceRecord {
        &self.records[index]
    }

    pub fn embedding(&self, index: usize) -> &[f32] {
        &self.records[index].embedding
    }

    /// L2 norm of each embedding, cached at construction.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// A new bank holding the records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        SentenceBank::build(indices.iter().map(|&i| self.records[i].clone()).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(20 + self.records.len() * (self.dim * 4 + 64));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for r in &self.records {
            let text_len = u32::try_from(r.text.len())
                .map_err(|_| Error::invalid("text", "longer than u32::MAX bytes"))?;
            out.extend_from_slice(&text_len.to_le_bytes());
            out.extend_from_slice(r.text.as_bytes());
            let n_tokens = u16::try_from(r.tokens.len())
                .map_err(|_| Error::invalid("tokens", "more than 65535 tokens"))?;
            out.extend_from_slice(&n_tokens.to_le_bytes());
            for t in &r.tokens {
                let len = u16::try_from(t.len())
                    .map_err(|_| Error::invalid("tokens", "token longer than 65535 bytes"))?;
                out.extend_from_slice(&len.to_le_bytes());
                out.extend_from_slice(t.as_bytes());
            }
            put_f32s(&mut out, r.embedding.iter().copied());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        rd.magic(MAGIC, VERSION)?;
        let n = rd.u64("record count")?;
        let dim = rd.u32("dimension")? as usize;
        if n == 0 {
            return Err(Error::Empty("sentence bank file"));
        }
        // Each record needs at least 6 header bytes plus its embedding.
        let min_record = 6 + dim as u64 * 4;
        if n.saturating_mul(min_record) > bytes.len() as u64 {
            return Err(Error::Truncated(format!("bank declaring {n} records")));
        }
        let mut records = Vec::with_capacity(n as usize);
        for i in 0..n as usize {
            let text_len = rd.u32("text length")? as usize;
            let text = rd.utf8(text_len, &format!("text of record {i}"))?;
            let n_tokens = rd.u16("token count")?;
            let mut tokens = BTreeSet::new();
            for _ in 0..n_tokens {
                let len = rd.u16("token length")? as usize;
                if !tokens.insert(rd.utf8(len, &format!("tokens of record {i}"))?) {
                    return Err(Error::Format(format!("duplicate token in record {i}")));
                }
            }
            let embedding = rd.f32s(dim, &format!("embedding of record {i}"))?;
            records.push(SentenceRecord {
                text,
                tokens,
                embedding,
            });
        }
        rd.finish()?;
        SentenceBank::build(records)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        SentenceBank::from_bytes(&fs::read(path)?)
    }
}

/// Reads a tab-separated text corpus, one record per line:
///
/// ```text
/// text <TAB> tokens <TAB> embedding
/// ```
///
/// `tokens` is a space-separated (possibly empty) list and `embedding` a
/// space-separated list of floats. With `heuristic_tags`, the two-column form
/// `text <TAB> embedding` is accepted and token sets come from
/// [`text::heuristic_tokens`]. Blank lines and lines starting with `#` are
/// skipped.
pub fn read_corpus(reader: impl BufRead, heuristic_tags: bool) -> Result<Vec<SentenceRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: lineno,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        let (text, tokens, emb) = match (cols.len(), heuristic_tags) {
            (3, false) => (
                cols[0],
                cols[1].split_whitespace().map(str::to_owned).collect(),
                cols[2],
            ),
            (2 | 3, true) => (
                cols[0],
                text::heuristic_tokens(cols[0]),
                cols[cols.len() - 1],
            ),
            (n, _) => {
                let want = if heuristic_tags { "2 or 3" } else { "3" };
                return Err(parse_err(format!(
                    "expected {want} tab-separated columns, found {n}"
                )));
            }
        };
        let embedding = emb
            .split_whitespace()
            .map(|s| {
                s.parse::<f32>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(format!("invalid embedding value {s:?}")))
            })
            .collect::<Result<Vec<f32>>>()?;
        if embedding.is_empty() {
            return Err(parse_err("empty embedding".into()));
        }
        if let Some(first) = records.first().map(|r: &SentenceRecord| r.embedding.len()) {
            if first != embedding.len() {
                return Err(parse_err(format!(
                    "embedding has {} values, previous records have {first}",
                    embedding.len()
                )));
            }
        }
        records.push(SentenceRecord::new(text, tokens, embedding));
    }
    if records.is_empty() {
        return Err(Error::Empty("corpus file has no records"));
    }
    Ok(records)
}

/// Writes records in the format accepted by [`read_corpus`].
pub fn write_corpus(records: &[SentenceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let tokens: Vec<&str> = r.tokens.iter().map(String::as_str).collect();
        let emb: Vec<String> = r.embedding.iter().map(|x| x.to_string()).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            r.text,
            tokens.join(" "),
            emb.join(" ")
        ));
    }
    out
}

/// Per-dimension moments and the covariance spectrum of the bank embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct BankStats {
    pub mean: Vec<f64>,
    /// Population variance (divisor `N_s`).
    pub variance: Vec<f64>,
    /// Eigenvalues of the population covariance, nonincreasing, clamped at 0.
    pub covariance_eigenvalues: Vec<f64>,
}

impl BankStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mean over dimensions of the per-dimension standard deviation.
    pub fn mean_std(&self) -> f64 {
        self.variance.iter().map(|v| v.sqrt()).sum::<f64>() / self.variance.len() as f64
    }
}

/// Eigenvalues whose magnitude is below this fraction of the largest one are
/// treated as exact zeros.
const EIGEN_REL_TOL: f64 = 1e-12;

pub fn compute_stats(bank: &SentenceBank) -> BankStats {
    let n = bank.len() as f64;
    let d = bank.dim();
    let mut mean = vec![0.0; d];
    for r in bank.records() {
        for (m, &x) in mean.iter_mut().zip(&r.embedding) {
            *m += f64::from(x);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);

    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut centered = vec![0.0; d];
    for r in bank.records() {
        for ((c, &x), m) in centered.iter_mut().zip(&r.embedding).zip(&mean) {
            *c = f64::from(x) - m;
        }
        for i in 0..d {
            let ci = centered[i];
            for j in i..d {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let variance: Vec<f64> = (0..d).map(|j| cov[(j, j)].max(0.0)).collect();

    let mut eig: Vec<f64> = SymmetricEigen::new(cov)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let cutoff = eig.first().copied().unwrap_or(0.0).abs() * EIGEN_REL_TOL;
    for e in &mut eig {
        if *e <= cutoff {
            *e = 0.0;
        }
    }
    BankStats {
        mean,
        variance,
        covariance_eigenvalues: eig,
    }
}

/// Smallest `d'` whose leading eigenvalues explain at least a `gamma`
/// fraction of the total.
pub fn effective_dimension(eigenvalues: &[f64], gamma: f64) -> Result<usize> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(
            "gamma",
            format!("{gamma} is outside (0, 1]"),
        ));
    }
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("eigenvalues", "sum must be positive"));
    }
    let mut cum = 0.0;
    for (i, &e) in eigenvalues.iter().enumerate() {
        cum += e;
        if cum >= gamma * total {
            return Ok(i + 1);
        }
    }
    // Rounding in gamma * total; the full spectrum always suffices.
    Ok(eigenvalues
        .iter()
        .rposition(|&e| e > 0.0)
        .map_or(eigenvalues.len(), |i| i + 1))
}
