//! Gaussian perturbation of semantic-group embeddings.
//!
//! Only retrieved group members are perturbed; the training caption
//! embedding always enters the model clean.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use crate::bank::BankStats;
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::similarity::SemanticGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    None,
    /// `ε ~ N(0, I)`.
    StandardGaussian,
    /// `ε ~ N(0, σ_s² I)` with `σ_s` the mean per-dimension standard deviation.
    ScalarSigma,
    /// `ε_j ~ N(0, var_j)` independently per dimension.
    #[default]
    ElementWise,
}

impl NoiseMode {
    pub fn needs_stats(self) -> bool {
        matches!(self, NoiseMode::ScalarSigma | NoiseMode::ElementWise)
    }
}

impl FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NoiseMode::None),
            "standard" | "standard_gaussian" => Ok(NoiseMode::StandardGaussian),
            "scalar" | "scalar_sigma" => Ok(NoiseMode::ScalarSigma),
            "element-wise" | "element_wise" | "elementwise" => Ok(NoiseMode::ElementWise),
            other => Err(Error::invalid(
                "noise",
                format!("unknown mode {other:?} (expected none, standard, scalar or element-wise)"),
            )),
        }
    }
}

impl fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseMode::None => "none",
            NoiseMode::StandardGaussian => "standard",
            NoiseMode::ScalarSigma => "scalar",
            NoiseMode::ElementWise => "element-wise",
        })
    }
}

/// A noise mode resolved against bank statistics into per-dimension
/// standard deviations.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    mode: NoiseMode,
    std: Vec<f64>,
}

impl NoiseModel {
    pub fn new(mode: NoiseMode, stats: Option<&BankStats>, dim: usize) -> Result<Self> {
        let std = match (mode, stats) {
            (NoiseMode::None, _) => vec![0.0; dim],
            (NoiseMode::StandardGaussian, _) => vec![1.0; dim],
            (_, None) => {
                return Err(Error::invalid(
                    "noise",
                    format!("mode {mode} requires bank statistics"),
                ));
            }
            (_, Some(s)) if s.dim() != dim => {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.dim(),
                });
            }
            (NoiseMode::ScalarSigma, Some(s)) => vec![s.mean_std(); dim],
            (NoiseMode::ElementWise, Some(s)) => s.variance.iter().map(|v| v.sqrt()).collect(),
        };
        Ok(NoiseModel { mode, std })
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn apply(&self, embedding: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        if embedding.len() != self.std.len() {
            return Err(Error::DimensionMismatch {
                expected: self.std.len(),
                found: embedding.len(),
            });
        }
        if self.mode == NoiseMode::None {
            return Ok(embedding.to_vec());
        }
        Ok(embedding
            .iter()
            .zip(&self.std)
            .map(|(&x, &s)| {
                let z: f64 = StandardNormal.sample(rng);
                x + s * z
            })
            .collect())
    }

    /// Perturbs every member independently; member `i` draws from the stream
    /// `derive(seed, [i])`. Indices and scores are untouched.
    pub fn apply_group(&self, group: &SemanticGroup, seed: u64) -> Result<SemanticGroup> {
        let mut out = group.clone();
        if self.mode == NoiseMode::None {
            return Ok(out);
        }
        for (i, m) in out.members.iter_mut().enumerate() {
            let mut rng = seed::rng(seed::derive(seed, &[i as u64]));
            m.embedding = self.apply(&m.embedding, &mut rng)?;
        }
        Ok(out)
    }
}

/// Perturbs a single embedding with a fresh generator seeded by `seed`.
pub fn perturb(
    embedding: &[f64],
    mode: NoiseMode,
    stats: Option<&BankStats>,
    seed: u64,
) -> Result<Vec<f64>> {
    NoiseModel::new(mode, stats, embedding.len())?.apply(embedding, &mut seed::rng(seed))
}

pub fn perturb_group(
    group: &SemanticGroup,
    mode: NoiseMode,
    stats: Option<&BankStats>,
    seed: u64,
) -> Result<SemanticGroup> {
    let Some(first) = group.members.first() else {
        return Ok(group.clone());
    };
    NoiseModel::new(mode, stats, first.embedding.len())?.apply_group(group, seed)
}
