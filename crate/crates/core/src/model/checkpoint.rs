//! Model checkpoint file (`SGCM`).
//!
//! ```text
//! magic "SGCM" | version u32
//! config: embed_dim, model_dim, layers, heads, ffn_dim, fusion_heads,
//!         fusion_ffn_dim, vocab_size, max_slots, max_tokens (u32 each),
//!         fusion_positions u8
//! vocabulary: count u32, then per word: len u16 | UTF-8
//! tensors in declaration order, f32 little-endian
//! ```
//!
//! The vocabulary lists non-reserved words in id order. Optimizer moments
//! are not stored; a loaded model starts with zero moments.

use std::fs;
use std::path::Path;

use super::vocab::Vocabulary;
use super::{ModelConfig, ModelParams, Weights};
use crate::binio::{put_f32s, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SGCM";
const VERSION: u32 = 1;

fn config_fields(c: &ModelConfig) -> [usize; 10] {
    [
        c.embed_dim,
        c.model_dim,
        c.layers,
        c.heads,
        c.ffn_dim,
        c.fusion_heads,
        c.fusion_ffn_dim,
        c.vocab_size,
        c.max_slots,
        c.max_tokens,
    ]
}

pub fn to_bytes(params: &ModelParams, vocab: &Vocabulary) -> Result<Vec<u8>> {
    if vocab.len() != params.config.vocab_size {
        return Err(Error::DimensionMismatch {
            expected: params.config.vocab_size,
            found: vocab.len(),
        });
    }
    let mut out = Vec::with_capacity(64 + params.weights.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in config_fields(&params.config) {
        let v = u32::try_from(v).map_err(|_| Error::invalid("config", "field exceeds u32"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(params.config.fusion_positions as u8);
    out.extend_from_slice(&(vocab.words().len() as u32).to_le_bytes());
    for w in vocab.words() {
        let len = u16::try_from(w.len())
            .map_err(|_| Error::invalid("vocabulary", "word longer than 65535 bytes"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(w.as_bytes());
    }
    for t in params.weights.tensors() {
        put_f32s(&mut out, t.data.iter().map(|&x| x as f32));
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ModelParams, Vocabulary)> {
    let mut rd = Reader::new(bytes);
    rd.magic(MAGIC, VERSION)?;
    let mut f = [0usize; 10];
    for x in &mut f {
        *x = rd.u32("config")? as usize;
    }
    let fusion_positions = match rd.u8("config")? {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Format(format!(
                "invalid fusion position flag {other}"
            )))
        }
    };
    let config = ModelConfig {
        embed_dim: f[0],
        model_dim: f[1],
        layers: f[2],
        heads: f[3],
        ffn_dim: f[4],
        fusion_heads: f[5],
        fusion_ffn_dim: f[6],
        vocab_size: f[7],
        max_slots: f[8],
        max_tokens: f[9],
        fusion_positions,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("invalid checkpoint config: {e}")))?;
    let n_words = rd.u32("vocabulary size")? as usize;
    if n_words > bytes.len() {
        return Err(Error::Truncated("vocabulary".into()));
    }
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        let len = rd.u16("word length")? as usize;
        words.push(rd.utf8(len, "vocabulary word")?);
    }
    let vocab = Vocabulary::from_words(words)?;
    if vocab.len() != config.vocab_size {
        return Err(Error::Format(format!(
            "vocabulary has {} entries but config declares {}",
            vocab.len(),
            config.vocab_size
        )));
    }
    let mut weights = Weights::zeros(&config);
    let expected = weights.param_count() as u64 * 4;
    if expected > bytes.len() as u64 {
        return Err(Error::Truncated("parameter tensors".into()));
    }
    for t in weights.tensors_mut() {
        let vals = rd.f32s(t.data.len(), "parameter tensor")?;
        for (d, v) in t.data.iter_mut().zip(vals) {
            *d = v as f64;
        }
    }
    rd.finish()?;
    Ok((ModelParams::from_weights(config, weights), vocab))
}

pub fn save(path: impl AsRef<Path>, params: &ModelParams, vocab: &Vocabulary) -> Result<()> {
    fs::write(path, to_bytes(params, vocab)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(ModelParams, Vocabulary)> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn sample() -> (ModelParams, Vocabulary) {
        let vocab = Vocabulary::build(["a man rides a horse", "a dog runs"], 1);
        let mut cfg = ModelConfig::tiny(8, vocab.len());
        cfg.fusion_positions = true;
        (init_params(cfg, 4).unwrap(), vocab)
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let (p, v) = sample();
        let bytes = to_bytes(&p, &v).unwrap();
        let (q, w) = from_bytes(&bytes).unwrap();
        assert_eq!(v, w);
        assert_eq!(p.config, q.config);
        for (a, b) in p.weights.tensors().iter().zip(q.weights.tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        assert_eq!(to_bytes(&q, &w).unwrap(), bytes);
    }

    #[test]
    fn rejects_damage() {
        let (p, v) = sample();
        let bytes = to_bytes(&p, &v).unwrap();
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 2]),
            Err(Error::Truncated(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Format(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut nan = bytes;
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(from_bytes(&nan), Err(Error::NonFinite(_))));
    }

    #[test]
    fn vocab_size_must_match() {
        let (p, _) = sample();
        let other = Vocabulary::build(["x"], 1);
        assert!(to_bytes(&p, &other).is_err());
    }
}
