//! Text normalization shared by the vocabulary, the metrics and the
//! fallback token tagger.
//!
//! Normalization is: lowercase, drop every character that is neither
//! alphanumeric nor whitespace, split on whitespace. Metric values depend on
//! this choice, so candidates and references must go through the same path.

use std::collections::BTreeSet;

pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "being", "am", "and", "or", "but",
    "of", "in", "on", "at", "to", "for", "with", "by", "from", "up", "down", "into", "onto",
    "over", "under", "out", "off", "it", "its", "this", "that", "these", "those", "there", "here",
    "he", "she", "they", "them", "his", "her", "their", "some", "while", "as", "then", "than",
    "very", "has", "have", "had", "does", "do", "did", "not", "no", "can", "will", "just",
];

/// Stopword-removal tagger for synthetic or untagged corpora.
///
/// Real banks carry noun/verb lemma sets produced by a part-of-speech tagger
/// upstream; this only approximates them by keeping content-looking words.
pub fn heuristic_tokens(text: &str) -> BTreeSet<String> {
    normalize(text)
        .into_iter()
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect()
}
