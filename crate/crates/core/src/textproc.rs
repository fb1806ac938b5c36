//! Word-level tokenization and vocabulary handling.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<PAD>", "<BOS>", "<EOS>", "<UNK>"];

/// Dense token-to-index map whose first four entries are the reserved tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from an ordered token list that starts with the
    /// reserved tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(t, r)| t != r) {
            return Err(Error::Format(format!("vocabulary must start with {RESERVED:?}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("vocabulary line {i}: invalid token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("vocabulary token {t:?} appears twice")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of a normalized token, `UNK` when absent.
    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the index.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Lowercases, drops every character that is neither alphanumeric nor
/// whitespace, and splits on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    let cleaned: String =
        text.chars().filter(|c| c.is_alphanumeric() || c.is_whitespace()).flat_map(char::to_lowercase).collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Vocabulary of tokens occurring at least `min_count` times, ordered by
/// descending count and then alphabetically.
pub fn build_vocab<S: AsRef<str>>(captions: &[S], min_count: usize) -> Result<Vocabulary> {
    if captions.is_empty() {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for c in captions {
        for t in normalize(c.as_ref()) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, n)| *n >= min_count.max(1)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = RESERVED.iter().map(|s| s.to_string()).chain(kept.into_iter().map(|(t, _)| t)).collect();
    Vocabulary::from_tokens(tokens)
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    normalize(text).iter().map(|t| vocab.index_of(t)).collect()
}

/// Joins tokens with single spaces, skipping `<PAD>`, `<BOS>` and `<EOS>`.
pub fn detokenize(indices: &[usize], vocab: &Vocabulary) -> String {
    indices
        .iter()
        .filter(|&&i| !matches!(i, PAD | BOS | EOS))
        .map(|&i| vocab.token(i).unwrap_or(RESERVED[UNK]))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Class label as prompt text: underscores become spaces.
pub fn label_to_text(label: &str) -> String {
    label.replace('_', " ")
}

/// Teacher-forcing pair for a caption: `<BOS> w1..wn` and `w1..wn <EOS>`.
pub fn decoder_io(tokens: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let input = std::iter::once(BOS).chain(tokens.iter().copied()).collect();
    let target = tokens.iter().copied().chain(std::iter::once(EOS)).collect();
    (input, target)
}
