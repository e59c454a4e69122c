use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Dense token vocabulary. Ordinary tokens come first in decreasing corpus
/// frequency, followed by BOS and EOS. Unknown words map to [`Vocab::unk`],
/// a reserved id one past the dense range that no model ever emits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Lowercased whitespace split.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl Vocab {
    /// Keeps the `max_size` most frequent words, ties broken
    /// lexicographically, then appends BOS and EOS.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::input(
                "cannot build a vocabulary from an empty corpus",
            ));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for line in corpus {
            for w in words(line.as_ref()) {
                if w != BOS && w != EOS {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size);
        let mut tokens: Vec<String> = ranked.into_iter().map(|(w, _)| w).collect();
        tokens.push(BOS.to_string());
        tokens.push(EOS.to_string());
        Self::from_tokens(tokens)
    }

    /// Rebuilds from an id-ordered token list whose last two entries are
    /// BOS and EOS.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let n = tokens.len();
        if n < 2 || tokens[n - 2] != BOS || tokens[n - 1] != EOS {
            return Err(Error::input(
                "vocabulary must end with the BOS and EOS markers",
            ));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate vocabulary entry {t:?}")));
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

    pub fn bos(&self) -> usize {
        self.len() - 2
    }

    pub fn eos(&self) -> usize {
        self.len() - 1
    }

    pub fn unk(&self) -> usize {
        self.len()
    }

    pub fn is_special(&self, id: usize) -> bool {
        id >= self.bos()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or("<unk>")
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        words(text)
            .map(|w| self.id(&w).unwrap_or(self.unk()))
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}
