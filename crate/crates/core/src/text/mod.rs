//! Tokenization, vocabulary, and word embeddings for review text.

mod embedding;
mod skipgram;

pub use embedding::EmbeddingTable;
pub use skipgram::{train_skipgram, SkipGramConfig, SkipGramOutcome};

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{KrfError, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // kana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // hangul
        | 0xF900..=0xFAFF
        | 0x20000..=0x2FA1F)
}

/// Lowercases and splits on whitespace and punctuation. Runs of CJK
/// characters are split into one token per character.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            current.extend(c.to_lowercase().filter(|l| l.is_alphanumeric()));
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token ↔ index bijection with `<pad>` at 0 and `<unk>` at 1.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

/// Two vocabularies are equal when they map the same tokens to the same
/// indices; the build threshold is not part of identity.
impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Vocabulary {
    /// Keeps every token seen at least `min_count` times, ordered by
    /// descending frequency then lexicographically.
    pub fn build<'a, I>(texts: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut seen_text = false;
        for text in texts {
            seen_text = true;
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if !seen_text {
            return Err(KrfError::Data("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens, min_count))
    }

    fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary {
            tokens,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn encode(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.encode(t)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = self.tokens.join("\n");
        body.push('\n');
        fs::write(path, body).map_err(|e| KrfError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|e| KrfError::io(path, e))?;
        Self::from_token_list(body.lines().map(str::to_string).collect())
            .map_err(|e| KrfError::format(path, e.to_string()))
    }

    /// Rebuilds a vocabulary from its index-ordered token list.
    pub fn from_token_list(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(KrfError::Data("vocabulary must start with <pad> and <unk>".into()));
        }
        let vocab = Self::from_tokens(tokens, 0);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(KrfError::Data("duplicate token in vocabulary".into()));
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Post-Punk revival!"), ["post", "punk", "revival"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Rock rock ROCK"), ["rock", "rock", "rock"]);
        assert_eq!(tokenize("摇滚乐 great"), ["摇", "滚", "乐", "great"]);
    }

    #[test]
    fn vocab_threshold_and_specials() {
        let v = Vocabulary::build(["a a b"], 2).unwrap();
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.decode(PAD), Some(PAD_TOKEN));
        assert_eq!(v.decode(UNK), Some(UNK_TOKEN));
        assert_eq!(v.encode("b"), UNK);
        assert_eq!(v.encode("zebra"), UNK);
        assert!(Vocabulary::build(std::iter::empty::<&str>(), 2).is_err());
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::build(["jazz swing jazz swing blues"], 1).unwrap();
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.tokens(), v.tokens());
        std::fs::write(&path, "rock\n<unk>\n").unwrap();
        assert!(Vocabulary::load(&path).is_err());
    }

    proptest! {
        #[test]
        fn tokenize_idempotent(s in "\\PC{0,40}") {
            let once = tokenize(&s);
            prop_assert_eq!(tokenize(&once.join(" ")), once);
        }

        #[test]
        fn encode_decode_bijection(words in prop::collection::vec("[a-e]{1,3}", 1..40), min in 1usize..3) {
            let text = words.join(" ");
            let v = Vocabulary::build([text.as_str()], min).unwrap();
            for i in 0..v.len() {
                prop_assert_eq!(v.encode(v.decode(i).unwrap()), i);
            }
        }
    }
}
