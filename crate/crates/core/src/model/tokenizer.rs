//! Whitespace word tokenizer with lowercasing and a byte fallback.
//!
//! Layout of the id space: `0` pad, `1` bos, `2` eos, `3..259` the 256 raw
//! bytes, then corpus words by descending frequency (ties broken
//! lexicographically) until `vocab_size` is reached. A word outside the
//! vocabulary is spelled as its UTF-8 bytes; two adjacent spelled words are
//! separated by the byte for an ASCII space so decoding can split them again.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
const BYTE_BASE: usize = 3;
const N_SPECIAL: usize = 3;
pub const MIN_VOCAB: usize = N_SPECIAL + 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "TokenizerRepr", into = "TokenizerRepr")]
pub struct Tokenizer {
    vocab_size: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerRepr {
    vocab_size: usize,
    words: Vec<String>,
}

impl From<TokenizerRepr> for Tokenizer {
    fn from(r: TokenizerRepr) -> Self {
        Tokenizer::from_words(r.vocab_size, r.words)
    }
}

impl From<Tokenizer> for TokenizerRepr {
    fn from(t: Tokenizer) -> Self {
        TokenizerRepr {
            vocab_size: t.vocab_size,
            words: t.words,
        }
    }
}

/// Lowercases and splits on Unicode whitespace.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

impl Tokenizer {
    /// Builds the word vocabulary from `texts`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Result<Self> {
        if vocab_size < MIN_VOCAB {
            return Err(Error::config(format!(
                "vocab_size {vocab_size} is below the {MIN_VOCAB} reserved ids"
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in words(text) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let capacity = vocab_size - MIN_VOCAB;
        if ranked.len() > capacity {
            log::debug!(
                "tokenizer: {} of {} words fall back to bytes",
                ranked.len() - capacity,
                ranked.len()
            );
        }
        let words = ranked.into_iter().take(capacity).map(|(w, _)| w).collect();
        Ok(Self::from_words(vocab_size, words))
    }

    fn from_words(vocab_size: usize, words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), MIN_VOCAB + i))
            .collect();
        Self {
            vocab_size,
            words,
            index,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        let mut prev_spelled = false;
        for w in words(text) {
            match self.index.get(&w) {
                Some(&id) => {
                    ids.push(id);
                    prev_spelled = false;
                }
                None => {
                    if prev_spelled {
                        ids.push(BYTE_BASE + b' ' as usize);
                    }
                    ids.extend(w.bytes().map(|b| BYTE_BASE + b as usize));
                    prev_spelled = true;
                }
            }
        }
        ids
    }

    /// Inverse of [`encode`](Self::encode) up to whitespace normalization.
    /// Stops at the first eos; pad and bos are skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out: Vec<String> = Vec::new();
        let mut bytes: Vec<u8> = Vec::new();
        let flush = |bytes: &mut Vec<u8>, out: &mut Vec<String>| {
            if !bytes.is_empty() {
                let s = String::from_utf8_lossy(bytes);
                out.extend(s.split(' ').filter(|p| !p.is_empty()).map(str::to_string));
                bytes.clear();
            }
        };
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => {}
                id if (BYTE_BASE..MIN_VOCAB).contains(&id) => bytes.push((id - BYTE_BASE) as u8),
                id => {
                    flush(&mut bytes, &mut out);
                    match self.words.get(id - MIN_VOCAB) {
                        Some(w) => out.push(w.clone()),
                        None => out.push("\u{fffd}".to_string()),
                    }
                }
            }
        }
        flush(&mut bytes, &mut out);
        out.join(" ")
    }
}
