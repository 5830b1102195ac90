//! Caption normalization, vocabulary and token encoding.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Maximum number of content tokens in an encoded caption.
pub const MAX_WORDS: usize = 28;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty caption corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("vocabulary file {path}: {msg}")]
    File { path: String, msg: String },
}

fn is_punctuation(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
    )
}

/// Lowercases, strips Unicode punctuation and splits on whitespace.
pub fn normalize_tokenize(sentence: &str) -> Vec<String> {
    let cleaned: String = sentence.to_lowercase().chars().filter(|&c| !is_punctuation(c)).collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Token ↔ id mapping with ids 0..4 reserved for PAD, BOS, EOS and UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    min_count: usize,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_count` times, ordered by descending
    /// frequency then lexicographically.
    pub fn build<S: AsRef<str>>(captions: &[S], min_count: usize) -> Result<Self, TextError> {
        if captions.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for c in captions {
            for w in normalize_tokenize(c.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, n)| *n >= min_count.max(1) && !RESERVED.contains(&w.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(ranked.into_iter().map(|(w, _)| w).collect(), min_count))
    }

    fn from_tokens(content: Vec<String>, min_count: usize) -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(content).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index, min_count }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Non-reserved tokens in id order.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `BOS`, at most [`MAX_WORDS`] content ids (OOV → `UNK`), `EOS`.
    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        let words = normalize_tokenize(sentence);
        let mut ids = Vec::with_capacity(words.len().min(MAX_WORDS) + 2);
        ids.push(BOS);
        ids.extend(words.iter().take(MAX_WORDS).map(|w| self.id(w).unwrap_or(UNK)));
        ids.push(EOS);
        ids
    }

    /// Joins content tokens with single spaces, dropping PAD, BOS and EOS.
    pub fn decode(&self, ids: &[usize]) -> Result<String, TextError> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self.token(id).ok_or(TextError::IdOutOfRange { id, size: self.len() })?;
            if !matches!(id, PAD | BOS | EOS) {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile { min_count: self.min_count, tokens: self.content_tokens().to_vec() };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let file: VocabFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Self::from_parts(file.tokens, file.min_count)
    }

    /// Rebuilds a vocabulary from its content tokens in id order.
    pub fn from_parts(tokens: Vec<String>, min_count: usize) -> Result<Self, String> {
        let mut seen = std::collections::HashSet::new();
        for t in &tokens {
            if RESERVED.contains(&t.as_str()) || !seen.insert(t) {
                return Err(format!("token '{t}' is reserved or duplicated"));
            }
        }
        Ok(Self::from_tokens(tokens, min_count))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TextError> {
        let path = path.as_ref();
        fs::write(path, self.to_json())
            .map_err(|e| TextError::File { path: path.display().to_string(), msg: e.to_string() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TextError> {
        let path = path.as_ref();
        let err = |msg: String| TextError::File { path: path.display().to_string(), msg };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_json(&text).map_err(err)
    }

    /// Hex SHA-256 of the persisted form; identifies the vocabulary in checkpoints.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
