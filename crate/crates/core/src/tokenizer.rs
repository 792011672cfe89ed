//! Deterministic word-level tokenizer with BERT-style special tokens.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{CofError, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const NUM_RESERVED: usize = 4;

const RESERVED: [&str; NUM_RESERVED] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Maximum instruction length in tokens.
pub const INSTRUCTION_MAX_LEN: usize = 32;
/// Maximum paper length in tokens.
pub const PAPER_MAX_LEN: usize = 256;

/// Lowercases and splits text into word and punctuation tokens.
///
/// Alphanumeric runs form one token each; every other non-whitespace
/// character is a token by itself.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_lowercase().collect());
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    to_id: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Builds a vocabulary from non-reserved tokens in id order (first gets id 4).
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            to_id: HashMap::new(),
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
        };
        for t in tokens {
            let t = t.into();
            if vocab.to_id.contains_key(&t) || RESERVED.contains(&t.as_str()) {
                continue;
            }
            vocab.to_id.insert(t.clone(), vocab.tokens.len() as u32);
            vocab.tokens.push(t);
        }
        vocab
    }

    /// Total size including the reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == NUM_RESERVED
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Writes one non-reserved token per line; line `k` holds id `k + 4`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for t in &self.tokens[NUM_RESERVED..] {
            text.push_str(t);
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| CofError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CofError::io(path, e))?;
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(CofError::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("invalid vocabulary token {line:?}"),
                });
            }
            tokens.push(line.to_string());
        }
        let vocab = Self::from_tokens(tokens.iter().cloned());
        if vocab.len() != tokens.len() + NUM_RESERVED {
            return Err(CofError::Format {
                path: path.to_path_buf(),
                message: "duplicate or reserved token in vocabulary file".into(),
            });
        }
        Ok(vocab)
    }
}

/// Counts tokens over `corpus` and keeps those seen at least `min_freq` times,
/// ordered by (frequency desc, token asc), capped at `max_size` total ids.
pub fn build_vocab<I, S>(corpus: I, min_freq: usize, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if max_size < NUM_RESERVED {
        return Err(CofError::Usage(format!(
            "vocabulary max_size must be at least {NUM_RESERVED}, got {max_size}"
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in corpus {
        for w in split_words(doc.as_ref()) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq.max(1) && !RESERVED.contains(&t.as_str()))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size - NUM_RESERVED);
    Ok(Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Number of leading non-pad positions.
    pub attention_length: usize,
}

impl TokenSequence {
    /// The non-pad prefix `[CLS] … [SEP]`.
    pub fn valid(&self) -> &[u32] {
        &self.ids[..self.attention_length]
    }
}

/// Tokenizes `text`, wraps it in `[CLS] … [SEP]`, keeps the head of the body
/// so the total fits `max_len`, and right-pads with `[PAD]`.
pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSequence> {
    if max_len < 2 {
        return Err(CofError::Usage(format!(
            "max_len must be at least 2, got {max_len}"
        )));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS_ID);
    ids.extend(
        split_words(text)
            .iter()
            .take(max_len - 2)
            .map(|w| vocab.id(w).unwrap_or(UNK_ID)),
    );
    ids.push(SEP_ID);
    let attention_length = ids.len();
    ids.resize(max_len, PAD_ID);
    Ok(TokenSequence {
        ids,
        attention_length,
    })
}
