use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::asr::{TokenSequence, SPECIAL_TOKENS, UNK};
use crate::{Error, Result};

/// Line-per-token vocabulary; the line number is the token id and the
/// first four lines are the reserved special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds the table from content words, prepending the specials.
    pub fn with_words<I>(words: I) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: Into<String>,
    {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().map(Into::into));
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(Error::invalid(
                "vocabulary",
                format!("{} tokens cannot hold the specials", tokens.len()),
            ));
        }
        for (i, special) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *special {
                return Err(Error::invalid(
                    "vocabulary",
                    format!("token {i} must be {special}, found '{}'", tokens[i]),
                ));
            }
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::invalid(
                    "vocabulary",
                    format!("token {i} ('{t}') is empty or contains whitespace"),
                ));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid("vocabulary", format!("duplicate token '{t}'")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for t in &self.tokens {
            writeln!(file, "{t}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Whitespace tokenization; words outside the table map to the
    /// unknown token with a warning.
    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let ids = text
            .split_whitespace()
            .map(|word| {
                self.index.get(word).copied().unwrap_or_else(|| {
                    log::warn!("word '{word}' not in vocabulary; using {}", SPECIAL_TOKENS[UNK]);
                    UNK
                })
            })
            .collect();
        TokenSequence { ids }
    }

    /// Space-joined token text; ids outside the table render as the
    /// unknown token.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(SPECIAL_TOKENS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
