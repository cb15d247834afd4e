//! Token counting strategies feeding the compression ratio.
//!
//! Only ratios of counts matter downstream, so any strategy that scales
//! roughly linearly with text length is usable. Whitespace splitting is the
//! default; a byte-level BPE counter is provided for closer-to-model counts.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TokenError {
    #[error("text is empty after trimming whitespace")]
    EmptyText,
    #[error("failed to load BPE merges from {path}: {reason}")]
    VocabLoad { path: PathBuf, reason: String },
    #[error("unknown token strategy `{0}` (expected whitespace, chars4 or bpe)")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Whitespace,
    Chars4,
    Bpe,
}

impl FromStr for Strategy {
    type Err = TokenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace" => Ok(Strategy::Whitespace),
            "chars4" => Ok(Strategy::Chars4),
            "bpe" => Ok(Strategy::Bpe),
            other => Err(TokenError::UnknownStrategy(other.to_string())),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Whitespace => "whitespace",
            Strategy::Chars4 => "chars4",
            Strategy::Bpe => "bpe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenCounterSpec {
    pub strategy: Strategy,
    pub vocab_path: Option<PathBuf>,
}

impl Default for TokenCounterSpec {
    fn default() -> Self {
        Self {
            strategy: Strategy::Whitespace,
            vocab_path: None,
        }
    }
}

impl TokenCounterSpec {
    pub fn whitespace() -> Self {
        Self::default()
    }

    pub fn chars4() -> Self {
        Self {
            strategy: Strategy::Chars4,
            vocab_path: None,
        }
    }

    pub fn bpe(vocab_path: impl Into<PathBuf>) -> Self {
        Self {
            strategy: Strategy::Bpe,
            vocab_path: Some(vocab_path.into()),
        }
    }
}

impl fmt::Display for TokenCounterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.vocab_path {
            Some(p) if self.strategy == Strategy::Bpe => write!(f, "bpe:{}", p.display()),
            _ => write!(f, "{}", self.strategy),
        }
    }
}

/// Ranked merge table over a byte alphabet.
#[derive(Debug, Clone, Default)]
pub struct BpeMerges {
    ranks: HashMap<(Vec<u8>, Vec<u8>), usize>,
}

impl BpeMerges {
    /// Parse one `token_a token_b` rule per line; earlier lines bind tighter.
    /// Blank lines and `#` comment lines are ignored.
    pub fn parse(source: &str) -> Result<Self, String> {
        let mut ranks = HashMap::new();
        for (lineno, line) in source.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    let rank = ranks.len();
                    ranks
                        .entry((a.as_bytes().to_vec(), b.as_bytes().to_vec()))
                        .or_insert(rank);
                }
                _ => return Err(format!("line {}: expected `token_a token_b`", lineno + 1)),
            }
        }
        Ok(Self { ranks })
    }

    pub fn load(path: &Path) -> Result<Self, TokenError> {
        let source = std::fs::read_to_string(path).map_err(|e| TokenError::VocabLoad {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&source).map_err(|reason| TokenError::VocabLoad {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Apply merges to one whitespace-free word and return its tokens.
    pub fn encode_word(&self, word: &str) -> Vec<Vec<u8>> {
        let mut parts: Vec<Vec<u8>> = word.bytes().map(|b| vec![b]).collect();
        loop {
            let best = parts
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(best) = best else { break };
            let mut merged = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len() && self.ranks.get(&(parts[i].clone(), parts[i + 1].clone())) == Some(&best) {
                    let mut joined = parts[i].clone();
                    joined.extend_from_slice(&parts[i + 1]);
                    merged.push(joined);
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut parts[i]));
                    i += 1;
                }
            }
            parts = merged;
        }
        parts
    }
}

/// A ready-to-use counter; the BPE table is loaded once at construction.
#[derive(Debug, Clone)]
pub struct TokenCounter {
    spec: TokenCounterSpec,
    merges: Option<BpeMerges>,
}

impl TokenCounter {
    pub fn new(spec: TokenCounterSpec) -> Result<Self, TokenError> {
        let merges = match spec.strategy {
            Strategy::Bpe => {
                let path = spec.vocab_path.as_deref().ok_or_else(|| TokenError::VocabLoad {
                    path: PathBuf::new(),
                    reason: "bpe strategy requires a merges file".into(),
                })?;
                Some(BpeMerges::load(path)?)
            }
            _ => None,
        };
        Ok(Self { spec, merges })
    }

    pub fn with_merges(merges: BpeMerges) -> Self {
        Self {
            spec: TokenCounterSpec {
                strategy: Strategy::Bpe,
                vocab_path: None,
            },
            merges: Some(merges),
        }
    }

    pub fn spec(&self) -> &TokenCounterSpec {
        &self.spec
    }

    pub fn count(&self, text: &str) -> Result<u64, TokenError> {
        if text.trim().is_empty() {
            return Err(TokenError::EmptyText);
        }
        let n = match self.spec.strategy {
            Strategy::Whitespace => text.split_whitespace().count(),
            Strategy::Chars4 => text.chars().count().div_ceil(4),
            Strategy::Bpe => {
                let merges = self.merges.as_ref().expect("bpe counter always holds merges");
                text.split_whitespace().map(|w| merges.encode_word(w).len()).sum()
            }
        };
        Ok(n as u64)
    }
}

/// One-shot convenience; prefer [`TokenCounter`] when counting many texts.
pub fn count_tokens(text: &str, spec: &TokenCounterSpec) -> Result<u64, TokenError> {
    TokenCounter::new(spec.clone())?.count(text)
}
