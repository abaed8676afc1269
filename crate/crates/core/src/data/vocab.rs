use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const DUMMY: usize = 4;
pub const NUM_RESERVED: usize = 5;

pub const RESERVED_TOKENS: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>", "<unk>", "<dummy>"];

pub fn is_reserved(id: usize) -> bool {
    id < NUM_RESERVED
}

/// Token/id bijection with the reserved ids fixed at the front.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED_TOKENS {
            v.push(t);
        }
        v
    }

    fn push(&mut self, token: &str) -> usize {
        let id = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    /// Adds a word, returning its id. Existing words keep their id.
    pub fn add(&mut self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&id) => id,
            None => self.push(token),
        }
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::new();
        for w in words {
            v.add(w);
        }
        v
    }

    /// Builds a vocabulary from token counts, keeping words seen at least
    /// `min_freq` times in first-occurrence order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order = Vec::new();
        for t in tokens {
            let c = counts.entry(t).or_insert(0);
            if *c == 0 {
                order.push(t);
            }
            *c += 1;
        }
        let mut v = Self::new();
        for t in order {
            if counts[t] >= min_freq.max(1) && !v.index.contains_key(t) {
                v.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of non-reserved words.
    pub fn num_words(&self) -> usize {
        self.tokens.len() - NUM_RESERVED
    }

    /// Ids of every non-reserved word, ascending.
    pub fn word_ids(&self) -> std::ops::Range<usize> {
        NUM_RESERVED..self.tokens.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split(' ').filter(|t| !t.is_empty()).map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads one token per line; line number is the id.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        };
        for (i, expected) in RESERVED_TOKENS.iter().enumerate() {
            if lines.get(i) != Some(expected) {
                return Err(parse_err(i + 1, format!("expected reserved token {expected}")));
            }
        }
        let mut v = Self::new();
        for (i, line) in lines.iter().enumerate().skip(NUM_RESERVED) {
            if line.is_empty() || line.contains(' ') || v.index.contains_key(*line) {
                return Err(parse_err(i + 1, format!("invalid or duplicate token {line:?}")));
            }
            v.push(line);
        }
        Ok(v)
    }
}
