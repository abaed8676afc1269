use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::vocab::{is_reserved, Vocabulary};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SourceTargetPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl SourceTargetPair {
    pub fn new(source: Vec<usize>, target: Vec<usize>) -> Self {
        Self { source, target }
    }

    /// Target length minus source length.
    pub fn length_delta(&self) -> i64 {
        self.target.len() as i64 - self.source.len() as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<SourceTargetPair>,
    pub split: Split,
}

impl Corpus {
    pub fn new(pairs: Vec<SourceTargetPair>, split: Split) -> Self {
        Self { pairs, split }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Serialises in the tab-separated corpus format.
    pub fn to_tsv(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&vocab.decode(&p.source));
            out.push('\t');
            out.push_str(&vocab.decode(&p.target));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<()> {
        fs::write(path, self.to_tsv(vocab)).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabPolicy {
    pub min_freq: usize,
    pub max_len: usize,
}

impl Default for VocabPolicy {
    fn default() -> Self {
        Self {
            min_freq: 1,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// One line of raw text split into source and target tokens.
pub fn parse_line<'a>(
    line: &'a str,
    line_no: usize,
    path: &str,
    max_len: usize,
) -> Result<(Vec<&'a str>, Vec<&'a str>)> {
    let err = |message: String| Error::Parse {
        path: path.to_owned(),
        line: line_no,
        message,
    };
    let mut halves = line.split('\t');
    let (Some(src), Some(tgt), None) = (halves.next(), halves.next(), halves.next()) else {
        return Err(err("expected exactly one tab separating source and target".into()));
    };
    let side = |text: &'a str, name: &str| -> Result<Vec<&'a str>> {
        if text.is_empty() {
            return Err(err(format!("empty {name}")));
        }
        let toks: Vec<&str> = text.split(' ').collect();
        if toks.iter().any(|t| t.is_empty()) {
            return Err(err(format!("{name} has leading, trailing or repeated spaces")));
        }
        if toks.len() > max_len {
            return Err(err(format!("{name} length {} exceeds {max_len}", toks.len())));
        }
        Ok(toks)
    };
    Ok((side(src, "source")?, side(tgt, "target")?))
}

fn read_lines(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a training corpus and builds its vocabulary.
pub fn load_corpus(path: &Path, policy: VocabPolicy) -> Result<(Corpus, Vocabulary)> {
    let text = read_lines(path)?;
    let name = path.display().to_string();
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        raw.push(parse_line(line, i + 1, &name, policy.max_len)?);
    }
    let vocab = Vocabulary::build(
        raw.iter().flat_map(|(s, t)| s.iter().chain(t.iter()).copied()),
        policy.min_freq,
    );
    let pairs = raw
        .iter()
        .map(|(s, t)| SourceTargetPair {
            source: s.iter().map(|w| vocab.id(w)).collect(),
            target: t.iter().map(|w| vocab.id(w)).collect(),
        })
        .collect();
    Ok((Corpus::new(pairs, Split::Train), vocab))
}

/// Reads a dev or test corpus against an existing vocabulary.
pub fn load_corpus_with_vocab(path: &Path, vocab: &Vocabulary, split: Split, max_len: usize) -> Result<Corpus> {
    let text = read_lines(path)?;
    let name = path.display().to_string();
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (s, t) = parse_line(line, i + 1, &name, max_len)?;
        pairs.push(SourceTargetPair {
            source: s.iter().map(|w| vocab.id(w)).collect(),
            target: t.iter().map(|w| vocab.id(w)).collect(),
        });
    }
    Ok(Corpus::new(pairs, split))
}

/// Checks the pair invariants: lengths within `[1, max_len]` and no reserved tokens.
pub fn validate_pair(pair: &SourceTargetPair, max_len: usize) -> Result<()> {
    for (side, name) in [(&pair.source, "source"), (&pair.target, "target")] {
        if side.is_empty() || side.len() > max_len {
            return Err(Error::Length {
                len: side.len(),
                max: max_len,
            });
        }
        if let Some(&r) = side.iter().find(|&&t| is_reserved(t) && t != super::vocab::UNK) {
            return Err(Error::Contract(format!("reserved token {r} inside {name}")));
        }
    }
    Ok(())
}
