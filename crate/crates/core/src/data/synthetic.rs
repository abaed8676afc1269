//! Seeded toy tasks standing in for a real dialogue corpus.
//!
//! `keyed-dialog` is built so that one shared "dull" response is the most
//! likely reply to every source while carrying almost no information about
//! which source produced it:
//!
//! * a source is a key token followed by filler drawn from that key's own
//!   topic pool;
//! * with probability `dull_fraction` the target is the shared dull reply
//!   (truncated to the source length);
//! * otherwise the target follows the key's template, where every position
//!   offers two interchangeable tokens picked uniformly per pair.
//!
//! Per position a keyed token is therefore half as likely as the dull token
//! under the forward direction, but it identifies the source far better.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{Corpus, SourceTargetPair, Split};
use super::vocab::{Vocabulary, NUM_RESERVED};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Copy,
    Reverse,
    KeyedDialog,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Copy => "copy",
            Task::Reverse => "reverse",
            Task::KeyedDialog => "keyed-dialog",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Task::Copy),
            "reverse" => Ok(Task::Reverse),
            "keyed-dialog" => Ok(Task::KeyedDialog),
            other => Err(Error::Config(format!("unknown synthetic task {other}"))),
        }
    }
}

/// Words of the shared dull reply, in order.
const DULL_WORDS: [&str; 18] = [
    "i", "do", "not", "know", "what", "you", "are", "talking", "about", "and", "it", "is", "not",
    "my", "fault", "so", "just", "go",
];

pub const TOPIC_POOL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub task: Task,
    /// Number of non-reserved words.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub dull_fraction: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(task: Task, vocab_size: usize, min_len: usize, max_len: usize, seed: u64) -> Self {
        Self {
            task,
            vocab_size,
            min_len,
            max_len,
            dull_fraction: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!("vocab_size {} < 2", self.vocab_size)));
        }
        if self.min_len == 0 || self.min_len > self.max_len || self.max_len > DULL_WORDS.len() {
            return Err(Error::Config(format!(
                "length range [{}, {}] must satisfy 1 <= min <= max <= {}",
                self.min_len,
                self.max_len,
                DULL_WORDS.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.dull_fraction) {
            return Err(Error::Config(format!("dull_fraction {} outside [0, 1]", self.dull_fraction)));
        }
        if self.task == Task::KeyedDialog {
            KeyedDialogLayout::new(self)?;
        }
        Ok(())
    }
}

/// Token layout of the keyed-dialog task, in vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyedDialogLayout {
    pub keys: Vec<usize>,
    pub topics: Vec<Vec<usize>>,
    /// `alternatives[key][position]` holds the two tokens allowed there.
    pub alternatives: Vec<Vec<[usize; 2]>>,
    pub dull: Vec<usize>,
}

impl KeyedDialogLayout {
    fn per_key(max_len: usize) -> usize {
        1 + TOPIC_POOL + 2 * max_len
    }

    pub fn num_keys(vocab_size: usize, max_len: usize) -> usize {
        vocab_size.saturating_sub(max_len) / Self::per_key(max_len)
    }

    pub fn new(cfg: &SyntheticConfig) -> Result<Self> {
        let k = Self::num_keys(cfg.vocab_size, cfg.max_len);
        if k < 2 {
            return Err(Error::Config(format!(
                "keyed-dialog needs vocab_size >= {} for max_len {}",
                cfg.max_len + 2 * Self::per_key(cfg.max_len),
                cfg.max_len
            )));
        }
        // ids follow the word order produced by `synthetic_vocab`
        let mut next = NUM_RESERVED;
        let mut take = |n: usize| {
            let r: Vec<usize> = (next..next + n).collect();
            next += n;
            r
        };
        let dull = take(cfg.max_len);
        let mut keys = Vec::new();
        let mut topics = Vec::new();
        let mut alternatives = Vec::new();
        for _ in 0..k {
            keys.push(take(1)[0]);
            topics.push(take(TOPIC_POOL));
            let alts = take(2 * cfg.max_len);
            alternatives.push(alts.chunks(2).map(|c| [c[0], c[1]]).collect());
        }
        Ok(Self {
            keys,
            topics,
            alternatives,
            dull,
        })
    }

    pub fn dull_response(&self, len: usize) -> &[usize] {
        &self.dull[..len.min(self.dull.len())]
    }

    /// Whether `tokens` is exactly the dull reply of its own length.
    pub fn is_dull(&self, tokens: &[usize]) -> bool {
        !tokens.is_empty() && tokens.len() <= self.dull.len() && tokens == self.dull_response(tokens.len())
    }

    pub fn key_index(&self, source: &[usize]) -> Option<usize> {
        source.first().and_then(|t| self.keys.iter().position(|k| k == t))
    }
}

/// Vocabulary every synthetic corpus of `cfg` is encoded against.
pub fn synthetic_vocab(cfg: &SyntheticConfig) -> Result<Vocabulary> {
    cfg.validate()?;
    let mut words: Vec<String> = Vec::with_capacity(cfg.vocab_size);
    match cfg.task {
        Task::Copy | Task::Reverse => {
            words.extend((0..cfg.vocab_size).map(|i| format!("w{i}")));
        }
        Task::KeyedDialog => {
            // the dull reply repeats "not"; positions get distinct tokens
            words.extend(DULL_WORDS[..cfg.max_len].iter().enumerate().map(|(i, w)| {
                if DULL_WORDS[..i].contains(w) {
                    format!("{w}{i}")
                } else {
                    (*w).to_owned()
                }
            }));
            let k = KeyedDialogLayout::num_keys(cfg.vocab_size, cfg.max_len);
            for key in 0..k {
                words.push(format!("key{key}"));
                words.extend((0..TOPIC_POOL).map(|j| format!("topic{key}_{j}")));
                for pos in 0..cfg.max_len {
                    words.push(format!("r{key}_{pos}a"));
                    words.push(format!("r{key}_{pos}b"));
                }
            }
            let spare = cfg.vocab_size - words.len();
            words.extend((0..spare).map(|i| format!("spare{i}")));
        }
    }
    Ok(Vocabulary::from_words(words.iter().map(String::as_str)))
}

struct Generator {
    cfg: SyntheticConfig,
    layout: Option<KeyedDialogLayout>,
    rng: ChaCha8Rng,
}

impl Generator {
    fn new(cfg: &SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = match cfg.task {
            Task::KeyedDialog => Some(KeyedDialogLayout::new(cfg)?),
            _ => None,
        };
        Ok(Self {
            cfg: *cfg,
            layout,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        })
    }

    fn source(&mut self) -> Vec<usize> {
        let len = self.rng.gen_range(self.cfg.min_len..=self.cfg.max_len);
        match &self.layout {
            None => (0..len)
                .map(|_| NUM_RESERVED + self.rng.gen_range(0..self.cfg.vocab_size))
                .collect(),
            Some(layout) => {
                let k = self.rng.gen_range(0..layout.keys.len());
                let mut s = vec![layout.keys[k]];
                s.extend((1..len).map(|_| *layout.topics[k].choose(&mut self.rng).expect("non-empty pool")));
                s
            }
        }
    }

    fn target(&mut self, source: &[usize]) -> Vec<usize> {
        match (&self.layout, self.cfg.task) {
            (_, Task::Copy) => source.to_vec(),
            (_, Task::Reverse) => source.iter().rev().copied().collect(),
            (Some(layout), Task::KeyedDialog) => {
                let len = source.len();
                if self.rng.gen::<f64>() < self.cfg.dull_fraction {
                    layout.dull_response(len).to_vec()
                } else {
                    let k = layout.key_index(source).expect("keyed source starts with a key");
                    (0..len)
                        .map(|t| layout.alternatives[k][t][self.rng.gen_range(0..2)])
                        .collect()
                }
            }
            (None, Task::KeyedDialog) => unreachable!("keyed-dialog always has a layout"),
        }
    }

    fn pair(&mut self) -> SourceTargetPair {
        let source = self.source();
        let target = self.target(&source);
        SourceTargetPair { source, target }
    }
}

/// Draws `n_pairs` pairs from the task. Sources may repeat.
pub fn gen_synthetic(cfg: &SyntheticConfig, n_pairs: usize) -> Result<Corpus> {
    let mut g = Generator::new(cfg)?;
    Ok(Corpus::new((0..n_pairs).map(|_| g.pair()).collect(), Split::Train))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

/// Train/dev/test corpora whose source sets are pairwise disjoint.
///
/// A drawn pair whose source already belongs to another split is redrawn.
pub fn gen_splits(cfg: &SyntheticConfig, n_train: usize, n_dev: usize, n_test: usize) -> Result<Splits> {
    let mut g = Generator::new(cfg)?;
    let mut owner: HashMap<Vec<usize>, Split> = HashMap::new();
    let mut draw = |split: Split, n: usize| -> Result<Corpus> {
        let mut pairs = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while pairs.len() < n {
            attempts += 1;
            if attempts > 1000 * n.max(1) {
                return Err(Error::Config(format!(
                    "source space too small to draw {n} disjoint {split} pairs"
                )));
            }
            let p = g.pair();
            match owner.get(&p.source) {
                Some(&s) if s != split => continue,
                Some(_) => {}
                None => {
                    owner.insert(p.source.clone(), split);
                }
            }
            pairs.push(p);
        }
        Ok(Corpus::new(pairs, split))
    };
    let train = draw(Split::Train, n_train)?;
    let dev = draw(Split::Dev, n_dev)?;
    let test = draw(Split::Test, n_test)?;
    Ok(Splits { train, dev, test })
}
