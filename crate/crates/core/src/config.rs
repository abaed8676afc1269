//! Run configuration as flat `section.key = value` text.
//!
//! Unknown keys are rejected; missing keys keep their defaults. The
//! rendered form lists every key, so a log that starts with it pins the
//! run down completely.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::Task;
use crate::decoding::{DecodeConfig, TieBreak};
use crate::error::{Error, Result};
use crate::tensor::AdamConfig;
use crate::transformer::BlockConfig;

/// Where the corpus comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(Task),
    Files,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synthetic(t) => write!(f, "{t}"),
            DataSource::Files => f.write_str("files"),
        }
    }
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "files" {
            Ok(DataSource::Files)
        } else {
            Ok(DataSource::Synthetic(s.parse()?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    /// Non-reserved words of a synthetic task.
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub dull_fraction: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub min_freq: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic(Task::Copy),
            train: PathBuf::new(),
            dev: PathBuf::new(),
            test: PathBuf::new(),
            vocab_size: 20,
            min_len: 2,
            max_len: 8,
            dull_fraction: 0.5,
            n_train: 500,
            n_dev: 50,
            n_test: 100,
            min_freq: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Source plus target tokens per batch; pairs are drawn until it is reached.
    pub batch_tokens: usize,
    pub steps: u64,
    pub seed: u64,
    /// Zero gives the all-zero model, whose every distribution is uniform.
    pub init_scale: f64,
    /// Also train the two autoregressive models.
    pub ar: bool,
    pub log_every: u64,
    /// Zero disables intermediate checkpoints; the final one is always written.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            batch_tokens: 320,
            steps: 200,
            seed: 1,
            init_scale: 1.0,
            ar: true,
            log_every: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: BlockConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub out_dir: PathBuf,
    /// Decoding threads; zero means one per core.
    pub workers: usize,
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {v:?}: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "<config>".into(),
                line: i + 1,
                message: format!("expected key = value, got {raw:?}"),
            })?;
            c.set(k.trim(), v.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            },
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.data;
        let m = &mut self.model;
        let t = &mut self.train;
        let o = &mut self.decode;
        match key {
            "data.source" => d.source = v.parse()?,
            "data.train" => d.train = v.into(),
            "data.dev" => d.dev = v.into(),
            "data.test" => d.test = v.into(),
            "data.vocab_size" => d.vocab_size = parse_value(key, v)?,
            "data.min_len" => d.min_len = parse_value(key, v)?,
            "data.max_len" => d.max_len = parse_value(key, v)?,
            "data.dull_fraction" => d.dull_fraction = parse_value(key, v)?,
            "data.n_train" => d.n_train = parse_value(key, v)?,
            "data.n_dev" => d.n_dev = parse_value(key, v)?,
            "data.n_test" => d.n_test = parse_value(key, v)?,
            "data.min_freq" => d.min_freq = parse_value(key, v)?,
            "data.seed" => d.seed = parse_value(key, v)?,
            "model.d_model" => m.d_model = parse_value(key, v)?,
            "model.heads" => m.heads = parse_value(key, v)?,
            "model.d_ff" => m.d_ff = parse_value(key, v)?,
            "model.blocks" => m.blocks = parse_value(key, v)?,
            "model.rel_clip" => m.rel_clip = parse_value(key, v)?,
            "model.dropout" => m.dropout = parse_value(key, v)?,
            "model.max_positions" => m.max_positions = parse_value(key, v)?,
            "train.lr" => t.lr = parse_value(key, v)?,
            "train.batch_tokens" => t.batch_tokens = parse_value(key, v)?,
            "train.steps" => t.steps = parse_value(key, v)?,
            "train.seed" => t.seed = parse_value(key, v)?,
            "train.init_scale" => t.init_scale = parse_value(key, v)?,
            "train.ar" => t.ar = parse_value(key, v)?,
            "train.log_every" => t.log_every = parse_value(key, v)?,
            "train.checkpoint_every" => t.checkpoint_every = parse_value(key, v)?,
            "decode.lambda" => o.lambda = parse_value(key, v)?,
            "decode.n_best" => o.n_best = parse_value(key, v)?,
            "decode.length_candidates" => o.length_candidates = parse_value(key, v)?,
            "decode.k_tok" => o.k_tok = parse_value(key, v)?,
            "decode.beam" => o.beam = parse_value(key, v)?,
            "decode.sibling_penalty" => o.sibling_penalty = parse_value(key, v)?,
            "decode.max_len_offset" => o.max_len_offset = parse_value(key, v)?,
            "decode.npd" => o.npd = parse_value(key, v)?,
            "out.dir" => self.out_dir = v.into(),
            "run.workers" => self.workers = parse_value(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.decode.validate()?;
        if self.decode.tie_break != TieBreak::LowestId {
            return Err(Error::Config("tie-break policy is not configurable".into()));
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr {} must be positive", self.train.lr)));
        }
        if self.train.batch_tokens == 0 || self.train.log_every == 0 {
            return Err(Error::Config("train.batch_tokens and train.log_every must be >= 1".into()));
        }
        if !(self.train.init_scale >= 0.0 && self.train.init_scale.is_finite()) {
            return Err(Error::Config("train.init_scale must be >= 0".into()));
        }
        if self.data.source == DataSource::Files && self.data.train.as_os_str().is_empty() {
            return Err(Error::Config("data.source = files requires data.train".into()));
        }
        if self.data.max_len > self.model.max_positions {
            return Err(Error::Config(format!(
                "data.max_len {} exceeds model.max_positions {}",
                self.data.max_len, self.model.max_positions
            )));
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_text(&self) -> String {
        let d = &self.data;
        let m = &self.model;
        let t = &self.train;
        let o = &self.decode;
        let entries: Vec<(&str, String)> = vec![
            ("data.source", d.source.to_string()),
            ("data.train", d.train.display().to_string()),
            ("data.dev", d.dev.display().to_string()),
            ("data.test", d.test.display().to_string()),
            ("data.vocab_size", d.vocab_size.to_string()),
            ("data.min_len", d.min_len.to_string()),
            ("data.max_len", d.max_len.to_string()),
            ("data.dull_fraction", d.dull_fraction.to_string()),
            ("data.n_train", d.n_train.to_string()),
            ("data.n_dev", d.n_dev.to_string()),
            ("data.n_test", d.n_test.to_string()),
            ("data.min_freq", d.min_freq.to_string()),
            ("data.seed", d.seed.to_string()),
            ("model.d_model", m.d_model.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.d_ff", m.d_ff.to_string()),
            ("model.blocks", m.blocks.to_string()),
            ("model.rel_clip", m.rel_clip.to_string()),
            ("model.dropout", m.dropout.to_string()),
            ("model.max_positions", m.max_positions.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.batch_tokens", t.batch_tokens.to_string()),
            ("train.steps", t.steps.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.init_scale", t.init_scale.to_string()),
            ("train.ar", t.ar.to_string()),
            ("train.log_every", t.log_every.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("decode.lambda", o.lambda.to_string()),
            ("decode.n_best", o.n_best.to_string()),
            ("decode.length_candidates", o.length_candidates.to_string()),
            ("decode.k_tok", o.k_tok.to_string()),
            ("decode.beam", o.beam.to_string()),
            ("decode.sibling_penalty", o.sibling_penalty.to_string()),
            ("decode.max_len_offset", o.max_len_offset.to_string()),
            ("decode.npd", o.npd.to_string()),
            ("out.dir", self.out_dir.display().to_string()),
            ("run.workers", self.workers.to_string()),
        ];
        entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
