//! End-to-end pipelines behind the command-line tool: data preparation,
//! joint training with checkpoints, decoding in every mode, evaluation
//! and the oracle run.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ar::{train_step_ar, ArDirection};
use crate::backward::train_step_joint;
use crate::checkpoint;
use crate::config::{DataSource, RunConfig};
use crate::data::{
    gen_splits, load_corpus, load_corpus_with_vocab, synthetic_vocab, Corpus, SourceTargetPair, Split, Splits,
    SyntheticConfig, VocabPolicy, Vocabulary,
};
use crate::decoding::{
    ar_beam_search, ar_mmi_rerank, format_dump_line, npd_mmi_select, DecodeConfig, DumpRecord, Mode, NonArDecoder,
    TieBreak,
};
use crate::error::{Error, Result};
use crate::metrics::{bleu, distinct_n, MetricsReport, StopwordList};
use crate::model::System;
use crate::oracle::{oracle_suite, OracleReport};
use crate::params::Init;
use crate::tensor::AdamState;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const LOG_FILE: &str = "train.log";
pub const CONFIG_FILE: &str = "config.txt";

/// λ grid searched on the dev split.
pub const LAMBDA_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// λ values exercised by the oracle run.
pub const ORACLE_LAMBDAS: [f64; 5] = [0.0, 0.3, 0.5, 0.8, 1.0];

#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub splits: Splits,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &Corpus {
        match split {
            Split::Train => &self.splits.train,
            Split::Dev => &self.splits.dev,
            Split::Test => &self.splits.test,
        }
    }
}

pub fn synthetic_config(cfg: &RunConfig) -> Option<SyntheticConfig> {
    match &cfg.data.source {
        DataSource::Synthetic(task) => {
            let mut s = SyntheticConfig::new(*task, cfg.data.vocab_size, cfg.data.min_len, cfg.data.max_len, cfg.data.seed);
            s.dull_fraction = cfg.data.dull_fraction;
            Some(s)
        }
        DataSource::Files => None,
    }
}

/// Generates or reads the three splits and the vocabulary they use.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    if let Some(s) = synthetic_config(cfg) {
        return Ok(Dataset {
            vocab: synthetic_vocab(&s)?,
            splits: gen_splits(&s, cfg.data.n_train, cfg.data.n_dev, cfg.data.n_test)?,
        });
    }
    let policy = VocabPolicy {
        min_freq: cfg.data.min_freq,
        max_len: cfg.data.max_len,
    };
    let (train, vocab) = load_corpus(&cfg.data.train, policy)?;
    let optional = |path: &PathBuf, split: Split| -> Result<Corpus> {
        if path.as_os_str().is_empty() {
            Ok(Corpus::new(Vec::new(), split))
        } else {
            load_corpus_with_vocab(path, &vocab, split, cfg.data.max_len)
        }
    };
    let dev = optional(&cfg.data.dev, Split::Dev)?;
    let test = optional(&cfg.data.test, Split::Test)?;
    Ok(Dataset {
        vocab,
        splits: Splits { train, dev, test },
    })
}

pub fn build_system(cfg: &RunConfig, vocab: Vocabulary) -> Result<System> {
    let init = if cfg.train.init_scale == 0.0 {
        Init::Zeros
    } else {
        Init::Random {
            scale: cfg.train.init_scale,
        }
    };
    System::new(vocab, &cfg.model, init, cfg.train.seed)
}

fn mix(seed: u64, step: u64, stream: u64) -> u64 {
    // splitmix64 finaliser over the combined inputs
    let mut z = seed
        .wrapping_add(step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pairs drawn with replacement until the token budget is met. Depends
/// only on `(seed, step)`, so a resumed run sees the same batches.
pub fn batch_for_step(train: &[SourceTargetPair], budget: usize, seed: u64, step: u64) -> Result<Vec<SourceTargetPair>> {
    if train.is_empty() {
        return Err(Error::Contract("training split is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, step, 0));
    let mut batch = Vec::new();
    let mut tokens = 0;
    while tokens < budget {
        let p = &train[rng.gen_range(0..train.len())];
        tokens += p.source.len() + p.target.len();
        batch.push(p.clone());
    }
    Ok(batch)
}

/// Losses recorded for one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u64,
    pub fwd_loss: f64,
    pub bwd_loss: f64,
    pub len_loss: f64,
    pub bwd_len_loss: f64,
    pub ar: Option<(f64, f64)>,
}

impl StepLog {
    pub fn line(&self) -> String {
        let mut s = format!(
            "step={} fwd_loss={:.6} bwd_loss={:.6} len_loss={:.6} bwd_len_loss={:.6}",
            self.step, self.fwd_loss, self.bwd_loss, self.len_loss, self.bwd_len_loss
        );
        if let Some((f, b)) = self.ar {
            s.push_str(&format!(" ar_fwd_loss={f:.6} ar_bwd_loss={b:.6}"));
        }
        s
    }
}

/// The four models and their optimizers.
pub struct Trainer {
    pub config: RunConfig,
    pub system: System,
    pub nonar_opt: AdamState,
    pub ar_fwd_opt: AdamState,
    pub ar_bwd_opt: AdamState,
    pub step: u64,
}

impl Trainer {
    pub fn new(config: &RunConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        let system = build_system(config, vocab)?;
        let adam = config.train.adam();
        let store = &system.store;
        Ok(Self {
            nonar_opt: AdamState::new(adam, store, system.nonar.all_params(store)),
            ar_fwd_opt: AdamState::new(adam, store, system.ar_forward.params(store)),
            ar_bwd_opt: AdamState::new(adam, store, system.ar_backward.params(store)),
            config: config.clone(),
            system,
            step: 0,
        })
    }

    /// Runs the next step on a batch drawn from `train`.
    pub fn step_once(&mut self, train: &[SourceTargetPair]) -> Result<StepLog> {
        let step = self.step + 1;
        let seed = self.config.train.seed;
        let batch = batch_for_step(train, self.config.train.batch_tokens, seed, step)?;
        let s = &mut self.system;
        let joint = train_step_joint(&s.nonar, &mut s.store, &batch, &mut self.nonar_opt, mix(seed, step, 1), None)?;
        let ar = if self.config.train.ar {
            let f = train_step_ar(
                &s.ar_forward,
                &mut s.store,
                &batch,
                ArDirection::SourceToTarget,
                &mut self.ar_fwd_opt,
                mix(seed, step, 2),
            )?;
            let b = train_step_ar(
                &s.ar_backward,
                &mut s.store,
                &batch,
                ArDirection::TargetToSource,
                &mut self.ar_bwd_opt,
                mix(seed, step, 3),
            )?;
            Some((f, b))
        } else {
            None
        };
        self.step = step;
        let log = StepLog {
            step,
            fwd_loss: joint.forward.token,
            bwd_loss: joint.backward.token,
            len_loss: joint.forward.length,
            bwd_len_loss: joint.backward.length,
            ar,
        };
        for v in [log.fwd_loss, log.bwd_loss, log.len_loss, log.bwd_len_loss] {
            if !v.is_finite() {
                return Err(Error::Numeric("training loss"));
            }
        }
        Ok(log)
    }

    fn opts(&self) -> [(&'static str, &AdamState); 3] {
        [("nonar", &self.nonar_opt), ("ar_fwd", &self.ar_fwd_opt), ("ar_bwd", &self.ar_bwd_opt)]
    }

    /// Rounds live state to checkpoint precision and writes it.
    pub fn checkpoint(&mut self, path: &Path) -> Result<()> {
        checkpoint::round_state(
            &mut self.system.store,
            &mut [&mut self.nonar_opt, &mut self.ar_fwd_opt, &mut self.ar_bwd_opt],
        );
        checkpoint::save(path, self.step, &self.system.store, &self.opts())
    }

    pub fn restore(&mut self, path: &Path) -> Result<()> {
        self.step = checkpoint::load(
            path,
            &mut self.system.store,
            &mut [
                ("nonar", &mut self.nonar_opt),
                ("ar_fwd", &mut self.ar_fwd_opt),
                ("ar_bwd", &mut self.ar_bwd_opt),
            ],
        )?;
        Ok(())
    }

    /// Steps until `until` (capped at the configured total), checkpointing
    /// on schedule and at the end. Returns the log lines written.
    pub fn run(&mut self, train: &[SourceTargetPair], until: u64, ckpt: &Path, log: &mut dyn Write) -> Result<Vec<StepLog>> {
        let until = until.min(self.config.train.steps);
        let every = self.config.train.checkpoint_every;
        let mut logs = Vec::new();
        while self.step < until {
            let l = self.step_once(train)?;
            if l.step % self.config.train.log_every == 0 || l.step == until {
                writeln!(log, "{}", l.line()).map_err(|e| Error::io(LOG_FILE, e))?;
                info!("{}", l.line());
            }
            logs.push(l);
            if every > 0 && self.step.is_multiple_of(every) {
                self.checkpoint(ckpt)?;
            }
        }
        self.checkpoint(ckpt)?;
        Ok(logs)
    }
}

/// Files produced by a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub steps: u64,
    pub final_log: Option<StepLog>,
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

/// Trains from scratch, or continues from the checkpoint in the output
/// directory when `resume` is set. Training stops at `stop_at` if given.
pub fn cmd_train(cfg: &RunConfig, resume: bool, stop_at: Option<u64>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let ckpt = out_path(cfg, CHECKPOINT_FILE);
    let log_path = out_path(cfg, LOG_FILE);
    let mut trainer = Trainer::new(cfg, data.vocab.clone())?;
    let mut log = if resume {
        trainer.restore(&ckpt)?;
        let mut f = OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        writeln!(f, "# resumed at step {}", trainer.step).map_err(|e| Error::io(&log_path, e))?;
        f
    } else {
        let mut f = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        f.write_all(cfg.to_text().as_bytes()).map_err(|e| Error::io(&log_path, e))?;
        writeln!(f, "# ---").map_err(|e| Error::io(&log_path, e))?;
        f
    };
    data.vocab.save(&out_path(cfg, VOCAB_FILE))?;
    fs::write(out_path(cfg, CONFIG_FILE), cfg.to_text()).map_err(|e| Error::io(out_path(cfg, CONFIG_FILE), e))?;
    for split in [Split::Train, Split::Dev, Split::Test] {
        let c = data.split(split);
        if !c.is_empty() {
            c.save(&out_path(cfg, &format!("{split}.tsv")), &data.vocab)?;
        }
    }
    let logs = trainer.run(
        &data.splits.train.pairs,
        stop_at.unwrap_or(cfg.train.steps),
        &ckpt,
        &mut log,
    )?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        log: log_path,
        steps: trainer.step,
        final_log: logs.last().copied(),
    })
}

/// Rebuilds the models described by `cfg` and loads `checkpoint` into
/// them. The vocabulary is read from the checkpoint's directory.
pub fn load_system(cfg: &RunConfig, checkpoint_path: &Path) -> Result<System> {
    let dir = checkpoint_path.parent().unwrap_or(Path::new("."));
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    let mut system = build_system(cfg, vocab)?;
    checkpoint::load(checkpoint_path, &mut system.store, &mut [])?;
    Ok(system)
}

/// The output of one source under one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    /// The score the pipeline ranked by.
    pub total: f64,
    pub per_token: Vec<f64>,
}

fn ar_max_len(system: &System, x: &[usize], cfg: &DecodeConfig) -> usize {
    (x.len() + cfg.max_len_offset).min(system.config.max_positions - 1).max(1)
}

fn ar_pipeline(system: &System, x: &[usize], cfg: &DecodeConfig, gamma: f64, lambda: Option<f64>) -> Result<Decoded> {
    let max_len = ar_max_len(system, x, cfg);
    let beam = ar_beam_search(&system.ar_forward, &system.store, x, cfg.beam, gamma, max_len)?;
    let (tokens, total) = match lambda {
        None => (beam[0].tokens.clone(), beam[0].logprob),
        Some(l) => {
            let r = &ar_mmi_rerank(&system.ar_pair(), x, &beam, l)?[0];
            (r.tokens.clone(), r.score)
        }
    };
    let per_token = system.ar_forward.token_logprobs(&system.store, x, &tokens)?;
    Ok(Decoded {
        tokens,
        total,
        per_token,
    })
}

/// Decodes one source. `decoder` must wrap `system.nonar`.
pub fn decode_source(system: &System, decoder: &NonArDecoder, x: &[usize], mode: Mode, cfg: &DecodeConfig) -> Result<Decoded> {
    match mode {
        Mode::NonAr => {
            let tokens = decoder.greedy(x)?;
            let lp = system.nonar.forward_logprobs(&system.store, x, tokens.len())?;
            let per_token: Vec<f64> = tokens.iter().enumerate().map(|(t, &v)| lp.at(t, v)).collect();
            Ok(Decoded {
                total: per_token.iter().sum(),
                tokens,
                per_token,
            })
        }
        Mode::NonArMmi if cfg.npd => {
            let cands = decoder.nbest(x, cfg.lambda, cfg.n_best, cfg.length_candidates, cfg.k_tok)?;
            let best = &npd_mmi_select(&system.ar_pair(), x, &cands, cfg.lambda)?[0];
            Ok(Decoded {
                tokens: best.tokens.clone(),
                total: best.score,
                per_token: cands[best.index].breakdown.per_token(),
            })
        }
        Mode::NonArMmi => {
            let c = decoder.decode(x, cfg.lambda, cfg.tie_break)?;
            Ok(Decoded {
                total: c.score(),
                per_token: c.breakdown.per_token(),
                tokens: c.tokens,
            })
        }
        Mode::Ar => ar_pipeline(system, x, cfg, 0.0, None),
        Mode::ArMmi => ar_pipeline(system, x, cfg, 0.0, Some(cfg.lambda)),
        Mode::ArMmiDiverse => ar_pipeline(system, x, cfg, cfg.sibling_penalty, Some(cfg.lambda)),
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Decodes every source in order, fanning out over `workers` threads.
pub fn decode_all(system: &System, sources: &[Vec<usize>], mode: Mode, cfg: &DecodeConfig, workers: usize) -> Result<Vec<Decoded>> {
    let decoder = NonArDecoder::new(&system.nonar, &system.store);
    decode_all_with(system, &decoder, sources, mode, cfg, workers)
}

/// As [`decode_all`], reusing `decoder` and its score cache.
pub fn decode_all_with(
    system: &System,
    decoder: &NonArDecoder,
    sources: &[Vec<usize>],
    mode: Mode,
    cfg: &DecodeConfig,
    workers: usize,
) -> Result<Vec<Decoded>> {
    cfg.validate()?;
    pool(workers)?.install(|| {
        sources
            .par_iter()
            .map(|x| decode_source(system, decoder, x, mode, cfg))
            .collect()
    })
}

pub fn dump_records(vocab: &Vocabulary, sources: &[Vec<usize>], outputs: &[Decoded]) -> Vec<DumpRecord> {
    sources
        .iter()
        .zip(outputs)
        .map(|(x, d)| DumpRecord {
            input: vocab.decode(x),
            output: vocab.decode(&d.tokens),
            total: d.total,
            per_token: d.per_token.clone(),
        })
        .collect()
}

pub fn render_dump(records: &[DumpRecord]) -> String {
    records.iter().map(|r| format_dump_line(r) + "\n").collect()
}

/// Decodes the test split (or `input`, a corpus file) and writes the dump.
pub fn cmd_decode(cfg: &RunConfig, checkpoint_path: &Path, mode: Mode, input: Option<&Path>, out: &Path) -> Result<Vec<DumpRecord>> {
    if !mode.uses_lambda() && cfg.decode.lambda != DecodeConfig::default().lambda {
        warn!("mode {mode} is forward-only; ignoring lambda = {}", cfg.decode.lambda);
    }
    let system = load_system(cfg, checkpoint_path)?;
    let sources: Vec<Vec<usize>> = match input {
        Some(p) => load_corpus_with_vocab(p, &system.vocab, Split::Test, cfg.model.max_positions)?
            .pairs
            .into_iter()
            .map(|p| p.source)
            .collect(),
        None => load_data(cfg)?.splits.test.pairs.into_iter().map(|p| p.source).collect(),
    };
    let outputs = decode_all(&system, &sources, mode, &cfg.decode, cfg.workers)?;
    let records = dump_records(&system.vocab, &sources, &outputs);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(out, render_dump(&records)).map_err(|e| Error::io(out, e))?;
    Ok(records)
}

/// Reference responses: the second column of a corpus file, or whole
/// lines when there is no tab.
pub fn read_references(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_once('\t').map_or(l, |(_, r)| r).to_owned())
        .collect())
}

pub fn cmd_eval(dump: &[DumpRecord], references: &[String], stopwords: &StopwordList) -> Result<MetricsReport> {
    if dump.len() != references.len() {
        return Err(Error::Alignment(format!(
            "dump has {} lines but references have {}",
            dump.len(),
            references.len()
        )));
    }
    let hyps: Vec<&str> = dump.iter().map(|r| r.output.as_str()).collect();
    MetricsReport::compute(&hyps, references, stopwords)
}

/// Dev-split criterion used to pick λ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMetric {
    #[default]
    Bleu,
    Distinct2,
}

impl std::str::FromStr for SweepMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bleu" => Ok(SweepMetric::Bleu),
            "distinct2" => Ok(SweepMetric::Distinct2),
            _ => Err(Error::Config(format!("unknown sweep metric {s}"))),
        }
    }
}

/// Dev-split scores of one λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub bleu: f64,
    pub distinct2: f64,
}

impl SweepPoint {
    pub fn get(&self, metric: SweepMetric) -> f64 {
        match metric {
            SweepMetric::Bleu => self.bleu,
            SweepMetric::Distinct2 => self.distinct2,
        }
    }
}

/// Decodes the dev split at every λ on the grid.
pub fn sweep_lambda(system: &System, dev: &Corpus, mode: Mode, cfg: &DecodeConfig, workers: usize) -> Result<Vec<SweepPoint>> {
    if dev.is_empty() {
        return Err(Error::Contract("λ sweep needs a non-empty dev split".into()));
    }
    let decoder = NonArDecoder::new(&system.nonar, &system.store);
    let sources: Vec<Vec<usize>> = dev.pairs.iter().map(|p| p.source.clone()).collect();
    let refs: Vec<String> = dev.pairs.iter().map(|p| system.vocab.decode(&p.target)).collect();
    LAMBDA_GRID
        .iter()
        .map(|&lambda| {
            let c = DecodeConfig { lambda, ..cfg.clone() };
            let out = decode_all_with(system, &decoder, &sources, mode, &c, workers)?;
            let hyps: Vec<String> = out.iter().map(|d| system.vocab.decode(&d.tokens)).collect();
            Ok(SweepPoint {
                lambda,
                bleu: bleu(&hyps, &refs)?,
                distinct2: distinct_n(&hyps, 2)?,
            })
        })
        .collect()
}

/// The λ with the best score under `metric`; ties go to the smaller λ.
pub fn best_lambda(points: &[SweepPoint], metric: SweepMetric) -> f64 {
    points
        .iter()
        .fold(None::<&SweepPoint>, |acc, p| match acc {
            Some(b) if b.get(metric) >= p.get(metric) => acc,
            _ => Some(p),
        })
        .map_or(0.0, |p| p.lambda)
}

/// Oracle equivalence and identity checks over up to `limit` test sources.
pub fn cmd_oracle(cfg: &RunConfig, system: &System, limit: usize, tie: TieBreak) -> Result<OracleReport> {
    let data = load_data(cfg)?;
    let sources: Vec<Vec<usize>> = data.splits.test.pairs.iter().take(limit).map(|p| p.source.clone()).collect();
    if sources.is_empty() {
        return Err(Error::Contract("oracle run needs test sources".into()));
    }
    oracle_suite(&system.nonar, &system.store, &sources, &ORACLE_LAMBDAS, tie)
}
