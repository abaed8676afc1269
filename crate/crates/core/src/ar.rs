//! Left-to-right encoder-decoder used by the reranking baselines and by
//! the final selection step of noisy parallel decoding.

use crate::data::vocab::{BOS, EOS};
use crate::data::SourceTargetPair;
use crate::error::{Error, Result};
use crate::nn::{Builder, Session};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{AdamState, Tensor, Var};
use crate::train::{gradients, optimize};
use crate::transformer::{BlockConfig, CausalDecoder, Encoder};

#[derive(Debug, Clone)]
pub struct ArModel {
    pub config: BlockConfig,
    pub prefix: String,
    pub tok_emb: ParamId,
    pub encoder: Encoder,
    pub decoder: CausalDecoder,
}

impl ArModel {
    pub fn new(b: &mut Builder, prefix: &str, cfg: &BlockConfig, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            config: *cfg,
            prefix: prefix.to_owned(),
            tok_emb: b.table(&format!("{prefix}tok_emb"), vocab_size, cfg.d_model)?,
            encoder: Encoder::new(b, &format!("{prefix}enc"), cfg)?,
            decoder: CausalDecoder::new(b, &format!("{prefix}dec"), cfg)?,
        })
    }

    pub fn params(&self, store: &ParamStore) -> Vec<ParamId> {
        crate::model::group(store, &[&self.prefix])
    }

    /// Encoder output for `x`, detached from any graph.
    pub fn encode(&self, store: &ParamStore, x: &[usize]) -> Result<Tensor> {
        let mut s = Session::inference(store);
        let h = self.encoder.encode(&mut s, self.tok_emb, x)?;
        Ok(s.g.value(h).clone())
    }

    /// Log-distribution of the token following `prefix`, given encoded source `h`.
    pub fn next_logprobs(&self, store: &ParamStore, h: &Tensor, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(BOS);
        input.extend_from_slice(prefix);
        let mut s = Session::inference(store);
        let hv = s.g.constant(h.clone());
        let logits = self.decoder.forward(&mut s, self.tok_emb, &input, hv)?;
        let lp = s.g.log_softmax(logits, 1)?;
        Ok(s.g.value(lp).row(input.len() - 1).to_vec())
    }

    fn teacher_forced(&self, s: &mut Session, x: &[usize], y: &[usize]) -> Result<(Var, Vec<usize>)> {
        if x.is_empty() {
            return Err(Error::Contract("autoregressive source must be non-empty".into()));
        }
        let h = self.encoder.encode(s, self.tok_emb, x)?;
        let mut input = vec![BOS];
        input.extend_from_slice(y);
        let mut targets = y.to_vec();
        targets.push(EOS);
        let logits = self.decoder.forward(s, self.tok_emb, &input, h)?;
        Ok((logits, targets))
    }

    /// Per-step `log p(y_t | y_<t, x)` including the closing end-of-sequence step.
    pub fn token_logprobs(&self, store: &ParamStore, x: &[usize], y: &[usize]) -> Result<Vec<f64>> {
        let mut s = Session::inference(store);
        let (logits, targets) = self.teacher_forced(&mut s, x, y)?;
        let lp = s.g.log_softmax(logits, 1)?;
        let lp = s.g.value(lp);
        Ok(targets.iter().enumerate().map(|(t, &v)| lp.at(t, v)).collect())
    }

    /// `log p(y|x)` under teacher forcing, end-of-sequence included.
    pub fn sequence_logprob(&self, store: &ParamStore, x: &[usize], y: &[usize]) -> Result<f64> {
        Ok(self.token_logprobs(store, x, y)?.iter().sum())
    }

    pub(crate) fn loss(&self, s: &mut Session, pairs: &[(&[usize], &[usize])]) -> Result<Var> {
        if pairs.is_empty() {
            return Err(Error::Contract("empty training batch".into()));
        }
        let mut all_logits = Vec::with_capacity(pairs.len());
        let mut all_targets = Vec::new();
        for (x, y) in pairs {
            let (logits, targets) = self.teacher_forced(s, x, y)?;
            all_logits.push(logits);
            all_targets.extend(targets);
        }
        let logits = s.g.concat_rows(&all_logits)?;
        s.g.cross_entropy(logits, &all_targets)
    }
}

/// Which side of each pair an autoregressive model reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArDirection {
    /// Models `p(y|x)`.
    SourceToTarget,
    /// Models `p(x|y)`.
    TargetToSource,
}

/// One Adam step of token cross-entropy for an autoregressive model.
pub fn train_step_ar(
    model: &ArModel,
    store: &mut ParamStore,
    batch: &[SourceTargetPair],
    direction: ArDirection,
    opt: &mut AdamState,
    seed: u64,
) -> Result<f64> {
    let pairs = oriented(batch, direction);
    optimize(store, opt, model.config.dropout, seed, |s| {
        let loss = model.loss(s, &pairs)?;
        let v = s.g.value(loss).item();
        Ok((loss, v))
    })
}

fn oriented(batch: &[SourceTargetPair], direction: ArDirection) -> Vec<(&[usize], &[usize])> {
    batch
        .iter()
        .map(|p| match direction {
            ArDirection::SourceToTarget => (p.source.as_slice(), p.target.as_slice()),
            ArDirection::TargetToSource => (p.target.as_slice(), p.source.as_slice()),
        })
        .collect()
}

/// Token cross-entropy on a batch and its exact gradient, without dropout.
pub fn ar_gradients(model: &ArModel, store: &ParamStore, batch: &[SourceTargetPair], direction: ArDirection) -> Result<(f64, Gradients)> {
    let pairs = oriented(batch, direction);
    let (g, v) = gradients(store, |s| {
        let loss = model.loss(s, &pairs)?;
        let v = s.g.value(loss).item();
        Ok((loss, v))
    })?;
    Ok((v, g))
}

/// Forward and backward autoregressive models over one store.
#[derive(Debug, Clone, Copy)]
pub struct ArPair<'a> {
    pub store: &'a ParamStore,
    pub forward: &'a ArModel,
    pub backward: &'a ArModel,
}

impl ArPair<'_> {
    /// `log p(y|x)` and `log p(x|y)`.
    pub fn scores(&self, x: &[usize], y: &[usize]) -> Result<(f64, f64)> {
        Ok((
            self.forward.sequence_logprob(self.store, x, y)?,
            self.backward.sequence_logprob(self.store, y, x)?,
        ))
    }

    /// `(1−λ)·log p(y|x) + λ·log p(x|y)`.
    pub fn mmi_score(&self, x: &[usize], y: &[usize], lambda: f64) -> Result<f64> {
        let (f, b) = self.scores(x, y)?;
        Ok((1.0 - lambda) * f + lambda * b)
    }
}
