//! Forward direction `p(y|x) = ∏_t p(y_t|x)`, all positions in one pass.

use crate::data::SourceTargetPair;
use crate::error::{Error, Result};
use crate::model::NonArModel;
use crate::nn::Session;
use crate::params::ParamStore;
use crate::tensor::{kernels, AdamState, Tensor, Var};
use crate::train::optimize;
use crate::transformer::{class_to_delta, copy_decoder_inputs, delta_to_class, LENGTH_CLASSES};

/// Losses reported by one forward training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardLoss {
    /// Mean token cross-entropy over gold targets.
    pub token: f64,
    /// Length-difference classification cross-entropy.
    pub length: f64,
}

impl ForwardLoss {
    pub fn total(&self) -> f64 {
        self.token + self.length
    }
}

pub(crate) struct LossVars {
    pub token: Var,
    pub length: Var,
}

impl NonArModel {
    pub fn encode_source(&self, s: &mut Session, x: &[usize]) -> Result<Var> {
        self.forward.encoder.encode(s, self.tok_emb, x)
    }

    /// Distribution over the 41 length differences `Δm = L_y − L_x`.
    pub fn length_distribution(&self, store: &ParamStore, x: &[usize]) -> Result<Vec<f64>> {
        let mut s = Session::inference(store);
        let h = self.encode_source(&mut s, x)?;
        self.forward.length.distribution(&mut s, h)
    }

    // One position short of the table size, so an autoregressive decoder
    // (which also reads a start token) can rescore every candidate.
    fn clamp_length(&self, len: i64) -> usize {
        len.clamp(1, (self.config.max_positions as i64 - 1).max(1)) as usize
    }

    /// Target length from the most likely length difference; ties go to the smaller class.
    pub fn predict_length(&self, store: &ParamStore, x: &[usize]) -> Result<usize> {
        let dist = self.length_distribution(store, x)?;
        let best = argmax(&dist);
        Ok(self.clamp_length(x.len() as i64 + class_to_delta(best)))
    }

    /// Up to `k` distinct target lengths in decreasing order of class probability.
    pub fn length_candidates(&self, store: &ParamStore, x: &[usize], k: usize) -> Result<Vec<(usize, f64)>> {
        let dist = self.length_distribution(store, x)?;
        let mut order: Vec<usize> = (0..LENGTH_CLASSES).collect();
        order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(k);
        for c in order {
            if out.len() == k {
                break;
            }
            let len = self.clamp_length(x.len() as i64 + class_to_delta(c));
            if !out.iter().any(|&(l, _)| l == len) {
                out.push((len, dist[c]));
            }
        }
        Ok(out)
    }

    fn forward_logits(&self, s: &mut Session, x: &[usize], m: usize) -> Result<(Var, Var)> {
        if m > self.config.max_positions {
            return Err(Error::Length {
                len: m,
                max: self.config.max_positions,
            });
        }
        let h = self.encode_source(s, x)?;
        let d = copy_decoder_inputs(s, h, m)?;
        let w = s.p(self.tok_emb);
        let out = self.forward.decoder.decode_stack(s, d, h, w)?;
        Ok((out.logits, h))
    }

    /// `m×V` matrix whose row `t` is `log p(y_t = · | x)`.
    pub fn forward_logprobs(&self, store: &ParamStore, x: &[usize], m: usize) -> Result<Tensor> {
        if m == 0 {
            return Err(Error::Contract("target length must be at least 1".into()));
        }
        let mut s = Session::inference(store);
        let (logits, _) = self.forward_logits(&mut s, x, m)?;
        let lp = s.g.log_softmax(logits, 1)?;
        Ok(s.g.value(lp).clone())
    }

    /// `Σ_t log p(y_t|x)` at the gold length `|y|`.
    pub fn forward_sequence_logprob(&self, store: &ParamStore, x: &[usize], y: &[usize]) -> Result<f64> {
        let lp = self.forward_logprobs(store, x, y.len())?;
        Ok(y.iter().enumerate().map(|(t, &v)| lp.at(t, v)).sum())
    }

    pub(crate) fn forward_loss(&self, s: &mut Session, batch: &[SourceTargetPair]) -> Result<LossVars> {
        if batch.is_empty() {
            return Err(Error::Contract("empty training batch".into()));
        }
        let mut token_logits = Vec::with_capacity(batch.len());
        let mut targets = Vec::new();
        let mut length_logits = Vec::with_capacity(batch.len());
        let mut classes = Vec::with_capacity(batch.len());
        for pair in batch {
            let (logits, h) = self.forward_logits(s, &pair.source, pair.target.len())?;
            token_logits.push(logits);
            targets.extend_from_slice(&pair.target);
            length_logits.push(self.forward.length.logits(s, h)?);
            classes.push(delta_to_class(pair.length_delta()));
        }
        let all = s.g.concat_rows(&token_logits)?;
        let token = s.g.cross_entropy(all, &targets)?;
        let lens = s.g.concat_rows(&length_logits)?;
        let length = s.g.cross_entropy(lens, &classes)?;
        Ok(LossVars { token, length })
    }

    /// Forward loss on a batch without updating anything.
    pub fn evaluate_forward(&self, store: &ParamStore, batch: &[SourceTargetPair]) -> Result<ForwardLoss> {
        let mut s = Session::inference(store);
        let l = self.forward_loss(&mut s, batch)?;
        Ok(ForwardLoss {
            token: s.g.value(l.token).item(),
            length: s.g.value(l.length).item(),
        })
    }
}

/// One Adam step on token plus length cross-entropy, using gold target lengths.
pub fn train_step_forward(
    model: &NonArModel,
    store: &mut ParamStore,
    batch: &[SourceTargetPair],
    opt: &mut AdamState,
    seed: u64,
) -> Result<ForwardLoss> {
    optimize(store, opt, model.config.dropout, seed, |s| {
        let l = model.forward_loss(s, batch)?;
        let total = s.g.add(l.token, l.length)?;
        let report = ForwardLoss {
            token: s.g.value(l.token).item(),
            length: s.g.value(l.length).item(),
        };
        Ok((total, report))
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Log-softmax of a single row of logits.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    kernels::log_softmax_row(row)
}
