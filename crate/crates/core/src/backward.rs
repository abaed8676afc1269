//! Backward direction: reconstruct the whole source from one target token
//! placed at its position among dummy tokens.
//!
//! The sequence-level score is the geometric mean over target positions,
//! `(1/L_y) Σ_t Σ_t' log p(x_t'|y_t)`, kept in log space.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::vocab::DUMMY;
use crate::data::SourceTargetPair;
use crate::error::{Error, Result};
use crate::model::NonArModel;
use crate::nn::Session;
use crate::params::{Gradients, ParamStore};
use crate::tensor::{AdamState, Tensor, Var};
use crate::train::{gradients, optimize};
use crate::transformer::{copy_decoder_inputs, delta_to_class};

/// Encoder input for target token `y_t` at 1-based position `t` of `l_y`.
pub fn backward_encoder_input(y_t: usize, t: usize, l_y: usize) -> Result<Vec<usize>> {
    if t == 0 || t > l_y {
        return Err(Error::Index {
            context: "backward target position",
            index: t,
            extent: l_y,
        });
    }
    let mut seq = vec![DUMMY; l_y];
    seq[t - 1] = y_t;
    Ok(seq)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardLoss {
    pub token: f64,
    /// Loss of the backward length classifier (trained, unused when decoding).
    pub length: f64,
}

/// Optional per-pair subsampling of target positions for large corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionSample {
    pub per_pair: usize,
    pub seed: u64,
}

impl NonArModel {
    fn backward_logits(&self, s: &mut Session, y_t: usize, t: usize, l_y: usize, l_x: usize) -> Result<(Var, Var)> {
        if l_x == 0 {
            return Err(Error::Contract("source length must be at least 1".into()));
        }
        if l_x > self.config.max_positions {
            return Err(Error::Length {
                len: l_x,
                max: self.config.max_positions,
            });
        }
        let input = backward_encoder_input(y_t, t, l_y)?;
        let h = self.backward.encoder.encode(s, self.tok_emb, &input)?;
        let d = copy_decoder_inputs(s, h, l_x)?;
        let w = s.p(self.tok_emb);
        let out = self.backward.decoder.decode_stack(s, d, h, w)?;
        Ok((out.logits, h))
    }

    /// `l_x×V` matrix whose row `t'` is `log p(x_t' = · | y_t)`.
    pub fn backward_logprobs(&self, store: &ParamStore, y_t: usize, t: usize, l_y: usize, l_x: usize) -> Result<Tensor> {
        let mut s = Session::inference(store);
        let (logits, _) = self.backward_logits(&mut s, y_t, t, l_y, l_x)?;
        let lp = s.g.log_softmax(logits, 1)?;
        Ok(s.g.value(lp).clone())
    }

    /// `Σ_t' log p(x_t'|y_t)` for one target position.
    pub fn backward_token_sum(&self, store: &ParamStore, x: &[usize], y_t: usize, t: usize, l_y: usize) -> Result<f64> {
        let lp = self.backward_logprobs(store, y_t, t, l_y, x.len())?;
        Ok(x.iter().enumerate().map(|(i, &v)| lp.at(i, v)).sum())
    }

    /// Log of the geometric-mean backward probability of `x` given `y`.
    pub fn backward_sequence_score(&self, store: &ParamStore, x: &[usize], y: &[usize]) -> Result<f64> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::Contract("backward score needs non-empty x and y".into()));
        }
        let mut total = 0.0;
        for (i, &y_t) in y.iter().enumerate() {
            total += self.backward_token_sum(store, x, y_t, i + 1, y.len())?;
        }
        Ok(total / y.len() as f64)
    }

    pub(crate) fn backward_loss(
        &self,
        s: &mut Session,
        batch: &[SourceTargetPair],
        sample_positions: Option<PositionSample>,
    ) -> Result<(Var, Var)> {
        if batch.is_empty() {
            return Err(Error::Contract("empty training batch".into()));
        }
        let mut rng = sample_positions.map(|p| ChaCha8Rng::seed_from_u64(p.seed));
        let mut token_logits = Vec::new();
        let mut targets = Vec::new();
        let mut length_logits = Vec::new();
        let mut classes = Vec::new();
        for pair in batch {
            let l_y = pair.target.len();
            let positions: Vec<usize> = match (&mut rng, sample_positions) {
                (Some(r), Some(p)) if p.per_pair < l_y => {
                    let mut picked = sample(r, l_y, p.per_pair).into_vec();
                    picked.sort_unstable();
                    picked
                }
                _ => (0..l_y).collect(),
            };
            for t in positions {
                let (logits, h) = self.backward_logits(s, pair.target[t], t + 1, l_y, pair.source.len())?;
                token_logits.push(logits);
                targets.extend_from_slice(&pair.source);
                length_logits.push(self.backward.length.logits(s, h)?);
                classes.push(delta_to_class(-pair.length_delta()));
            }
        }
        let all = s.g.concat_rows(&token_logits)?;
        let token = s.g.cross_entropy(all, &targets)?;
        let lens = s.g.concat_rows(&length_logits)?;
        let length = s.g.cross_entropy(lens, &classes)?;
        Ok((token, length))
    }

    pub fn evaluate_backward(&self, store: &ParamStore, batch: &[SourceTargetPair]) -> Result<BackwardLoss> {
        let mut s = Session::inference(store);
        let (token, length) = self.backward_loss(&mut s, batch, None)?;
        Ok(BackwardLoss {
            token: s.g.value(token).item(),
            length: s.g.value(length).item(),
        })
    }
}

/// Number of backward training instances a pair expands into.
pub fn backward_instances(pair: &SourceTargetPair) -> usize {
    pair.target.len()
}

/// One Adam step over every `(y_t at t) → x` instance of the batch.
pub fn train_step_backward(
    model: &NonArModel,
    store: &mut ParamStore,
    batch: &[SourceTargetPair],
    opt: &mut AdamState,
    seed: u64,
    sample_positions: Option<PositionSample>,
) -> Result<BackwardLoss> {
    optimize(store, opt, model.config.dropout, seed, |s| {
        let (token, length) = model.backward_loss(s, batch, sample_positions)?;
        let total = s.g.add(token, length)?;
        let report = BackwardLoss {
            token: s.g.value(token).item(),
            length: s.g.value(length).item(),
        };
        Ok((total, report))
    })
}

/// Losses of one joint step over both parallel directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLoss {
    pub forward: crate::forward::ForwardLoss,
    pub backward: BackwardLoss,
}

impl JointLoss {
    pub fn total(&self) -> f64 {
        self.forward.total() + self.backward.token + self.backward.length
    }
}

/// One Adam step on the summed forward and backward losses. The shared
/// token embedding receives gradient from both directions.
pub fn train_step_joint(
    model: &NonArModel,
    store: &mut ParamStore,
    batch: &[SourceTargetPair],
    opt: &mut AdamState,
    seed: u64,
    sample_positions: Option<PositionSample>,
) -> Result<JointLoss> {
    optimize(store, opt, model.config.dropout, seed, |s| joint_graph(model, s, batch, sample_positions))
}

fn joint_graph(model: &NonArModel, s: &mut Session, batch: &[SourceTargetPair], sample_positions: Option<PositionSample>) -> Result<(Var, JointLoss)> {
    let f = model.forward_loss(s, batch)?;
    let (bt, bl) = model.backward_loss(s, batch, sample_positions)?;
    let a = s.g.add(f.token, f.length)?;
    let b = s.g.add(bt, bl)?;
    let total = s.g.add(a, b)?;
    let v = |s: &Session, x: Var| s.g.value(x).item();
    let report = JointLoss {
        forward: crate::forward::ForwardLoss {
            token: v(s, f.token),
            length: v(s, f.length),
        },
        backward: BackwardLoss {
            token: v(s, bt),
            length: v(s, bl),
        },
    };
    Ok((total, report))
}

/// Joint loss on a batch and its exact gradient, without dropout.
pub fn joint_gradients(model: &NonArModel, store: &ParamStore, batch: &[SourceTargetPair]) -> Result<(JointLoss, Gradients)> {
    let (g, l) = gradients(store, |s| joint_graph(model, s, batch, None))?;
    Ok((l, g))
}
