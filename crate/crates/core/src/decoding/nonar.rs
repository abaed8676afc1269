use std::collections::HashMap;
use std::ops::Range;
use std::sync::{Arc, Mutex};

use super::kbest::kbest_separable;
use super::{Candidate, Provenance, TieBreak};
use crate::data::vocab::NUM_RESERVED;
use crate::error::{Error, Result};
use crate::mmi::{check_lambda, combine, MmiScoreBreakdown};
use crate::model::NonArModel;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Forward log-probabilities and backward sums of every word at every
/// position of one `(x, L_y)` decode.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub l_y: usize,
    pub words: Range<usize>,
    /// `forward[t·W + w]` is `log p(y_t = word w | x)`.
    pub forward: Vec<f64>,
    /// `backward[t·W + w]` is `Σ_t' log p(x_t' | word w at t)`.
    pub backward: Vec<f64>,
}

impl ScoreTable {
    fn width(&self) -> usize {
        self.words.len()
    }

    pub fn forward_at(&self, t: usize, token: usize) -> f64 {
        self.forward[t * self.width() + token - self.words.start]
    }

    pub fn backward_at(&self, t: usize, token: usize) -> f64 {
        self.backward[t * self.width() + token - self.words.start]
    }

    pub fn score(&self, t: usize, token: usize, lambda: f64) -> f64 {
        combine(self.forward_at(t, token), self.backward_at(t, token), lambda, self.l_y)
    }

    /// Per-position best word under the given tie policy.
    pub fn argmax(&self, lambda: f64, tie: TieBreak) -> Vec<usize> {
        (0..self.l_y)
            .map(|t| {
                let mut best = self.words.start;
                let mut best_score = self.score(t, best, lambda);
                for v in self.words.clone().skip(1) {
                    let s = self.score(t, v, lambda);
                    let better = match tie {
                        TieBreak::LowestId => s > best_score,
                        TieBreak::HighestId => s >= best_score,
                    };
                    if better {
                        best = v;
                        best_score = s;
                    }
                }
                best
            })
            .collect()
    }

    pub fn breakdown(&self, tokens: &[usize], lambda: f64) -> Result<MmiScoreBreakdown> {
        let fwd = tokens.iter().enumerate().map(|(t, &v)| self.forward_at(t, v)).collect();
        let bwd = tokens.iter().enumerate().map(|(t, &v)| self.backward_at(t, v)).collect();
        MmiScoreBreakdown::new(fwd, bwd, lambda)
    }

    /// Words at position `t` sorted by score, best first, ties by id.
    fn ranked(&self, t: usize, lambda: f64, depth: usize) -> Vec<(usize, f64)> {
        let mut o: Vec<(usize, f64)> = self.words.clone().map(|v| (v, self.score(t, v, lambda))).collect();
        o.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        o.truncate(depth);
        o
    }
}

type BackwardBlock = Arc<Vec<Tensor>>;

/// Per-token MMI decoder over a frozen parallel model.
///
/// The backward log-probability matrices depend only on `(y_t, t, L_y,
/// L_x)`, never on the source tokens, so they are cached per length pair
/// and shared across sources and λ values.
pub struct NonArDecoder<'a> {
    pub model: &'a NonArModel,
    pub store: &'a ParamStore,
    words: Range<usize>,
    cache: Mutex<HashMap<(usize, usize), BackwardBlock>>,
}

impl<'a> NonArDecoder<'a> {
    pub fn new(model: &'a NonArModel, store: &'a ParamStore) -> Self {
        Self {
            model,
            store,
            words: NUM_RESERVED..model.vocab_size,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn backward_block(&self, l_y: usize, l_x: usize) -> Result<BackwardBlock> {
        if let Some(b) = self.cache.lock().expect("cache lock").get(&(l_y, l_x)) {
            return Ok(b.clone());
        }
        let mut block = Vec::with_capacity(l_y * self.words.len());
        for t in 1..=l_y {
            for v in self.words.clone() {
                block.push(self.model.backward_logprobs(self.store, v, t, l_y, l_x)?);
            }
        }
        let block = Arc::new(block);
        self.cache
            .lock()
            .expect("cache lock")
            .entry((l_y, l_x))
            .or_insert_with(|| block.clone());
        Ok(block)
    }

    pub fn score_table(&self, x: &[usize], l_y: usize) -> Result<ScoreTable> {
        if x.is_empty() {
            return Err(Error::Contract("cannot decode an empty source".into()));
        }
        if self.words.is_empty() {
            return Err(Error::Contract("vocabulary has no words".into()));
        }
        let lp = self.model.forward_logprobs(self.store, x, l_y)?;
        let block = self.backward_block(l_y, x.len())?;
        let w = self.words.len();
        let mut forward = Vec::with_capacity(l_y * w);
        let mut backward = Vec::with_capacity(l_y * w);
        for t in 0..l_y {
            for (wi, v) in self.words.clone().enumerate() {
                forward.push(lp.at(t, v));
                let m = &block[t * w + wi];
                backward.push(x.iter().enumerate().map(|(i, &xi)| m.at(i, xi)).sum());
            }
        }
        Ok(ScoreTable {
            l_y,
            words: self.words.clone(),
            forward,
            backward,
        })
    }

    /// Per-position argmax of the factorised objective at the predicted length.
    pub fn decode(&self, x: &[usize], lambda: f64, tie: TieBreak) -> Result<Candidate> {
        check_lambda(lambda)?;
        let l_y = self.model.predict_length(self.store, x)?;
        let table = self.score_table(x, l_y)?;
        let tokens = table.argmax(lambda, tie);
        let breakdown = table.breakdown(&tokens, lambda)?;
        Ok(Candidate {
            tokens,
            breakdown,
            provenance: Provenance {
                length: l_y,
                length_rank: 0,
                rank: 0,
            },
        })
    }

    /// Exact `k`-best sequences at a fixed length, considering the best
    /// `depth` words per position.
    pub fn kbest_at_length(&self, x: &[usize], l_y: usize, lambda: f64, k: usize, depth: usize) -> Result<Vec<Candidate>> {
        check_lambda(lambda)?;
        let table = self.score_table(x, l_y)?;
        let options: Vec<Vec<(usize, f64)>> = (0..l_y).map(|t| table.ranked(t, lambda, depth)).collect();
        kbest_separable(&options, k, |parts| parts.iter().sum())
            .into_iter()
            .enumerate()
            .map(|(rank, s)| {
                Ok(Candidate {
                    breakdown: table.breakdown(&s.tokens, lambda)?,
                    tokens: s.tokens,
                    provenance: Provenance {
                        length: l_y,
                        length_rank: 0,
                        rank,
                    },
                })
            })
            .collect()
    }

    /// Pooled k-best over the `b_len` most likely lengths, best first.
    pub fn nbest(&self, x: &[usize], lambda: f64, n: usize, b_len: usize, k_tok: usize) -> Result<Vec<Candidate>> {
        if n == 0 || b_len == 0 || k_tok == 0 {
            return Err(Error::Contract("n, b_len and k_tok must be at least 1".into()));
        }
        let mut pool = Vec::new();
        for (length_rank, (l_y, _)) in self.model.length_candidates(self.store, x, b_len)?.into_iter().enumerate() {
            for mut c in self.kbest_at_length(x, l_y, lambda, n, k_tok)? {
                c.provenance.length_rank = length_rank;
                pool.push(c);
            }
        }
        pool.sort_by(|a, b| {
            b.score()
                .total_cmp(&a.score())
                .then(a.provenance.length_rank.cmp(&b.provenance.length_rank))
                .then(a.tokens.cmp(&b.tokens))
        });
        pool.truncate(n);
        Ok(pool)
    }

    /// Forward-only argmax at the predicted length.
    pub fn greedy(&self, x: &[usize]) -> Result<Vec<usize>> {
        let l_y = self.model.predict_length(self.store, x)?;
        let lp = self.model.forward_logprobs(self.store, x, l_y)?;
        Ok((0..l_y)
            .map(|t| {
                let row = lp.row(t);
                let mut best = self.words.start;
                for v in self.words.clone() {
                    if row[v] > row[best] {
                        best = v;
                    }
                }
                best
            })
            .collect())
    }
}

/// Per-token MMI decode of `x`.
pub fn nonar_mmi_decode(model: &NonArModel, store: &ParamStore, x: &[usize], lambda: f64) -> Result<Candidate> {
    NonArDecoder::new(model, store).decode(x, lambda, TieBreak::LowestId)
}

/// Pooled k-best list under the factorised objective.
pub fn nonar_nbest(
    model: &NonArModel,
    store: &ParamStore,
    x: &[usize],
    lambda: f64,
    n: usize,
    b_len: usize,
    k_tok: usize,
) -> Result<Vec<Candidate>> {
    NonArDecoder::new(model, store).nbest(x, lambda, n, b_len, k_tok)
}

/// Plain forward argmax decode, no mutual information term.
pub fn nonar_greedy_decode(model: &NonArModel, store: &ParamStore, x: &[usize]) -> Result<Vec<usize>> {
    NonArDecoder::new(model, store).greedy(x)
}
