//! Exhaustive verifiers for the parallel MMI decoders.
//!
//! Every word sequence of a given length is scored with the two-term form
//! `(1−λ)·Σ_t log p(y_t|x) + λ·backward_sequence_score(x, y)`, using the
//! model's sequence-level entry points rather than the decoders' score
//! tables.

use rayon::prelude::*;

use crate::data::vocab::NUM_RESERVED;
use crate::decoding::{NonArDecoder, ScoredSequence, TieBreak};
use crate::error::{Error, Result};
use crate::mmi::{check_lambda, mmi_objective};
use crate::model::NonArModel;
use crate::params::ParamStore;

/// Maximum number of sequences an enumeration may visit.
pub const ENUMERATION_BOUND: u128 = 1_000_000;

/// Directional scores of every word sequence of one length.
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub l_y: usize,
    pub sequences: Vec<Vec<usize>>,
    /// `Σ_t log p(y_t|x)`.
    pub forward: Vec<f64>,
    /// `(1/L_y) Σ_t Σ_t' log p(x_t'|y_t)`.
    pub backward: Vec<f64>,
}

impl Enumeration {
    pub fn score(&self, i: usize, lambda: f64) -> f64 {
        (1.0 - lambda) * self.forward[i] + lambda * self.backward[i]
    }

    /// All sequences, best first, ties to the lexicographically smaller one.
    pub fn ranked(&self, lambda: f64) -> Result<Vec<ScoredSequence>> {
        check_lambda(lambda)?;
        let mut all: Vec<ScoredSequence> = (0..self.sequences.len())
            .map(|i| ScoredSequence {
                tokens: self.sequences[i].clone(),
                score: self.score(i, lambda),
            })
            .collect();
        all.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
        Ok(all)
    }
}

fn guard(words: usize, l_y: usize) -> Result<()> {
    let requested = (words as u128).checked_pow(l_y as u32).unwrap_or(u128::MAX);
    if requested > ENUMERATION_BOUND {
        return Err(Error::Guard {
            requested,
            bound: ENUMERATION_BOUND,
        });
    }
    Ok(())
}

/// Word sequences of length `l_y` in lexicographic order.
fn all_sequences(words: std::ops::Range<usize>, l_y: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..l_y {
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                words.clone().map(move |v| {
                    let mut s = p.clone();
                    s.push(v);
                    s
                })
            })
            .collect();
    }
    out
}

/// Scores every word sequence of length `l_y` against `x`.
pub fn enumerate_scores(model: &NonArModel, store: &ParamStore, x: &[usize], l_y: usize) -> Result<Enumeration> {
    if l_y == 0 {
        return Err(Error::Contract("target length must be at least 1".into()));
    }
    let words = NUM_RESERVED..model.vocab_size;
    guard(words.len(), l_y)?;
    let lp = model.forward_logprobs(store, x, l_y)?;
    let sequences = all_sequences(words, l_y);
    let scored = sequences
        .par_iter()
        .map(|y| {
            let f: f64 = y.iter().enumerate().map(|(t, &v)| lp.at(t, v)).sum();
            Ok((f, model.backward_sequence_score(store, x, y)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let (forward, backward) = scored.into_iter().unzip();
    Ok(Enumeration {
        l_y,
        sequences,
        forward,
        backward,
    })
}

/// The best sequence of length `l_y` and its score.
pub fn brute_force_mmi_argmax(model: &NonArModel, store: &ParamStore, x: &[usize], l_y: usize, lambda: f64) -> Result<ScoredSequence> {
    check_lambda(lambda)?;
    let mut all = enumerate_scores(model, store, x, l_y)?.ranked(lambda)?;
    Ok(all.swap_remove(0))
}

/// The `k` best sequences of length `l_y`.
pub fn brute_force_kbest(
    model: &NonArModel,
    store: &ParamStore,
    x: &[usize],
    l_y: usize,
    lambda: f64,
    k: usize,
) -> Result<Vec<ScoredSequence>> {
    check_lambda(lambda)?;
    let mut all = enumerate_scores(model, store, x, l_y)?.ranked(lambda)?;
    all.truncate(k);
    Ok(all)
}

/// One disagreement found by [`oracle_suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMismatch {
    pub source: Vec<usize>,
    pub lambda: f64,
    pub check: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub checks: usize,
    pub mismatches: Vec<OracleMismatch>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    fn record(&mut self, ok: bool, source: &[usize], lambda: f64, check: &'static str, detail: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.mismatches.push(OracleMismatch {
                source: source.to_vec(),
                lambda,
                check,
                detail: detail(),
            });
        }
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Decoder-versus-enumeration equivalence and score identities over a
/// grid of sources and λ values. Each source is decoded at its predicted
/// length and compared with the exhaustive optimum at that length.
pub fn oracle_suite(
    model: &NonArModel,
    store: &ParamStore,
    sources: &[Vec<usize>],
    lambdas: &[f64],
    tie: TieBreak,
) -> Result<OracleReport> {
    let decoder = NonArDecoder::new(model, store);
    let mut report = OracleReport::default();
    for x in sources {
        let l_y = model.predict_length(store, x)?;
        let table = enumerate_scores(model, store, x, l_y)?;
        for &lambda in lambdas {
            let got = decoder.decode(x, lambda, tie)?;
            let want = &table.ranked(lambda)?[0];
            report.record(got.tokens == want.tokens, x, lambda, "argmax", || {
                format!("decoded {:?}, exhaustive optimum {:?}", got.tokens, want.tokens)
            });
            let b = mmi_objective(model, store, x, &got.tokens, lambda)?;
            report.record(rel_close(b.total, b.two_term_total(), 1e-12), x, lambda, "two-term form", || {
                format!("per-token {} vs two-term {}", b.total, b.two_term_total())
            });
            let direct = model.backward_sequence_score(store, x, &got.tokens)?;
            report.record((direct - b.backward_sequence_score()).abs() <= 1e-9, x, lambda, "geometric mean", || {
                format!("mean {} vs double sum {}", b.backward_sequence_score(), direct)
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequences_are_lexicographic() {
        let s = all_sequences(5..7, 2);
        assert_eq!(s, vec![vec![5, 5], vec![5, 6], vec![6, 5], vec![6, 6]]);
    }

    #[test]
    fn guard_refuses_large_spaces() {
        assert!(guard(10, 6).is_ok());
        assert!(matches!(
            guard(10, 7),
            Err(Error::Guard {
                requested: 10_000_000,
                ..
            })
        ));
        assert!(guard(1000, 40).is_err());
    }
}
