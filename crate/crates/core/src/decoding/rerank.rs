use super::{BeamHypothesis, Candidate};
use crate::ar::ArPair;
use crate::error::{Error, Result};
use crate::mmi::check_lambda;

/// A hypothesis with both directional scores and its combined score.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedHypothesis {
    pub tokens: Vec<usize>,
    /// `log p(y|x)`.
    pub forward: f64,
    /// `log p(x|y)`.
    pub backward: f64,
    pub score: f64,
    /// Position in the input list.
    pub index: usize,
}

fn rank(pair: &ArPair, x: &[usize], items: Vec<(Vec<usize>, f64)>, lambda: f64) -> Result<Vec<RankedHypothesis>> {
    check_lambda(lambda)?;
    if items.is_empty() {
        return Err(Error::Contract("nothing to rerank".into()));
    }
    let mut out = items
        .into_iter()
        .enumerate()
        .map(|(index, (tokens, forward))| {
            let backward = pair.backward.sequence_logprob(pair.store, &tokens, x)?;
            Ok(RankedHypothesis {
                score: (1.0 - lambda) * forward + lambda * backward,
                tokens,
                forward,
                backward,
                index,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // stable: equal scores keep input order
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// Reorders a beam by `(1−λ)·log p(y|x) + λ·log p(x|y)`. The forward term
/// is the beam's own log-probability.
pub fn ar_mmi_rerank(pair: &ArPair, x: &[usize], hyps: &[BeamHypothesis], lambda: f64) -> Result<Vec<RankedHypothesis>> {
    rank(pair, x, hyps.iter().map(|h| (h.tokens.clone(), h.logprob)).collect(), lambda)
}

/// Scores parallel candidates with the autoregressive pair and orders
/// them best first; the head of the list is the selection.
pub fn npd_mmi_select(pair: &ArPair, x: &[usize], candidates: &[Candidate], lambda: f64) -> Result<Vec<RankedHypothesis>> {
    let items = candidates
        .iter()
        .map(|c| Ok((c.tokens.clone(), pair.forward.sequence_logprob(pair.store, x, &c.tokens)?)))
        .collect::<Result<Vec<_>>>()?;
    rank(pair, x, items, lambda)
}
