use crate::ar::ArModel;
use crate::data::vocab::{EOS, NUM_RESERVED};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// A finished autoregressive hypothesis. `logprob` is the true
/// `log p(y|x)` including the end-of-sequence step, never the penalised
/// selection key.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<usize>,
    pub logprob: f64,
}

/// Word ids, plus end-of-sequence once a word has been emitted, best
/// first, ties to the lower id.
fn ranked_children(lp: &[f64], prefix_len: usize, width: usize) -> Vec<(usize, f64)> {
    let eos = (prefix_len > 0).then_some(EOS);
    let mut o: Vec<(usize, f64)> = eos
        .into_iter()
        .chain(NUM_RESERVED..lp.len())
        .map(|v| (v, lp[v]))
        .collect();
    o.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    o.truncate(width);
    o
}

/// Beam search with a sibling-rank penalty.
///
/// Each child is ranked among its parent's children (0 = best) and selected
/// by `logprob − gamma·rank`. The penalty does not accumulate: it only
/// decides which children survive this step. With `gamma = 0` this is plain
/// beam search. Every hypothesis has at least one word; those still open
/// after `max_len` words are closed by adding the end-of-sequence
/// probability.
pub fn ar_beam_search(
    model: &ArModel,
    store: &ParamStore,
    x: &[usize],
    beam: usize,
    gamma: f64,
    max_len: usize,
) -> Result<Vec<BeamHypothesis>> {
    if beam == 0 || max_len == 0 {
        return Err(Error::Contract("beam width and max_len must be at least 1".into()));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("sibling penalty {gamma} must be >= 0")));
    }
    let h = model.encode(store, x)?;
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
    }];
    let mut finished = Vec::new();
    for _ in 0..max_len {
        // (key, parent, token, logprob)
        let mut pool: Vec<(f64, usize, usize, f64)> = Vec::new();
        for (p, hyp) in live.iter().enumerate() {
            let lp = model.next_logprobs(store, &h, &hyp.tokens)?;
            for (rank, (tok, l)) in ranked_children(&lp, hyp.tokens.len(), beam).into_iter().enumerate() {
                let logprob = hyp.logprob + l;
                pool.push((logprob - gamma * rank as f64, p, tok, logprob));
            }
        }
        pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        pool.truncate(beam);
        let mut next = Vec::with_capacity(beam);
        for (_, p, tok, logprob) in pool {
            let tokens = live[p].tokens.clone();
            if tok == EOS {
                finished.push(BeamHypothesis { tokens, logprob });
            } else {
                let mut tokens = tokens;
                tokens.push(tok);
                next.push(BeamHypothesis { tokens, logprob });
            }
        }
        live = next;
        if finished.len() >= beam || live.is_empty() {
            live.clear();
            break;
        }
    }
    for hyp in live {
        let lp = model.next_logprobs(store, &h, &hyp.tokens)?;
        finished.push(BeamHypothesis {
            logprob: hyp.logprob + lp[EOS],
            tokens: hyp.tokens,
        });
    }
    finished.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    finished.truncate(beam);
    Ok(finished)
}

/// Step-wise argmax decode; identical to a width-one beam.
pub fn ar_greedy(model: &ArModel, store: &ParamStore, x: &[usize], max_len: usize) -> Result<BeamHypothesis> {
    if max_len == 0 {
        return Err(Error::Contract("max_len must be at least 1".into()));
    }
    let h = model.encode(store, x)?;
    let mut tokens = Vec::new();
    let mut logprob = 0.0;
    loop {
        let lp = model.next_logprobs(store, &h, &tokens)?;
        if tokens.len() == max_len {
            logprob += lp[EOS];
            break;
        }
        let (tok, l) = ranked_children(&lp, tokens.len(), 1)[0];
        logprob += l;
        if tok == EOS {
            break;
        }
        tokens.push(tok);
    }
    Ok(BeamHypothesis { tokens, logprob })
}
