//! Mutual-information objective factorised over target tokens:
//!
//! ```text
//! L = Σ_t [ (1−λ)·log p(y_t|x) + (λ/L_y)·Σ_t' log p(x_t'|y_t) ]
//! ```
//!
//! Each summand depends on `y_t` alone, so the sequence maximiser is the
//! vector of per-position maximisers.

use crate::error::{Error, Result};
use crate::model::NonArModel;
use crate::params::ParamStore;

pub fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `(1−λ)·fwd + (λ/L_y)·bwd` without argument checks.
#[inline]
pub(crate) fn combine(fwd: f64, bwd: f64, lambda: f64, l_y: usize) -> f64 {
    (1.0 - lambda) * fwd + (lambda / l_y as f64) * bwd
}

/// Score of one target token: `(1−λ)·fwd_t + (λ/L_y)·bwd_t`.
pub fn per_token_mmi(fwd_t: f64, bwd_t: f64, lambda: f64, l_y: usize) -> Result<f64> {
    check_lambda(lambda)?;
    if l_y == 0 {
        return Err(Error::Contract("target length must be at least 1".into()));
    }
    Ok(combine(fwd_t, bwd_t, lambda, l_y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmiScoreBreakdown {
    /// `log p(y_t|x)` per target position.
    pub forward: Vec<f64>,
    /// `Σ_t' log p(x_t'|y_t)` per target position.
    pub backward: Vec<f64>,
    pub lambda: f64,
    /// Sum of the per-token scores.
    pub total: f64,
}

impl MmiScoreBreakdown {
    pub fn new(forward: Vec<f64>, backward: Vec<f64>, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        if forward.len() != backward.len() || forward.is_empty() {
            return Err(Error::dim("mmi breakdown", &[forward.len()], &[backward.len()]));
        }
        let l_y = forward.len();
        let total = forward
            .iter()
            .zip(&backward)
            .map(|(&f, &b)| combine(f, b, lambda, l_y))
            .sum();
        Ok(Self {
            forward,
            backward,
            lambda,
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn per_token(&self) -> Vec<f64> {
        let l_y = self.len();
        self.forward
            .iter()
            .zip(&self.backward)
            .map(|(&f, &b)| combine(f, b, self.lambda, l_y))
            .collect()
    }

    /// `(1−λ)·Σ fwd + (λ/L_y)·Σ bwd`: the same objective grouped by direction.
    pub fn two_term_total(&self) -> f64 {
        let f: f64 = self.forward.iter().sum();
        let b: f64 = self.backward.iter().sum();
        (1.0 - self.lambda) * f + (self.lambda / self.len() as f64) * b
    }

    /// Log of the geometric-mean backward probability.
    pub fn backward_sequence_score(&self) -> f64 {
        self.backward.iter().sum::<f64>() / self.len() as f64
    }
}

/// Scores `y` against `x` under both directions of `model`.
pub fn mmi_objective(model: &NonArModel, store: &ParamStore, x: &[usize], y: &[usize], lambda: f64) -> Result<MmiScoreBreakdown> {
    check_lambda(lambda)?;
    if y.is_empty() {
        return Err(Error::Contract("cannot score an empty target".into()));
    }
    let lp = model.forward_logprobs(store, x, y.len())?;
    let forward = y.iter().enumerate().map(|(t, &v)| lp.at(t, v)).collect();
    let backward = y
        .iter()
        .enumerate()
        .map(|(t, &v)| model.backward_token_sum(store, x, v, t + 1, y.len()))
        .collect::<Result<Vec<_>>>()?;
    MmiScoreBreakdown::new(forward, backward, lambda)
}
