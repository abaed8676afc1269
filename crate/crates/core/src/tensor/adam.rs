use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for a fixed group of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    params: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParamStore, params: Vec<ParamId>) -> Self {
        let m: Vec<Tensor> = params.iter().map(|&id| Tensor::zeros(store.get(id).shape())).collect();
        Self {
            config,
            step: 0,
            v: m.clone(),
            m,
            params,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn moments(&self) -> impl Iterator<Item = (ParamId, &Tensor, &Tensor)> {
        self.params.iter().zip(self.m.iter().zip(&self.v)).map(|(&id, (m, v))| (id, m, v))
    }

    pub(crate) fn moments_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor, &mut Tensor)> {
        self.params
            .iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&id, (m, v))| (id, m, v))
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn round_to_f32(&mut self) {
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }
}

/// One bias-corrected Adam update over every parameter the state owns.
///
/// Fails without touching anything if a gradient is missing or misshapen.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    for &id in &state.params {
        let g = grads
            .get(id)
            .ok_or_else(|| Error::Contract(format!("missing gradient for {}", store.name(id))))?;
        if g.shape() != store.get(id).shape() {
            return Err(Error::dim("adam_step", g.shape(), store.get(id).shape()));
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, &id) in state.params.iter().enumerate() {
        let g = grads.get(id).expect("checked above").data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = store.get_mut(id).data_mut();
        for k in 0..p.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            p[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
