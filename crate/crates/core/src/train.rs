use crate::error::Result;
use crate::nn::Session;
use crate::params::{Gradients, ParamStore};
use crate::tensor::{adam_step, AdamState, Var};

/// Builds a training graph with `f`, backpropagates its scalar loss and
/// applies one Adam step to the parameters `opt` owns.
pub(crate) fn optimize<T>(
    store: &mut ParamStore,
    opt: &mut AdamState,
    dropout: f64,
    seed: u64,
    f: impl FnOnce(&mut Session) -> Result<(Var, T)>,
) -> Result<T> {
    let (grads, report) = {
        let mut s = Session::training(store, dropout, seed);
        let (loss, report) = f(&mut s)?;
        s.g.backward(loss);
        (s.g.param_grads(store), report)
    };
    adam_step(store, &grads, opt)?;
    Ok(report)
}

/// Evaluates `f` without dropout and returns the gradient of its scalar
/// loss with respect to every parameter.
pub(crate) fn gradients<T>(store: &ParamStore, f: impl FnOnce(&mut Session) -> Result<(Var, T)>) -> Result<(Gradients, T)> {
    let mut s = Session::training(store, 0.0, 0);
    let (loss, report) = f(&mut s)?;
    s.g.backward(loss);
    Ok((s.g.param_grads(store), report))
}
