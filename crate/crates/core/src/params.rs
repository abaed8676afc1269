//! Named parameter collections shared by every model in the crate.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named set of parameter tensors.
///
/// Insertion order is the canonical order used by checkpoints and the
/// optimizer, so two stores built by the same code are laid out identically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Parameters whose names start with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |id| self.names[id.0].starts_with(prefix))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Rounds every value through `f32`, the precision checkpoints store.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

/// Per-parameter gradients indexed like the store they were computed for.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn empty(len: usize) -> Self {
        Self {
            grads: vec![None; len],
        }
    }

    pub fn set(&mut self, id: ParamId, grad: Tensor) {
        self.grads[id.0] = Some(grad);
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

/// How fresh parameters are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Every weight zero. Models built this way emit uniform distributions.
    Zeros,
    /// Gaussian weights scaled by `1/sqrt(fan_in)` times `scale`.
    Random { scale: f64 },
}

impl Init {
    pub(crate) fn matrix<R: Rng>(&self, rows: usize, cols: usize, rng: &mut R) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(&[rows, cols]),
            Init::Random { scale } => {
                let std = scale / (rows as f64).sqrt();
                gaussian(&[rows, cols], std, rng)
            }
        }
    }

    /// Embedding-style table: rows are looked up, so the width sets the scale.
    pub(crate) fn table<R: Rng>(&self, rows: usize, cols: usize, rng: &mut R) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(&[rows, cols]),
            Init::Random { scale } => gaussian(&[rows, cols], scale / (cols as f64).sqrt(), rng),
        }
    }

    pub(crate) fn gain(&self, n: usize) -> Tensor {
        match self {
            Init::Zeros => Tensor::zeros(&[n]),
            Init::Random { .. } => Tensor::full(&[n], 1.0),
        }
    }
}

fn gaussian<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite standard deviation");
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|x| *x = normal.sample(rng));
    t
}
