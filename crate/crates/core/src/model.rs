//! Parameter layout of every model trained by this crate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ar::ArModel;
use crate::data::Vocabulary;
use crate::error::Result;
use crate::nn::Builder;
use crate::params::{Init, ParamId, ParamStore};
use crate::transformer::{BlockConfig, Encoder, LengthClassifier, ParallelDecoder};

pub const SHARED_PREFIX: &str = "shared.";
pub const FORWARD_PREFIX: &str = "fwd.";
pub const BACKWARD_PREFIX: &str = "bwd.";
pub const AR_FORWARD_PREFIX: &str = "arf.";
pub const AR_BACKWARD_PREFIX: &str = "arb.";

/// Encoder, length classifier and parallel decoder for one direction.
#[derive(Debug, Clone)]
pub struct NonArDirection {
    pub encoder: Encoder,
    pub length: LengthClassifier,
    pub decoder: ParallelDecoder,
}

impl NonArDirection {
    fn new(b: &mut Builder, prefix: &str, cfg: &BlockConfig) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::new(b, &format!("{prefix}enc"), cfg)?,
            length: LengthClassifier::new(b, &format!("{prefix}len"), cfg.d_model)?,
            decoder: ParallelDecoder::new(b, &format!("{prefix}dec"), cfg)?,
        })
    }
}

/// Forward `p(y_t|x)` and backward `p(x_t'|y_t)` parallel models sharing
/// one token embedding matrix.
#[derive(Debug, Clone)]
pub struct NonArModel {
    pub config: BlockConfig,
    pub vocab_size: usize,
    /// Shared token embeddings; also the output and vocabulary-attention matrix.
    pub tok_emb: ParamId,
    pub forward: NonArDirection,
    pub backward: NonArDirection,
}

impl NonArModel {
    pub fn new(b: &mut Builder, cfg: &BlockConfig, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        let tok_emb = b.table(&format!("{SHARED_PREFIX}tok_emb"), vocab_size, cfg.d_model)?;
        Ok(Self {
            config: *cfg,
            vocab_size,
            tok_emb,
            forward: NonArDirection::new(b, FORWARD_PREFIX, cfg)?,
            backward: NonArDirection::new(b, BACKWARD_PREFIX, cfg)?,
        })
    }

    /// Builds a model into a fresh store.
    pub fn init(cfg: &BlockConfig, vocab_size: usize, init: Init, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Self::new(
            &mut Builder {
                store: &mut store,
                init,
                rng: &mut rng,
            },
            cfg,
            vocab_size,
        )?;
        Ok((model, store))
    }

    pub fn forward_params(&self, store: &ParamStore) -> Vec<ParamId> {
        group(store, &[SHARED_PREFIX, FORWARD_PREFIX])
    }

    pub fn backward_params(&self, store: &ParamStore) -> Vec<ParamId> {
        group(store, &[SHARED_PREFIX, BACKWARD_PREFIX])
    }

    pub fn all_params(&self, store: &ParamStore) -> Vec<ParamId> {
        group(store, &[SHARED_PREFIX, FORWARD_PREFIX, BACKWARD_PREFIX])
    }
}

/// Ids of every parameter whose name starts with one of `prefixes`.
pub fn group(store: &ParamStore, prefixes: &[&str]) -> Vec<ParamId> {
    store
        .ids()
        .filter(|&id| prefixes.iter().any(|p| store.name(id).starts_with(p)))
        .collect()
}

/// The four models behind every decoding mode, in one parameter store.
#[derive(Debug, Clone)]
pub struct System {
    pub vocab: Vocabulary,
    pub config: BlockConfig,
    pub store: ParamStore,
    pub nonar: NonArModel,
    pub ar_forward: ArModel,
    pub ar_backward: ArModel,
}

impl System {
    pub fn new(vocab: Vocabulary, cfg: &BlockConfig, init: Init, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = vocab.len();
        let mut b = Builder {
            store: &mut store,
            init,
            rng: &mut rng,
        };
        let nonar = NonArModel::new(&mut b, cfg, v)?;
        let ar_forward = ArModel::new(&mut b, AR_FORWARD_PREFIX, cfg, v)?;
        let ar_backward = ArModel::new(&mut b, AR_BACKWARD_PREFIX, cfg, v)?;
        Ok(Self {
            vocab,
            config: *cfg,
            store,
            nonar,
            ar_forward,
            ar_backward,
        })
    }

    pub fn ar_pair(&self) -> crate::ar::ArPair<'_> {
        crate::ar::ArPair {
            store: &self.store,
            forward: &self.ar_forward,
            backward: &self.ar_backward,
        }
    }
}
