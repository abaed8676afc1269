//! Layers built on the recording graph.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

/// One forward evaluation over a parameter store.
///
/// Training sessions track gradients and apply dropout from a seeded
/// generator; inference sessions bind parameters as constants.
pub struct Session<'s> {
    pub g: Graph,
    store: &'s ParamStore,
    dropout: f64,
    rng: Option<ChaCha8Rng>,
    track: bool,
}

impl<'s> Session<'s> {
    pub fn inference(store: &'s ParamStore) -> Self {
        Self {
            g: Graph::new(),
            store,
            dropout: 0.0,
            rng: None,
            track: false,
        }
    }

    pub fn training(store: &'s ParamStore, dropout: f64, seed: u64) -> Self {
        Self {
            g: Graph::new(),
            store,
            dropout,
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            track: true,
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn is_training(&self) -> bool {
        self.track
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if self.track {
            self.g.param(self.store, id)
        } else {
            self.g.frozen_param(self.store, id)
        }
    }

    pub fn drop(&mut self, x: Var) -> Result<Var> {
        match (&mut self.rng, self.dropout > 0.0) {
            (Some(rng), true) => self.g.dropout(x, self.dropout, rng),
            _ => Ok(x),
        }
    }
}

/// Shared state while registering a model's parameters.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub init: Init,
    pub rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let t = self.init.matrix(rows, cols, self.rng);
        self.store.insert(name, t)
    }

    pub fn table(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let t = self.init.table(rows, cols, self.rng);
        self.store.insert(name, t)
    }

    pub fn zeros(&mut self, name: &str, n: usize) -> Result<ParamId> {
        self.store.insert(name, Tensor::zeros(&[n]))
    }

    pub fn gain(&mut self, name: &str, n: usize) -> Result<ParamId> {
        let t = self.init.gain(n);
        self.store.insert(name, t)
    }

    pub fn seed(&mut self) -> u64 {
        self.rng.gen()
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(b: &mut Builder, name: &str, input: usize, output: usize) -> Result<Self> {
        Ok(Self {
            w: b.matrix(&format!("{name}.w"), input, output)?,
            b: b.zeros(&format!("{name}.b"), output)?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let w = s.p(self.w);
        let b = s.p(self.b);
        let y = s.g.matmul(x, w)?;
        s.g.add_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(b: &mut Builder, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: b.gain(&format!("{name}.g"), d)?,
            bias: b.zeros(&format!("{name}.b"), d)?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let g = s.p(self.gain);
        let b = s.p(self.bias);
        s.g.layer_norm(x, g, b)
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(b: &mut Builder, name: &str, d: usize, d_ff: usize) -> Result<Self> {
        Ok(Self {
            inner: Linear::new(b, &format!("{name}.ff1"), d, d_ff)?,
            outer: Linear::new(b, &format!("{name}.ff2"), d_ff, d)?,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.inner.forward(s, x)?;
        let h = s.g.relu(h);
        self.outer.forward(s, h)
    }
}

/// Bucket index `clip(j - i, -k, k) + k` for every query `i` and key `j`.
pub fn relative_buckets(len: usize, clip: usize) -> Rc<[usize]> {
    let k = clip as i64;
    let mut idx = Vec::with_capacity(len * len);
    for i in 0..len as i64 {
        for j in 0..len as i64 {
            idx.push(((j - i).clamp(-k, k) + k) as usize);
        }
    }
    idx.into()
}

/// `-inf` above the diagonal, zero elsewhere.
pub fn causal_mask(len: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, len]);
    for i in 0..len {
        for j in i + 1..len {
            t.data_mut()[i * len + j] = f64::NEG_INFINITY;
        }
    }
    t
}

/// Learned relative-position tables for one attention layer.
#[derive(Debug, Clone, Copy)]
pub struct RelativeTables {
    pub keys: Var,
    pub values: Var,
    pub clip: usize,
}

/// Single-head scaled dot-product attention over already projected
/// queries, keys and values.
///
/// With `relative` tables the key for query `i` at position `j` is
/// `k_j + a_K[clip(j-i)]` and the value is `v_j + a_V[clip(j-i)]`.
pub fn relative_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    relative: Option<RelativeTables>,
    mask: Option<&Tensor>,
) -> Result<Var> {
    let (lq, dk) = g.value(q).require_matrix("attention queries")?;
    let (lk, _) = g.value(k).require_matrix("attention keys")?;
    let (lv, _) = g.value(v).require_matrix("attention values")?;
    if lk != lv {
        return Err(Error::dim("attention keys/values", g.shape(k), g.shape(v)));
    }
    let mut scores = g.matmul_nt(q, k)?;
    let buckets = match relative {
        Some(rel) => {
            if lq != lk {
                return Err(Error::dim("relative attention", g.shape(q), g.shape(k)));
            }
            let idx = relative_buckets(lq, rel.clip);
            let per_bucket = g.matmul_nt(q, rel.keys)?;
            let rel_scores = g.gather_index(per_bucket, idx.clone(), lk)?;
            scores = g.add(scores, rel_scores)?;
            Some((idx, rel))
        }
        None => None,
    };
    let mut scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
    if let Some(m) = mask {
        scores = g.add_const(scores, m)?;
    }
    let weights = g.softmax(scores, 1)?;
    let mut out = g.matmul(weights, v)?;
    if let Some((idx, rel)) = buckets {
        let buckets = 2 * rel.clip + 1;
        let per_bucket = g.scatter_index(weights, idx, buckets)?;
        let rel_out = g.matmul(per_bucket, rel.values)?;
        out = g.add(out, rel_out)?;
    }
    Ok(out)
}

/// Multi-head attention with optional relative-position terms.
#[derive(Debug, Clone)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    /// `(a_K, a_V)` tables of shape `(2k+1)×head_dim`, shared by all heads.
    pub relative: Option<(ParamId, ParamId)>,
    pub heads: usize,
    pub clip: usize,
}

impl Attention {
    pub fn new(b: &mut Builder, name: &str, d: usize, heads: usize, relative_clip: Option<usize>) -> Result<Self> {
        let head_dim = d / heads;
        let relative = match relative_clip {
            Some(k) => Some((
                b.table(&format!("{name}.rel_k"), 2 * k + 1, head_dim)?,
                b.table(&format!("{name}.rel_v"), 2 * k + 1, head_dim)?,
            )),
            None => None,
        };
        Ok(Self {
            query: Linear::new(b, &format!("{name}.q"), d, d)?,
            key: Linear::new(b, &format!("{name}.k"), d, d)?,
            value: Linear::new(b, &format!("{name}.v"), d, d)?,
            output: Linear::new(b, &format!("{name}.o"), d, d)?,
            relative,
            heads,
            clip: relative_clip.unwrap_or(0),
        })
    }

    pub fn forward(&self, s: &mut Session, queries: Var, memory: Var, mask: Option<&Tensor>) -> Result<Var> {
        let q = self.query.forward(s, queries)?;
        let k = self.key.forward(s, memory)?;
        let v = self.value.forward(s, memory)?;
        let d = s.g.value(q).cols();
        let hd = d / self.heads;
        let rel = self.relative.map(|(rk, rv)| RelativeTables {
            keys: s.p(rk),
            values: s.p(rv),
            clip: self.clip,
        });
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = s.g.slice_cols(q, h * hd, hd)?;
            let kh = s.g.slice_cols(k, h * hd, hd)?;
            let vh = s.g.slice_cols(v, h * hd, hd)?;
            heads.push(relative_attention(&mut s.g, qh, kh, vh, rel, mask)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { s.g.concat_cols(&heads)? };
        self.output.forward(s, joined)
    }
}
