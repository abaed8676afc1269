//! Encoder, length classifier, copy-based decoder inputs and the two
//! decoder stacks (parallel with attention over the vocabulary, and causal).

use crate::error::{Error, Result};
use crate::nn::{causal_mask, Attention, Builder, FeedForward, LayerNorm, Linear, Session};
use crate::params::ParamId;
use crate::tensor::{Tensor, Var};

/// Largest absolute length difference the length classifier can express.
pub const MAX_LENGTH_DELTA: i64 = 20;
pub const LENGTH_CLASSES: usize = (2 * MAX_LENGTH_DELTA + 1) as usize;

/// Class index for a length difference, clamped into range.
pub fn delta_to_class(delta: i64) -> usize {
    (delta.clamp(-MAX_LENGTH_DELTA, MAX_LENGTH_DELTA) + MAX_LENGTH_DELTA) as usize
}

pub fn class_to_delta(class: usize) -> i64 {
    class as i64 - MAX_LENGTH_DELTA
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub blocks: usize,
    pub rel_clip: usize,
    pub dropout: f64,
    /// Rows of each absolute position table.
    pub max_positions: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            d_ff: 64,
            blocks: 2,
            rel_clip: 4,
            dropout: 0.0,
            max_positions: 64,
        }
    }
}

impl BlockConfig {
    pub fn tiny() -> Self {
        Self {
            d_model: 8,
            heads: 2,
            d_ff: 16,
            blocks: 1,
            rel_clip: 4,
            dropout: 0.0,
            max_positions: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model width {} not divisible by head count {}",
                self.d_model, self.heads
            )));
        }
        if self.blocks == 0 {
            return Err(Error::Config("at least one block is required".into()));
        }
        if self.d_ff == 0 || self.max_positions == 0 {
            return Err(Error::Config("feed-forward width and max positions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

fn positions(len: usize, max: usize) -> Result<Vec<usize>> {
    if len > max {
        return Err(Error::Length { len, max });
    }
    Ok((0..len).collect())
}

/// Token embedding plus learned absolute position embedding.
fn embed(s: &mut Session, tok_emb: ParamId, pos: ParamId, ids: &[usize], max_positions: usize) -> Result<Var> {
    let idx = positions(ids.len(), max_positions)?;
    let table = s.p(tok_emb);
    let tokens = s.g.embedding(table, ids)?;
    let pos_table = s.p(pos);
    let p = s.g.gather_rows(pos_table, &idx)?;
    s.g.add(tokens, p)
}

fn add_positions(s: &mut Session, x: Var, pos: ParamId, max_positions: usize) -> Result<Var> {
    let idx = positions(s.g.value(x).rows(), max_positions)?;
    let pos_table = s.p(pos);
    let p = s.g.gather_rows(pos_table, &idx)?;
    s.g.add(x, p)
}

/// `x + dropout(f(x))` followed by layer norm.
fn residual(s: &mut Session, x: Var, fx: Var, ln: &LayerNorm) -> Result<Var> {
    let fx = s.drop(fx)?;
    let sum = s.g.add(x, fx)?;
    ln.forward(s, sum)
}

#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub attn: Attention,
    pub ln1: LayerNorm,
    pub ff: FeedForward,
    pub ln2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub pos: ParamId,
    pub blocks: Vec<EncoderBlock>,
    pub max_positions: usize,
}

impl Encoder {
    pub fn new(b: &mut Builder, name: &str, cfg: &BlockConfig) -> Result<Self> {
        let d = cfg.d_model;
        let pos = b.table(&format!("{name}.pos"), cfg.max_positions, d)?;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            let n = format!("{name}.{i}");
            blocks.push(EncoderBlock {
                attn: Attention::new(b, &format!("{n}.attn"), d, cfg.heads, Some(cfg.rel_clip))?,
                ln1: LayerNorm::new(b, &format!("{n}.ln1"), d)?,
                ff: FeedForward::new(b, &n, d, cfg.d_ff)?,
                ln2: LayerNorm::new(b, &format!("{n}.ln2"), d)?,
            });
        }
        Ok(Self {
            pos,
            blocks,
            max_positions: cfg.max_positions,
        })
    }

    /// Contextual representations `H` (`len×d`) of the last block.
    pub fn encode(&self, s: &mut Session, tok_emb: ParamId, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Contract("cannot encode an empty sequence".into()));
        }
        let mut x = embed(s, tok_emb, self.pos, ids, self.max_positions)?;
        for blk in &self.blocks {
            let a = blk.attn.forward(s, x, x, None)?;
            x = residual(s, x, a, &blk.ln1)?;
            let f = blk.ff.forward(s, x)?;
            x = residual(s, x, f, &blk.ln2)?;
        }
        Ok(x)
    }
}

/// `softmax(W_p · maxpool(H) + b_p)` over the 41 length differences.
#[derive(Debug, Clone)]
pub struct LengthClassifier {
    pub proj: Linear,
}

impl LengthClassifier {
    pub fn new(b: &mut Builder, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(b, name, d, LENGTH_CLASSES)?,
        })
    }

    /// Unnormalised scores, `1×41`.
    pub fn logits(&self, s: &mut Session, h: Var) -> Result<Var> {
        let pooled = s.g.max_pool_rows(h)?;
        self.proj.forward(s, pooled)
    }

    pub fn distribution(&self, s: &mut Session, h: Var) -> Result<Vec<f64>> {
        let l = self.logits(s, h)?;
        let p = s.g.softmax(l, 1)?;
        Ok(s.g.value(p).data().to_vec())
    }
}

/// Zero-based encoder rows copied to each of `m` decoder positions:
/// position `i` (1-based) reads row `round(n·i/m)` rounded half-up and
/// clamped to `[1, n]`.
pub fn copy_indices(n: usize, m: usize) -> Vec<usize> {
    (1..=m)
        .map(|i| {
            let r = (2 * n * i + m) / (2 * m);
            r.clamp(1, n) - 1
        })
        .collect()
}

/// Decoder inputs `D` (`m×d`) copied from the encoder output.
pub fn copy_decoder_inputs(s: &mut Session, h: Var, m: usize) -> Result<Var> {
    let n = s.g.value(h).rows();
    if m == 0 || n == 0 {
        return Err(Error::Contract(format!("copy needs n >= 1 and m >= 1, got n={n} m={m}")));
    }
    s.g.gather_rows(h, &copy_indices(n, m))
}

#[derive(Debug, Clone)]
pub struct ParallelDecoderBlock {
    pub self_attn: Attention,
    pub ln1: LayerNorm,
    pub cross: Attention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
    pub ln3: LayerNorm,
    /// Projects `[Z; A]` from width `2d` back to `d`.
    pub merge: Linear,
}

/// Result of one pass of the parallel decoder.
pub struct ParallelDecoding {
    pub logits: Var,
    /// Per block, the `m×V` distribution `softmax(Z·Wᵀ)`.
    pub vocab_attention: Vec<Var>,
}

/// Non-autoregressive decoder with layer-wise attention over the vocabulary.
#[derive(Debug, Clone)]
pub struct ParallelDecoder {
    pub pos: ParamId,
    pub blocks: Vec<ParallelDecoderBlock>,
    pub out: Linear,
    pub max_positions: usize,
}

impl ParallelDecoder {
    pub fn new(b: &mut Builder, name: &str, cfg: &BlockConfig) -> Result<Self> {
        let d = cfg.d_model;
        let pos = b.table(&format!("{name}.pos"), cfg.max_positions, d)?;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            let n = format!("{name}.{i}");
            blocks.push(ParallelDecoderBlock {
                self_attn: Attention::new(b, &format!("{n}.self"), d, cfg.heads, Some(cfg.rel_clip))?,
                ln1: LayerNorm::new(b, &format!("{n}.ln1"), d)?,
                cross: Attention::new(b, &format!("{n}.cross"), d, cfg.heads, None)?,
                ln2: LayerNorm::new(b, &format!("{n}.ln2"), d)?,
                ff: FeedForward::new(b, &n, d, cfg.d_ff)?,
                ln3: LayerNorm::new(b, &format!("{n}.ln3"), d)?,
                merge: Linear::new(b, &format!("{n}.merge"), 2 * d, d)?,
            });
        }
        Ok(Self {
            pos,
            blocks,
            out: Linear::new(b, &format!("{name}.out"), d, d)?,
            max_positions: cfg.max_positions,
        })
    }

    /// Runs every block over decoder inputs `D` against encoder output `H`,
    /// returning `m×V` logits through the tied vocabulary matrix `W`.
    pub fn decode_stack(&self, s: &mut Session, d_in: Var, h: Var, vocab: Var) -> Result<ParallelDecoding> {
        let width = s.g.value(d_in).cols();
        if s.g.value(vocab).cols() != width {
            return Err(Error::Config(format!(
                "vocabulary matrix width {} differs from model width {width}",
                s.g.value(vocab).cols()
            )));
        }
        let mut z = add_positions(s, d_in, self.pos, self.max_positions)?;
        let mut vocab_attention = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let a = blk.self_attn.forward(s, z, z, None)?;
            let x = residual(s, z, a, &blk.ln1)?;
            let c = blk.cross.forward(s, x, h, None)?;
            let x = residual(s, x, c, &blk.ln2)?;
            let f = blk.ff.forward(s, x)?;
            let zi = residual(s, x, f, &blk.ln3)?;
            let scores = s.g.matmul_nt(zi, vocab)?;
            let dist = s.g.softmax(scores, 1)?;
            let preview = s.g.matmul(dist, vocab)?;
            vocab_attention.push(dist);
            let cat = s.g.concat_cols(&[zi, preview])?;
            z = blk.merge.forward(s, cat)?;
        }
        let o = self.out.forward(s, z)?;
        let logits = s.g.matmul_nt(o, vocab)?;
        Ok(ParallelDecoding {
            logits,
            vocab_attention,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CausalDecoderBlock {
    pub self_attn: Attention,
    pub ln1: LayerNorm,
    pub cross: Attention,
    pub ln2: LayerNorm,
    pub ff: FeedForward,
    pub ln3: LayerNorm,
}

/// Standard left-to-right decoder used by the autoregressive baselines.
#[derive(Debug, Clone)]
pub struct CausalDecoder {
    pub pos: ParamId,
    pub blocks: Vec<CausalDecoderBlock>,
    pub out: Linear,
    pub max_positions: usize,
}

impl CausalDecoder {
    pub fn new(b: &mut Builder, name: &str, cfg: &BlockConfig) -> Result<Self> {
        let d = cfg.d_model;
        let pos = b.table(&format!("{name}.pos"), cfg.max_positions, d)?;
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for i in 0..cfg.blocks {
            let n = format!("{name}.{i}");
            blocks.push(CausalDecoderBlock {
                self_attn: Attention::new(b, &format!("{n}.self"), d, cfg.heads, Some(cfg.rel_clip))?,
                ln1: LayerNorm::new(b, &format!("{n}.ln1"), d)?,
                cross: Attention::new(b, &format!("{n}.cross"), d, cfg.heads, None)?,
                ln2: LayerNorm::new(b, &format!("{n}.ln2"), d)?,
                ff: FeedForward::new(b, &n, d, cfg.d_ff)?,
                ln3: LayerNorm::new(b, &format!("{n}.ln3"), d)?,
            });
        }
        Ok(Self {
            pos,
            blocks,
            out: Linear::new(b, &format!("{name}.out"), d, d)?,
            max_positions: cfg.max_positions,
        })
    }

    /// Logits (`len×V`) for every prefix of `input`; row `t` sees `input[..=t]` only.
    pub fn forward(&self, s: &mut Session, tok_emb: ParamId, input: &[usize], h: Var) -> Result<Var> {
        let mut z = embed(s, tok_emb, self.pos, input, self.max_positions)?;
        let mask: Tensor = causal_mask(input.len());
        for blk in &self.blocks {
            let a = blk.self_attn.forward(s, z, z, Some(&mask))?;
            let x = residual(s, z, a, &blk.ln1)?;
            let c = blk.cross.forward(s, x, h, None)?;
            let x = residual(s, x, c, &blk.ln2)?;
            let f = blk.ff.forward(s, x)?;
            z = residual(s, x, f, &blk.ln3)?;
        }
        let o = self.out.forward(s, z)?;
        let vocab = s.p(tok_emb);
        s.g.matmul_nt(o, vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_indices_examples() {
        assert_eq!(copy_indices(4, 4), vec![0, 1, 2, 3]);
        assert_eq!(copy_indices(1, 3), vec![0, 0, 0]);
        assert_eq!(copy_indices(6, 3), vec![1, 3, 5]);
        // round(2·1/4) = round(0.5) rounds up to 1
        assert_eq!(copy_indices(2, 4), vec![0, 0, 1, 1]);
    }

    #[test]
    fn copy_indices_stay_in_range_and_monotone() {
        for n in 1..20 {
            for m in 1..30 {
                let idx = copy_indices(n, m);
                assert_eq!(idx.len(), m);
                assert!(idx.iter().all(|&i| i < n));
                assert!(idx.windows(2).all(|w| w[0] <= w[1]));
                assert_eq!(*idx.last().unwrap(), n - 1);
            }
        }
    }

    #[test]
    fn length_classes_clamp() {
        assert_eq!(LENGTH_CLASSES, 41);
        assert_eq!(delta_to_class(0), 20);
        assert_eq!(delta_to_class(-25), 0);
        assert_eq!(delta_to_class(33), 40);
        assert_eq!(class_to_delta(delta_to_class(-7)), -7);
    }

    #[test]
    fn config_validation() {
        assert!(BlockConfig::default().validate().is_ok());
        let bad = BlockConfig {
            d_model: 10,
            heads: 4,
            ..BlockConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let none = BlockConfig {
            blocks: 0,
            ..BlockConfig::default()
        };
        assert!(none.validate().is_err());
    }
}
