//! Decoders: per-token MMI decoding and k-best enumeration for the
//! parallel models, beam search and reranking for the autoregressive
//! baselines, and the candidate-then-rerank pipeline that joins them.

mod beam;
mod dump;
mod kbest;
mod nonar;
mod rerank;

use std::fmt;
use std::str::FromStr;

pub use beam::{ar_beam_search, ar_greedy, BeamHypothesis};
pub use dump::{format_dump_line, parse_dump, read_dump, DumpRecord};
pub use kbest::{kbest_separable, ScoredSequence};
pub use nonar::{nonar_greedy_decode, nonar_mmi_decode, nonar_nbest, NonArDecoder, ScoreTable};
pub use rerank::{ar_mmi_rerank, npd_mmi_select, RankedHypothesis};

use crate::error::{Error, Result};
use crate::mmi::MmiScoreBreakdown;

/// How equal per-position scores are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieBreak {
    #[default]
    LowestId,
    /// Deliberately wrong policy, used to exercise the oracle's failure path.
    HighestId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub lambda: f64,
    /// Candidates kept by the parallel k-best list.
    pub n_best: usize,
    /// Length classes explored by the parallel k-best list.
    pub length_candidates: usize,
    /// Tokens considered per position by the k-best enumeration.
    pub k_tok: usize,
    pub beam: usize,
    pub sibling_penalty: f64,
    pub tie_break: TieBreak,
    /// Extra target positions allowed beyond the source length in beam search.
    pub max_len_offset: usize,
    /// Select the parallel k-best candidate with the autoregressive MMI score.
    pub npd: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            n_best: 10,
            length_candidates: 4,
            k_tok: 5,
            beam: 10,
            sibling_penalty: 1.0,
            tie_break: TieBreak::LowestId,
            max_len_offset: 20,
            npd: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        crate::mmi::check_lambda(self.lambda)?;
        if self.n_best == 0 || self.length_candidates == 0 || self.k_tok == 0 || self.beam == 0 {
            return Err(Error::Config("n_best, length_candidates, k_tok and beam must be >= 1".into()));
        }
        if !(self.sibling_penalty >= 0.0 && self.sibling_penalty.is_finite()) {
            return Err(Error::Config(format!("sibling penalty {} must be >= 0", self.sibling_penalty)));
        }
        Ok(())
    }
}

/// Where a parallel candidate came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub length: usize,
    /// Rank of the length among the explored length classes.
    pub length_rank: usize,
    /// Rank within that length's k-best list.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub tokens: Vec<usize>,
    pub breakdown: MmiScoreBreakdown,
    pub provenance: Provenance,
}

impl Candidate {
    pub fn score(&self) -> f64 {
        self.breakdown.total
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Decoding pipelines, named after the systems they reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    NonAr,
    NonArMmi,
    Ar,
    ArMmi,
    ArMmiDiverse,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::NonAr, Mode::NonArMmi, Mode::Ar, Mode::ArMmi, Mode::ArMmiDiverse];

    /// Whether the mode reads λ at all.
    pub fn uses_lambda(self) -> bool {
        !matches!(self, Mode::NonAr | Mode::Ar)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::NonAr => "nonar",
            Mode::NonArMmi => "nonar+mmi",
            Mode::Ar => "ar",
            Mode::ArMmi => "ar+mmi",
            Mode::ArMmiDiverse => "ar+mmi+diverse",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown decode mode {s}")))
    }
}
