//! The incremental scoring interface and the models shipped with the crate.
//!
//! A model scores the next target token given a source prefix and a target
//! prefix. When the whole source has been revealed the source prefix ends
//! with the EOS sentinel; without it the model must treat the source as still
//! arriving.

mod lookahead;
mod subprocess;

use std::cmp::Ordering;

use thiserror::Error;

use crate::beam::{beam_step, Beam};
use crate::trace::Token;

pub use lookahead::LookaheadTransducerModel;
pub use subprocess::{parse_reply, SubprocessModel, DEFAULT_TIMEOUT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown source token {0:?}")]
    UnknownToken(String),
    #[error("invalid prefix: {0}")]
    InvalidPrefix(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("model process failed: {0}")]
    Process(String),
    #[error("model did not reply within {0:?}")]
    Timeout(std::time::Duration),
    #[error("no EOS within the target length cap of {cap} tokens")]
    LengthCap { cap: usize },
}

/// A next-token distribution over target tokens and EOS.
///
/// Only tokens with positive probability are stored. Entries are ordered by
/// probability, highest first, with ties broken lexicographically by token
/// text, so iteration order is deterministic and the first entry is the
/// argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    entries: Vec<(Token, f64)>,
}

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

impl Distribution {
    /// Normalizes non-negative weights. Duplicate tokens are merged.
    pub fn from_weights<I>(weights: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (Token, f64)>,
    {
        let mut merged: std::collections::BTreeMap<Token, f64> = Default::default();
        for (token, w) in weights {
            if !w.is_finite() || w < 0.0 {
                return Err(ModelError::InvalidDistribution(format!(
                    "weight {w} for {token:?}"
                )));
            }
            if token.is_pad() {
                return Err(ModelError::InvalidDistribution(
                    "PAD cannot be scored".into(),
                ));
            }
            *merged.entry(token).or_insert(0.0) += w;
        }
        let total: f64 = merged.values().sum();
        if total <= 0.0 {
            return Err(ModelError::InvalidDistribution("total mass is zero".into()));
        }
        let mut entries: Vec<(Token, f64)> = merged
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(t, w)| (t, w / total))
            .collect();
        entries.sort_by(cmp_entry);
        Ok(Distribution { entries })
    }

    /// Renormalizes log-probabilities over the given tokens.
    pub fn from_logprobs<I>(logprobs: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (Token, f64)>,
    {
        let items: Vec<(Token, f64)> = logprobs.into_iter().collect();
        if items.is_empty() {
            return Err(ModelError::InvalidDistribution("no tokens".into()));
        }
        if let Some((t, lp)) = items.iter().find(|(_, lp)| lp.is_nan() || *lp == f64::INFINITY) {
            return Err(ModelError::InvalidDistribution(format!(
                "log-probability {lp} for {t:?}"
            )));
        }
        let max = items
            .iter()
            .map(|(_, lp)| *lp)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(ModelError::InvalidDistribution("total mass is zero".into()));
        }
        Distribution::from_weights(items.into_iter().map(|(t, lp)| (t, (lp - max).exp())))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Token, f64)> {
        self.entries.iter().map(|(t, p)| (t, *p))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prob(&self, token: &Token) -> f64 {
        self.entries
            .iter()
            .find(|(t, _)| t == token)
            .map_or(0.0, |(_, p)| *p)
    }

    /// The most probable entry.
    pub fn top(&self) -> (&Token, f64) {
        let (t, p) = &self.entries[0];
        (t, *p)
    }

    /// The most probable entry that is not EOS.
    pub fn top_non_eos(&self) -> Option<(&Token, f64)> {
        self.iter().find(|(t, _)| !t.is_eos())
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.total() - 1.0).abs() <= NORMALIZATION_TOLERANCE
    }
}

fn cmp_entry(a: &(Token, f64), b: &(Token, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Scores `p(y_t | source_prefix, target_prefix)`.
///
/// Implementations must be pure: equal arguments give equal distributions.
pub trait IncrementalModel: Send + Sync {
    fn next_distribution(
        &self,
        source_prefix: &[Token],
        target_prefix: &[Token],
    ) -> Result<Distribution, ModelError>;

    /// Target tokens the model is known to produce (EOS excluded).
    fn vocabulary(&self) -> Vec<Token>;
}

impl<M: IncrementalModel + ?Sized> IncrementalModel for &M {
    fn next_distribution(
        &self,
        source_prefix: &[Token],
        target_prefix: &[Token],
    ) -> Result<Distribution, ModelError> {
        (**self).next_distribution(source_prefix, target_prefix)
    }

    fn vocabulary(&self) -> Vec<Token> {
        (**self).vocabulary()
    }
}

impl<M: IncrementalModel + ?Sized> IncrementalModel for Box<M> {
    fn next_distribution(
        &self,
        source_prefix: &[Token],
        target_prefix: &[Token],
    ) -> Result<Distribution, ModelError> {
        (**self).next_distribution(source_prefix, target_prefix)
    }

    fn vocabulary(&self) -> Vec<Token> {
        (**self).vocabulary()
    }
}

/// Returns `source` with EOS appended, marking it as complete.
pub fn complete_source(source: &[Token]) -> Vec<Token> {
    let mut full = source.to_vec();
    if full.last().is_none_or(|t| !t.is_eos()) {
        full.push(Token::eos());
    }
    full
}

/// Default ratio between the target length cap and the source length.
pub const DEFAULT_LENGTH_RATIO_CAP: f64 = 3.0;

pub(crate) fn length_cap(source_len: usize, ratio: f64) -> usize {
    ((source_len as f64) * ratio).ceil().max(1.0) as usize
}

/// Beam search of width `beam_size` over the model conditioned on
/// `source_prefix` (which is used verbatim), extending `start` until the best
/// hypothesis is finished.
pub(crate) fn decode_to_eos<M: IncrementalModel + ?Sized>(
    model: &M,
    source_prefix: &[Token],
    start: Vec<Token>,
    beam_size: usize,
    cap: usize,
) -> Result<Vec<Token>, ModelError> {
    let mut beam = Beam::initial(start);
    loop {
        let best = &beam.items()[0];
        if best.finished {
            return Ok(best.tokens.clone());
        }
        if best.tokens.len() >= cap {
            // Unfinished hypotheses only lose mass from here on; a finished one
            // already in the beam is the best complete hypothesis available.
            return beam
                .items()
                .iter()
                .find(|h| h.finished)
                .map(|h| h.tokens.clone())
                .ok_or(ModelError::LengthCap { cap });
        }
        beam = beam_step(&beam, beam_size, model, source_prefix)?;
    }
}

/// Translates the whole `source` with beam width `beam_size`, EOS stripped.
pub fn full_sentence_decode<M: IncrementalModel + ?Sized>(
    model: &M,
    source: &[Token],
    beam_size: usize,
) -> Result<Vec<Token>, ModelError> {
    full_sentence_decode_capped(model, source, beam_size, DEFAULT_LENGTH_RATIO_CAP)
}

pub fn full_sentence_decode_capped<M: IncrementalModel + ?Sized>(
    model: &M,
    source: &[Token],
    beam_size: usize,
    length_ratio_cap: f64,
) -> Result<Vec<Token>, ModelError> {
    if source.is_empty() || (source.len() == 1 && source[0].is_eos()) {
        return Err(ModelError::InvalidPrefix("empty source".into()));
    }
    let full = complete_source(source);
    let cap = length_cap(full.len() - 1, length_ratio_cap);
    decode_to_eos(model, &full, Vec::new(), beam_size.max(1), cap)
}
