//! Prefix-constrained beam search.
//!
//! A [`Beam`] starts from a single hypothesis (the committed prefix with log
//! probability 0) and is advanced one target position at a time. Finished
//! hypotheses are carried over unchanged.

use std::cmp::Ordering;

use crate::models::{IncrementalModel, ModelError};
use crate::trace::Token;

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Target tokens from position 1, EOS excluded.
    pub tokens: Vec<Token>,
    /// Sum of token log-probabilities since the beam was started.
    pub logprob: f64,
    /// Set once EOS has been generated.
    pub finished: bool,
}

impl Hypothesis {
    pub fn new(tokens: Vec<Token>) -> Self {
        Hypothesis {
            tokens,
            logprob: 0.0,
            finished: false,
        }
    }
}

/// Best first: higher log-probability, then lexicographically smaller tokens,
/// then unfinished before finished.
pub fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.logprob
        .total_cmp(&a.logprob)
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| a.finished.cmp(&b.finished))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Beam {
    items: Vec<Hypothesis>,
}

impl Beam {
    /// The initial beam `[<prefix, 1>]`.
    pub fn initial(prefix: Vec<Token>) -> Self {
        Beam {
            items: vec![Hypothesis::new(prefix)],
        }
    }

    /// Sorts and keeps at most `width` hypotheses.
    pub fn from_hypotheses(mut items: Vec<Hypothesis>, width: usize) -> Self {
        items.sort_by(rank);
        items.truncate(width.max(1));
        Beam { items }
    }

    pub fn items(&self) -> &[Hypothesis] {
        &self.items
    }

    pub fn best(&self) -> &Hypothesis {
        &self.items[0]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn all_finished(&self) -> bool {
        self.items.iter().all(|h| h.finished)
    }
}

/// One transition: expand every unfinished hypothesis over the model's
/// next-token distribution and keep the top `width`.
pub fn beam_step<M: IncrementalModel + ?Sized>(
    beam: &Beam,
    width: usize,
    model: &M,
    source_prefix: &[Token],
) -> Result<Beam, ModelError> {
    if beam.all_finished() {
        return Ok(beam.clone());
    }
    let mut candidates = Vec::with_capacity(beam.len() * 8);
    for hyp in &beam.items {
        if hyp.finished {
            candidates.push(hyp.clone());
            continue;
        }
        let dist = model.next_distribution(source_prefix, &hyp.tokens)?;
        for (token, p) in dist.iter() {
            let logprob = hyp.logprob + p.ln();
            if token.is_eos() {
                candidates.push(Hypothesis {
                    tokens: hyp.tokens.clone(),
                    logprob,
                    finished: true,
                });
            } else {
                let mut tokens = Vec::with_capacity(hyp.tokens.len() + 1);
                tokens.extend_from_slice(&hyp.tokens);
                tokens.push(token.clone());
                candidates.push(Hypothesis {
                    tokens,
                    logprob,
                    finished: false,
                });
            }
        }
    }
    Ok(Beam::from_hypotheses(candidates, width))
}

/// `steps`-fold composition of [`beam_step`]; zero steps is the identity.
pub fn beam_advance<M: IncrementalModel + ?Sized>(
    beam: &Beam,
    steps: usize,
    width: usize,
    model: &M,
    source_prefix: &[Token],
) -> Result<Beam, ModelError> {
    let mut current = beam.clone();
    for _ in 0..steps {
        if current.all_finished() {
            break;
        }
        current = beam_step(&current, width, model, source_prefix)?;
    }
    Ok(current)
}
