use std::collections::BTreeMap;

use super::{Distribution, IncrementalModel, ModelError};
use crate::trace::Token;

/// A deterministic word-for-word transducer that needs `lookahead` extra
/// source tokens before it trusts a translation.
///
/// Target position `t` translates source token `x_t` through `table`. With
/// the source still arriving and `s` tokens visible, the preferred token for
/// position `t` is:
///
/// - `table[x_t]` when `x_{t+d}` is visible (`t + d <= s`);
/// - `default_token` when `x_t` is visible but its lookahead is not, with the
///   remaining mass on `table[x_t]`;
/// - an anticipation guess, `table[x_s]`, for the `anticipation` positions
///   past the visible source;
/// - EOS after that.
///
/// Once the source is complete (the prefix ends with EOS) every position is
/// translated through the table and EOS follows the last one; EOS then has
/// no mass at earlier positions.
///
/// The preferred token receives mass `sharpness`. A target prefix that
/// disagrees with the table on a visible source position puts the model off
/// track: confidence drops to `sharpness²` for the rest of the sentence. This
/// is what lets a wide beam recover from a greedy default guess when
/// `sharpness < 1`.
#[derive(Debug, Clone)]
pub struct LookaheadTransducerModel {
    table: BTreeMap<Token, Token>,
    lookahead: usize,
    anticipation: usize,
    default_token: Token,
    sharpness: f64,
    /// Sorted target vocabulary followed by EOS.
    outcomes: Vec<Token>,
}

impl LookaheadTransducerModel {
    /// Builds a model with the default anticipation of `lookahead + 1`.
    pub fn new(
        table: BTreeMap<Token, Token>,
        lookahead: usize,
        default_token: Token,
        sharpness: f64,
    ) -> Result<Self, ModelError> {
        Self::with_anticipation(table, lookahead, lookahead + 1, default_token, sharpness)
    }

    pub fn with_anticipation(
        table: BTreeMap<Token, Token>,
        lookahead: usize,
        anticipation: usize,
        default_token: Token,
        sharpness: f64,
    ) -> Result<Self, ModelError> {
        if !(sharpness > 0.5 && sharpness <= 1.0) {
            return Err(ModelError::InvalidParameters(format!(
                "sharpness {sharpness} outside (0.5, 1]"
            )));
        }
        if table.is_empty() {
            return Err(ModelError::InvalidParameters("empty table".into()));
        }
        let sentinel = |t: &Token| t.is_eos() || t.is_pad();
        if sentinel(&default_token) || table.iter().any(|(k, v)| sentinel(k) || sentinel(v)) {
            return Err(ModelError::InvalidParameters(
                "sentinels cannot appear in the table".into(),
            ));
        }
        let mut outcomes: Vec<Token> = table.values().cloned().collect();
        outcomes.push(default_token.clone());
        outcomes.sort();
        outcomes.dedup();
        outcomes.push(Token::eos());
        Ok(LookaheadTransducerModel {
            table,
            lookahead,
            anticipation,
            default_token,
            sharpness,
            outcomes,
        })
    }

    /// Identity transducer over `alphabet`: no lookahead, no anticipation,
    /// sharpness 1.
    pub fn echo(alphabet: &[Token]) -> Result<Self, ModelError> {
        let table = alphabet.iter().map(|t| (t.clone(), t.clone())).collect();
        Self::with_anticipation(table, 0, 0, Token::new("<unk>").unwrap(), 1.0)
    }

    pub fn table(&self) -> &BTreeMap<Token, Token> {
        &self.table
    }

    pub fn lookahead(&self) -> usize {
        self.lookahead
    }

    pub fn anticipation(&self) -> usize {
        self.anticipation
    }

    pub fn sharpness(&self) -> f64 {
        self.sharpness
    }

    pub fn default_token(&self) -> &Token {
        &self.default_token
    }

    /// The table image of a source sentence, which is also what greedy
    /// decoding of the complete sentence produces.
    pub fn translate(&self, source: &[Token]) -> Result<Vec<Token>, ModelError> {
        source.iter().map(|x| self.lookup(x).cloned()).collect()
    }

    fn lookup(&self, source_token: &Token) -> Result<&Token, ModelError> {
        self.table
            .get(source_token)
            .ok_or_else(|| ModelError::UnknownToken(source_token.to_string()))
    }

    fn build(
        &self,
        preferred: &Token,
        confidence: f64,
        runner_up: Option<&Token>,
        allow_eos: bool,
    ) -> Distribution {
        let residual = 1.0 - confidence;
        let mut weights: Vec<(Token, f64)> = Vec::with_capacity(self.outcomes.len());
        weights.push((preferred.clone(), confidence));
        match runner_up {
            Some(alt) if alt != preferred => weights.push((alt.clone(), residual)),
            _ => {
                let others: Vec<&Token> = self
                    .outcomes
                    .iter()
                    .filter(|o| *o != preferred && (allow_eos || !o.is_eos()))
                    .collect();
                let share = residual / others.len() as f64;
                weights.extend(others.into_iter().map(|o| (o.clone(), share)));
            }
        }
        Distribution::from_weights(weights).expect("transducer weights are valid")
    }
}

impl IncrementalModel for LookaheadTransducerModel {
    fn next_distribution(
        &self,
        source_prefix: &[Token],
        target_prefix: &[Token],
    ) -> Result<Distribution, ModelError> {
        let complete = source_prefix.last().is_some_and(Token::is_eos);
        let visible = if complete {
            &source_prefix[..source_prefix.len() - 1]
        } else {
            source_prefix
        };
        if visible.iter().any(Token::is_eos) {
            return Err(ModelError::InvalidPrefix(
                "EOS inside the source prefix".into(),
            ));
        }
        if target_prefix.iter().any(|t| t.is_eos() || t.is_pad()) {
            return Err(ModelError::InvalidPrefix(
                "sentinel inside the target prefix".into(),
            ));
        }
        let translations: Vec<&Token> = visible
            .iter()
            .map(|x| self.lookup(x))
            .collect::<Result<_, _>>()?;

        let s = visible.len();
        let t = target_prefix.len() + 1;
        let eos = Token::eos();
        let mut runner_up = None;
        let preferred: &Token = if complete {
            if t <= s {
                translations[t - 1]
            } else {
                &eos
            }
        } else if t + self.lookahead <= s {
            translations[t - 1]
        } else if t <= s {
            runner_up = Some(translations[t - 1]);
            &self.default_token
        } else if t <= s + self.anticipation {
            translations.last().copied().unwrap_or(&self.default_token)
        } else {
            &eos
        };

        let off_track = target_prefix
            .iter()
            .zip(&translations)
            .any(|(y, x)| y != *x);
        // With the whole source visible the target length is known, so EOS
        // gets no residual mass before the last position.
        let allow_eos = !(complete && t <= s);
        let dist = if off_track {
            self.build(preferred, self.sharpness * self.sharpness, None, allow_eos)
        } else {
            self.build(preferred, self.sharpness, runner_up, allow_eos)
        };
        Ok(dist)
    }

    fn vocabulary(&self) -> Vec<Token> {
        self.outcomes[..self.outcomes.len() - 1].to_vec()
    }
}
