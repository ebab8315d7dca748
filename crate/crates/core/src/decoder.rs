//! Opportunistic decoding with timely correction.
//!
//! Every commit step runs an `n + w` step beam search from the committed
//! prefix. The first `n` new tokens of the best hypothesis become
//! irreversible; the next `w` replace the previously displayed revisable
//! suffix. Once the whole source is read the decoder writes to EOS.

use thiserror::Error;

use crate::beam::{beam_advance, Beam};
use crate::models::{
    complete_source, decode_to_eos, length_cap, IncrementalModel, ModelError,
    DEFAULT_LENGTH_RATIO_CAP,
};
use crate::policy::{Policy, PolicyDecision, PolicyState};
use crate::trace::{CommitTrace, Snapshot, Token};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderConfig {
    /// Revisable window `w`.
    pub window: usize,
    /// Beam width `b`.
    pub beam: usize,
    /// Target length cap as a multiple of the source length.
    pub length_ratio_cap: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            window: 0,
            beam: 1,
            length_ratio_cap: DEFAULT_LENGTH_RATIO_CAP,
        }
    }
}

impl DecoderConfig {
    pub fn new(window: usize, beam: usize) -> Self {
        DecoderConfig {
            window,
            beam,
            ..Default::default()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("empty source")]
    EmptySource,
    #[error("invalid source: {0}")]
    InvalidSource(String),
    #[error("invalid decoder configuration: {0}")]
    InvalidConfig(String),
    #[error("model error at s={s}, t={t}: {source}")]
    Model {
        s: usize,
        t: usize,
        #[source]
        source: ModelError,
    },
    #[error("target length cap of {cap} tokens exceeded at s={s}")]
    LengthCap { s: usize, cap: usize },
    #[error("no non-EOS continuation at s={s}, t={t}")]
    NoContinuation { s: usize, t: usize },
}

/// Tokens made irreversible by one commit step and the new revisable suffix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitBatch {
    pub committed: Vec<Token>,
    pub revisable: Vec<Token>,
}

/// Mutable state of one simultaneous decode.
#[derive(Debug, Clone, Default)]
pub struct DecoderState {
    committed: Vec<Token>,
    revisable: Vec<Token>,
    source_read: usize,
    snapshots: Vec<Snapshot>,
}

fn visible_len(source_prefix: &[Token]) -> usize {
    source_prefix.len() - usize::from(source_prefix.last().is_some_and(Token::is_eos))
}

impl DecoderState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn committed(&self) -> &[Token] {
        &self.committed
    }

    pub fn revisable(&self) -> &[Token] {
        &self.revisable
    }

    pub fn source_read(&self) -> usize {
        self.source_read
    }

    pub fn displayed(&self) -> Vec<Token> {
        let mut out = self.committed.clone();
        out.extend_from_slice(&self.revisable);
        out
    }

    /// Commits `n` tokens and replaces the revisable window, both taken from
    /// the best hypothesis of an `n + window` step beam search.
    ///
    /// EOS never takes a committed slot: if the best hypothesis ends early,
    /// the remaining slots are filled with the best non-EOS token at each
    /// position and the window is emptied.
    pub fn commit_step(
        &mut self,
        model: &dyn IncrementalModel,
        source_prefix: &[Token],
        n: usize,
        window: usize,
        beam: usize,
        cap: usize,
    ) -> Result<CommitBatch, DecodeError> {
        let s = visible_len(source_prefix);
        let t = self.committed.len() + 1;
        if n == 0 {
            return Err(DecodeError::InvalidConfig("commit batch of zero".into()));
        }
        if self.committed.len() + n > cap {
            return Err(DecodeError::LengthCap { s, cap });
        }
        let wrap = |source| DecodeError::Model { s, t, source };

        let start = Beam::initial(self.committed.clone());
        let searched =
            beam_advance(&start, n + window, beam, model, source_prefix).map_err(wrap)?;
        let best = searched.best();
        let fresh = &best.tokens[self.committed.len()..];

        let mut committed = Vec::with_capacity(n);
        let cut = fresh.len() < n;
        committed.extend_from_slice(&fresh[..fresh.len().min(n)]);
        if cut {
            let mut prefix = self.committed.clone();
            prefix.extend_from_slice(&committed);
            while committed.len() < n {
                let dist = model.next_distribution(source_prefix, &prefix).map_err(wrap)?;
                let (token, _) = dist.top_non_eos().ok_or(DecodeError::NoContinuation {
                    s,
                    t: prefix.len() + 1,
                })?;
                prefix.push(token.clone());
                committed.push(token.clone());
            }
        }

        let room = cap - self.committed.len() - n;
        let revisable: Vec<Token> = if cut {
            Vec::new()
        } else {
            fresh[n..].iter().take(window.min(room)).cloned().collect()
        };

        self.committed.extend_from_slice(&committed);
        self.revisable = revisable.clone();
        Ok(CommitBatch {
            committed,
            revisable,
        })
    }

    fn record_snapshot(&mut self) {
        self.snapshots.push(Snapshot {
            source_step: self.source_read,
            displayed: self.displayed(),
            committed_len: self.committed.len(),
        });
    }

    /// Number of consecutive WRITEs the policy issues before the next READ,
    /// probing greedily on the committed prefix.
    fn write_run(
        &self,
        model: &dyn IncrementalModel,
        policy: &Policy,
        source: &[Token],
        cap: usize,
    ) -> Result<usize, DecodeError> {
        let s = self.source_read;
        let prefix = &source[..s];
        let mut probe = self.committed.clone();
        let mut run = 0;
        while probe.len() < cap {
            let wrap = |source| DecodeError::Model {
                s,
                t: probe.len() + 1,
                source,
            };
            let state = PolicyState {
                source_read: s,
                source_len: source.len(),
                run_len: run,
                model,
                source_prefix: prefix,
                committed_prefix: &probe,
            };
            if policy.decide(&state).map_err(wrap)? == PolicyDecision::Read {
                break;
            }
            let dist = model.next_distribution(prefix, &probe).map_err(wrap)?;
            let Some((token, _)) = dist.top_non_eos() else {
                break;
            };
            probe.push(token.clone());
            run += 1;
        }
        Ok(run)
    }
}

fn check_source(source: &[Token], config: &DecoderConfig) -> Result<usize, DecodeError> {
    if source.is_empty() {
        return Err(DecodeError::EmptySource);
    }
    if source.iter().any(|t| t.is_eos() || t.is_pad()) {
        return Err(DecodeError::InvalidSource(
            "source contains a sentinel token".into(),
        ));
    }
    if config.beam == 0 {
        return Err(DecodeError::InvalidConfig("beam width must be >= 1".into()));
    }
    if !(config.length_ratio_cap.is_finite() && config.length_ratio_cap > 0.0) {
        return Err(DecodeError::InvalidConfig(format!(
            "length ratio cap {}",
            config.length_ratio_cap
        )));
    }
    Ok(length_cap(source.len(), config.length_ratio_cap))
}

fn tail_error(s: usize, committed: usize, e: ModelError) -> DecodeError {
    match e {
        ModelError::LengthCap { cap } => DecodeError::LengthCap { s, cap },
        other => DecodeError::Model {
            s,
            t: committed + 1,
            source: other,
        },
    }
}

/// Decodes `source` under `policy` with a revisable window and beam search.
///
/// Each READ finalizes the snapshot of the previous source step; each maximal
/// run of WRITEs becomes one commit step. When the last source token has been
/// read the policy is no longer consulted and the decoder writes to EOS.
pub fn decode_simultaneous(
    model: &dyn IncrementalModel,
    policy: &Policy,
    source: &[Token],
    config: &DecoderConfig,
) -> Result<CommitTrace, DecodeError> {
    let cap = check_source(source, config)?;
    let n = source.len();
    let mut state = DecoderState::new();
    while state.source_read < n {
        if state.source_read > 0 {
            let run = state.write_run(model, policy, source, cap)?;
            if run > 0 {
                state.commit_step(
                    model,
                    &source[..state.source_read],
                    run,
                    config.window,
                    config.beam,
                    cap,
                )?;
            }
            state.record_snapshot();
        }
        state.source_read += 1;
    }

    let full = complete_source(source);
    let output = decode_to_eos(model, &full, state.committed.clone(), config.beam, cap)
        .map_err(|e| tail_error(n, state.committed.len(), e))?;
    state.committed = output;
    state.revisable.clear();
    state.record_snapshot();
    Ok(CommitTrace::from_snapshots(n, state.snapshots))
}

/// Re-translation baseline: every source step re-decodes the whole target
/// from scratch. Nothing is committed before the last step.
pub fn decode_retranslation(
    model: &dyn IncrementalModel,
    source: &[Token],
    beam: usize,
    length_ratio_cap: f64,
) -> Result<CommitTrace, DecodeError> {
    let config = DecoderConfig {
        window: 0,
        beam,
        length_ratio_cap,
    };
    let cap = check_source(source, &config)?;
    let n = source.len();
    let mut snapshots = Vec::with_capacity(n);
    for s in 1..=n {
        let prefix = if s == n {
            complete_source(source)
        } else {
            source[..s].to_vec()
        };
        let displayed =
            decode_to_eos(model, &prefix, Vec::new(), beam, cap).map_err(|e| tail_error(s, 0, e))?;
        let committed_len = if s == n { displayed.len() } else { 0 };
        snapshots.push(Snapshot {
            source_step: s,
            displayed,
            committed_len,
        });
    }
    Ok(CommitTrace::from_snapshots(n, snapshots))
}

/// Full-sentence baseline: nothing is shown until the source is complete.
pub fn decode_full_sentence(
    model: &dyn IncrementalModel,
    source: &[Token],
    beam: usize,
    length_ratio_cap: f64,
) -> Result<CommitTrace, DecodeError> {
    let config = DecoderConfig {
        window: 0,
        beam,
        length_ratio_cap,
    };
    let cap = check_source(source, &config)?;
    let n = source.len();
    let output = decode_to_eos(model, &complete_source(source), Vec::new(), beam, cap)
        .map_err(|e| tail_error(n, 0, e))?;
    let mut snapshots: Vec<Snapshot> = (1..n)
        .map(|s| Snapshot {
            source_step: s,
            displayed: Vec::new(),
            committed_len: 0,
        })
        .collect();
    snapshots.push(Snapshot {
        source_step: n,
        committed_len: output.len(),
        displayed: output,
    });
    Ok(CommitTrace::from_snapshots(n, snapshots))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LookaheadTransducerModel;
    use crate::trace::{tokenize, Sentence};

    fn toks(s: &str) -> Vec<Token> {
        tokenize(s).unwrap()
    }

    fn displays(trace: &CommitTrace) -> Vec<String> {
        trace
            .snapshots
            .iter()
            .map(|s| Sentence::new(s.displayed.clone()).unwrap().to_string())
            .collect()
    }

    fn lookahead(d: usize, q: f64) -> LookaheadTransducerModel {
        let table = [("a", "A"), ("b", "B"), ("c", "C"), ("d", "D")]
            .iter()
            .map(|(a, b)| (Token::new(a).unwrap(), Token::new(b).unwrap()))
            .collect();
        LookaheadTransducerModel::new(table, d, Token::new("<unk>").unwrap(), q).unwrap()
    }

    #[test]
    fn echo_wait1_streams_identity() {
        let echo = LookaheadTransducerModel::echo(&toks("a b c")).unwrap();
        let trace = decode_simultaneous(
            &echo,
            &Policy::wait_k(1).unwrap(),
            &toks("a b c"),
            &DecoderConfig::new(0, 1),
        )
        .unwrap();
        assert_eq!(displays(&trace), ["a", "a b", "a b c"]);
        assert!(trace.snapshots.iter().all(|s| s.revisable_len() == 0));
        assert_eq!(trace.validate(), Ok(()));
    }

    #[test]
    fn window_zero_is_append_only() {
        let m = lookahead(2, 0.7);
        let trace = decode_simultaneous(
            &m,
            &Policy::wait_k(1).unwrap(),
            &toks("a b c d"),
            &DecoderConfig::new(0, 1),
        )
        .unwrap();
        for pair in trace.snapshots.windows(2) {
            assert!(pair[1].displayed.starts_with(&pair[0].displayed));
        }
    }

    #[test]
    fn lookahead_two_wait1_window_two() {
        // Hand run: s=1 commits the default guess for x_1 (x_3 unseen) and
        // shows two anticipation guesses table[x_1]; each new source token
        // replaces the guesses; the tail fixes the last window.
        let m = lookahead(2, 1.0);
        let trace = decode_simultaneous(
            &m,
            &Policy::wait_k(1).unwrap(),
            &toks("a b c d"),
            &DecoderConfig::new(2, 1),
        )
        .unwrap();
        assert_eq!(
            displays(&trace),
            [
                "<unk> A A",
                "<unk> <unk> B B",
                "<unk> <unk> <unk> C C",
                "<unk> <unk> <unk> D"
            ]
        );
        let committed: Vec<usize> = trace.snapshots.iter().map(|s| s.committed_len).collect();
        assert_eq!(committed, [1, 2, 3, 4]);
        assert_eq!(trace.validate_with_window(2), Ok(()));
    }

    #[test]
    fn greedy_window_keeps_final_output() {
        let m = lookahead(2, 0.7);
        let src = toks("a b c d a c");
        let base = decode_simultaneous(
            &m,
            &Policy::wait_k(2).unwrap(),
            &src,
            &DecoderConfig::new(0, 1),
        )
        .unwrap();
        let wide = decode_simultaneous(
            &m,
            &Policy::wait_k(2).unwrap(),
            &src,
            &DecoderConfig::new(2, 1),
        )
        .unwrap();
        assert_eq!(base.final_output, wide.final_output);
    }

    #[test]
    fn commit_step_replaces_window() {
        // Timely correction on a token-level analogue of the welcome/agreement
        // example: with x_3 unseen the window guesses, one READ later the
        // guess at position 2 is overwritten.
        let m = lookahead(1, 1.0);
        let src = toks("a b c d");
        let mut state = DecoderState::new();
        let first = state.commit_step(&m, &src[..2], 1, 2, 1, 12).unwrap();
        assert_eq!(first.committed, toks("A"));
        assert_eq!(first.revisable, toks("<unk> B"));
        let second = state.commit_step(&m, &src[..3], 1, 2, 1, 12).unwrap();
        assert_eq!(second.committed, toks("B"));
        assert_eq!(second.revisable, toks("<unk> C"));
        assert_eq!(state.displayed(), toks("A B <unk> C"));
    }

    #[test]
    fn early_eos_never_commits() {
        // Past the anticipation horizon the model prefers EOS; the commit slot
        // takes the best non-EOS token and the window is cut.
        let m = lookahead(0, 0.9);
        let src = toks("a");
        let mut state = DecoderState::new();
        let batch = state.commit_step(&m, &src, 3, 3, 1, 10).unwrap();
        assert_eq!(batch.committed.len(), 3);
        assert!(batch.committed.iter().all(|t| !t.is_eos()));
        assert_eq!(&batch.committed[..2], &toks("A A")[..]);
        assert!(batch.revisable.is_empty());
    }

    #[test]
    fn window_truncated_at_eos() {
        let m = lookahead(0, 1.0);
        let src = toks("a b");
        let mut state = DecoderState::new();
        // anticipation = 1: position 3 guesses, position 4 is EOS.
        let batch = state.commit_step(&m, &src, 1, 5, 1, 10).unwrap();
        assert_eq!(batch.revisable, toks("B B"));
    }

    #[test]
    fn length_cap_is_enforced() {
        let m = lookahead(0, 1.0);
        let mut state = DecoderState::new();
        let err = state.commit_step(&m, &toks("a"), 4, 0, 1, 3).unwrap_err();
        assert_eq!(err, DecodeError::LengthCap { s: 1, cap: 3 });
    }

    #[test]
    fn errors_carry_position() {
        let m = lookahead(0, 1.0);
        let err = decode_simultaneous(
            &m,
            &Policy::wait_k(1).unwrap(),
            &toks("a z"),
            &DecoderConfig::new(0, 1),
        )
        .unwrap_err();
        assert!(matches!(err, DecodeError::Model { s: 2, t: 2, .. }), "{err:?}");
        assert_eq!(
            decode_simultaneous(&m, &Policy::wait_k(1).unwrap(), &[], &DecoderConfig::default()),
            Err(DecodeError::EmptySource)
        );
    }

    #[test]
    fn retranslation_echo_has_no_revisions() {
        let echo = LookaheadTransducerModel::echo(&toks("a b")).unwrap();
        let trace = decode_retranslation(&echo, &toks("a b"), 1, 3.0).unwrap();
        assert_eq!(displays(&trace), ["a", "a b"]);
        assert_eq!(trace.snapshots[0].committed_len, 0);
        assert_eq!(trace.snapshots[1].committed_len, 2);
    }

    #[test]
    fn retranslation_rewrites_guess() {
        let m = lookahead(1, 0.9);
        let trace = decode_retranslation(&m, &toks("a b"), 1, 3.0).unwrap();
        assert_eq!(displays(&trace), ["<unk> A A", "A B"]);
        assert_eq!(trace.validate(), Ok(()));
    }

    #[test]
    fn full_sentence_trace_shape() {
        let m = lookahead(1, 0.9);
        let trace = decode_full_sentence(&m, &toks("a b c"), 1, 3.0).unwrap();
        assert_eq!(displays(&trace), ["", "", "A B C"]);
        assert_eq!(trace.validate(), Ok(()));
    }
}
