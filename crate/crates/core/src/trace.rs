//! Tokens, sentences and the commit-trace data model.
//!
//! A [`CommitTrace`] holds one [`Snapshot`] per revealed source token. Each
//! snapshot records the target words shown to the audience at that moment and
//! how many of them are irreversible.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const EOS_TEXT: &str = "<eos>";
const PAD_TEXT: &str = "<pad>";

/// A single whitespace-free word.
///
/// Cloning is cheap; the text is reference counted. Ordering is lexicographic
/// by text, which is the tie-break rule used everywhere in the crate.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(Arc<str>);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenError {
    #[error("empty token")]
    Empty,
    #[error("token {0:?} contains whitespace")]
    Whitespace(String),
    #[error("token {0:?} is a reserved sentinel")]
    Reserved(String),
    #[error("EOS may only appear as the last token of a sentence")]
    InteriorEos,
}

impl Token {
    pub fn new(text: &str) -> Result<Self, TokenError> {
        if text.is_empty() {
            return Err(TokenError::Empty);
        }
        if text.chars().any(char::is_whitespace) {
            return Err(TokenError::Whitespace(text.to_string()));
        }
        if text == EOS_TEXT || text == PAD_TEXT {
            return Err(TokenError::Reserved(text.to_string()));
        }
        Ok(Token(Arc::from(text)))
    }

    /// Parses a surface form, mapping `<eos>` to the EOS sentinel.
    pub fn parse(text: &str) -> Result<Self, TokenError> {
        if text == EOS_TEXT {
            Ok(Token::eos())
        } else {
            Token::new(text)
        }
    }

    pub fn eos() -> Self {
        Token(Arc::from(EOS_TEXT))
    }

    pub fn pad() -> Self {
        Token(Arc::from(PAD_TEXT))
    }

    pub fn is_eos(&self) -> bool {
        &*self.0 == EOS_TEXT
    }

    pub fn is_pad(&self) -> bool {
        &*self.0 == PAD_TEXT
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Token {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Token {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Token::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Parses whitespace-separated words into tokens.
pub fn tokenize(line: &str) -> Result<Vec<Token>, TokenError> {
    line.split_whitespace().map(Token::new).collect()
}

/// An ordered token sequence in which EOS, if present, is the last element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<Token>", into = "Vec<Token>")]
pub struct Sentence(Vec<Token>);

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Result<Self, TokenError> {
        if let Some(pos) = tokens.iter().position(Token::is_eos) {
            if pos + 1 != tokens.len() {
                return Err(TokenError::InteriorEos);
            }
        }
        Ok(Sentence(tokens))
    }

    /// Whitespace-tokenized sentence without EOS.
    pub fn parse(line: &str) -> Result<Self, TokenError> {
        Ok(Sentence(tokenize(line)?))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn into_tokens(self) -> Vec<Token> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<Token>> for Sentence {
    type Error = TokenError;

    fn try_from(tokens: Vec<Token>) -> Result<Self, Self::Error> {
        Sentence::new(tokens)
    }
}

impl From<Sentence> for Vec<Token> {
    fn from(sentence: Sentence) -> Self {
        sentence.0
    }
}

impl fmt::Display for Sentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, token) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{token}")?;
        }
        Ok(())
    }
}

/// The displayed output after `source_step` source tokens were processed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub source_step: usize,
    /// Committed prefix followed by the revisable suffix. Never contains EOS.
    pub displayed: Vec<Token>,
    pub committed_len: usize,
}

impl Snapshot {
    pub fn revisable_len(&self) -> usize {
        self.displayed.len().saturating_sub(self.committed_len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitTrace {
    pub source_len: usize,
    pub snapshots: Vec<Snapshot>,
    pub final_output: Sentence,
}

/// The first broken invariant found by [`CommitTrace::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceViolation {
    #[error("source_len is zero")]
    EmptySource,
    #[error("expected {expected} snapshots, found {found}")]
    SnapshotCount { expected: usize, found: usize },
    #[error("snapshot {index} has source step {found}, expected {expected}")]
    StepOutOfOrder {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("snapshot s={step}: committed_len {committed} exceeds displayed length {displayed}")]
    CommittedExceedsDisplay {
        step: usize,
        committed: usize,
        displayed: usize,
    },
    #[error("snapshot s={step}: displayed output contains a sentinel token")]
    SentinelDisplayed { step: usize },
    #[error("committed_len non-monotone at s={step}: {previous} -> {current}")]
    CommittedNonMonotone {
        step: usize,
        previous: usize,
        current: usize,
    },
    #[error("committed token changed at s={step}, position {position}")]
    CommittedTokenChanged { step: usize, position: usize },
    #[error("final output differs from the last snapshot")]
    FinalOutputMismatch,
    #[error("snapshot s={step}: {revisable} revisable tokens exceed window {window}")]
    WindowExceeded {
        step: usize,
        revisable: usize,
        window: usize,
    },
}

impl CommitTrace {
    /// Builds a trace whose final output is the last snapshot's display.
    pub fn from_snapshots(source_len: usize, snapshots: Vec<Snapshot>) -> Self {
        let final_output = snapshots
            .last()
            .map(|s| Sentence(s.displayed.clone()))
            .unwrap_or_default();
        CommitTrace {
            source_len,
            snapshots,
            final_output,
        }
    }

    /// Display of snapshot `s` (1-based); `s = 0` is the empty output.
    pub fn displayed(&self, s: usize) -> &[Token] {
        if s == 0 {
            &[]
        } else {
            &self.snapshots[s - 1].displayed
        }
    }

    /// Checks every structural invariant and reports the first violation.
    pub fn validate(&self) -> Result<(), TraceViolation> {
        if self.source_len == 0 {
            return Err(TraceViolation::EmptySource);
        }
        if self.snapshots.len() != self.source_len {
            return Err(TraceViolation::SnapshotCount {
                expected: self.source_len,
                found: self.snapshots.len(),
            });
        }
        let mut previous: Option<&Snapshot> = None;
        for (index, snap) in self.snapshots.iter().enumerate() {
            let step = snap.source_step;
            if step != index + 1 {
                return Err(TraceViolation::StepOutOfOrder {
                    index,
                    expected: index + 1,
                    found: step,
                });
            }
            if snap.committed_len > snap.displayed.len() {
                return Err(TraceViolation::CommittedExceedsDisplay {
                    step,
                    committed: snap.committed_len,
                    displayed: snap.displayed.len(),
                });
            }
            if snap.displayed.iter().any(|t| t.is_eos() || t.is_pad()) {
                return Err(TraceViolation::SentinelDisplayed { step });
            }
            if let Some(prev) = previous {
                if snap.committed_len < prev.committed_len {
                    return Err(TraceViolation::CommittedNonMonotone {
                        step,
                        previous: prev.committed_len,
                        current: snap.committed_len,
                    });
                }
                // Committed prefixes only ever grow, so comparing adjacent
                // snapshots covers every earlier one as well.
                let changed = (0..prev.committed_len)
                    .find(|&i| snap.displayed[i] != prev.displayed[i]);
                if let Some(i) = changed {
                    return Err(TraceViolation::CommittedTokenChanged {
                        step,
                        position: i + 1,
                    });
                }
            }
            previous = Some(snap);
        }
        if self.snapshots.last().map(|s| s.displayed.as_slice())
            != Some(self.final_output.tokens())
        {
            return Err(TraceViolation::FinalOutputMismatch);
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the revisable-window bound.
    pub fn validate_with_window(&self, window: usize) -> Result<(), TraceViolation> {
        self.validate()?;
        for snap in &self.snapshots {
            if snap.revisable_len() > window {
                return Err(TraceViolation::WindowExceeded {
                    step: snap.source_step,
                    revisable: snap.revisable_len(),
                    window,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TraceParseError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: snapshot before any header")]
    MissingHeader { line: usize },
    #[error("input contains no trace")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    source_len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotLine {
    s: usize,
    committed: usize,
    displayed: Vec<Token>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Line {
    Header(HeaderLine),
    Snapshot(SnapshotLine),
}

/// Writes a trace as JSONL: a `{"source_len":N}` header followed by one
/// `{"s":..,"committed":..,"displayed":[..]}` object per snapshot.
pub fn write_jsonl<W: Write>(trace: &CommitTrace, mut out: W) -> std::io::Result<()> {
    let header = HeaderLine {
        source_len: trace.source_len,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for snap in &trace.snapshots {
        let line = SnapshotLine {
            s: snap.source_step,
            committed: snap.committed_len,
            displayed: snap.displayed.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(trace: &CommitTrace) -> Vec<u8> {
    let mut buf = Vec::new();
    write_jsonl(trace, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Reads every trace from a JSONL stream. Each header line starts a new trace.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<CommitTrace>, TraceParseError> {
    let mut traces = Vec::new();
    let mut current: Option<(usize, Vec<Snapshot>)> = None;
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(&line).map_err(|e| TraceParseError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        match parsed {
            Line::Header(h) => {
                if let Some((len, snaps)) = current.take() {
                    traces.push(CommitTrace::from_snapshots(len, snaps));
                }
                current = Some((h.source_len, Vec::new()));
            }
            Line::Snapshot(s) => {
                let Some((_, snaps)) = current.as_mut() else {
                    return Err(TraceParseError::MissingHeader { line: line_no });
                };
                if s.displayed.iter().any(Token::is_eos) {
                    return Err(TraceParseError::Malformed {
                        line: line_no,
                        message: "EOS in displayed output".to_string(),
                    });
                }
                snaps.push(Snapshot {
                    source_step: s.s,
                    displayed: s.displayed,
                    committed_len: s.committed,
                });
            }
        }
    }
    if let Some((len, snaps)) = current {
        traces.push(CommitTrace::from_snapshots(len, snaps));
    }
    Ok(traces)
}

/// Parses exactly one trace.
pub fn from_jsonl(bytes: &[u8]) -> Result<CommitTrace, TraceParseError> {
    let mut traces = read_jsonl(bytes)?;
    match traces.len() {
        0 => Err(TraceParseError::Empty),
        1 => Ok(traces.pop().unwrap()),
        n => Err(TraceParseError::Malformed {
            line: 1,
            message: format!("expected one trace, found {n}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(words: &str) -> Vec<Token> {
        tokenize(words).unwrap()
    }

    fn snap(s: usize, words: &str, committed: usize) -> Snapshot {
        Snapshot {
            source_step: s,
            displayed: toks(words),
            committed_len: committed,
        }
    }

    #[test]
    fn token_rules() {
        assert_eq!(Token::new(""), Err(TokenError::Empty));
        assert!(matches!(Token::new("a b"), Err(TokenError::Whitespace(_))));
        assert!(matches!(Token::new("<eos>"), Err(TokenError::Reserved(_))));
        assert!(matches!(Token::new("<pad>"), Err(TokenError::Reserved(_))));
        assert!(Token::parse("<eos>").unwrap().is_eos());
        assert!(Token::new("<eos>x").is_ok());
        assert!(Token::new("a").unwrap() < Token::new("b").unwrap());
    }

    #[test]
    fn sentence_eos_only_last() {
        let a = Token::new("a").unwrap();
        assert!(Sentence::new(vec![a.clone(), Token::eos()]).is_ok());
        assert_eq!(
            Sentence::new(vec![Token::eos(), a]),
            Err(TokenError::InteriorEos)
        );
    }

    #[test]
    fn validate_monotone_append() {
        let trace = CommitTrace::from_snapshots(2, vec![snap(1, "A", 1), snap(2, "A B", 2)]);
        assert_eq!(trace.validate(), Ok(()));
    }

    #[test]
    fn validate_committed_token_changed() {
        let trace = CommitTrace::from_snapshots(2, vec![snap(1, "A", 1), snap(2, "C B", 2)]);
        let err = trace.validate().unwrap_err();
        assert_eq!(
            err,
            TraceViolation::CommittedTokenChanged {
                step: 2,
                position: 1
            }
        );
        assert!(err.to_string().contains("committed token changed"));
    }

    #[test]
    fn validate_committed_len_decreasing() {
        let trace = CommitTrace::from_snapshots(2, vec![snap(1, "A B", 2), snap(2, "A B", 1)]);
        let err = trace.validate().unwrap_err();
        assert!(matches!(err, TraceViolation::CommittedNonMonotone { .. }));
        assert!(err.to_string().contains("committed_len non-monotone"));
    }

    #[test]
    fn validate_structure() {
        let short = CommitTrace::from_snapshots(3, vec![snap(1, "A", 1)]);
        assert!(matches!(
            short.validate(),
            Err(TraceViolation::SnapshotCount { .. })
        ));
        let order = CommitTrace::from_snapshots(2, vec![snap(2, "A", 1), snap(1, "A", 1)]);
        assert!(matches!(
            order.validate(),
            Err(TraceViolation::StepOutOfOrder { .. })
        ));
        let over = CommitTrace::from_snapshots(1, vec![snap(1, "A", 2)]);
        assert!(matches!(
            over.validate(),
            Err(TraceViolation::CommittedExceedsDisplay { .. })
        ));
        let mut fin = CommitTrace::from_snapshots(1, vec![snap(1, "A", 1)]);
        fin.final_output = Sentence::parse("B").unwrap();
        assert_eq!(fin.validate(), Err(TraceViolation::FinalOutputMismatch));
    }

    #[test]
    fn window_bound() {
        let trace = CommitTrace::from_snapshots(2, vec![snap(1, "A B C", 0), snap(2, "A B C", 3)]);
        assert!(trace.validate().is_ok());
        assert!(trace.validate_with_window(3).is_ok());
        assert!(matches!(
            trace.validate_with_window(2),
            Err(TraceViolation::WindowExceeded { step: 1, .. })
        ));
    }

    #[test]
    fn jsonl_empty_display() {
        let trace = CommitTrace::from_snapshots(2, vec![snap(1, "", 0), snap(2, "A", 1)]);
        let text = String::from_utf8(to_jsonl(&trace)).unwrap();
        assert_eq!(
            text,
            "{\"source_len\":2}\n{\"s\":1,\"committed\":0,\"displayed\":[]}\n\
             {\"s\":2,\"committed\":1,\"displayed\":[\"A\"]}\n"
        );
    }

    #[test]
    fn jsonl_round_trip_is_byte_stable() {
        let trace = CommitTrace::from_snapshots(
            3,
            vec![snap(1, "A", 0), snap(2, "A B", 1), snap(3, "A B C", 3)],
        );
        let first = to_jsonl(&trace);
        let parsed = from_jsonl(&first).unwrap();
        assert_eq!(parsed, trace);
        assert_eq!(to_jsonl(&parsed), first);
    }

    #[test]
    fn jsonl_multibyte() {
        let trace = CommitTrace::from_snapshots(1, vec![snap(1, "协议 Ünïcødé 🙂", 3)]);
        let parsed = from_jsonl(&to_jsonl(&trace)).unwrap();
        assert_eq!(parsed, trace);
    }

    #[test]
    fn jsonl_errors_carry_line_numbers() {
        let bad = b"{\"source_len\":1}\n{\"s\":1,\"committed\":0,\"displayed\":[1]}\n";
        match from_jsonl(bad) {
            Err(TraceParseError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let headless = b"{\"s\":1,\"committed\":0,\"displayed\":[]}\n";
        assert!(matches!(
            from_jsonl(headless),
            Err(TraceParseError::MissingHeader { line: 1 })
        ));
        assert!(matches!(from_jsonl(b""), Err(TraceParseError::Empty)));
        let garbage = b"{\"source_len\":1}\nnot json\n";
        assert!(matches!(
            from_jsonl(garbage),
            Err(TraceParseError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn jsonl_multiple_traces() {
        let a = CommitTrace::from_snapshots(1, vec![snap(1, "A", 1)]);
        let b = CommitTrace::from_snapshots(2, vec![snap(1, "", 0), snap(2, "B C", 2)]);
        let mut buf = to_jsonl(&a);
        buf.extend(to_jsonl(&b));
        let traces = read_jsonl(&buf[..]).unwrap();
        assert_eq!(traces, vec![a, b]);
    }
}
