//! Latency, revision and quality metrics over commit traces.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::trace::{CommitTrace, Token};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("empty hypothesis corpus")]
    EmptyCorpus,
    #[error("{hypotheses} hypotheses but {references} reference sets")]
    CountMismatch {
        hypotheses: usize,
        references: usize,
    },
    #[error("sentence {index} has no references")]
    EmptyReferences { index: usize },
}

/// Last-revision steps of every final output position.
#[derive(Debug, Clone, PartialEq)]
pub struct LastRevisionProfile {
    /// `lr[t-1]` is the last source step at which position `t` changed.
    pub lr: Vec<usize>,
    /// Running maximum of `lr`.
    pub lr_bar: Vec<usize>,
    /// Cut-off: first `t` with `lr_bar(t) = |x|`, else the output length.
    pub tau: usize,
    /// Output length over source length.
    pub ratio: f64,
}

fn changed(prev: &[Token], cur: &[Token], i: usize) -> bool {
    match (prev.get(i), cur.get(i)) {
        (_, None) => false,
        (None, Some(_)) => true,
        (Some(a), Some(b)) => a != b,
    }
}

fn cutoff(clock: &[usize], source_len: usize) -> usize {
    clock
        .iter()
        .position(|&s| s == source_len)
        .map_or(clock.len(), |i| i + 1)
}

/// Average lag of `clock` behind the ideal schedule `(t-1)/r`, up to `tau`.
fn average_lag(clock: &[usize], tau: usize, ratio: f64) -> f64 {
    if tau == 0 {
        return 0.0;
    }
    let sum: f64 = clock[..tau]
        .iter()
        .enumerate()
        .map(|(i, &s)| s as f64 - i as f64 / ratio)
        .sum();
    sum / tau as f64
}

/// Computes LR and its monotone closure. Appearance of a position counts as
/// a change, and the search range includes the final step, so words first
/// shown at `s = |x|` get `LR = |x|`.
pub fn last_revision(trace: &CommitTrace) -> LastRevisionProfile {
    let n = trace.source_len;
    let out_len = trace.final_output.len();
    let mut lr = vec![0usize; out_len];
    for s in 1..=n.min(trace.snapshots.len()) {
        let prev = trace.displayed(s - 1);
        let cur = trace.displayed(s);
        for (i, slot) in lr.iter_mut().enumerate() {
            if changed(prev, cur, i) {
                *slot = s;
            }
        }
    }
    let lr_bar: Vec<usize> = lr
        .iter()
        .scan(0usize, |m, &v| {
            *m = (*m).max(v);
            Some(*m)
        })
        .collect();
    let tau = cutoff(&lr_bar, n);
    let ratio = if n == 0 { 0.0 } else { out_len as f64 / n as f64 };
    LastRevisionProfile {
        lr,
        lr_bar,
        tau,
        ratio,
    }
}

/// Revision-aware average lagging. An empty final output scores 0.
pub fn ral(trace: &CommitTrace) -> f64 {
    let p = last_revision(trace);
    average_lag(&p.lr_bar, p.tau, p.ratio)
}

/// Source step at which each final position is first displayed.
pub fn first_appearance(trace: &CommitTrace) -> Vec<usize> {
    let out_len = trace.final_output.len();
    let mut first = vec![trace.source_len; out_len];
    for (i, slot) in first.iter_mut().enumerate() {
        if let Some(s) = trace.snapshots.iter().position(|snap| snap.displayed.len() > i) {
            *slot = s + 1;
        }
    }
    first
}

/// Classical average lagging from first-appearance steps.
pub fn al(trace: &CommitTrace) -> f64 {
    al_from_delays(
        &first_appearance(trace),
        trace.source_len,
        trace.final_output.len(),
    )
}

/// Classical average lagging for a schedule `g(1..=|y|)`.
pub fn al_from_delays(delays: &[usize], source_len: usize, target_len: usize) -> f64 {
    if source_len == 0 || target_len == 0 {
        return 0.0;
    }
    let ratio = target_len as f64 / source_len as f64;
    let clock = &delays[..delays.len().min(target_len)];
    average_lag(clock, cutoff(clock, source_len), ratio)
}

/// Hamming distance between `a` and `b` cut or padded to `|a|` positions.
pub fn dist_padded(a: &[Token], b: &[Token]) -> usize {
    a.iter()
        .enumerate()
        .filter(|(i, x)| b.get(*i) != Some(*x))
        .count()
}

/// Numerator and denominator of the revision rate of one trace.
pub fn revision_counts(trace: &CommitTrace) -> (usize, usize) {
    let numerator = trace
        .snapshots
        .windows(2)
        .map(|w| dist_padded(&w[0].displayed, &w[1].displayed))
        .sum();
    let denominator = trace.snapshots.iter().map(|s| s.displayed.len()).sum();
    (numerator, denominator)
}

pub fn revision_rate(trace: &CommitTrace) -> f64 {
    match revision_counts(trace) {
        (_, 0) => 0.0,
        (num, den) => num as f64 / den as f64,
    }
}

fn ngram_counts(tokens: &[Token], n: usize) -> HashMap<&[Token], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 on a 0 to 100 scale.
///
/// Unigram precision is unsmoothed; orders 2 to 4 use add-one smoothing. The
/// effective reference length of a sentence is the reference length closest
/// to the hypothesis length, the shorter one on ties.
pub fn bleu<H, R>(hypotheses: &[H], references: &[Vec<R>]) -> Result<f64, MetricsError>
where
    H: AsRef<[Token]>,
    R: AsRef<[Token]>,
{
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if hypotheses.len() != references.len() {
        return Err(MetricsError::CountMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (index, (hyp, refs)) in hypotheses.iter().zip(references).enumerate() {
        let hyp = hyp.as_ref();
        if refs.is_empty() {
            return Err(MetricsError::EmptyReferences { index });
        }
        hyp_len += hyp.len();
        ref_len += refs
            .iter()
            .map(|r| r.as_ref().len())
            .min_by_key(|&len| (len.abs_diff(hyp.len()), len))
            .expect("references are non-empty");
        for n in 1..=4 {
            let mut max_ref: HashMap<&[Token], usize> = HashMap::new();
            for r in refs {
                for (gram, c) in ngram_counts(r.as_ref(), n) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            for (gram, c) in ngram_counts(hyp, n) {
                matches[n - 1] += c.min(max_ref.get(gram).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_precision = (matches[0] as f64 / totals[0] as f64).ln();
    for n in 1..4 {
        log_precision += ((matches[n] + 1) as f64 / (totals[n] + 1) as f64).ln();
    }
    let brevity = if hyp_len >= ref_len {
        0.0
    } else {
        1.0 - ref_len as f64 / hyp_len as f64
    };
    Ok(100.0 * (brevity + log_precision / 4.0).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceMetrics {
    pub source_len: usize,
    pub output_len: usize,
    pub ral: f64,
    pub al: f64,
    pub revision_numerator: usize,
    pub revision_denominator: usize,
}

impl SentenceMetrics {
    pub fn of(trace: &CommitTrace) -> Self {
        let (revision_numerator, revision_denominator) = revision_counts(trace);
        SentenceMetrics {
            source_len: trace.source_len,
            output_len: trace.final_output.len(),
            ral: ral(trace),
            al: al(trace),
            revision_numerator,
            revision_denominator,
        }
    }

    pub fn revision_rate(&self) -> f64 {
        if self.revision_denominator == 0 {
            0.0
        } else {
            self.revision_numerator as f64 / self.revision_denominator as f64
        }
    }
}

/// Corpus aggregate: mean RAL and AL, pooled revision rate, corpus BLEU.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub ral: f64,
    pub al: f64,
    pub revision_rate: f64,
    /// Present when references were supplied.
    pub bleu: Option<f64>,
    pub sentences: Vec<SentenceMetrics>,
}

impl MetricsReport {
    pub fn from_traces<R: AsRef<[Token]>>(
        traces: &[CommitTrace],
        references: Option<&[Vec<R>]>,
    ) -> Result<Self, MetricsError> {
        if traces.is_empty() {
            return Err(MetricsError::EmptyCorpus);
        }
        let sentences: Vec<SentenceMetrics> = traces.iter().map(SentenceMetrics::of).collect();
        let bleu = match references {
            Some(refs) => {
                let hyps: Vec<&[Token]> =
                    traces.iter().map(|t| t.final_output.tokens()).collect();
                Some(bleu(&hyps, refs)?)
            }
            None => None,
        };
        Ok(Self::aggregate(sentences, bleu))
    }

    pub fn aggregate(sentences: Vec<SentenceMetrics>, bleu: Option<f64>) -> Self {
        let count = sentences.len().max(1) as f64;
        let ral = sentences.iter().map(|s| s.ral).sum::<f64>() / count;
        let al = sentences.iter().map(|s| s.al).sum::<f64>() / count;
        let num: usize = sentences.iter().map(|s| s.revision_numerator).sum();
        let den: usize = sentences.iter().map(|s| s.revision_denominator).sum();
        let revision_rate = if den == 0 { 0.0 } else { num as f64 / den as f64 };
        MetricsReport {
            ral,
            al,
            revision_rate,
            bleu,
            sentences,
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sentences      {}", self.sentences.len())?;
        match self.bleu {
            Some(b) => writeln!(f, "BLEU           {b:.2}")?,
            None => writeln!(f, "BLEU           -")?,
        }
        writeln!(f, "RAL            {:.4}", self.ral)?;
        writeln!(f, "AL             {:.4}", self.al)?;
        write!(f, "revision rate  {:.4}", self.revision_rate)
    }
}
