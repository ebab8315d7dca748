use std::cmp::Ordering;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::config::{ModelSpec, SweepConfig};
use super::corpus::{gen_synthetic_corpus, load_table, Corpus};
use super::plot::{emit_plot_data, write_results_csv, write_timing_csv};
use super::{io_error, HarnessError};
use crate::decoder::{
    decode_full_sentence, decode_retranslation, decode_simultaneous, DecoderConfig,
};
use crate::metrics::MetricsReport;
use crate::models::{IncrementalModel, LookaheadTransducerModel, SubprocessModel};
use crate::policy::{Policy, ThresholdPolicy, WaitKPolicy};
use crate::trace::{write_jsonl, CommitTrace, Token};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunKind {
    Policy(Policy),
    Retranslation,
    FullSentence,
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub kind: RunKind,
    /// `None` for the baselines, which have no revisable window.
    pub window: Option<usize>,
    pub beam: usize,
}

impl SweepPoint {
    pub fn policy_name(&self) -> &'static str {
        match self.kind {
            RunKind::Policy(p) => p.name(),
            RunKind::Retranslation => "retranslation",
            RunKind::FullSentence => "full_sentence",
        }
    }

    pub fn parameter(&self) -> Option<f64> {
        match self.kind {
            RunKind::Policy(p) => Some(p.parameter()),
            _ => None,
        }
    }

    /// File stem of the point's trace file.
    pub fn label(&self) -> String {
        match self.kind {
            RunKind::Policy(Policy::WaitK(p)) => {
                format!("wait_k-k{}-w{}-b{}", p.k(), self.window.unwrap_or(0), self.beam)
            }
            RunKind::Policy(Policy::Threshold(p)) => {
                format!("threshold-rho{}-w{}-b{}", p.rho(), self.window.unwrap_or(0), self.beam)
            }
            RunKind::Retranslation => format!("retranslation-b{}", self.beam),
            RunKind::FullSentence => format!("full_sentence-b{}", self.beam),
        }
    }

    /// Decodes one sentence.
    pub fn decode(
        &self,
        model: &dyn IncrementalModel,
        source: &[Token],
        length_ratio_cap: f64,
    ) -> Result<CommitTrace, crate::decoder::DecodeError> {
        match self.kind {
            RunKind::Policy(policy) => {
                let config = DecoderConfig {
                    window: self.window.unwrap_or(0),
                    beam: self.beam,
                    length_ratio_cap,
                };
                decode_simultaneous(model, &policy, source, &config)
            }
            RunKind::Retranslation => {
                decode_retranslation(model, source, self.beam, length_ratio_cap)
            }
            RunKind::FullSentence => {
                decode_full_sentence(model, source, self.beam, length_ratio_cap)
            }
        }
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub policy: String,
    pub parameter: Option<f64>,
    pub window: Option<usize>,
    pub beam: usize,
    pub bleu: f64,
    pub ral: f64,
    pub al: f64,
    pub revision_rate: f64,
    /// Mean wall-clock decode time per sentence; absent for rows read back
    /// from a results file.
    pub mean_sentence_ms: Option<f64>,
}

impl SweepRow {
    /// Ordering by (policy, k_or_rho, w, b); missing values sort first.
    pub fn table_order(&self, other: &Self) -> Ordering {
        let opt_f = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (a, b) => a.is_some().cmp(&b.is_some()),
        };
        self.policy
            .cmp(&other.policy)
            .then_with(|| opt_f(self.parameter, other.parameter))
            .then_with(|| self.window.cmp(&other.window))
            .then_with(|| self.beam.cmp(&other.beam))
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub corpus: Corpus,
    pub results_path: PathBuf,
    pub trace_dir: PathBuf,
}

/// Instantiates the configured model. `table_override` supplies the table of
/// a freshly generated corpus when `spec` names none.
pub fn build_model(
    spec: &ModelSpec,
    corpus: &Corpus,
    table_override: Option<&Path>,
) -> Result<Box<dyn IncrementalModel>, HarnessError> {
    Ok(match spec {
        ModelSpec::Echo => Box::new(LookaheadTransducerModel::echo(&corpus.source_vocabulary())?),
        ModelSpec::Lookahead {
            table,
            lookahead,
            sharpness,
            default_token,
            anticipation,
        } => {
            let path = table
                .as_deref()
                .or(table_override)
                .ok_or_else(|| HarnessError::Config("lookahead model needs a table".into()))?;
            let table = load_table(path)?;
            let default = Token::new(default_token)
                .map_err(|e| HarnessError::Config(format!("default_token: {e}")))?;
            let model = LookaheadTransducerModel::with_anticipation(
                table,
                *lookahead,
                anticipation.unwrap_or(lookahead + 1),
                default,
                *sharpness,
            )?;
            Box::new(model)
        }
        ModelSpec::Subprocess {
            command,
            timeout_secs,
            top_k,
        } => {
            let mut model = SubprocessModel::spawn(command)?;
            if let Some(secs) = timeout_secs {
                if !(secs.is_finite() && *secs > 0.0) {
                    return Err(HarnessError::Config("timeout_secs must be positive".into()));
                }
                model = model.with_timeout(Duration::from_secs_f64(*secs));
            }
            if let Some(k) = top_k {
                model = model.with_top_k(*k);
            }
            Box::new(model)
        }
    })
}

fn grid(config: &SweepConfig) -> Result<Vec<SweepPoint>, HarnessError> {
    let mut policies = Vec::new();
    for &k in &config.k {
        policies.push(Policy::WaitK(WaitKPolicy::new(k).map_err(HarnessError::Config)?));
    }
    for &rho in &config.rho {
        policies.push(Policy::Threshold(
            ThresholdPolicy::new(rho).map_err(HarnessError::Config)?,
        ));
    }
    let mut points = Vec::new();
    for policy in policies {
        for &w in &config.window {
            for &b in &config.beam {
                points.push(SweepPoint {
                    kind: RunKind::Policy(policy),
                    window: Some(w),
                    beam: b,
                });
            }
        }
    }
    for (flag, kind) in [
        (config.include_retranslation, RunKind::Retranslation),
        (config.include_fullsentence, RunKind::FullSentence),
    ] {
        if flag {
            points.extend(config.beam.iter().map(|&beam| SweepPoint {
                kind,
                window: None,
                beam,
            }));
        }
    }
    Ok(points)
}

/// Decodes every sentence of `corpus` at `point`, in parallel, and checks
/// each trace.
pub fn decode_corpus(
    model: &dyn IncrementalModel,
    point: &SweepPoint,
    corpus: &Corpus,
    length_ratio_cap: f64,
) -> Result<(Vec<CommitTrace>, Duration), HarnessError> {
    let results: Vec<Result<(CommitTrace, Duration), HarnessError>> = corpus
        .sources
        .par_iter()
        .enumerate()
        .map(|(i, source)| {
            let start = Instant::now();
            let trace = point
                .decode(model, source, length_ratio_cap)
                .map_err(|source| HarnessError::Decode {
                    point: point.label(),
                    sentence: i + 1,
                    source,
                })?;
            let elapsed = start.elapsed();
            let checked = match point.window {
                Some(w) => trace.validate_with_window(w),
                None => trace.validate(),
            };
            checked.map_err(|violation| HarnessError::InvalidTrace {
                point: point.label(),
                sentence: i + 1,
                violation,
            })?;
            Ok((trace, elapsed))
        })
        .collect();
    let mut traces = Vec::with_capacity(results.len());
    let mut total = Duration::ZERO;
    for r in results {
        let (trace, elapsed) = r?;
        traces.push(trace);
        total += elapsed;
    }
    Ok((traces, total))
}

fn write_traces(path: &Path, traces: &[CommitTrace]) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(io_error(path))?;
    let mut out = BufWriter::new(file);
    for trace in traces {
        write_jsonl(trace, &mut out).map_err(io_error(path))?;
    }
    std::io::Write::flush(&mut out).map_err(io_error(path))
}

/// Runs every configured grid point and baseline over the corpus.
///
/// Writes `traces/<point>.jsonl`, `results.csv`, `timing.csv` and the plot
/// tables into the output directory. Everything except `timing.csv` is a
/// deterministic function of the configuration.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutcome, HarnessError> {
    config.validate()?;
    let points = grid(config)?;
    let out = &config.output;
    let trace_dir = out.join("traces");
    fs::create_dir_all(&trace_dir).map_err(io_error(&trace_dir))?;

    let (corpus, table) = match &config.synthetic {
        Some(syn) => {
            let generated = gen_synthetic_corpus(
                &out.join("corpus"),
                config.seed,
                syn.sentences,
                (syn.min_len, syn.max_len),
                &syn.alphabet,
            )?;
            (generated.corpus, Some(generated.table_path))
        }
        None => {
            let source = config.source.as_ref().expect("validated");
            (Corpus::load(source, &config.references)?, None)
        }
    };
    let model = build_model(&config.model, &corpus, table.as_deref())?;

    let mut rows = Vec::with_capacity(points.len());
    for point in &points {
        let (traces, elapsed) =
            decode_corpus(model.as_ref(), point, &corpus, config.length_ratio_cap)?;
        write_traces(&trace_dir.join(format!("{}.jsonl", point.label())), &traces)?;
        let report = MetricsReport::from_traces(&traces, Some(&corpus.references))?;
        rows.push(SweepRow {
            policy: point.policy_name().to_string(),
            parameter: point.parameter(),
            window: point.window,
            beam: point.beam,
            bleu: report.bleu.expect("references supplied"),
            ral: report.ral,
            al: report.al,
            revision_rate: report.revision_rate,
            mean_sentence_ms: Some(elapsed.as_secs_f64() * 1e3 / corpus.len() as f64),
        });
    }
    rows.sort_by(SweepRow::table_order);

    let results_path = out.join("results.csv");
    write_results_csv(&results_path, &rows)?;
    write_timing_csv(&out.join("timing.csv"), &rows, corpus.len())?;
    emit_plot_data(&rows, out)?;
    Ok(SweepOutcome {
        rows,
        corpus,
        results_path,
        trace_dir,
    })
}

/// Picks one beam width per (policy, parameter, window): highest BLEU, then
/// lower RAL, then the smaller beam.
pub fn best_beam_selection(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut sorted: Vec<&SweepRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.table_order(b));
    let same_group = |a: &SweepRow, b: &SweepRow| {
        a.policy == b.policy
            && a.parameter.map(f64::to_bits) == b.parameter.map(f64::to_bits)
            && a.window == b.window
    };
    let mut chosen: Vec<SweepRow> = Vec::new();
    for row in sorted {
        match chosen.last_mut() {
            Some(best) if same_group(best, row) => {
                let better = row
                    .bleu
                    .total_cmp(&best.bleu)
                    .then_with(|| best.ral.total_cmp(&row.ral))
                    .then_with(|| best.beam.cmp(&row.beam));
                if better == Ordering::Greater {
                    *best = row.clone();
                }
            }
            _ => chosen.push(row.clone()),
        }
    }
    chosen
}
