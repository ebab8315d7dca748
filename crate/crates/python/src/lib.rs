//! Python bindings: models, simultaneous decoding, traces and metrics.

use std::collections::BTreeMap;
use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use opportune_core::decoder::decode_full_sentence;
use opportune_core::metrics::{self, MetricsReport};
use opportune_core::models::complete_source;
use opportune_core::trace::{from_jsonl, to_jsonl};
use opportune_core::{
    decode_retranslation, decode_simultaneous, full_sentence_decode, CommitTrace, DecoderConfig,
    IncrementalModel, LookaheadTransducerModel, Policy, SubprocessModel, Token,
};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_error(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn tokens(words: &[String]) -> PyResult<Vec<Token>> {
    words
        .iter()
        .map(|w| Token::parse(w).map_err(value_error))
        .collect()
}

fn words(tokens: &[Token]) -> Vec<String> {
    tokens.iter().map(|t| t.as_str().to_string()).collect()
}

/// Deterministic word-for-word transducer with a lookahead delay.
#[pyclass(name = "LookaheadModel", module = "opportune", frozen)]
struct PyLookahead {
    inner: LookaheadTransducerModel,
}

#[pymethods]
impl PyLookahead {
    #[new]
    #[pyo3(signature = (table, lookahead, sharpness, default_token = "<unk>", anticipation = None))]
    fn new(
        table: BTreeMap<String, String>,
        lookahead: usize,
        sharpness: f64,
        default_token: &str,
        anticipation: Option<usize>,
    ) -> PyResult<Self> {
        let table = table
            .iter()
            .map(|(k, v)| Ok((Token::new(k).map_err(value_error)?, Token::new(v).map_err(value_error)?)))
            .collect::<PyResult<_>>()?;
        let default = Token::new(default_token).map_err(value_error)?;
        let inner = LookaheadTransducerModel::with_anticipation(
            table,
            lookahead,
            anticipation.unwrap_or(lookahead + 1),
            default,
            sharpness,
        )
        .map_err(value_error)?;
        Ok(PyLookahead { inner })
    }

    /// Identity model over `alphabet`.
    #[staticmethod]
    fn echo(alphabet: Vec<String>) -> PyResult<Self> {
        let inner = LookaheadTransducerModel::echo(&tokens(&alphabet)?).map_err(value_error)?;
        Ok(PyLookahead { inner })
    }

    /// Next-token distribution as `(token, probability)` pairs, best first.
    #[pyo3(signature = (source, target, complete = false))]
    fn distribution(
        &self,
        source: Vec<String>,
        target: Vec<String>,
        complete: bool,
    ) -> PyResult<Vec<(String, f64)>> {
        model_distribution(&self.inner, &source, &target, complete)
    }

    fn translate(&self, source: Vec<String>) -> PyResult<Vec<String>> {
        Ok(words(&self.inner.translate(&tokens(&source)?).map_err(value_error)?))
    }

    fn vocabulary(&self) -> Vec<String> {
        words(&self.inner.vocabulary())
    }

    #[getter]
    fn lookahead(&self) -> usize {
        self.inner.lookahead()
    }

    #[getter]
    fn sharpness(&self) -> f64 {
        self.inner.sharpness()
    }

    fn __repr__(&self) -> String {
        format!(
            "LookaheadModel(entries={}, lookahead={}, sharpness={})",
            self.inner.table().len(),
            self.inner.lookahead(),
            self.inner.sharpness()
        )
    }
}

/// Model served by an external process over newline-delimited JSON.
#[pyclass(name = "SubprocessModel", module = "opportune", frozen)]
struct PySubprocess {
    inner: SubprocessModel,
}

#[pymethods]
impl PySubprocess {
    #[new]
    #[pyo3(signature = (command, timeout = 10.0, top_k = 16))]
    fn new(command: &str, timeout: f64, top_k: usize) -> PyResult<Self> {
        if !(timeout.is_finite() && timeout > 0.0) {
            return Err(value_error("timeout must be positive"));
        }
        let inner = SubprocessModel::spawn(command)
            .map_err(runtime_error)?
            .with_timeout(Duration::from_secs_f64(timeout))
            .with_top_k(top_k);
        Ok(PySubprocess { inner })
    }

    #[pyo3(signature = (source, target, complete = false))]
    fn distribution(
        &self,
        source: Vec<String>,
        target: Vec<String>,
        complete: bool,
    ) -> PyResult<Vec<(String, f64)>> {
        model_distribution(&self.inner, &source, &target, complete)
    }
}

fn model_distribution(
    model: &dyn IncrementalModel,
    source: &[String],
    target: &[String],
    complete: bool,
) -> PyResult<Vec<(String, f64)>> {
    let mut src = tokens(source)?;
    if complete {
        src = complete_source(&src);
    }
    let dist = model
        .next_distribution(&src, &tokens(target)?)
        .map_err(runtime_error)?;
    Ok(dist.iter().map(|(t, p)| (t.as_str().to_string(), p)).collect())
}

#[derive(FromPyObject)]
enum AnyModel<'py> {
    Lookahead(PyRef<'py, PyLookahead>),
    Subprocess(PyRef<'py, PySubprocess>),
}

impl AnyModel<'_> {
    fn as_dyn(&self) -> &dyn IncrementalModel {
        match self {
            AnyModel::Lookahead(m) => &m.inner,
            AnyModel::Subprocess(m) => &m.inner,
        }
    }
}

/// Per-step display record of one decode.
#[pyclass(name = "Trace", module = "opportune", frozen)]
struct PyTrace {
    inner: CommitTrace,
}

#[pymethods]
impl PyTrace {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        let inner = from_jsonl(text.as_bytes()).map_err(value_error)?;
        Ok(PyTrace { inner })
    }

    fn to_jsonl(&self) -> String {
        String::from_utf8(to_jsonl(&self.inner)).expect("JSONL is UTF-8")
    }

    #[getter]
    fn source_len(&self) -> usize {
        self.inner.source_len
    }

    #[getter]
    fn final_output(&self) -> Vec<String> {
        words(self.inner.final_output.tokens())
    }

    /// `(source_step, committed_len, displayed)` for every step.
    #[getter]
    fn snapshots(&self) -> Vec<(usize, usize, Vec<String>)> {
        self.inner
            .snapshots
            .iter()
            .map(|s| (s.source_step, s.committed_len, words(&s.displayed)))
            .collect()
    }

    /// Raises `ValueError` naming the first broken invariant.
    #[pyo3(signature = (window = None))]
    fn validate(&self, window: Option<usize>) -> PyResult<()> {
        match window {
            Some(w) => self.inner.validate_with_window(w),
            None => self.inner.validate(),
        }
        .map_err(value_error)
    }

    fn ral(&self) -> f64 {
        metrics::ral(&self.inner)
    }

    fn al(&self) -> f64 {
        metrics::al(&self.inner)
    }

    fn revision_rate(&self) -> f64 {
        metrics::revision_rate(&self.inner)
    }

    /// `(lr, lr_bar, tau, ratio)`.
    fn last_revision(&self) -> (Vec<usize>, Vec<usize>, usize, f64) {
        let p = metrics::last_revision(&self.inner);
        (p.lr, p.lr_bar, p.tau, p.ratio)
    }

    fn __len__(&self) -> usize {
        self.inner.snapshots.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trace(source_len={}, final_output={:?})",
            self.inner.source_len,
            self.inner.final_output.to_string()
        )
    }
}

fn run_policy(
    py: Python<'_>,
    model: &AnyModel<'_>,
    source: &[String],
    policy: Policy,
    window: usize,
    beam: usize,
) -> PyResult<PyTrace> {
    let src = tokens(source)?;
    let model = model.as_dyn();
    let config = DecoderConfig::new(window, beam);
    let inner = py
        .detach(|| decode_simultaneous(model, &policy, &src, &config))
        .map_err(runtime_error)?;
    Ok(PyTrace { inner })
}

/// Wait-k decoding with a revisable window of `window` words.
#[pyfunction]
#[pyo3(signature = (model, source, k, window = 0, beam = 1))]
fn decode_wait_k(
    py: Python<'_>,
    model: AnyModel<'_>,
    source: Vec<String>,
    k: usize,
    window: usize,
    beam: usize,
) -> PyResult<PyTrace> {
    let policy = Policy::wait_k(k).map_err(value_error)?;
    run_policy(py, &model, &source, policy, window, beam)
}

/// Confidence-threshold decoding: write while the top probability is >= rho.
#[pyfunction]
#[pyo3(signature = (model, source, rho, window = 0, beam = 1))]
fn decode_threshold(
    py: Python<'_>,
    model: AnyModel<'_>,
    source: Vec<String>,
    rho: f64,
    window: usize,
    beam: usize,
) -> PyResult<PyTrace> {
    let policy = Policy::threshold(rho).map_err(value_error)?;
    run_policy(py, &model, &source, policy, window, beam)
}

#[pyfunction(name = "decode_retranslation")]
#[pyo3(signature = (model, source, beam = 1))]
fn py_decode_retranslation(
    py: Python<'_>,
    model: AnyModel<'_>,
    source: Vec<String>,
    beam: usize,
) -> PyResult<PyTrace> {
    let src = tokens(&source)?;
    let model = model.as_dyn();
    let inner = py
        .detach(|| decode_retranslation(model, &src, beam, 3.0))
        .map_err(runtime_error)?;
    Ok(PyTrace { inner })
}

/// Full-sentence baseline trace: empty displays until the last step.
#[pyfunction]
#[pyo3(signature = (model, source, beam = 1))]
fn decode_full(py: Python<'_>, model: AnyModel<'_>, source: Vec<String>, beam: usize) -> PyResult<PyTrace> {
    let src = tokens(&source)?;
    let model = model.as_dyn();
    let inner = py
        .detach(|| decode_full_sentence(model, &src, beam, 3.0))
        .map_err(runtime_error)?;
    Ok(PyTrace { inner })
}

#[pyfunction(name = "full_sentence_decode")]
#[pyo3(signature = (model, source, beam = 1))]
fn py_full_sentence_decode(
    py: Python<'_>,
    model: AnyModel<'_>,
    source: Vec<String>,
    beam: usize,
) -> PyResult<Vec<String>> {
    let src = tokens(&source)?;
    let model = model.as_dyn();
    let out = py
        .detach(|| full_sentence_decode(model, &src, beam))
        .map_err(runtime_error)?;
    Ok(words(&out))
}

#[pyfunction]
fn dist_padded(a: Vec<String>, b: Vec<String>) -> PyResult<usize> {
    Ok(metrics::dist_padded(&tokens(&a)?, &tokens(&b)?))
}

/// Corpus BLEU-4; `references[i]` lists every reference of hypothesis `i`.
#[pyfunction]
fn bleu(hypotheses: Vec<Vec<String>>, references: Vec<Vec<Vec<String>>>) -> PyResult<f64> {
    let hyps = hypotheses.iter().map(|h| tokens(h)).collect::<PyResult<Vec<_>>>()?;
    let refs = references
        .iter()
        .map(|set| set.iter().map(|r| tokens(r)).collect::<PyResult<Vec<_>>>())
        .collect::<PyResult<Vec<_>>>()?;
    metrics::bleu(&hyps, &refs).map_err(value_error)
}

/// Corpus metrics as a dict with keys `ral`, `al`, `revision_rate`, `bleu`
/// and `sentences`.
#[pyfunction]
#[pyo3(signature = (traces, references = None))]
fn corpus_report<'py>(
    py: Python<'py>,
    traces: Vec<PyRef<'py, PyTrace>>,
    references: Option<Vec<Vec<Vec<String>>>>,
) -> PyResult<Bound<'py, PyDict>> {
    let traces: Vec<CommitTrace> = traces.iter().map(|t| t.inner.clone()).collect();
    let refs = references
        .map(|sets| {
            sets.iter()
                .map(|set| set.iter().map(|r| tokens(r)).collect::<PyResult<Vec<_>>>())
                .collect::<PyResult<Vec<_>>>()
        })
        .transpose()?;
    let report = MetricsReport::from_traces(&traces, refs.as_deref()).map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("ral", report.ral)?;
    out.set_item("al", report.al)?;
    out.set_item("revision_rate", report.revision_rate)?;
    out.set_item("bleu", report.bleu)?;
    out.set_item("sentences", report.sentences.len())?;
    Ok(out)
}

#[pymodule]
pub fn opportune(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLookahead>()?;
    m.add_class::<PySubprocess>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(decode_wait_k, m)?)?;
    m.add_function(wrap_pyfunction!(decode_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(py_decode_retranslation, m)?)?;
    m.add_function(wrap_pyfunction!(decode_full, m)?)?;
    m.add_function(wrap_pyfunction!(py_full_sentence_decode, m)?)?;
    m.add_function(wrap_pyfunction!(dist_padded, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_report, m)?)?;
    Ok(())
}
