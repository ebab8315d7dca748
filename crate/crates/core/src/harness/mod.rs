//! Corpus handling, configuration sweeps and result tables.

mod config;
mod corpus;
mod plot;
mod serve;
mod sweep;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::decoder::DecodeError;
use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::trace::{TraceParseError, TraceViolation};

pub use config::{ModelSpec, SweepConfig, SyntheticSpec};
pub use corpus::{
    gen_synthetic_corpus, load_table, read_corpus, write_table, Corpus, SyntheticCorpus,
};
pub use plot::{emit_plot_data, read_results_csv, write_results_csv, RESULTS_HEADER};
pub use serve::serve;
pub use sweep::{
    best_beam_selection, build_model, run_sweep, RunKind, SweepOutcome, SweepPoint, SweepRow,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("configuration: {0}")]
    Config(String),
    #[error("{}:{line}: {message}", path.display())]
    Corpus {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{} has {found} lines, expected {expected}", path.display())]
    LineCountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{point}, sentence {sentence}: {source}")]
    Decode {
        point: String,
        sentence: usize,
        #[source]
        source: DecodeError,
    },
    #[error("{point}, sentence {sentence}: invalid trace: {violation}")]
    InvalidTrace {
        point: String,
        sentence: usize,
        violation: TraceViolation,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Trace(#[from] TraceParseError),
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}
