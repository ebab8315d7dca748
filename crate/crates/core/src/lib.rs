//! Simultaneous translation with opportunistic decoding and timely correction.
//!
//! The engine decodes a target sentence while the source is still arriving.
//! At every commit step it makes `n` words irreversible and additionally shows
//! up to `w` revisable words that later steps may overwrite. Each decode
//! produces a [`CommitTrace`], one snapshot of the displayed output per
//! revealed source token, which is the single input of all latency and
//! revision metrics in [`metrics`].
//!
//! Module map:
//!
//! - [`trace`]: tokens, sentences and the commit-trace data model.
//! - [`models`]: the [`IncrementalModel`] scoring interface and reference models.
//! - [`beam`]: prefix-constrained beam search.
//! - [`policy`]: READ/WRITE policies (wait-k and a confidence threshold).
//! - [`decoder`]: the opportunistic decoder and the re-translation baseline.
//! - [`metrics`]: RAL, AL, revision rate and corpus BLEU.
//! - [`harness`]: corpus generation, configuration sweeps and result tables.

pub mod beam;
pub mod decoder;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod policy;
pub mod trace;

pub use beam::{beam_advance, beam_step, Beam, Hypothesis};
pub use decoder::{
    decode_retranslation, decode_simultaneous, CommitBatch, DecodeError, DecoderConfig,
    DecoderState,
};
pub use metrics::{MetricsReport, SentenceMetrics};
pub use models::{
    full_sentence_decode, Distribution, IncrementalModel, LookaheadTransducerModel, ModelError,
    SubprocessModel,
};
pub use policy::{Policy, PolicyDecision, PolicyState, ThresholdPolicy, WaitKPolicy};
pub use trace::{CommitTrace, Sentence, Snapshot, Token, TokenError, TraceViolation};
