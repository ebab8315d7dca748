//! READ/WRITE policies.
//!
//! A policy looks at how much source has been read and how much target has
//! been written and decides whether to reveal another source token or to
//! write one more target word.

use std::fmt;

use crate::models::{IncrementalModel, ModelError};
use crate::trace::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyDecision {
    Read,
    Write,
}

/// Everything a policy may inspect when deciding.
pub struct PolicyState<'a> {
    /// Number of source tokens revealed so far.
    pub source_read: usize,
    pub source_len: usize,
    /// Consecutive WRITEs already decided in the current run.
    pub run_len: usize,
    pub model: &'a dyn IncrementalModel,
    pub source_prefix: &'a [Token],
    /// Committed target prefix, extended by greedy probes within a run.
    pub committed_prefix: &'a [Token],
}

impl PolicyState<'_> {
    pub fn written(&self) -> usize {
        self.committed_prefix.len()
    }
}

/// Read `k` tokens, then alternate one WRITE per READ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaitKPolicy {
    k: usize,
}

impl WaitKPolicy {
    pub fn new(k: usize) -> Result<Self, String> {
        if k == 0 {
            return Err("wait-k needs k >= 1".into());
        }
        Ok(WaitKPolicy { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Source tokens visible when target word `t` (1-based) is written.
    pub fn g_of(&self, t: usize, source_len: usize) -> usize {
        debug_assert!(t >= 1);
        (self.k + t - 1).min(source_len)
    }
}

/// Writes while the model's top next-token probability on the committed
/// prefix reaches `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPolicy {
    rho: f64,
    k_min: usize,
    cap: usize,
}

impl ThresholdPolicy {
    pub const DEFAULT_K_MIN: usize = 1;
    pub const DEFAULT_CAP: usize = 10;

    pub fn new(rho: f64) -> Result<Self, String> {
        Self::with_guards(rho, Self::DEFAULT_K_MIN, Self::DEFAULT_CAP)
    }

    pub fn with_guards(rho: f64, k_min: usize, cap: usize) -> Result<Self, String> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(format!("threshold {rho} must be a finite non-negative number"));
        }
        if k_min == 0 || cap == 0 {
            return Err("k_min and cap must be at least 1".into());
        }
        Ok(ThresholdPolicy { rho, k_min, cap })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn k_min(&self) -> usize {
        self.k_min
    }

    pub fn cap(&self) -> usize {
        self.cap
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    WaitK(WaitKPolicy),
    Threshold(ThresholdPolicy),
}

impl Policy {
    pub fn wait_k(k: usize) -> Result<Self, String> {
        WaitKPolicy::new(k).map(Policy::WaitK)
    }

    pub fn threshold(rho: f64) -> Result<Self, String> {
        ThresholdPolicy::new(rho).map(Policy::Threshold)
    }

    /// Policy family name as used in result tables.
    pub fn name(&self) -> &'static str {
        match self {
            Policy::WaitK(_) => "wait_k",
            Policy::Threshold(_) => "threshold",
        }
    }

    /// The policy's parameter (`k` or `rho`).
    pub fn parameter(&self) -> f64 {
        match self {
            Policy::WaitK(p) => p.k as f64,
            Policy::Threshold(p) => p.rho,
        }
    }

    pub fn decide(&self, state: &PolicyState<'_>) -> Result<PolicyDecision, ModelError> {
        let s = state.source_read;
        if s == 0 {
            return Ok(PolicyDecision::Read);
        }
        if s >= state.source_len {
            return Ok(PolicyDecision::Write);
        }
        match self {
            Policy::WaitK(p) => {
                let needed = p.g_of(state.written() + 1, state.source_len);
                Ok(if s >= needed {
                    PolicyDecision::Write
                } else {
                    PolicyDecision::Read
                })
            }
            Policy::Threshold(p) => {
                if s < p.k_min || state.run_len >= p.cap {
                    return Ok(PolicyDecision::Read);
                }
                let dist = state
                    .model
                    .next_distribution(state.source_prefix, state.committed_prefix)?;
                // A confident EOS means nothing more can be written yet.
                let (token, prob) = dist.top();
                Ok(if !token.is_eos() && prob >= p.rho {
                    PolicyDecision::Write
                } else {
                    PolicyDecision::Read
                })
            }
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::WaitK(p) => write!(f, "wait-{}", p.k),
            Policy::Threshold(p) => write!(f, "threshold-{}", p.rho),
        }
    }
}
