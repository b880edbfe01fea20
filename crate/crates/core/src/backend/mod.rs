//! Fill-mask inference contract.
//!
//! Three implementations live here: [`HttpBackend`] talks to a remote
//! inference service, [`CachedBackend`] records and replays request/response
//! pairs, and [`SyntheticBackend`] serves fixed tables for tests and demos.

mod cache;
mod http;
mod synthetic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheMode, CachedBackend};
pub use http::{HttpBackend, RetryPolicy, TOKEN_ENV_VAR};
pub use synthetic::{ContextBoost, GeneratorSpec, SyntheticBackend, SyntheticSpec, VocabEntry};

/// Slack allowed on the probability mass of one response.
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub model_id: String,
    pub mask_token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskFillRequest {
    pub text: String,
    pub top_k: usize,
}

impl MaskFillRequest {
    pub fn new(text: impl Into<String>, top_k: usize) -> Self {
        Self {
            text: text.into(),
            top_k,
        }
    }

    pub fn validate(&self, mask_token: &str) -> Result<(), BackendError> {
        if self.top_k == 0 {
            return Err(BackendError::InvalidRequest(
                "top_k must be at least 1".into(),
            ));
        }
        let n = self.text.matches(mask_token).count();
        if n != 1 {
            return Err(BackendError::InvalidRequest(format!(
                "expected exactly one '{mask_token}' in request text, found {n}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFillCandidate {
    pub token_str: String,
    pub score: f64,
}

impl MaskFillCandidate {
    pub fn new(token_str: impl Into<String>, score: f64) -> Self {
        Self {
            token_str: token_str.into(),
            score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFillResponse {
    pub model_id: String,
    pub candidates: Vec<MaskFillCandidate>,
}

impl MaskFillResponse {
    pub fn total_mass(&self) -> f64 {
        self.candidates.iter().map(|c| c.score).sum()
    }

    /// Checks the response invariants: scores in [0,1], sorted descending,
    /// at most `top_k` entries and total mass at most one.
    pub fn validate(&self, top_k: usize) -> Result<(), String> {
        if self.candidates.len() > top_k {
            return Err(format!(
                "{} candidates returned for top_k={top_k}",
                self.candidates.len()
            ));
        }
        for c in &self.candidates {
            if !(0.0..=1.0).contains(&c.score) {
                return Err(format!(
                    "score {} for '{}' outside [0,1]",
                    c.score, c.token_str
                ));
            }
        }
        if self.candidates.windows(2).any(|w| w[0].score < w[1].score) {
            return Err("candidates are not sorted by descending score".into());
        }
        let mass = self.total_mass();
        if mass > 1.0 + MASS_TOLERANCE {
            return Err(format!("candidate scores sum to {mass} > 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("invalid backend payload: {0}")]
    InvalidPayload(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache-miss: no cached response for top_k={top_k} text {text:?}")]
    CacheMiss { text: String, top_k: usize },
    #[error("cache-miss: cache holds no model descriptor")]
    DescriptorMissing,
    #[error("corrupt cache {path} line {line}: {message}")]
    CacheCorrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cache I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// A masked language model that fills one mask position.
///
/// Implementations must allow concurrent `fill_mask` calls.
pub trait FillMaskBackend: Send + Sync {
    fn describe(&self) -> Result<BackendDescriptor, BackendError>;

    fn fill_mask(&self, req: &MaskFillRequest) -> Result<MaskFillResponse, BackendError>;
}

impl<B: FillMaskBackend + ?Sized> FillMaskBackend for Box<B> {
    fn describe(&self) -> Result<BackendDescriptor, BackendError> {
        (**self).describe()
    }

    fn fill_mask(&self, req: &MaskFillRequest) -> Result<MaskFillResponse, BackendError> {
        (**self).fill_mask(req)
    }
}

impl<B: FillMaskBackend + ?Sized> FillMaskBackend for Arc<B> {
    fn describe(&self) -> Result<BackendDescriptor, BackendError> {
        (**self).describe()
    }

    fn fill_mask(&self, req: &MaskFillRequest) -> Result<MaskFillResponse, BackendError> {
        (**self).fill_mask(req)
    }
}

impl<B: FillMaskBackend + ?Sized> FillMaskBackend for &B {
    fn describe(&self) -> Result<BackendDescriptor, BackendError> {
        (**self).describe()
    }

    fn fill_mask(&self, req: &MaskFillRequest) -> Result<MaskFillResponse, BackendError> {
        (**self).fill_mask(req)
    }
}
