//! External language-model scoring.
//!
//! A [`Scorer`] maps a context text and a batch of target texts to
//! `log P(target, </s> | context)` per target. The context conditions the
//! targets but is never itself scored; an empty context gives the
//! unconditional sentence score.

mod cache;
mod ngram;
pub mod protocol;

use std::time::Duration;

use thiserror::Error;

pub use cache::CachingScorer;
pub use ngram::{NGramError, NGramScorer, BOS, DISCOUNT, EOT, UNK};
pub use protocol::{ProtocolClient, ScoreRequest, ScoreResponse};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("score request has no targets")]
    EmptyTargets,
    #[error("malformed response (request {id:?}): {detail}")]
    MalformedResponse { id: Option<u64>, detail: String },
    #[error("response id {got} does not match a pending request (expected {expected})")]
    IdMismatch { expected: u64, got: u64 },
    #[error("request {id}: expected {expected} scores, got {got}")]
    LengthMismatch { id: u64, expected: usize, got: usize },
    #[error("request {id}: no response within {timeout:?}")]
    Timeout { id: u64, timeout: Duration },
    #[error("request {id}: backend error: {message}")]
    Backend { id: u64, message: String },
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("scorer connection closed while waiting for request {id}")]
    Disconnected { id: u64 },
    #[error("scorer i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// An external LM. Implementations must be safe to share across threads.
pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;

    /// Natural-log `log P(target, </s> | context)` for each target, in order.
    fn score(&self, context: &str, targets: &[String]) -> Result<Vec<f64>, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn score(&self, context: &str, targets: &[String]) -> Result<Vec<f64>, ScorerError> {
        (**self).score(context, targets)
    }
}

impl<S: Scorer + ?Sized> Scorer for std::sync::Arc<S> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn score(&self, context: &str, targets: &[String]) -> Result<Vec<f64>, ScorerError> {
        (**self).score(context, targets)
    }
}

/// Every word and end-of-text equally likely among `size` symbols.
#[derive(Debug, Clone)]
pub struct UniformScorer {
    size: usize,
}

impl UniformScorer {
    /// `size` counts the end-of-text symbol.
    pub fn new(size: usize) -> Self {
        assert!(size >= 1, "uniform scorer needs at least one symbol");
        Self { size }
    }
}

impl Scorer for UniformScorer {
    fn name(&self) -> &str {
        "uniform"
    }

    fn score(&self, _context: &str, targets: &[String]) -> Result<Vec<f64>, ScorerError> {
        if targets.is_empty() {
            return Err(ScorerError::EmptyTargets);
        }
        let per_symbol = -(self.size as f64).ln();
        Ok(targets
            .iter()
            .map(|t| (t.split_whitespace().count() + 1) as f64 * per_symbol)
            .collect())
    }
}

#[derive(Debug, Error)]
pub enum PerplexityError {
    #[error("no words to evaluate")]
    NoWords,
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

/// Negative mean log-likelihood per word, counting one end-of-text per
/// sentence. Sentences are scored independently with empty context and
/// pooled over the whole set.
pub fn log_perplexity_per_word<S: Scorer + ?Sized>(scorer: &S, texts: &[String]) -> Result<f64, PerplexityError> {
    if texts.is_empty() {
        return Err(PerplexityError::NoWords);
    }
    let words: usize = texts.iter().map(|t| t.split_whitespace().count() + 1).sum();
    let total: f64 = scorer.score("", texts)?.iter().sum();
    Ok(-total / words as f64)
}
