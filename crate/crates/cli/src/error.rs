use std::fmt;

use lmrescore::decoder::DecodeError;
use lmrescore::formats::FormatError;
use lmrescore::metrics::MetricError;
use lmrescore::rescorer::RescoreError;
use lmrescore::scoring::{NGramError, PerplexityError, ScorerError};
use lmrescore::tuner::TuneError;
use lmrescore::LatticeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Scorer,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Scorer => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Data => "data",
            Kind::Scorer => "scorer",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Usage, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Data, anyhow::anyhow!("{msg}"))
    }

    /// The error chain on one line, skipping causes already quoted by the
    /// layer above.
    pub fn message(&self) -> String {
        let mut out = String::new();
        for cause in self.error.chain() {
            let text = cause.to_string();
            if out.contains(&text) {
                continue;
            }
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        out.replace('\n', " ")
    }
}

/// Library errors know which exit code they map to.
pub trait Classified: std::error::Error + Send + Sync + 'static {
    fn kind(&self) -> Kind;
}

impl<E: Classified> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::new(e.kind(), e)
    }
}

impl Classified for ScorerError {
    fn kind(&self) -> Kind {
        Kind::Scorer
    }
}

impl Classified for PerplexityError {
    fn kind(&self) -> Kind {
        match self {
            PerplexityError::NoWords => Kind::Data,
            PerplexityError::Scorer(_) => Kind::Scorer,
        }
    }
}

impl Classified for NGramError {
    fn kind(&self) -> Kind {
        match self {
            NGramError::ZeroOrder => Kind::Usage,
            _ => Kind::Data,
        }
    }
}

impl Classified for DecodeError {
    fn kind(&self) -> Kind {
        match self {
            DecodeError::Scorer(_) => Kind::Scorer,
            DecodeError::ZeroBeam
            | DecodeError::ZeroContext
            | DecodeError::LmOrderTooHigh { .. }
            | DecodeError::InvalidConfig(_) => Kind::Usage,
            _ => Kind::Data,
        }
    }
}

impl Classified for RescoreError {
    fn kind(&self) -> Kind {
        match self {
            RescoreError::Scorer { .. } | RescoreError::ScoreCount { .. } => Kind::Scorer,
            RescoreError::InvalidParams(_) => Kind::Usage,
            RescoreError::Lattice(_) => Kind::Data,
        }
    }
}

impl Classified for MetricError {
    fn kind(&self) -> Kind {
        match self {
            MetricError::InvalidFraction(_) => Kind::Usage,
            _ => Kind::Data,
        }
    }
}

impl Classified for TuneError {
    fn kind(&self) -> Kind {
        match self {
            TuneError::InvalidGrid(_) => Kind::Usage,
            TuneError::Rescore(e) => e.kind(),
            TuneError::Metric(e) => e.kind(),
            TuneError::EmptyDevSet | TuneError::ThreadPool(_) => Kind::Data,
        }
    }
}

impl Classified for FormatError {
    fn kind(&self) -> Kind {
        Kind::Data
    }
}

impl Classified for LatticeError {
    fn kind(&self) -> Kind {
        Kind::Data
    }
}

pub trait Context<T> {
    /// Prefixes the error message, keeping its kind.
    fn context(self, what: impl fmt::Display) -> Result<T, Failure>;
}

impl<T, E: Into<Failure>> Context<T> for Result<T, E> {
    fn context(self, what: impl fmt::Display) -> Result<T, Failure> {
        self.map_err(|e| {
            let f: Failure = e.into();
            Failure::new(f.kind, f.error.context(what.to_string()))
        })
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;
