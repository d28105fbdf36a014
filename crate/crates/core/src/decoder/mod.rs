//! Frame-synchronous beam search over synthetic emissions, producing
//! trie-shaped or state-merged segment lattices.

mod emissions;
mod label_lm;
mod search;
pub mod synth;
mod trace;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::lattice::{Lattice, Utterance};
use crate::rescorer::nbest;
use crate::scoring::{Scorer, ScorerError};

pub use emissions::{log_sum_exp, EmissionMatrix, EmissionRecord};
pub use label_lm::LabelLm;
pub use trace::{build_lattice, BeamTrace, Survivor, TraceEdge};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("segment has no frames")]
    NoFrames,
    #[error("beam size must be at least 1")]
    ZeroBeam,
    #[error("label context must be at least 1")]
    ZeroContext,
    #[error("label LM of order {order} needs more history than the label context of {context}")]
    LmOrderTooHigh { order: usize, context: usize },
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
    #[error("invalid emissions: {0}")]
    InvalidEmissions(String),
    #[error("invalid label LM: {0}")]
    InvalidLabelLm(String),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("trace has no surviving hypotheses")]
    EmptyTrace,
    #[error("every hypothesis has zero probability at frame {frame}")]
    NoHypotheses { frame: usize },
    #[error("utterance has no segments")]
    NoSegments,
    #[error("fusion scorer: {0}")]
    Scorer(#[from] ScorerError),
}

/// External LM applied during search: each emitted token adds
/// `weight * (S(prefix + token) - S(prefix)) - ilm_weight * ilm(token)`.
#[derive(Clone)]
pub struct Fusion {
    pub scorer: Arc<dyn Scorer>,
    pub weight: f64,
    pub ilm_weight: f64,
}

impl fmt::Debug for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Fusion")
            .field("scorer", &self.scorer.name())
            .field("weight", &self.weight)
            .field("ilm_weight", &self.ilm_weight)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    pub beam_size: usize,
    pub label_context: usize,
    /// ignored when `fusion` is set
    pub merge_states: bool,
    pub label_lm_weight: f64,
    pub fusion: Option<Fusion>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            beam_size: 8,
            label_context: 2,
            merge_states: true,
            label_lm_weight: 1.0,
            fusion: None,
        }
    }
}

impl DecoderConfig {
    /// Whether lattices will actually be built with merged states.
    pub fn merges(&self) -> bool {
        self.merge_states && self.fusion.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDecodeResult {
    pub lattice: Lattice,
    pub one_best: Vec<String>,
    pub one_best_score: f64,
}

/// Decodes one segment and also returns the search trace, from which
/// lattices of either topology can be built.
pub fn decode_segment_traced(
    emissions: &EmissionMatrix,
    label_lm: &LabelLm,
    config: &DecoderConfig,
    carried_context: &[String],
    segment_id: &str,
) -> Result<(SegmentDecodeResult, BeamTrace), DecodeError> {
    let trace = search::beam_search(emissions, label_lm, config, carried_context)?;
    let lattice = build_lattice(&trace, config.merges(), segment_id)?;
    let best = nbest(&lattice, 1)
        .expect("decoder lattices are valid")
        .into_iter()
        .next()
        .expect("a lattice has at least one path");
    let result = SegmentDecodeResult {
        lattice,
        one_best: best.tokens,
        one_best_score: best.hat,
    };
    Ok((result, trace))
}

pub fn decode_segment(
    emissions: &EmissionMatrix,
    label_lm: &LabelLm,
    config: &DecoderConfig,
    carried_context: &[String],
    segment_id: &str,
) -> Result<SegmentDecodeResult, DecodeError> {
    decode_segment_traced(emissions, label_lm, config, carried_context, segment_id).map(|(r, _)| r)
}

/// Decodes segments in order; each segment's label-LM and fusion history
/// is the running 1-best of all earlier segments. Segment ids are `s0`,
/// `s1`, and so on.
pub fn decode_utterance(
    segments: &[EmissionMatrix],
    label_lm: &LabelLm,
    config: &DecoderConfig,
    utterance_id: &str,
) -> Result<(Utterance, Vec<SegmentDecodeResult>), DecodeError> {
    if segments.is_empty() {
        return Err(DecodeError::NoSegments);
    }
    let mut carried: Vec<String> = Vec::new();
    let mut results = Vec::with_capacity(segments.len());
    for (i, em) in segments.iter().enumerate() {
        let r = decode_segment(em, label_lm, config, &carried, &format!("s{i}"))?;
        carried.extend(r.one_best.iter().cloned());
        results.push(r);
    }
    let utt = Utterance {
        utterance_id: utterance_id.to_owned(),
        reference: None,
        segments: results.iter().map(|r| r.lattice.clone()).collect(),
    };
    Ok((utt, results))
}
