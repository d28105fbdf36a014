//! Second-pass language-model rescoring of ASR segment lattices.
//!
//! The pipeline: a limited-context beam search ([`decoder`]) emits one
//! [`Lattice`] per segment, optionally merging search states that share a
//! label context. [`rescorer`] extracts N-best lists and reranks them with
//! `hat - mu * ilm + nu * elm`, where the external LM score comes from any
//! [`Scorer`] and may be conditioned on previous segments' 1-best text.
//! [`tuner`] grid-searches `(mu, nu)` on a development set and [`metrics`]
//! provides WER, lattice oracle WER, path statistics and salient-term error
//! rate.

pub mod decoder;
pub mod formats;
pub mod lattice;
pub mod metrics;
pub mod rescorer;
pub mod scoring;
pub mod tuner;

pub use decoder::{decode_segment, decode_utterance, DecoderConfig, EmissionMatrix, LabelLm, SegmentDecodeResult};
pub use lattice::{concat, Arc, Lattice, LatticeError, LatticePath, Utterance, ValidationReport, Violation};
pub use metrics::{align, oracle_wer, wer, EvalReport};
pub use rescorer::{combine, nbest, rescore_segment, rescore_utterance, Hypothesis, RescoreParams};
pub use scoring::{NGramScorer, Scorer, ScorerError, UniformScorer};
pub use tuner::{apply, tune, TuneGrid, TuneResult};
