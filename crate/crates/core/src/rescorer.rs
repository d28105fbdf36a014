//! N-best extraction and `hat - mu * ilm + nu * elm` reranking.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Lattice, LatticeError, Utterance};
use crate::scoring::{Scorer, ScorerError};

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub hat: f64,
    pub ilm: f64,
    pub elm: Option<f64>,
    pub combined: Option<f64>,
}

impl Hypothesis {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescoreParams {
    pub mu: f64,
    pub nu: f64,
    pub nbest: usize,
    pub context_segments: usize,
}

impl Default for RescoreParams {
    fn default() -> Self {
        Self {
            mu: 0.0,
            nu: 0.0,
            nbest: 16,
            context_segments: 1,
        }
    }
}

impl RescoreParams {
    pub fn validate(&self) -> Result<(), RescoreError> {
        for (name, w) in [("mu", self.mu), ("nu", self.nu)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(RescoreError::InvalidParams(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        if self.nbest == 0 {
            return Err(RescoreError::InvalidParams("nbest must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RescoreError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("invalid rescoring parameters: {0}")]
    InvalidParams(String),
    #[error("scoring {hypotheses} hypotheses of segment `{segment_id}` (context {context:?}): {source}")]
    Scorer {
        segment_id: String,
        context: String,
        hypotheses: usize,
        #[source]
        source: ScorerError,
    },
    #[error("scorer returned {got} scores for {expected} hypotheses of segment `{segment_id}`")]
    ScoreCount {
        segment_id: String,
        expected: usize,
        got: usize,
    },
}

/// `hat - mu * ilm + nu * elm`; a zero `nu` ignores `elm` entirely.
pub fn combine(hat: f64, ilm: f64, mu: f64, nu: f64, elm: f64) -> f64 {
    let mut s = hat - mu * ilm;
    if nu != 0.0 {
        s += nu * elm;
    }
    s
}

#[derive(PartialEq)]
struct Entry {
    priority: f64,
    tokens: Vec<u32>,
    ilm: f64,
    state: usize,
    hat: f64,
}

impl Eq for Entry {}

impl Ord for Entry {
    /// Max-heap order: higher priority, then smaller tokens, then higher ilm.
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.tokens.cmp(&self.tokens))
            .then_with(|| self.ilm.total_cmp(&other.ilm))
            .then_with(|| other.state.cmp(&self.state))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const TIE_EPS: f64 = 1e-9;

/// The `n` best distinct token sequences by `hat`.
///
/// Best-first search guided by the exact best completion score of every
/// state; a (state, prefix) pair is expanded only once, from its best
/// partial path. When a sequence is reachable along several paths the one
/// with the highest `hat` represents it.
pub fn nbest(lattice: &Lattice, n: usize) -> Result<Vec<Hypothesis>, LatticeError> {
    if n == 0 {
        return Err(LatticeError::ZeroLimit);
    }
    let order = lattice.topo_order()?;
    let graph = lattice.adjacency();

    let symbols: Vec<&str> = lattice
        .arcs
        .iter()
        .map(|a| a.label.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let id: HashMap<&str, u32> = symbols.iter().enumerate().map(|(i, s)| (*s, i as u32)).collect();
    let arc_sym: Vec<u32> = lattice.arcs.iter().map(|a| id[a.label.as_str()]).collect();

    let mut future = vec![f64::NEG_INFINITY; lattice.num_states];
    for &s in order.iter().rev() {
        if lattice.is_final(s) {
            future[s] = 0.0;
        }
        for &a in &graph.out[s] {
            let arc = &lattice.arcs[a];
            future[s] = future[s].max(arc.hat + future[arc.to]);
        }
    }

    let mut heap = BinaryHeap::new();
    heap.push(Entry {
        priority: future[lattice.start],
        tokens: Vec::new(),
        ilm: 0.0,
        state: lattice.start,
        hat: 0.0,
    });
    let mut expanded: HashSet<(usize, Vec<u32>)> = HashSet::new();
    let mut found: Vec<Entry> = Vec::new();
    let mut seen: HashSet<Vec<u32>> = HashSet::new();

    while let Some(e) = heap.pop() {
        if found.len() >= n && e.priority < found[n - 1].hat - TIE_EPS {
            break;
        }
        if lattice.is_final(e.state) {
            if seen.insert(e.tokens.clone()) {
                found.push(e);
                found.sort_by(|a, b| b.cmp(a));
            }
            continue;
        }
        if !expanded.insert((e.state, e.tokens.clone())) {
            continue;
        }
        for &a in &graph.out[e.state] {
            let arc = &lattice.arcs[a];
            let hat = e.hat + arc.hat;
            let mut tokens = e.tokens.clone();
            tokens.push(arc_sym[a]);
            heap.push(Entry {
                priority: hat + future[arc.to],
                tokens,
                ilm: e.ilm + arc.ilm,
                state: arc.to,
                hat,
            });
        }
    }

    found.truncate(n);
    Ok(found
        .into_iter()
        .map(|e| Hypothesis {
            tokens: e.tokens.iter().map(|&t| symbols[t as usize].to_owned()).collect(),
            hat: e.hat,
            ilm: e.ilm,
            elm: None,
            combined: None,
        })
        .collect())
}

/// Orders by descending combined score, then by token sequence.
fn rank(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| {
        let (x, y) = (a.combined.unwrap_or(a.hat), b.combined.unwrap_or(b.hat));
        y.total_cmp(&x).then_with(|| a.tokens.cmp(&b.tokens))
    });
}

/// Scores every N-best text against `context` in one request and ranks by
/// combined score.
pub fn rescore_segment<S: Scorer + ?Sized>(
    lattice: &Lattice,
    scorer: &S,
    params: &RescoreParams,
    context: &str,
) -> Result<Vec<Hypothesis>, RescoreError> {
    params.validate()?;
    let hyps = nbest(lattice, params.nbest)?;
    rescore_hypotheses(&lattice.segment_id, hyps, scorer, params, context)
}

/// Like [`rescore_segment`] for an already extracted N-best list.
pub fn rescore_hypotheses<S: Scorer + ?Sized>(
    segment_id: &str,
    mut hyps: Vec<Hypothesis>,
    scorer: &S,
    params: &RescoreParams,
    context: &str,
) -> Result<Vec<Hypothesis>, RescoreError> {
    let texts: Vec<String> = hyps.iter().map(Hypothesis::text).collect();
    let elm = scorer.score(context, &texts).map_err(|source| RescoreError::Scorer {
        segment_id: segment_id.to_owned(),
        context: context.to_owned(),
        hypotheses: texts.len(),
        source,
    })?;
    if elm.len() != hyps.len() {
        return Err(RescoreError::ScoreCount {
            segment_id: segment_id.to_owned(),
            expected: hyps.len(),
            got: elm.len(),
        });
    }
    for (h, e) in hyps.iter_mut().zip(elm) {
        h.elm = Some(e);
        h.combined = Some(combine(h.hat, h.ilm, params.mu, params.nu, e));
    }
    rank(&mut hyps);
    Ok(hyps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRescore {
    pub segment_id: String,
    pub nbest: Vec<Hypothesis>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRescore {
    pub utterance_id: String,
    pub transcript: Vec<String>,
    pub segments: Vec<SegmentRescore>,
}

impl UtteranceRescore {
    pub fn transcript_text(&self) -> String {
        self.transcript.join(" ")
    }
}

/// Rescores segments in order. Segment `s` is scored with the rescored
/// 1-best words of segments `s - m .. s` as context.
pub fn rescore_utterance<S: Scorer + ?Sized>(
    utterance: &Utterance,
    scorer: &S,
    params: &RescoreParams,
) -> Result<UtteranceRescore, RescoreError> {
    params.validate()?;
    let lists = utterance_nbest(utterance, params.nbest)?;
    rescore_nbest_lists(&utterance.utterance_id, &lists, scorer, params)
}

/// Per-segment N-best lists, extracted once so they can be rescored under
/// many parameter settings.
pub fn utterance_nbest(utterance: &Utterance, n: usize) -> Result<Vec<(String, Vec<Hypothesis>)>, RescoreError> {
    if utterance.segments.is_empty() {
        return Err(LatticeError::EmptyUtterance(utterance.utterance_id.clone()).into());
    }
    utterance
        .segments
        .iter()
        .map(|l| Ok((l.segment_id.clone(), nbest(l, n)?)))
        .collect()
}

/// [`rescore_utterance`] over precomputed `(segment_id, nbest)` lists.
pub fn rescore_nbest_lists<S: Scorer + ?Sized>(
    utterance_id: &str,
    lists: &[(String, Vec<Hypothesis>)],
    scorer: &S,
    params: &RescoreParams,
) -> Result<UtteranceRescore, RescoreError> {
    params.validate()?;
    if lists.is_empty() {
        return Err(LatticeError::EmptyUtterance(utterance_id.to_owned()).into());
    }
    let mut bests: Vec<Vec<String>> = Vec::with_capacity(lists.len());
    let mut segments = Vec::with_capacity(lists.len());
    for (s, (segment_id, hyps)) in lists.iter().enumerate() {
        let context = bests[s.saturating_sub(params.context_segments)..s]
            .iter()
            .flatten()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(" ");
        let ranked = rescore_hypotheses(segment_id, hyps.clone(), scorer, params, &context)?;
        bests.push(ranked.first().map(|h| h.tokens.clone()).unwrap_or_default());
        segments.push(SegmentRescore {
            segment_id: segment_id.clone(),
            nbest: ranked,
        });
    }
    Ok(UtteranceRescore {
        utterance_id: utterance_id.to_owned(),
        transcript: bests.concat(),
        segments,
    })
}

/// First-pass transcript: the best-`hat` path of every segment.
pub fn first_pass_transcript(utterance: &Utterance) -> Result<Vec<String>, LatticeError> {
    let mut out = Vec::new();
    for seg in &utterance.segments {
        let best = nbest(seg, 1)?;
        out.extend(best.into_iter().next().expect("valid lattice has a path").tokens);
    }
    Ok(out)
}

/// Serializes `-inf` as `null` and reads `null` back as `-inf`.
mod neg_inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::NEG_INFINITY {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NbestRecord {
    pub tokens: String,
    pub hat: f64,
    pub ilm: f64,
    #[serde(with = "neg_inf_as_null")]
    pub elm: f64,
    #[serde(with = "neg_inf_as_null")]
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub nbest: Vec<NbestRecord>,
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub utterance_id: String,
    pub transcript: String,
    pub segments: Vec<SegmentRecord>,
}

impl From<&UtteranceRescore> for TranscriptRecord {
    fn from(r: &UtteranceRescore) -> Self {
        Self {
            utterance_id: r.utterance_id.clone(),
            transcript: r.transcript_text(),
            segments: r
                .segments
                .iter()
                .map(|s| SegmentRecord {
                    segment_id: s.segment_id.clone(),
                    nbest: s
                        .nbest
                        .iter()
                        .map(|h| NbestRecord {
                            tokens: h.text(),
                            hat: h.hat,
                            ilm: h.ilm,
                            elm: h.elm.unwrap_or(f64::NEG_INFINITY),
                            combined: h.combined.unwrap_or(h.hat),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Arc;
    use crate::scoring::UniformScorer;

    fn diamond() -> Lattice {
        Lattice {
            segment_id: "d".into(),
            num_states: 3,
            start: 0,
            finals: vec![2],
            arcs: vec![
                Arc::new(0, 1, "a", -0.5, -1.0),
                Arc::new(0, 1, "b", -1.5, -0.2),
                Arc::new(1, 2, "c", -0.5, -1.0),
            ],
        }
    }

    /// Scores targets from a fixed table; unknown texts get -100.
    struct Table(Vec<(&'static str, &'static str, f64)>);

    impl Scorer for Table {
        fn name(&self) -> &str {
            "table"
        }
        fn score(&self, context: &str, targets: &[String]) -> Result<Vec<f64>, ScorerError> {
            Ok(targets
                .iter()
                .map(|t| {
                    self.0
                        .iter()
                        .find(|(c, x, _)| *c == context && x == t)
                        .map_or(-100.0, |e| e.2)
                })
                .collect())
        }
    }

    #[test]
    fn combine_arithmetic() {
        assert!((combine(-10.0, -5.0, 0.3, 0.4, -8.0) - -11.7).abs() < 1e-12);
        assert_eq!(combine(-10.0, -5.0, 0.0, 0.0, -8.0), -10.0);
        assert_eq!(combine(-10.0, -5.0, 0.0, 0.0, f64::NEG_INFINITY), -10.0);
        assert_eq!(combine(-10.0, -5.0, 0.3, 0.4, f64::NEG_INFINITY), f64::NEG_INFINITY);
    }

    #[test]
    fn nbest_of_single_path() {
        let l = Lattice::linear("l", &[("x", -1.0, -2.0), ("y", -0.5, -0.5)]);
        let h = nbest(&l, 5).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].tokens, ["x", "y"]);
        assert_eq!((h[0].hat, h[0].ilm), (-1.5, -2.5));
    }

    #[test]
    fn nbest_diamond_order() {
        let h = nbest(&diamond(), 1).unwrap();
        assert_eq!(h[0].text(), "a c");
        let h = nbest(&diamond(), 2).unwrap();
        assert_eq!(h.iter().map(Hypothesis::text).collect::<Vec<_>>(), ["a c", "b c"]);
    }

    #[test]
    fn duplicates_keep_best_instance() {
        let l = Lattice {
            segment_id: "dup".into(),
            num_states: 3,
            start: 0,
            finals: vec![2],
            arcs: vec![
                Arc::new(0, 1, "a", -1.0, -7.0),
                Arc::new(0, 2, "a", -0.5, -3.0),
                Arc::new(1, 2, "b", -1.0, 0.0),
            ],
        };
        let h = nbest(&l, 10).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!((h[0].text(), h[0].ilm), ("a".to_string(), -3.0));
    }

    #[test]
    fn empty_path_lattice() {
        let l = Lattice {
            segment_id: "e".into(),
            num_states: 1,
            start: 0,
            finals: vec![0],
            arcs: vec![],
        };
        let h = nbest(&l, 3).unwrap();
        assert_eq!(h.len(), 1);
        assert!(h[0].tokens.is_empty());
    }

    #[test]
    fn elm_overrides_first_pass() {
        // "b c" has lower hat but the external LM favours it strongly
        let scorer = Table(vec![("", "a c", -20.0), ("", "b c", -2.0)]);
        let p = RescoreParams {
            mu: 0.0,
            nu: 1.0,
            nbest: 4,
            context_segments: 0,
        };
        let r = rescore_segment(&diamond(), &scorer, &p, "").unwrap();
        assert_eq!(r[0].text(), "b c");
        assert!((r[0].combined.unwrap() - (-2.0 - 2.0)).abs() < 1e-12);
        let p0 = RescoreParams { nu: 0.0, ..p };
        assert_eq!(rescore_segment(&diamond(), &scorer, &p0, "").unwrap()[0].text(), "a c");
    }

    #[test]
    fn context_uses_previous_rescored_segments() {
        let mut s1 = Lattice::linear("s1", &[("q", -1.0, 0.0)]);
        s1.segment_id = "s1".into();
        let mut s0 = diamond();
        s0.segment_id = "s0".into();
        let utt = Utterance {
            utterance_id: "u".into(),
            reference: None,
            segments: vec![s0, s1],
        };
        let scorer = Table(vec![("", "b c", -1.0), ("", "a c", -50.0)]);
        let p = RescoreParams {
            mu: 0.0,
            nu: 1.0,
            nbest: 4,
            context_segments: 1,
        };
        let r = rescore_utterance(&utt, &scorer, &p).unwrap();
        assert_eq!(r.transcript_text(), "b c q");
        let recorded = Table(vec![("", "b c", -1.0), ("b c", "q", -0.1)]);
        let r = rescore_utterance(&utt, &recorded, &p).unwrap();
        assert_eq!(r.segments[1].nbest[0].elm, Some(-0.1));
    }

    #[test]
    fn scorer_failure_names_segment() {
        struct Broken;
        impl Scorer for Broken {
            fn name(&self) -> &str {
                "broken"
            }
            fn score(&self, _: &str, _: &[String]) -> Result<Vec<f64>, ScorerError> {
                Err(ScorerError::Backend {
                    id: 4,
                    message: "oom".into(),
                })
            }
        }
        let err = rescore_segment(&diamond(), &Broken, &RescoreParams::default(), "ctx").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`d`") && msg.contains("oom"), "{msg}");
    }

    #[test]
    fn transcript_record_round_trip() {
        let utt = Utterance {
            utterance_id: "u".into(),
            reference: None,
            segments: vec![diamond()],
        };
        let p = RescoreParams {
            nu: 0.5,
            ..RescoreParams::default()
        };
        let r = rescore_utterance(&utt, &UniformScorer::new(3), &p).unwrap();
        let mut rec = TranscriptRecord::from(&r);
        rec.segments[0].nbest[1].elm = f64::NEG_INFINITY;
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains("\"elm\":null"));
        let back: TranscriptRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
    }
}
