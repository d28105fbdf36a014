//! WER, lattice oracle WER, path statistics and salient-term error rate.
//!
//! Tokenization is whitespace splitting with optional lowercasing; no
//! other normalization is applied.

mod align;
mod salient;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::lattice::{concat, LatticeError, Utterance};

pub use align::{align, oracle_errors, oracle_wer, wer, Alignment, Edit, ErrorCounts, WerReport};
pub use salient::{salient_terms, ster, SalientTerm, SalientTermSet, SterCounts, SterReport};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no reference words")]
    NoReferenceWords,
    #[error("salient fraction {0} is outside (0, 1]")]
    InvalidFraction(f64),
    #[error("TF-IDF needs at least 2 documents, got {0}")]
    TooFewDocuments(usize),
    #[error("document `{0}` appears more than once")]
    DuplicateDocument(String),
    #[error("document `{0}` has no salient-term entry")]
    UnknownDocument(String),
    #[error("references contain no salient-term occurrences")]
    NoSalientOccurrences,
    #[error("no segments")]
    NoSegments,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|w| if lowercase { w.to_lowercase() } else { w.to_owned() })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathStats {
    pub segments: usize,
    /// exact total, in decimal
    pub total: String,
    pub mean: f64,
    /// scientific notation from 1e6 up, else one decimal
    pub rendered: String,
}

pub fn render_count(mean: f64) -> String {
    if mean >= 1e6 {
        format!("{mean:.0e}")
    } else {
        format!("{mean:.1}")
    }
}

/// Mean exact path count over every segment of every utterance.
pub fn avg_paths_per_segment(utterances: &[Utterance]) -> Result<PathStats, MetricError> {
    let mut total = BigUint::zero();
    let mut segments = 0usize;
    for u in utterances {
        for seg in &u.segments {
            total += seg.count_paths()?;
            segments += 1;
        }
    }
    if segments == 0 {
        return Err(MetricError::NoSegments);
    }
    let whole = &total / segments;
    let rest = &total % segments;
    let mean = whole.to_f64().unwrap_or(f64::INFINITY) + rest.to_f64().unwrap_or(0.0) / segments as f64;
    Ok(PathStats {
        segments,
        total: total.to_string(),
        mean,
        rendered: render_count(mean),
    })
}

/// One utterance to score.
#[derive(Debug, Clone)]
pub struct EvalItem<'a> {
    pub utterance_id: String,
    pub doc_id: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    pub lattices: Option<&'a Utterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DocumentReport {
    pub utterances: usize,
    pub counts: ErrorCounts,
    pub wer: Option<f64>,
    pub salient: Option<SterCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub utterances: usize,
    pub wer: f64,
    pub counts: ErrorCounts,
    pub oracle_wer: Option<f64>,
    pub oracle_errors: Option<usize>,
    pub ster: Option<f64>,
    pub salient: Option<SterCounts>,
    pub paths: Option<PathStats>,
    pub documents: BTreeMap<String, DocumentReport>,
}

/// Corpus metrics. Oracle WER and path statistics need lattices for every
/// item; STER needs a salient-term set.
pub fn evaluate(items: &[EvalItem<'_>], salient: Option<&SalientTermSet>) -> Result<EvalReport, MetricError> {
    let pairs: Vec<(&[String], &[String])> = items
        .iter()
        .map(|i| (i.reference.as_slice(), i.hypothesis.as_slice()))
        .collect();
    let mut counts = ErrorCounts::default();
    let mut documents: BTreeMap<String, DocumentReport> = BTreeMap::new();
    for (item, (r, h)) in items.iter().zip(&pairs) {
        let c = align(r, h).counts();
        counts.add(&c);
        let doc = documents.entry(item.doc_id.clone()).or_insert(DocumentReport {
            utterances: 0,
            counts: ErrorCounts::default(),
            wer: None,
            salient: None,
        });
        doc.utterances += 1;
        doc.counts.add(&c);
    }
    if counts.ref_words == 0 {
        return Err(MetricError::NoReferenceWords);
    }
    for doc in documents.values_mut() {
        if doc.counts.ref_words > 0 {
            doc.wer = Some(doc.counts.errors() as f64 / doc.counts.ref_words as f64);
        }
    }

    let lattices: Option<Vec<&Utterance>> = items.iter().map(|i| i.lattices).collect();
    let (oracle_errors_total, paths) = match &lattices {
        Some(utts) if !utts.is_empty() => {
            let mut e = 0;
            for (item, u) in items.iter().zip(utts) {
                e += oracle_errors(&concat(u)?, &item.reference)?;
            }
            let owned: Vec<Utterance> = utts.iter().map(|u| (*u).clone()).collect();
            (Some(e), Some(avg_paths_per_segment(&owned)?))
        }
        _ => (None, None),
    };

    let ster_report = match salient {
        Some(set) => {
            let triples: Vec<(String, Vec<String>, Vec<String>)> = items
                .iter()
                .map(|i| (i.doc_id.clone(), i.reference.clone(), i.hypothesis.clone()))
                .collect();
            let r = ster(&triples, set)?;
            for (doc, c) in &r.documents {
                if let Some(d) = documents.get_mut(doc) {
                    d.salient = Some(*c);
                }
            }
            Some(r)
        }
        None => None,
    };

    Ok(EvalReport {
        utterances: items.len(),
        wer: counts.errors() as f64 / counts.ref_words as f64,
        counts,
        oracle_wer: oracle_errors_total.map(|e| e as f64 / counts.ref_words as f64),
        oracle_errors: oracle_errors_total,
        ster: ster_report.as_ref().map(|r| r.ster),
        salient: ster_report.map(|r| r.counts),
        paths,
        documents,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// One row for the corpus, then one per document.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scope,utterances,ref_words,substitutions,deletions,insertions,wer,oracle_wer,salient_occurrences,salient_errors,ster,avg_paths_per_segment\n",
        );
        let c = &self.counts;
        let _ = writeln!(
            out,
            "corpus,{},{},{},{},{},{},{},{},{},{},{}",
            self.utterances,
            c.ref_words,
            c.substitutions,
            c.deletions,
            c.insertions,
            self.wer,
            opt(self.oracle_wer),
            opt(self.salient.map(|s| s.occurrences)),
            opt(self.salient.map(|s| s.errors)),
            opt(self.ster),
            opt(self.paths.as_ref().map(|p| p.rendered.clone())),
        );
        for (id, d) in &self.documents {
            let c = &d.counts;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},,{},{},{},",
                csv_field(id),
                d.utterances,
                c.ref_words,
                c.substitutions,
                c.deletions,
                c.insertions,
                opt(d.wer),
                opt(d.salient.map(|s| s.occurrences)),
                opt(d.salient.map(|s| s.errors)),
                opt(d
                    .salient
                    .filter(|s| s.occurrences > 0)
                    .map(|s| s.errors as f64 / s.occurrences as f64)),
            );
        }
        out
    }

    /// WER, oracle WER and paths per segment in the layout of a lattice
    /// quality table.
    pub fn quality_block(&self, label: &str) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        format!(
            "{:<12} {:>10} {:>8} {:>16}\n{:<12} {:>10} {:>8} {:>16}\n",
            "lattice",
            "oracle WER",
            "WER",
            "#paths/segment",
            label,
            pct(self.oracle_wer),
            pct(Some(self.wer)),
            self.paths.as_ref().map_or("-".to_string(), |p| p.rendered.clone()),
        )
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Arc, Lattice};

    fn diamonds(id: &str, k: usize) -> Lattice {
        let mut arcs = Vec::new();
        for i in 0..k {
            arcs.push(Arc::new(i, i + 1, "a", 0.0, 0.0));
            arcs.push(Arc::new(i, i + 1, "b", 0.0, 0.0));
        }
        Lattice {
            segment_id: id.into(),
            num_states: k + 1,
            start: 0,
            finals: vec![k],
            arcs,
        }
    }

    fn utt(segs: Vec<Lattice>) -> Utterance {
        Utterance {
            utterance_id: "u".into(),
            reference: None,
            segments: segs,
        }
    }

    #[test]
    fn path_means() {
        let ones = utt(vec![
            Lattice::linear("a", &[("x", 0.0, 0.0)]),
            Lattice::linear("b", &[("y", 0.0, 0.0)]),
        ]);
        assert_eq!(avg_paths_per_segment(&[ones]).unwrap().mean, 1.0);
        let s = avg_paths_per_segment(&[utt(vec![diamonds("a", 1), diamonds("b", 2)])]).unwrap();
        assert_eq!((s.mean, s.rendered.as_str()), (3.0, "3.0"));
        let big = avg_paths_per_segment(&[utt(vec![diamonds("a", 69)])]).unwrap();
        assert_eq!(big.rendered, "6e20");
        assert_eq!(big.total, "590295810358705651712");
        assert!(avg_paths_per_segment(&[]).is_err());
    }

    #[test]
    fn report_with_everything() {
        let lat = utt(vec![diamonds("s0", 2)]);
        let items = vec![EvalItem {
            utterance_id: "u".into(),
            doc_id: "d".into(),
            reference: tokenize("a b", false),
            hypothesis: tokenize("a a", false),
            lattices: Some(&lat),
        }];
        let mut documents = BTreeMap::new();
        documents.insert(
            "d".to_string(),
            vec![SalientTerm {
                term: "b".into(),
                tf: 1,
                idf: 1.0,
                tfidf: 1.0,
            }],
        );
        let set = SalientTermSet {
            fraction: 0.5,
            documents,
        };
        let r = evaluate(&items, Some(&set)).unwrap();
        assert_eq!(r.wer, 0.5);
        assert_eq!(r.oracle_wer, Some(0.0));
        assert_eq!(r.ster, Some(1.0));
        assert_eq!(r.paths.as_ref().unwrap().rendered, "4.0");
        let csv = r.to_csv();
        assert!(csv
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("corpus,1,2,1,0,0,0.5,0,1,1,1,4.0"));
        assert!(r.quality_block("merged").contains("50.0"));
    }

    #[test]
    fn lowercasing_only_changes_case() {
        assert_eq!(tokenize(" The  CAT ", true), ["the", "cat"]);
        assert_eq!(tokenize("The", false), ["The"]);
    }
}
