use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::align::align;
use super::MetricError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SalientTerm {
    /// one word, or two space-separated words
    pub term: String,
    pub tf: usize,
    pub idf: f64,
    pub tfidf: f64,
}

impl SalientTerm {
    pub fn words(&self) -> Vec<&str> {
        self.term.split(' ').collect()
    }
}

/// Selected terms per document, in rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SalientTermSet {
    pub fraction: f64,
    pub documents: BTreeMap<String, Vec<SalientTerm>>,
}

type Term = Vec<String>;

fn terms_with_positions(tokens: &[String]) -> BTreeMap<Term, Vec<usize>> {
    let mut out: BTreeMap<Term, Vec<usize>> = BTreeMap::new();
    for (i, t) in tokens.iter().enumerate() {
        out.entry(vec![t.clone()]).or_default().push(i);
        if i + 1 < tokens.len() {
            out.entry(vec![t.clone(), tokens[i + 1].clone()]).or_default().push(i);
        }
    }
    out
}

/// Per document, ranks unigrams and bigrams by `tf * ln(D / df)` (ties:
/// higher idf, then lexicographic) and selects from the top until the
/// selected terms' occurrences cover at least `fraction` of the document's
/// token positions.
pub fn salient_terms(docs: &[(String, Vec<String>)], fraction: f64) -> Result<SalientTermSet, MetricError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MetricError::InvalidFraction(fraction));
    }
    if docs.len() < 2 {
        return Err(MetricError::TooFewDocuments(docs.len()));
    }
    let mut ids = BTreeSet::new();
    for (id, _) in docs {
        if !ids.insert(id.as_str()) {
            return Err(MetricError::DuplicateDocument(id.clone()));
        }
    }
    let per_doc: Vec<BTreeMap<Term, Vec<usize>>> = docs.iter().map(|(_, t)| terms_with_positions(t)).collect();
    let mut df: HashMap<&Term, usize> = HashMap::new();
    for terms in &per_doc {
        for term in terms.keys() {
            *df.entry(term).or_default() += 1;
        }
    }
    let n_docs = docs.len() as f64;

    let mut documents = BTreeMap::new();
    for ((id, tokens), terms) in docs.iter().zip(&per_doc) {
        let mut ranked: Vec<(&Term, &Vec<usize>, f64, f64)> = terms
            .iter()
            .map(|(term, pos)| {
                let idf = (n_docs / df[term] as f64).ln();
                (term, pos, idf, pos.len() as f64 * idf)
            })
            .collect();
        ranked.sort_by(|a, b| {
            b.3.total_cmp(&a.3)
                .then_with(|| b.2.total_cmp(&a.2))
                .then_with(|| a.0.cmp(b.0))
        });
        let mut covered = vec![false; tokens.len()];
        let mut n_covered = 0usize;
        let mut selected = Vec::new();
        for (term, positions, idf, tfidf) in ranked {
            if (n_covered as f64) >= fraction * tokens.len() as f64 {
                break;
            }
            for &p in positions {
                for q in p..p + term.len() {
                    if !covered[q] {
                        covered[q] = true;
                        n_covered += 1;
                    }
                }
            }
            selected.push(SalientTerm {
                term: term.join(" "),
                tf: positions.len(),
                idf,
                tfidf,
            });
        }
        documents.insert(id.clone(), selected);
    }
    Ok(SalientTermSet { fraction, documents })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SterCounts {
    pub occurrences: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SterReport {
    pub ster: f64,
    pub counts: SterCounts,
    pub documents: BTreeMap<String, SterCounts>,
}

/// Salient-term error rate over `(doc_id, reference, hypothesis)` triples.
///
/// Every occurrence of a selected term in a reference counts once; it is
/// an error when any of its positions is deleted or substituted in the
/// alignment. Insertions never count.
pub fn ster(items: &[(String, Vec<String>, Vec<String>)], terms: &SalientTermSet) -> Result<SterReport, MetricError> {
    let mut documents: BTreeMap<String, SterCounts> = BTreeMap::new();
    for (doc, reference, hypothesis) in items {
        let selected = terms
            .documents
            .get(doc)
            .ok_or_else(|| MetricError::UnknownDocument(doc.clone()))?;
        let matched = align(reference, hypothesis).reference_matched();
        let entry = documents.entry(doc.clone()).or_default();
        for term in selected {
            let words = term.words();
            if words.len() > reference.len() {
                continue;
            }
            for start in 0..=reference.len() - words.len() {
                if words.iter().zip(&reference[start..]).all(|(w, r)| *w == r.as_str()) {
                    entry.occurrences += 1;
                    if !matched[start..start + words.len()].iter().all(|&m| m) {
                        entry.errors += 1;
                    }
                }
            }
        }
    }
    let total = documents.values().fold(SterCounts::default(), |acc, c| SterCounts {
        occurrences: acc.occurrences + c.occurrences,
        errors: acc.errors + c.errors,
    });
    if total.occurrences == 0 {
        return Err(MetricError::NoSalientOccurrences);
    }
    Ok(SterReport {
        ster: total.errors as f64 / total.occurrences as f64,
        counts: total,
        documents,
    })
}
