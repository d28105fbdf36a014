use serde::Serialize;

use crate::lattice::Lattice;

use super::MetricError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Edit {
    Match(String),
    Substitution { reference: String, hypothesis: String },
    Deletion(String),
    Insertion(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ErrorCounts {
    pub ref_words: usize,
    pub matches: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
}

impl ErrorCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    pub fn add(&mut self, other: &ErrorCounts) {
        self.ref_words += other.ref_words;
        self.matches += other.matches;
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Alignment {
    pub edits: Vec<Edit>,
}

impl Alignment {
    pub fn counts(&self) -> ErrorCounts {
        let mut c = ErrorCounts::default();
        for e in &self.edits {
            match e {
                Edit::Match(_) => c.matches += 1,
                Edit::Substitution { .. } => c.substitutions += 1,
                Edit::Deletion(_) => c.deletions += 1,
                Edit::Insertion(_) => c.insertions += 1,
            }
        }
        c.ref_words = c.matches + c.substitutions + c.deletions;
        c
    }

    pub fn cost(&self) -> usize {
        self.counts().errors()
    }

    /// For every reference position, whether it was matched.
    pub fn reference_matched(&self) -> Vec<bool> {
        self.edits
            .iter()
            .filter_map(|e| match e {
                Edit::Match(_) => Some(true),
                Edit::Substitution { .. } | Edit::Deletion(_) => Some(false),
                Edit::Insertion(_) => None,
            })
            .collect()
    }
}

/// Minimum edit-distance alignment with unit costs. Among equal-cost
/// alignments, tracing back from the end prefers the diagonal (match or
/// substitution), then deletion, then insertion.
pub fn align<R: AsRef<str>, H: AsRef<str>>(reference: &[R], hypothesis: &[H]) -> Alignment {
    let (m, n) = (reference.len(), hypothesis.len());
    let w = n + 1;
    let mut d = vec![0usize; (m + 1) * w];
    for j in 0..=n {
        d[j] = j;
    }
    for i in 1..=m {
        d[i * w] = i;
        for j in 1..=n {
            let sub = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            d[i * w + j] = (d[(i - 1) * w + j - 1] + sub)
                .min(d[(i - 1) * w + j] + 1)
                .min(d[i * w + j - 1] + 1);
        }
    }
    let mut edits = Vec::with_capacity(m.max(n));
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let (r, h) = (reference[i - 1].as_ref(), hypothesis[j - 1].as_ref());
            let sub = usize::from(r != h);
            if here == d[(i - 1) * w + j - 1] + sub {
                edits.push(if sub == 0 {
                    Edit::Match(r.to_owned())
                } else {
                    Edit::Substitution {
                        reference: r.to_owned(),
                        hypothesis: h.to_owned(),
                    }
                });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            edits.push(Edit::Deletion(reference[i - 1].as_ref().to_owned()));
            i -= 1;
        } else {
            edits.push(Edit::Insertion(hypothesis[j - 1].as_ref().to_owned()));
            j -= 1;
        }
    }
    edits.reverse();
    Alignment { edits }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WerReport {
    pub wer: f64,
    pub counts: ErrorCounts,
}

/// Corpus WER: total errors over total reference words.
pub fn wer<R: AsRef<str>, H: AsRef<str>>(pairs: &[(Vec<R>, Vec<H>)]) -> Result<WerReport, MetricError> {
    let mut counts = ErrorCounts::default();
    for (r, h) in pairs {
        counts.add(&align(r, h).counts());
    }
    if counts.ref_words == 0 {
        return Err(MetricError::NoReferenceWords);
    }
    Ok(WerReport {
        wer: counts.errors() as f64 / counts.ref_words as f64,
        counts,
    })
}

/// Fewest edits between `reference` and any path of `lattice`.
pub fn oracle_errors<R: AsRef<str>>(lattice: &Lattice, reference: &[R]) -> Result<usize, MetricError> {
    let order = lattice.topo_order()?;
    let graph = lattice.adjacency();
    let m = reference.len();
    let w = m + 1;
    let mut best = vec![usize::MAX; lattice.num_states * w];
    for j in 0..=m {
        best[lattice.start * w + j] = j;
    }
    let mut out = usize::MAX;
    for &s in &order {
        let row = s * w;
        for j in 1..=m {
            let del = best[row + j - 1].saturating_add(1);
            if del < best[row + j] {
                best[row + j] = del;
            }
        }
        if lattice.is_final(s) {
            out = out.min(best[row + m]);
        }
        for &a in &graph.out[s] {
            let arc = &lattice.arcs[a];
            let to = arc.to * w;
            for j in 0..=m {
                let here = best[row + j];
                if here == usize::MAX {
                    continue;
                }
                if here + 1 < best[to + j] {
                    best[to + j] = here + 1;
                }
                if j < m {
                    let c = here + usize::from(reference[j].as_ref() != arc.label);
                    if c < best[to + j + 1] {
                        best[to + j + 1] = c;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn oracle_wer<R: AsRef<str>>(lattice: &Lattice, reference: &[R]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::NoReferenceWords);
    }
    Ok(oracle_errors(lattice, reference)? as f64 / reference.len() as f64)
}
