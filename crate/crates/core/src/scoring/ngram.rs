use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use super::{Scorer, ScorerError};

/// Absolute discount applied at every order.
pub const DISCOUNT: f64 = 0.75;
pub const UNK: &str = "<unk>";
pub const EOT: &str = "</s>";
pub const BOS: &str = "<s>";

const UNK_ID: u32 = 0;
const EOT_ID: u32 = 1;
const BOS_ID: u32 = 2;

#[derive(Debug, Error)]
pub enum NGramError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
}

#[derive(Debug, Default, Clone)]
struct HistoryStats {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Word n-gram model with interpolated absolute discounting.
///
/// `P(w | h) = max(c(h,w) - D, 0) / c(h) + D * N1+(h .) / c(h) * P(w | h')`
/// where `h'` drops the oldest word of `h`; histories never seen fall
/// through to `h'`, and the recursion bottoms out in the uniform
/// distribution over the vocabulary plus `<unk>` and `</s>`.
#[derive(Debug, Clone)]
pub struct NGramScorer {
    order: usize,
    ids: HashMap<String, u32>,
    /// number of predictable symbols: words + `<unk>` + `</s>`
    vocab_size: usize,
    stats: HashMap<Vec<u32>, HistoryStats>,
    name: String,
}

impl NGramScorer {
    /// Trains on whitespace-tokenized sentences.
    pub fn train(corpus: &[String], order: usize) -> Result<Self, NGramError> {
        if order == 0 {
            return Err(NGramError::ZeroOrder);
        }
        if corpus.is_empty() {
            return Err(NGramError::EmptyCorpus);
        }
        let words: BTreeSet<&str> = corpus
            .iter()
            .flat_map(|s| s.split_whitespace())
            .filter(|w| ![UNK, EOT, BOS].contains(w))
            .collect();
        let mut ids: HashMap<String, u32> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), i as u32 + 3))
            .collect();
        ids.insert(UNK.into(), UNK_ID);
        ids.insert(EOT.into(), EOT_ID);
        let vocab_size = words.len() + 2;

        let mut model = Self {
            order,
            ids,
            vocab_size,
            stats: HashMap::new(),
            name: format!("ngram-{order}"),
        };
        let h = order - 1;
        for sentence in corpus {
            let mut seq = vec![BOS_ID; h];
            seq.extend(model.encode(sentence));
            seq.push(EOT_ID);
            for i in h..seq.len() {
                let w = seq[i];
                for k in 0..=h {
                    let stats = model.stats.entry(seq[i - k..i].to_vec()).or_default();
                    stats.total += 1;
                    *stats.next.entry(w).or_default() += 1;
                }
            }
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Predictable symbols, including `<unk>` and `</s>`.
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Known words in id order, followed by `<unk>` and `</s>`.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut words: Vec<(&String, &u32)> = self.ids.iter().filter(|(_, &id)| id >= 3).collect();
        words.sort_by_key(|(_, &id)| id);
        let mut out: Vec<String> = words.into_iter().map(|(w, _)| w.clone()).collect();
        out.push(UNK.into());
        out.push(EOT.into());
        out
    }

    fn id(&self, word: &str) -> u32 {
        if word == BOS {
            return BOS_ID;
        }
        self.ids.get(word).copied().unwrap_or(UNK_ID)
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// `history` holds exactly `order - 1` ids, oldest first.
    fn prob(&self, history: &[u32], word: u32) -> f64 {
        let mut p = 1.0 / self.vocab_size as f64;
        for k in 0..=history.len() {
            let h = &history[history.len() - k..];
            if let Some(stats) = self.stats.get(h) {
                let total = stats.total as f64;
                let c = stats.next.get(&word).copied().unwrap_or(0) as f64;
                let distinct = stats.next.len() as f64;
                p = (c - DISCOUNT).max(0.0) / total + DISCOUNT * distinct / total * p;
            }
        }
        p
    }

    fn padded_history(&self, seq: &[u32], upto: usize) -> Vec<u32> {
        let h = self.order - 1;
        let mut hist = vec![BOS_ID; h.saturating_sub(upto)];
        hist.extend_from_slice(&seq[upto.saturating_sub(h)..upto]);
        hist
    }

    /// `P(word | history)` where `history` lists previous words oldest
    /// first; `<s>` may be used for sentence-initial padding.
    pub fn conditional(&self, history: &[&str], word: &str) -> f64 {
        let seq: Vec<u32> = history.iter().map(|w| self.id(w)).collect();
        let hist = self.padded_history(&seq, seq.len());
        self.prob(&hist, self.id(word))
    }

    /// Log-probability of `target` continuing `context`, optionally
    /// including the end-of-text event.
    pub fn log_prob(&self, context: &str, target: &str, with_eot: bool) -> f64 {
        let mut seq = self.encode(context);
        let offset = seq.len();
        seq.extend(self.encode(target));
        if with_eot {
            seq.push(EOT_ID);
        }
        (offset..seq.len())
            .map(|i| self.prob(&self.padded_history(&seq, i), seq[i]).ln())
            .sum()
    }
}

impl Scorer for NGramScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, context: &str, targets: &[String]) -> Result<Vec<f64>, ScorerError> {
        if targets.is_empty() {
            return Err(ScorerError::EmptyTargets);
        }
        Ok(targets.iter().map(|t| self.log_prob(context, t, true)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&str]) -> Vec<String> {
        lines.iter().map(|s| s.to_string()).collect()
    }

    fn check_normalized(m: &NGramScorer, history: &[&str]) {
        let total: f64 = m.vocabulary().iter().map(|w| m.conditional(history, w)).sum();
        assert!((total - 1.0).abs() < 1e-9, "history {history:?} sums to {total}");
    }

    #[test]
    fn symmetric_continuations_are_equal() {
        let m = NGramScorer::train(&corpus(&["a b", "a c"]), 2).unwrap();
        assert_eq!(m.conditional(&["a"], "b"), m.conditional(&["a"], "c"));
    }

    #[test]
    fn unigram_prefers_seen_word() {
        let m = NGramScorer::train(&corpus(&["a a a"]), 1).unwrap();
        let s = m.score("", &corpus(&["a", "b"])).unwrap();
        assert!(s[0] > s[1]);
    }

    #[test]
    fn hand_computed_bigram() {
        let m = NGramScorer::train(&corpus(&["a b", "a c", "b c", "a b c", "c"]), 2).unwrap();
        // predicted symbols: a:3 b:3 c:4 </s>:5, N = 15, 4 types, |V| = 5
        let p_b = (3.0 - 0.75) / 15.0 + 0.75 * 4.0 / 15.0 / 5.0;
        let p_eot = (5.0 - 0.75) / 15.0 + 0.75 * 4.0 / 15.0 / 5.0;
        // history <s>: a x3, b x1, c x1
        let p_b_bos = (1.0 - 0.75) / 5.0 + 0.75 * 3.0 / 5.0 * p_b;
        assert!((m.conditional(&[], "b") - p_b_bos).abs() < 1e-12);
        assert_eq!(m.conditional(&[], "b"), m.conditional(&[BOS], "b"));
        // history a: b x2, c x1
        let p_b_a = (2.0 - 0.75) / 3.0 + 0.75 * 2.0 / 3.0 * p_b;
        assert!((m.conditional(&["a"], "b") - p_b_a).abs() < 1e-12);
        // history b: </s> x1 ("a b"), c x2 ("b c", "a b c")
        let p_eot_b = (1.0 - 0.75) / 3.0 + 0.75 * 2.0 / 3.0 * p_eot;
        assert!((m.conditional(&["b"], EOT) - p_eot_b).abs() < 1e-12);
        // unseen word in a seen history gets only backoff mass
        let p_unk = 0.75 * 4.0 / 15.0 / 5.0;
        assert!((m.conditional(&["a"], "zzz") - 0.75 * 2.0 / 3.0 * p_unk).abs() < 1e-12);

        let got = m.score("a", &corpus(&["b"])).unwrap()[0];
        assert!((got - (p_b_a * p_eot_b).ln()).abs() < 1e-12);
        for h in [&[][..], &["a"], &["b"], &["c"], &[BOS], &["zzz"]] {
            check_normalized(&m, h);
        }
    }

    #[test]
    fn trigram_distributions_normalize() {
        let m = NGramScorer::train(
            &corpus(&["the cat sat", "the dog sat down", "a cat ran", "the cat ran down"]),
            3,
        )
        .unwrap();
        for h in [
            &[BOS, BOS][..],
            &["the", "cat"],
            &["cat", "ran"],
            &["down", "the"],
            &["x", "y"],
            &[BOS, "the"],
        ] {
            check_normalized(&m, h);
        }
    }

    #[test]
    fn chain_rule_without_intermediate_eot() {
        let m = NGramScorer::train(&corpus(&["a b c d", "b c a", "d d a b"]), 3).unwrap();
        let whole = m.log_prob("", "a b c d a", true);
        let split = m.log_prob("", "a b", false) + m.log_prob("a b", "c d", false) + m.log_prob("c d", "a", true);
        assert!((whole - split).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(NGramScorer::train(&[], 2), Err(NGramError::EmptyCorpus)));
        assert!(matches!(
            NGramScorer::train(&corpus(&["a"]), 0),
            Err(NGramError::ZeroOrder)
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let c = corpus(&["x y z", "y z x", "z"]);
        let a = NGramScorer::train(&c, 3).unwrap();
        let b = NGramScorer::train(&c, 3).unwrap();
        let t = corpus(&["x z y", "q", ""]);
        let sa = a.score("y", &t).unwrap();
        let sb = b.score("y", &t).unwrap();
        assert_eq!(
            sa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            sb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
