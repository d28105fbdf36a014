use std::collections::HashMap;

use super::DecodeError;

/// History padding before the first label of an utterance.
pub(crate) const BOS: u32 = u32::MAX;

/// Limited-context label prior: `log P(token | previous order-1 tokens)`.
///
/// Histories without an explicit distribution fall back to add-alpha
/// smoothed counts when trained, or to the uniform distribution.
#[derive(Debug, Clone)]
pub struct LabelLm {
    order: usize,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    table: HashMap<Vec<u32>, Vec<f64>>,
}

impl LabelLm {
    pub fn uniform(tokens: &[String], order: usize) -> Result<Self, DecodeError> {
        if order == 0 {
            return Err(DecodeError::InvalidLabelLm("order must be at least 1".into()));
        }
        if tokens.is_empty() {
            return Err(DecodeError::InvalidLabelLm("empty token set".into()));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if index.len() != tokens.len() {
            return Err(DecodeError::InvalidLabelLm("repeated token".into()));
        }
        Ok(Self {
            order,
            tokens: tokens.to_vec(),
            index,
            table: HashMap::new(),
        })
    }

    /// Add-`alpha` estimate from token sequences; each sequence starts from
    /// a padded history.
    pub fn train(tokens: &[String], sequences: &[Vec<String>], order: usize, alpha: f64) -> Result<Self, DecodeError> {
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(DecodeError::InvalidLabelLm("alpha must be positive".into()));
        }
        let mut lm = Self::uniform(tokens, order)?;
        let v = tokens.len();
        let mut counts: HashMap<Vec<u32>, Vec<u64>> = HashMap::new();
        for seq in sequences {
            let ids = lm.encode(seq)?;
            let mut hist = vec![BOS; order - 1];
            for id in ids {
                counts.entry(hist.clone()).or_insert_with(|| vec![0; v])[id as usize] += 1;
                if order > 1 {
                    hist.remove(0);
                    hist.push(id);
                }
            }
        }
        for (hist, row) in counts {
            let total: u64 = row.iter().sum();
            let denom = total as f64 + alpha * v as f64;
            let logs = row.iter().map(|&c| ((c as f64 + alpha) / denom).ln()).collect();
            lm.table.insert(hist, logs);
        }
        Ok(lm)
    }

    /// Sets `P(. | history)` explicitly. Every token needs a positive
    /// probability and the probabilities must sum to one.
    pub fn set_distribution(&mut self, history: &[&str], probs: &[(&str, f64)]) -> Result<(), DecodeError> {
        let mut row = vec![f64::NAN; self.tokens.len()];
        for &(tok, p) in probs {
            let id = self.id(tok)?;
            if !(p > 0.0 && p.is_finite()) {
                return Err(DecodeError::InvalidLabelLm(format!("P({tok}) must be positive")));
            }
            row[id as usize] = p;
        }
        if row.iter().any(|p| p.is_nan()) {
            return Err(DecodeError::InvalidLabelLm(
                "distribution must cover every token".into(),
            ));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DecodeError::InvalidLabelLm(format!("probabilities sum to {sum}")));
        }
        let ids: Vec<u32> = history
            .iter()
            .map(|t| if *t == "<s>" { Ok(BOS) } else { self.id(t) })
            .collect::<Result<_, _>>()?;
        let key = self.history_key(&ids);
        self.table.insert(key, row.into_iter().map(f64::ln).collect());
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub(crate) fn id(&self, token: &str) -> Result<u32, DecodeError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| DecodeError::UnknownToken(token.to_owned()))
    }

    pub(crate) fn encode(&self, tokens: &[String]) -> Result<Vec<u32>, DecodeError> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Last `order - 1` entries of `history`, BOS-padded on the left.
    fn history_key(&self, history: &[u32]) -> Vec<u32> {
        let h = self.order - 1;
        let mut key = vec![BOS; h.saturating_sub(history.len())];
        key.extend_from_slice(&history[history.len().saturating_sub(h)..]);
        key
    }

    /// `history` lists previous label ids, most recent last.
    pub(crate) fn log_prob_ids(&self, history: &[u32], token: u32) -> f64 {
        match self.table.get(&self.history_key(history)) {
            Some(row) => row[token as usize],
            None => -(self.tokens.len() as f64).ln(),
        }
    }

    pub fn log_prob(&self, history: &[&str], token: &str) -> Result<f64, DecodeError> {
        let ids: Vec<u32> = history
            .iter()
            .map(|t| if *t == "<s>" { Ok(BOS) } else { self.id(t) })
            .collect::<Result<_, _>>()?;
        Ok(self.log_prob_ids(&ids, self.id(token)?))
    }
}
