use serde::{Deserialize, Serialize};

use super::DecodeError;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Per-frame log-distributions over a vocabulary that includes one blank.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    vocab: Vec<String>,
    blank: usize,
    logits: Vec<Vec<f64>>,
}

impl EmissionMatrix {
    pub fn new(vocab: Vec<String>, blank: &str, logits: Vec<Vec<f64>>) -> Result<Self, DecodeError> {
        let invalid = |msg: String| Err(DecodeError::InvalidEmissions(msg));
        let Some(blank_idx) = vocab.iter().position(|v| v == blank) else {
            return invalid(format!("blank `{blank}` not in vocabulary"));
        };
        for (i, v) in vocab.iter().enumerate() {
            if v.is_empty() || v.chars().any(char::is_whitespace) {
                return invalid(format!("vocabulary entry {i} is empty or contains whitespace"));
            }
            if vocab[..i].contains(v) {
                return invalid(format!("vocabulary entry `{v}` repeated"));
            }
        }
        for (t, row) in logits.iter().enumerate() {
            if row.len() != vocab.len() {
                return invalid(format!(
                    "frame {t} has {} entries for a vocabulary of {}",
                    row.len(),
                    vocab.len()
                ));
            }
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return invalid(format!("frame {t} has a NaN or +inf entry"));
            }
            let lse = log_sum_exp(row);
            if lse.abs() > NORMALIZATION_TOLERANCE {
                return invalid(format!("frame {t} is not normalized (logsumexp = {lse})"));
            }
        }
        Ok(Self {
            vocab,
            blank: blank_idx,
            logits,
        })
    }

    /// Normalizes each row of raw scores with a log-softmax.
    pub fn from_unnormalized(vocab: Vec<String>, blank: &str, raw: Vec<Vec<f64>>) -> Result<Self, DecodeError> {
        let logits = raw
            .into_iter()
            .map(|row| {
                let lse = log_sum_exp(&row);
                row.into_iter().map(|v| v - lse).collect()
            })
            .collect();
        Self::new(vocab, blank, logits)
    }

    pub fn frames(&self) -> usize {
        self.logits.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    pub fn blank_token(&self) -> &str {
        &self.vocab[self.blank]
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn log_prob(&self, frame: usize, symbol: usize) -> f64 {
        self.logits[frame][symbol]
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// One line of an emission file: `{"vocab", "blank", "segments"}` plus an
/// optional `utterance_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmissionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance_id: Option<String>,
    pub vocab: Vec<String>,
    pub blank: String,
    /// `-inf` entries are written as `null`
    #[serde(with = "null_is_neg_inf")]
    pub segments: Vec<Vec<Vec<f64>>>,
}

mod null_is_neg_inf {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    type Nested<T> = Vec<Vec<Vec<T>>>;

    pub fn serialize<S: Serializer>(v: &Nested<f64>, s: S) -> Result<S::Ok, S::Error> {
        let opt: Nested<Option<f64>> = v
            .iter()
            .map(|seg| {
                seg.iter()
                    .map(|row| row.iter().map(|&x| (x != f64::NEG_INFINITY).then_some(x)).collect())
                    .collect()
            })
            .collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Nested<f64>, D::Error> {
        let opt = Nested::<Option<f64>>::deserialize(d)?;
        Ok(opt
            .into_iter()
            .map(|seg| {
                seg.into_iter()
                    .map(|row| row.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
                    .collect()
            })
            .collect())
    }
}

impl EmissionRecord {
    pub fn from_matrices(utterance_id: Option<String>, segments: &[EmissionMatrix]) -> Self {
        let first = segments.first();
        Self {
            utterance_id,
            vocab: first.map(|m| m.vocab.clone()).unwrap_or_default(),
            blank: first.map(|m| m.blank_token().to_owned()).unwrap_or_default(),
            segments: segments.iter().map(|m| m.logits.clone()).collect(),
        }
    }

    pub fn matrices(&self) -> Result<Vec<EmissionMatrix>, DecodeError> {
        self.segments
            .iter()
            .map(|seg| EmissionMatrix::new(self.vocab.clone(), &self.blank, seg.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vec<String> {
        vec!["a".into(), "b".into(), "_".into()]
    }

    #[test]
    fn accepts_normalized_rows() {
        let third = (1.0f64 / 3.0).ln();
        let m = EmissionMatrix::new(vocab(), "_", vec![vec![third; 3]; 2]).unwrap();
        assert_eq!(m.frames(), 2);
        assert_eq!(m.blank(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(EmissionMatrix::new(vocab(), "x", vec![]).is_err());
        assert!(EmissionMatrix::new(vocab(), "_", vec![vec![0.0; 3]]).is_err());
        assert!(EmissionMatrix::new(vocab(), "_", vec![vec![0.0; 2]]).is_err());
        let dup = vec!["a".into(), "a".into(), "_".into()];
        assert!(EmissionMatrix::from_unnormalized(dup, "_", vec![]).is_err());
    }

    #[test]
    fn log_softmax_rows() {
        let m = EmissionMatrix::from_unnormalized(vocab(), "_", vec![vec![1.0, 2.0, f64::NEG_INFINITY]]).unwrap();
        assert!((log_sum_exp(&m.logits()[0])).abs() < 1e-12);
        assert_eq!(m.log_prob(0, 2), f64::NEG_INFINITY);
    }

    #[test]
    fn record_round_trip_keeps_neg_infinity() {
        let m = EmissionMatrix::from_unnormalized(vocab(), "_", vec![vec![0.3, 0.1, f64::NEG_INFINITY]]).unwrap();
        let rec = EmissionRecord::from_matrices(Some("u".into()), std::slice::from_ref(&m));
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains("null"));
        let back: EmissionRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.matrices().unwrap(), vec![m]);
    }
}
