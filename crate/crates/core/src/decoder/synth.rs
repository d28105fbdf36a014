//! Seeded synthetic corpora: a sparse Markov chain over words, reference
//! utterances drawn from it, and emissions that plant each reference token
//! on one frame with a confusable competitor.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DecodeError, EmissionMatrix};

pub const BLANK: &str = "<b>";

const SUCCESSOR_WEIGHTS: [f64; 3] = [0.6, 0.3, 0.1];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub utterances: usize,
    /// inclusive range of segments per utterance
    pub segments: (usize, usize),
    /// inclusive range of words per segment
    pub words: (usize, usize),
    /// probability that a token frame favours the competitor
    pub noise: f64,
    /// up to this many blank frames follow each token frame
    pub max_blanks: usize,
    /// raw score of the planted token; larger means more confident frames
    pub peak: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 12,
            utterances: 20,
            segments: (2, 3),
            words: (3, 5),
            noise: 0.25,
            max_blanks: 1,
            peak: 6.0,
        }
    }
}

/// Every word has three successors with fixed weights and one confusable
/// partner.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    words: Vec<String>,
    successors: Vec<[usize; 3]>,
    partner: Vec<usize>,
}

impl MarkovChain {
    pub fn random(vocab_size: usize, rng: &mut impl Rng) -> Result<Self, DecodeError> {
        if vocab_size < 4 {
            return Err(DecodeError::InvalidConfig(
                "synthetic vocabulary needs at least 4 words".into(),
            ));
        }
        let width = vocab_size.to_string().len().max(2);
        let words: Vec<String> = (0..vocab_size).map(|i| format!("w{i:0width$}")).collect();
        let mut successors = Vec::with_capacity(vocab_size);
        let mut partner = Vec::with_capacity(vocab_size);
        let all: Vec<usize> = (0..vocab_size).collect();
        for w in 0..vocab_size {
            let picks: Vec<usize> = all.choose_multiple(rng, 3).copied().collect();
            successors.push([picks[0], picks[1], picks[2]]);
            let mut p = rng.gen_range(0..vocab_size - 1);
            if p >= w {
                p += 1;
            }
            partner.push(p);
        }
        Ok(Self {
            words,
            successors,
            partner,
        })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn partner(&self, word: usize) -> usize {
        self.partner[word]
    }

    fn next(&self, prev: Option<usize>, rng: &mut impl Rng) -> usize {
        match prev {
            None => rng.gen_range(0..self.words.len()),
            Some(p) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, w) in SUCCESSOR_WEIGHTS.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return self.successors[p][i];
                    }
                }
                self.successors[p][2]
            }
        }
    }

    /// A word sequence continuing from `prev`.
    pub fn sample(&self, len: usize, prev: Option<usize>, rng: &mut impl Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        let mut last = prev;
        for _ in 0..len {
            let w = self.next(last, rng);
            out.push(w);
            last = Some(w);
        }
        out
    }

    /// Sentences for LM training.
    pub fn corpus(&self, sentences: usize, len: (usize, usize), rng: &mut impl Rng) -> Vec<String> {
        (0..sentences)
            .map(|_| {
                let n = rng.gen_range(len.0..=len.1);
                self.text(&self.sample(n, None, rng))
            })
            .collect()
    }

    pub fn text(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| self.words[i].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub utterance_id: String,
    pub segment_references: Vec<Vec<String>>,
    pub emissions: Vec<EmissionMatrix>,
}

impl SynthUtterance {
    pub fn reference(&self) -> String {
        self.segment_references
            .iter()
            .flatten()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub chain: MarkovChain,
    pub utterances: Vec<SynthUtterance>,
}

impl SynthCorpus {
    /// Emission vocabulary: the chain's words followed by the blank.
    pub fn vocab(&self) -> Vec<String> {
        let mut v = self.chain.words.clone();
        v.push(BLANK.to_owned());
        v
    }
}

fn check(config: &SynthConfig) -> Result<(), DecodeError> {
    let bad = |m: &str| Err(DecodeError::InvalidConfig(m.to_owned()));
    if !(0.0..=1.0).contains(&config.noise) {
        return bad("noise must lie in [0, 1]");
    }
    if config.segments.0 == 0 || config.segments.0 > config.segments.1 {
        return bad("segment range must be non-empty and start at 1 or more");
    }
    if config.words.0 == 0 || config.words.0 > config.words.1 {
        return bad("word range must be non-empty and start at 1 or more");
    }
    if !(config.peak.is_finite() && config.peak > 0.0) {
        return bad("peak must be positive");
    }
    Ok(())
}

/// Generates a corpus; identical `(config, seed)` give identical output.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthCorpus, DecodeError> {
    check(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain = MarkovChain::random(config.vocab_size, &mut rng)?;
    let v = config.vocab_size;
    let mut vocab = chain.words.clone();
    vocab.push(BLANK.to_owned());

    let mut utterances = Vec::with_capacity(config.utterances);
    let width = config.utterances.to_string().len();
    for u in 0..config.utterances {
        let n_seg = rng.gen_range(config.segments.0..=config.segments.1);
        let mut prev = None;
        let mut refs = Vec::with_capacity(n_seg);
        let mut emissions = Vec::with_capacity(n_seg);
        for _ in 0..n_seg {
            let n_words = rng.gen_range(config.words.0..=config.words.1);
            let ids = chain.sample(n_words, prev, &mut rng);
            prev = ids.last().copied();
            let mut raw = Vec::new();
            for &w in &ids {
                let mut row: Vec<f64> = (0..=v).map(|_| rng.gen_range(0.0..1.0)).collect();
                let margin = rng.gen_range(0.3..1.5);
                let (hi, lo) = if rng.gen_bool(config.noise) {
                    (chain.partner[w], w)
                } else {
                    (w, chain.partner[w])
                };
                row[hi] = config.peak;
                row[lo] = config.peak - margin;
                row[v] = config.peak - 2.5;
                raw.push(row);
                for _ in 0..rng.gen_range(0..=config.max_blanks) {
                    let mut row: Vec<f64> = (0..=v).map(|_| rng.gen_range(0.0..1.0)).collect();
                    row[v] = config.peak;
                    raw.push(row);
                }
            }
            emissions.push(EmissionMatrix::from_unnormalized(vocab.clone(), BLANK, raw)?);
            refs.push(ids.iter().map(|&i| chain.words[i].clone()).collect());
        }
        utterances.push(SynthUtterance {
            utterance_id: format!("utt{u:0width$}"),
            segment_references: refs,
            emissions,
        });
    }
    Ok(SynthCorpus { chain, utterances })
}
