use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use super::{Scorer, ScorerError};

/// Memoizes scores keyed on the exact (context, target) bytes. Misses from
/// one call are forwarded to the inner scorer as a single batch.
pub struct CachingScorer<S> {
    inner: S,
    cache: RwLock<HashMap<(String, String), f64>>,
    requests: AtomicUsize,
}

impl<S: Scorer> CachingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
            requests: AtomicUsize::new(0),
        }
    }

    /// Number of requests forwarded to the inner scorer.
    pub fn inner_requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("score cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<S: Scorer> Scorer for CachingScorer<S> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn score(&self, context: &str, targets: &[String]) -> Result<Vec<f64>, ScorerError> {
        if targets.is_empty() {
            return Err(ScorerError::EmptyTargets);
        }
        let missing: Vec<String> = {
            let cache = self.cache.read().expect("score cache poisoned");
            let set: BTreeSet<&String> = targets
                .iter()
                .filter(|t| !cache.contains_key(&(context.to_owned(), (*t).clone())))
                .collect();
            set.into_iter().cloned().collect()
        };
        if !missing.is_empty() {
            self.requests.fetch_add(1, Ordering::Relaxed);
            let scores = self.inner.score(context, &missing)?;
            let mut cache = self.cache.write().expect("score cache poisoned");
            for (t, s) in missing.into_iter().zip(scores) {
                cache.entry((context.to_owned(), t)).or_insert(s);
            }
        }
        let cache = self.cache.read().expect("score cache poisoned");
        Ok(targets
            .iter()
            .map(|t| cache[&(context.to_owned(), t.clone())])
            .collect())
    }
}
