//! Grid search over `(mu, nu)` on a development set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::Utterance;
use crate::metrics::{align, evaluate, EvalItem, EvalReport, MetricError, SalientTermSet};
use crate::rescorer::{
    rescore_nbest_lists, rescore_utterance, utterance_nbest, Hypothesis, RescoreError, RescoreParams, UtteranceRescore,
};
use crate::scoring::{CachingScorer, Scorer};

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("development set is empty")]
    EmptyDevSet,
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Rescore(#[from] RescoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneGrid {
    mu: Vec<f64>,
    nu: Vec<f64>,
}

impl Default for TuneGrid {
    /// `{0, 0.1, ..., 1.0}` on both axes.
    fn default() -> Self {
        let axis: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        Self {
            mu: axis.clone(),
            nu: axis,
        }
    }
}

impl TuneGrid {
    /// Both axes must contain 0 so the first-pass result is on the grid.
    pub fn new(mu: Vec<f64>, nu: Vec<f64>) -> Result<Self, TuneError> {
        let g = Self::without_anchor(mu, nu)?;
        if !g.mu.contains(&0.0) || !g.nu.contains(&0.0) {
            return Err(TuneError::InvalidGrid("both axes must include 0".into()));
        }
        Ok(g)
    }

    pub fn without_anchor(mut mu: Vec<f64>, mut nu: Vec<f64>) -> Result<Self, TuneError> {
        for (name, axis) in [("mu", &mut mu), ("nu", &mut nu)] {
            if axis.is_empty() {
                return Err(TuneError::InvalidGrid(format!("{name} axis is empty")));
            }
            if axis.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(TuneError::InvalidGrid(format!(
                    "{name} values must be finite and non-negative"
                )));
            }
            axis.sort_by(f64::total_cmp);
            axis.dedup();
        }
        Ok(Self { mu, nu })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    /// Points in lexicographic `(mu, nu)` order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.mu
            .iter()
            .flat_map(|&m| self.nu.iter().map(move |&n| (m, n)))
            .collect()
    }
}

/// A development or evaluation utterance.
#[derive(Debug, Clone)]
pub struct TuneItem<'a> {
    pub utterance: &'a Utterance,
    pub reference: Vec<String>,
    /// document for salient-term lookup
    pub doc_id: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub enum Objective<'a> {
    #[default]
    Wer,
    /// salient-term errors, with the salient terms of each document
    Ster(&'a SalientTermSet),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub mu: f64,
    pub nu: f64,
    pub errors: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub objective: String,
    pub mu: f64,
    pub nu: f64,
    pub best_value: f64,
    /// denominator of every surface value
    pub total: usize,
    pub surface: Vec<SurfacePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_wer: Option<f64>,
}

impl TuneResult {
    pub fn value_at(&self, mu: f64, nu: f64) -> Option<f64> {
        self.surface.iter().find(|p| p.mu == mu && p.nu == nu).map(|p| p.value)
    }

    /// Grid as a table: one row per `mu`, one column per `nu`.
    pub fn table(&self) -> String {
        let mut nus: Vec<f64> = self.surface.iter().map(|p| p.nu).collect();
        nus.sort_by(f64::total_cmp);
        nus.dedup();
        let mut mus: Vec<f64> = self.surface.iter().map(|p| p.mu).collect();
        mus.sort_by(f64::total_cmp);
        mus.dedup();
        let mut out = format!("{:>6}", "mu\\nu");
        for n in &nus {
            out += &format!(" {n:>7.3}");
        }
        out.push('\n');
        for m in &mus {
            out += &format!("{m:>6.3}");
            for n in &nus {
                match self.value_at(*m, *n) {
                    Some(v) => out += &format!(" {:>7.2}", 100.0 * v),
                    None => out += &format!(" {:>7}", "-"),
                }
            }
            out.push('\n');
        }
        out += &format!(
            "best {} {:.2}% at mu={} nu={}\n",
            self.objective,
            100.0 * self.best_value,
            self.mu,
            self.nu
        );
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TuneOptions {
    /// worker threads for utterance-level parallelism
    pub jobs: usize,
    /// reuse external-LM scores across grid points
    pub cache: bool,
}

impl Default for TuneOptions {
    fn default() -> Self {
        Self { jobs: 1, cache: true }
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, TuneError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| TuneError::ThreadPool(e.to_string()))
}

/// Errors and denominator of `transcript` against `item` under `objective`.
fn tally(item: &TuneItem<'_>, transcript: &[String], objective: Objective<'_>) -> Result<(usize, usize), TuneError> {
    let alignment = align(&item.reference, transcript);
    match objective {
        Objective::Wer => {
            let c = alignment.counts();
            Ok((c.errors(), c.ref_words))
        }
        Objective::Ster(set) => {
            let triple = [(item.doc_id.clone(), item.reference.clone(), transcript.to_vec())];
            match crate::metrics::ster(&triple, set) {
                Ok(r) => Ok((r.counts.errors, r.counts.occurrences)),
                Err(MetricError::NoSalientOccurrences) => Ok((0, 0)),
                Err(e) => Err(e.into()),
            }
        }
    }
}

/// Rescores the development set at every grid point and picks the point
/// with the fewest errors, preferring the smallest `(mu, nu)` on ties.
pub fn tune<S: Scorer + ?Sized>(
    dev: &[TuneItem<'_>],
    scorer: &S,
    grid: &TuneGrid,
    base: &RescoreParams,
    objective: Objective<'_>,
    options: TuneOptions,
) -> Result<TuneResult, TuneError> {
    if dev.is_empty() {
        return Err(TuneError::EmptyDevSet);
    }
    base.validate()?;
    let pool = pool(options.jobs)?;
    let lists: Vec<Vec<(String, Vec<Hypothesis>)>> = pool.install(|| {
        dev.par_iter()
            .map(|item| utterance_nbest(item.utterance, base.nbest))
            .collect::<Result<_, _>>()
    })?;

    let cached = CachingScorer::new(scorer);
    let scorer: &(dyn Scorer + Sync) = if options.cache { &cached } else { &UnitScorer(scorer) };

    let mut surface = Vec::new();
    let mut total = 0;
    for (mu, nu) in grid.points() {
        let params = RescoreParams { mu, nu, ..*base };
        let tallies: Vec<(usize, usize)> = pool.install(|| {
            dev.par_iter()
                .zip(&lists)
                .map(|(item, l)| {
                    let r = rescore_nbest_lists(&item.utterance.utterance_id, l, scorer, &params)?;
                    tally(item, &r.transcript, objective)
                })
                .collect::<Result<_, TuneError>>()
        })?;
        let errors: usize = tallies.iter().map(|t| t.0).sum();
        total = tallies.iter().map(|t| t.1).sum();
        if total == 0 {
            return Err(match objective {
                Objective::Wer => MetricError::NoReferenceWords,
                Objective::Ster(_) => MetricError::NoSalientOccurrences,
            }
            .into());
        }
        surface.push(SurfacePoint {
            mu,
            nu,
            errors,
            value: errors as f64 / total as f64,
        });
    }
    let best = surface
        .iter()
        .fold(None::<&SurfacePoint>, |acc, p| match acc {
            Some(b) if b.errors <= p.errors => Some(b),
            _ => Some(p),
        })
        .expect("grid is non-empty");
    Ok(TuneResult {
        objective: match objective {
            Objective::Wer => "wer".into(),
            Objective::Ster(_) => "ster".into(),
        },
        mu: best.mu,
        nu: best.nu,
        best_value: best.value,
        total,
        surface,
        eval_wer: None,
    })
}

/// Forwards to a scorer without caching.
struct UnitScorer<'a, S: ?Sized>(&'a S);

impl<S: Scorer + ?Sized> Scorer for UnitScorer<'_, S> {
    fn name(&self) -> &str {
        self.0.name()
    }

    fn score(&self, context: &str, targets: &[String]) -> Result<Vec<f64>, crate::scoring::ScorerError> {
        self.0.score(context, targets)
    }
}

/// Rescores every utterance with `params`, in input order.
pub fn rescore_all<S: Scorer + ?Sized>(
    utterances: &[&Utterance],
    scorer: &S,
    params: &RescoreParams,
    jobs: usize,
) -> Result<Vec<UtteranceRescore>, TuneError> {
    let pool = pool(jobs)?;
    Ok(pool.install(|| {
        utterances
            .par_iter()
            .map(|u| rescore_utterance(u, scorer, params))
            .collect::<Result<Vec<_>, _>>()
    })?)
}

/// One rescoring pass at fixed parameters followed by a full report.
pub fn apply<S: Scorer + ?Sized>(
    eval: &[TuneItem<'_>],
    scorer: &S,
    params: &RescoreParams,
    salient: Option<&SalientTermSet>,
    jobs: usize,
) -> Result<EvalReport, TuneError> {
    let utts: Vec<&Utterance> = eval.iter().map(|i| i.utterance).collect();
    let rescored = rescore_all(&utts, scorer, params, jobs)?;
    let items: Vec<EvalItem<'_>> = eval
        .iter()
        .zip(rescored)
        .map(|(i, r)| EvalItem {
            utterance_id: i.utterance.utterance_id.clone(),
            doc_id: i.doc_id.clone(),
            reference: i.reference.clone(),
            hypothesis: r.transcript,
            lattices: Some(i.utterance),
        })
        .collect();
    Ok(evaluate(&items, salient)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Arc, Lattice};
    use crate::scoring::ScorerError;
    use std::collections::HashMap;

    /// Fixed scores per text; anything else is -50.
    struct Fixed(HashMap<&'static str, f64>);

    impl Scorer for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn score(&self, _: &str, targets: &[String]) -> Result<Vec<f64>, ScorerError> {
            Ok(targets
                .iter()
                .map(|t| *self.0.get(t.as_str()).unwrap_or(&-50.0))
                .collect())
        }
    }

    fn two_way(id: &str, a: (&str, f64), b: (&str, f64)) -> Utterance {
        Utterance {
            utterance_id: id.into(),
            reference: None,
            segments: vec![Lattice {
                segment_id: "s0".into(),
                num_states: 2,
                start: 0,
                finals: vec![1],
                arcs: vec![Arc::new(0, 1, a.0, a.1, 0.0), Arc::new(0, 1, b.0, b.1, 0.0)],
            }],
        }
    }

    fn item<'a>(u: &'a Utterance, reference: &str) -> TuneItem<'a> {
        TuneItem {
            utterance: u,
            reference: vec![reference.to_string()],
            doc_id: u.utterance_id.clone(),
        }
    }

    /// Utterance 1: first pass says "p" (hat -1) but the truth is "q"
    /// (hat -2); the LM prefers q by 1.6, so any nu > 0.625 fixes it.
    /// Utterance 2: first pass "r" is right (hat -1); the LM prefers the
    /// wrong "s" by 1.2 at hat -2.5, flipping it once nu > 1.25.
    fn constructed() -> (Vec<Utterance>, Fixed) {
        let utts = vec![
            two_way("u1", ("p", -1.0), ("q", -2.0)),
            two_way("u2", ("r", -1.0), ("s", -2.5)),
        ];
        let scores = HashMap::from([("p", -3.0), ("q", -1.4), ("r", -3.0), ("s", -1.8)]);
        (utts, Fixed(scores))
    }

    #[test]
    fn origin_only_grid_is_first_pass() {
        let (utts, scorer) = constructed();
        let dev = vec![item(&utts[0], "q"), item(&utts[1], "r")];
        let grid = TuneGrid::new(vec![0.0], vec![0.0]).unwrap();
        let r = tune(
            &dev,
            &scorer,
            &grid,
            &RescoreParams::default(),
            Objective::Wer,
            TuneOptions::default(),
        )
        .unwrap();
        assert_eq!((r.mu, r.nu), (0.0, 0.0));
        assert_eq!(r.best_value, 0.5);
    }

    #[test]
    fn picks_the_correcting_weight() {
        let (utts, scorer) = constructed();
        let dev = vec![item(&utts[0], "q"), item(&utts[1], "r")];
        let grid = TuneGrid::new(vec![0.0], vec![0.0, 1.0, 1.5]).unwrap();
        let r = tune(
            &dev,
            &scorer,
            &grid,
            &RescoreParams::default(),
            Objective::Wer,
            TuneOptions::default(),
        )
        .unwrap();
        assert_eq!(r.nu, 1.0);
        assert_eq!(r.value_at(0.0, 0.0), Some(0.5));
        assert_eq!(r.value_at(0.0, 1.0), Some(0.0));
        assert_eq!(r.value_at(0.0, 1.5), Some(0.5));
        let uncached = tune(
            &dev,
            &scorer,
            &grid,
            &RescoreParams::default(),
            Objective::Wer,
            TuneOptions { jobs: 2, cache: false },
        )
        .unwrap();
        assert_eq!(r, uncached);
    }

    #[test]
    fn ties_go_to_smallest_point() {
        let (utts, scorer) = constructed();
        let dev = vec![item(&utts[0], "q")];
        let grid = TuneGrid::new(vec![0.0, 0.5], vec![0.0, 1.0, 1.5]).unwrap();
        let r = tune(
            &dev,
            &scorer,
            &grid,
            &RescoreParams::default(),
            Objective::Wer,
            TuneOptions::default(),
        )
        .unwrap();
        assert_eq!((r.mu, r.nu), (0.0, 1.0));
    }

    #[test]
    fn grid_validation() {
        assert!(TuneGrid::new(vec![0.1], vec![0.0]).is_err());
        assert!(TuneGrid::new(vec![], vec![0.0]).is_err());
        assert!(TuneGrid::new(vec![0.0, -1.0], vec![0.0]).is_err());
        assert!(TuneGrid::without_anchor(vec![0.3], vec![0.2]).is_ok());
        let g = TuneGrid::default();
        assert_eq!(g.points().len(), 121);
        assert_eq!(g.points()[0], (0.0, 0.0));
    }

    #[test]
    fn apply_matches_surface() {
        let (utts, scorer) = constructed();
        let dev = vec![item(&utts[0], "q"), item(&utts[1], "r")];
        let grid = TuneGrid::new(vec![0.0, 0.2], vec![0.0, 0.5, 1.0]).unwrap();
        let base = RescoreParams::default();
        let r = tune(&dev, &scorer, &grid, &base, Objective::Wer, TuneOptions::default()).unwrap();
        let params = RescoreParams {
            mu: r.mu,
            nu: r.nu,
            ..base
        };
        let report = apply(&dev, &scorer, &params, None, 1).unwrap();
        assert_eq!(report.wer, r.best_value);
        let first = apply(&dev, &scorer, &base, None, 1).unwrap();
        assert_eq!(first.wer, r.value_at(0.0, 0.0).unwrap());
    }
}
