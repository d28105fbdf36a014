//! Segment lattices.
//!
//! A [`Lattice`] is an acyclic, epsilon-free token graph. Every arc carries
//! two natural-log score channels: `hat`, the first-pass posterior
//! contribution, and `ilm`, the internal label-prior contribution. Path
//! scores are per-channel sums, so the two channels can be weighted
//! independently at rescoring time.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type StateId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arc {
    pub from: StateId,
    pub to: StateId,
    pub label: String,
    pub hat: f64,
    pub ilm: f64,
}

impl Arc {
    pub fn new(from: StateId, to: StateId, label: impl Into<String>, hat: f64, ilm: f64) -> Self {
        Self {
            from,
            to,
            label: label.into(),
            hat,
            ilm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub segment_id: String,
    pub num_states: usize,
    pub start: StateId,
    pub finals: Vec<StateId>,
    pub arcs: Vec<Arc>,
}

/// An ordered list of segment lattices decoded from one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub utterance_id: String,
    pub reference: Option<String>,
    pub segments: Vec<Lattice>,
}

impl Utterance {
    pub fn reference_tokens(&self) -> Option<Vec<String>> {
        self.reference
            .as_deref()
            .map(|r| r.split_whitespace().map(str::to_owned).collect())
    }
}

/// One start-to-final path with its channel sums.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath {
    pub tokens: Vec<String>,
    pub hat: f64,
    pub ilm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoStates,
    StartOutOfRange { start: StateId },
    NoFinals,
    FinalOutOfRange { state: StateId },
    DuplicateFinal { state: StateId },
    ArcOutOfRange { arc: usize },
    EpsilonLabel { arc: usize },
    WhitespaceInLabel { arc: usize },
    NonFiniteScore { arc: usize },
    Cycle { states: Vec<StateId> },
    StartHasIncoming { arc: usize },
    DanglingFinal { state: StateId, arc: usize },
    Unreachable { state: StateId },
    DeadEnd { state: StateId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoStates => write!(f, "lattice has no states"),
            Violation::StartOutOfRange { start } => write!(f, "start state {start} out of range"),
            Violation::NoFinals => write!(f, "lattice has no final states"),
            Violation::FinalOutOfRange { state } => write!(f, "final state {state} out of range"),
            Violation::DuplicateFinal { state } => write!(f, "final state {state} listed twice"),
            Violation::ArcOutOfRange { arc } => write!(f, "arc {arc} references a state out of range"),
            Violation::EpsilonLabel { arc } => write!(f, "arc {arc} has an empty (epsilon) label"),
            Violation::WhitespaceInLabel { arc } => write!(f, "arc {arc} label contains whitespace"),
            Violation::NonFiniteScore { arc } => write!(f, "arc {arc} has a non-finite score"),
            Violation::Cycle { states } => write!(f, "cycle through states {states:?}"),
            Violation::StartHasIncoming { arc } => write!(f, "start state has incoming arc {arc}"),
            Violation::DanglingFinal { state, arc } => {
                write!(f, "final state {state} has outgoing arc {arc}")
            }
            Violation::Unreachable { state } => write!(f, "state {state} is unreachable from start"),
            Violation::DeadEnd { state } => write!(f, "state {state} cannot reach a final state"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("invalid lattice `{segment_id}`: {violation}")]
    Invalid { segment_id: String, violation: Violation },
    #[error("lattice has {count} paths, more than the limit of {limit}")]
    TooManyPaths { count: BigUint, limit: usize },
    #[error("path limit must be at least 1")]
    ZeroLimit,
    #[error("utterance `{0}` has no segments")]
    EmptyUtterance(String),
    #[error("utterance `{utterance_id}` repeats segment id `{segment_id}`")]
    DuplicateSegment { utterance_id: String, segment_id: String },
}

impl Lattice {
    /// A single-path lattice spelling `tokens`, with per-arc scores.
    pub fn linear(segment_id: impl Into<String>, tokens: &[(&str, f64, f64)]) -> Self {
        let arcs = tokens
            .iter()
            .enumerate()
            .map(|(i, &(label, hat, ilm))| Arc::new(i, i + 1, label, hat, ilm))
            .collect();
        Self {
            segment_id: segment_id.into(),
            num_states: tokens.len() + 1,
            start: 0,
            finals: vec![tokens.len()],
            arcs,
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let n = self.num_states;
        if n == 0 {
            violations.push(Violation::NoStates);
            return ValidationReport { violations };
        }
        if self.start >= n {
            violations.push(Violation::StartOutOfRange { start: self.start });
        }
        if self.finals.is_empty() {
            violations.push(Violation::NoFinals);
        }
        let mut is_final = vec![false; n];
        let mut seen = BTreeSet::new();
        for &f in &self.finals {
            if f >= n {
                violations.push(Violation::FinalOutOfRange { state: f });
            } else if !seen.insert(f) {
                violations.push(Violation::DuplicateFinal { state: f });
            } else {
                is_final[f] = true;
            }
        }

        let mut graph = Adjacency::empty(n);
        for (i, arc) in self.arcs.iter().enumerate() {
            if arc.label.is_empty() {
                violations.push(Violation::EpsilonLabel { arc: i });
            } else if arc.label.chars().any(char::is_whitespace) {
                violations.push(Violation::WhitespaceInLabel { arc: i });
            }
            if !arc.hat.is_finite() || !arc.ilm.is_finite() {
                violations.push(Violation::NonFiniteScore { arc: i });
            }
            if arc.from >= n || arc.to >= n {
                violations.push(Violation::ArcOutOfRange { arc: i });
                continue;
            }
            if arc.to == self.start {
                violations.push(Violation::StartHasIncoming { arc: i });
            }
            if is_final[arc.from] {
                violations.push(Violation::DanglingFinal {
                    state: arc.from,
                    arc: i,
                });
            }
            graph.add(i, arc.from, arc.to);
        }

        let (_, cyclic) = graph.kahn();
        if !cyclic.is_empty() {
            violations.push(Violation::Cycle { states: cyclic });
        }

        if self.start < n {
            let fwd = graph.reach(&[self.start], true);
            for s in (0..n).filter(|&s| !fwd[s]) {
                violations.push(Violation::Unreachable { state: s });
            }
        }
        let finals: Vec<StateId> = self.finals.iter().copied().filter(|&f| f < n).collect();
        let bwd = graph.reach(&finals, false);
        for s in (0..n).filter(|&s| !bwd[s]) {
            violations.push(Violation::DeadEnd { state: s });
        }
        ValidationReport { violations }
    }

    pub fn ensure_valid(&self) -> Result<(), LatticeError> {
        match self.validate().violations.into_iter().next() {
            None => Ok(()),
            Some(violation) => Err(LatticeError::Invalid {
                segment_id: self.segment_id.clone(),
                violation,
            }),
        }
    }

    /// States in topological order. Validates first.
    pub fn topo_order(&self) -> Result<Vec<StateId>, LatticeError> {
        self.ensure_valid()?;
        Ok(self.adjacency().kahn().0)
    }

    pub(crate) fn adjacency(&self) -> Adjacency {
        let mut graph = Adjacency::empty(self.num_states);
        for (i, arc) in self.arcs.iter().enumerate() {
            graph.add(i, arc.from, arc.to);
        }
        graph
    }

    pub fn is_final(&self, state: StateId) -> bool {
        self.finals.contains(&state)
    }

    /// Exact number of distinct start-to-final paths.
    pub fn count_paths(&self) -> Result<BigUint, LatticeError> {
        let order = self.topo_order()?;
        let graph = self.adjacency();
        let mut count = vec![BigUint::zero(); self.num_states];
        count[self.start] = BigUint::one();
        for &s in &order {
            if count[s].is_zero() {
                continue;
            }
            let here = count[s].clone();
            for &a in &graph.out[s] {
                count[self.arcs[a].to] += &here;
            }
        }
        Ok(self.finals.iter().map(|&f| &count[f]).sum())
    }

    /// All paths, sorted by descending `hat` with ties broken by token
    /// sequence. Refuses when the lattice holds more than `limit` paths.
    pub fn enumerate_paths(&self, limit: usize) -> Result<Vec<LatticePath>, LatticeError> {
        if limit == 0 {
            return Err(LatticeError::ZeroLimit);
        }
        let count = self.count_paths()?;
        if count > BigUint::from(limit) {
            return Err(LatticeError::TooManyPaths { count, limit });
        }
        let capacity = count.to_usize().unwrap_or(limit);
        let graph = self.adjacency();
        let mut out = Vec::with_capacity(capacity);
        let mut arcs = Vec::new();
        self.dfs(&graph, self.start, &mut arcs, &mut out);
        sort_paths(&mut out);
        Ok(out)
    }

    fn dfs(&self, graph: &Adjacency, s: StateId, stack: &mut Vec<usize>, out: &mut Vec<LatticePath>) {
        if self.is_final(s) {
            let mut path = LatticePath {
                tokens: Vec::with_capacity(stack.len()),
                hat: 0.0,
                ilm: 0.0,
            };
            for &a in stack.iter() {
                let arc = &self.arcs[a];
                path.tokens.push(arc.label.clone());
                path.hat += arc.hat;
                path.ilm += arc.ilm;
            }
            out.push(path);
        }
        for &a in &graph.out[s] {
            stack.push(a);
            self.dfs(graph, self.arcs[a].to, stack, out);
            stack.pop();
        }
    }
}

pub(crate) fn sort_paths(paths: &mut [LatticePath]) {
    paths.sort_by(|a, b| {
        b.hat
            .total_cmp(&a.hat)
            .then_with(|| a.tokens.cmp(&b.tokens))
            .then_with(|| b.ilm.total_cmp(&a.ilm))
    });
}

/// Joins segment lattices end to end: every final of segment `i` becomes
/// the start of segment `i + 1`.
pub fn concat(utterance: &Utterance) -> Result<Lattice, LatticeError> {
    if utterance.segments.is_empty() {
        return Err(LatticeError::EmptyUtterance(utterance.utterance_id.clone()));
    }
    let mut ids = BTreeSet::new();
    for seg in &utterance.segments {
        if !ids.insert(seg.segment_id.as_str()) {
            return Err(LatticeError::DuplicateSegment {
                utterance_id: utterance.utterance_id.clone(),
                segment_id: seg.segment_id.clone(),
            });
        }
        seg.ensure_valid()?;
    }

    let last = utterance.segments.len() - 1;
    let mut num_states = 1;
    let mut entry = 0;
    let mut arcs = Vec::new();
    let mut finals = Vec::new();
    for (i, seg) in utterance.segments.iter().enumerate() {
        let mut map = vec![usize::MAX; seg.num_states];
        map[seg.start] = entry;
        let start_is_final = seg.is_final(seg.start);
        let exit = if i == last {
            None
        } else if start_is_final {
            Some(entry)
        } else {
            num_states += 1;
            Some(num_states - 1)
        };
        for s in 0..seg.num_states {
            if s == seg.start {
                continue;
            }
            map[s] = match exit {
                Some(e) if seg.is_final(s) => e,
                _ => {
                    num_states += 1;
                    num_states - 1
                }
            };
        }
        arcs.extend(seg.arcs.iter().map(|a| Arc {
            from: map[a.from],
            to: map[a.to],
            label: a.label.clone(),
            hat: a.hat,
            ilm: a.ilm,
        }));
        match exit {
            Some(e) => entry = e,
            None => {
                finals = seg.finals.iter().map(|&f| map[f]).collect();
                finals.sort_unstable();
            }
        }
    }
    Ok(Lattice {
        segment_id: utterance.utterance_id.clone(),
        num_states,
        start: 0,
        finals,
        arcs,
    })
}

/// Arc-index adjacency lists.
pub(crate) struct Adjacency {
    pub out: Vec<Vec<usize>>,
    pub inc: Vec<Vec<usize>>,
    ends: Vec<(StateId, StateId)>,
}

impl Adjacency {
    fn empty(n: usize) -> Self {
        Self {
            out: vec![Vec::new(); n],
            inc: vec![Vec::new(); n],
            ends: Vec::new(),
        }
    }

    fn add(&mut self, arc: usize, from: StateId, to: StateId) {
        if self.ends.len() <= arc {
            self.ends.resize(arc + 1, (usize::MAX, usize::MAX));
        }
        self.ends[arc] = (from, to);
        self.out[from].push(arc);
        self.inc[to].push(arc);
    }

    /// Kahn's algorithm. Returns the topological order and the states left
    /// over on or behind a cycle.
    fn kahn(&self) -> (Vec<StateId>, Vec<StateId>) {
        let n = self.out.len();
        let mut indeg: Vec<usize> = self.inc.iter().map(Vec::len).collect();
        let mut queue: VecDeque<StateId> = (0..n).filter(|&s| indeg[s] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(s) = queue.pop_front() {
            order.push(s);
            for &a in &self.out[s] {
                let t = self.ends[a].1;
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    queue.push_back(t);
                }
            }
        }
        let cyclic = (0..n).filter(|&s| indeg[s] > 0).collect();
        (order, cyclic)
    }

    fn reach(&self, seeds: &[StateId], forward: bool) -> Vec<bool> {
        let n = self.out.len();
        let mut seen = vec![false; n];
        let mut stack: Vec<StateId> = seeds.to_vec();
        for &s in seeds {
            seen[s] = true;
        }
        while let Some(s) = stack.pop() {
            let (list, pick): (&Vec<usize>, fn((StateId, StateId)) -> StateId) = if forward {
                (&self.out[s], |e| e.1)
            } else {
                (&self.inc[s], |e| e.0)
            };
            for &a in list {
                let t = pick(self.ends[a]);
                if !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        seen
    }
}
