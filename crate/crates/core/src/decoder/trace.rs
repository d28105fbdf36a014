use std::collections::BTreeSet;

use crate::lattice::{Arc, Lattice};

use super::DecodeError;

/// An arc into a search node: the predecessor and the score increments
/// accumulated between the predecessor's creation and this emission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEdge {
    pub pred: usize,
    pub hat: f64,
    pub ilm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TraceNode {
    /// index into `BeamTrace::labels`; `None` only for the root
    pub label: Option<u32>,
    pub frame: usize,
    pub creation_score: f64,
    /// `edges[0]` is the best (primary) history; the rest were merged in
    pub edges: Vec<TraceEdge>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Survivor {
    pub node: usize,
    pub tokens: Vec<String>,
    pub score: f64,
}

/// Record of one segment's beam search: every token-emission node that
/// survived a frame, its primary and merged incoming edges, and the final
/// surviving hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamTrace {
    pub(crate) labels: Vec<String>,
    pub(crate) nodes: Vec<TraceNode>,
    pub(crate) survivors: Vec<Survivor>,
}

impl BeamTrace {
    /// An empty trace holding only the root node.
    pub fn new(labels: Vec<String>) -> Self {
        Self {
            labels,
            nodes: vec![TraceNode {
                label: None,
                frame: 0,
                creation_score: 0.0,
                edges: Vec::new(),
            }],
            survivors: Vec::new(),
        }
    }

    pub const ROOT: usize = 0;

    /// Adds a node emitting `label` at `frame` from `pred`; `hat` and `ilm`
    /// are the increments along the new edge.
    pub fn add_node(
        &mut self,
        pred: usize,
        label: &str,
        frame: usize,
        hat: f64,
        ilm: f64,
    ) -> Result<usize, DecodeError> {
        let label = self.label_id(label)?;
        let p = self.node(pred)?;
        if pred != Self::ROOT && p.frame >= frame {
            return Err(DecodeError::InvalidTrace(format!(
                "node at frame {frame} cannot follow node at frame {}",
                p.frame
            )));
        }
        let creation_score = p.creation_score + hat;
        self.nodes.push(TraceNode {
            label: Some(label),
            frame,
            creation_score,
            edges: vec![TraceEdge { pred, hat, ilm }],
        });
        Ok(self.nodes.len() - 1)
    }

    /// Records that a hypothesis reaching `node` through `pred` was merged
    /// into `node`. Its total score must not exceed the node's.
    pub fn add_merged_edge(&mut self, node: usize, pred: usize, hat: f64, ilm: f64) -> Result<(), DecodeError> {
        let target = self.node(node)?;
        if node == Self::ROOT {
            return Err(DecodeError::InvalidTrace("root cannot absorb merges".into()));
        }
        let frame = target.frame;
        let ceiling = target.creation_score;
        let p = self.node(pred)?;
        if pred != Self::ROOT && p.frame >= frame {
            return Err(DecodeError::InvalidTrace("merged edge goes backwards in time".into()));
        }
        if p.creation_score + hat > ceiling + 1e-9 {
            return Err(DecodeError::InvalidTrace(
                "merged history outscores the node it joins".into(),
            ));
        }
        self.nodes[node].edges.push(TraceEdge { pred, hat, ilm });
        Ok(())
    }

    /// Marks `node` as a final hypothesis with total `score` (the excess
    /// over the node's creation score is trailing blank mass).
    pub fn add_survivor(&mut self, node: usize, score: f64) -> Result<(), DecodeError> {
        self.node(node)?;
        if self.survivors.iter().any(|s| s.node == node) {
            return Err(DecodeError::InvalidTrace(format!("node {node} already survives")));
        }
        let tokens = self.primary_tokens(node);
        self.survivors.push(Survivor { node, tokens, score });
        Ok(())
    }

    fn node(&self, id: usize) -> Result<&TraceNode, DecodeError> {
        self.nodes
            .get(id)
            .ok_or_else(|| DecodeError::InvalidTrace(format!("no node {id}")))
    }

    fn label_id(&self, label: &str) -> Result<u32, DecodeError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| i as u32)
            .ok_or_else(|| DecodeError::UnknownToken(label.to_owned()))
    }

    pub(crate) fn primary_tokens(&self, mut node: usize) -> Vec<String> {
        let mut out = Vec::new();
        while let Some(label) = self.nodes[node].label {
            out.push(self.labels[label as usize].clone());
            node = self.nodes[node].edges[0].pred;
        }
        out.reverse();
        out
    }

    pub fn survivors(&self) -> &[Survivor] {
        &self.survivors
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Incoming edges beyond the primary one, summed over nodes.
    pub fn merged_edges(&self) -> usize {
        self.nodes.iter().map(|n| n.edges.len().saturating_sub(1)).sum()
    }
}

/// Turns a trace into a segment lattice.
///
/// Without merging only each node's primary edge is kept, giving a tree of
/// search histories with one path per surviving hypothesis. With merging
/// every recorded edge is kept, so histories merged into a node share its
/// future. Survivors end on a shared final state reached by a copy of their
/// last arc that also carries the trailing blank mass. An empty survivor
/// is kept only when it is the sole survivor, since an epsilon-free lattice
/// cannot hold the empty path next to others.
pub fn build_lattice(trace: &BeamTrace, merge: bool, segment_id: &str) -> Result<Lattice, DecodeError> {
    if trace.survivors.is_empty() {
        return Err(DecodeError::EmptyTrace);
    }
    let survivors: Vec<&Survivor> = trace.survivors.iter().filter(|s| s.node != BeamTrace::ROOT).collect();
    if survivors.is_empty() {
        return Ok(Lattice {
            segment_id: segment_id.to_owned(),
            num_states: 1,
            start: 0,
            finals: vec![0],
            arcs: Vec::new(),
        });
    }

    let edges_of = |node: usize| -> &[TraceEdge] {
        let e = &trace.nodes[node].edges;
        if merge {
            e
        } else {
            &e[..1]
        }
    };

    // interior states: every predecessor reachable backwards from survivors
    let mut interior = BTreeSet::new();
    let mut stack: Vec<usize> = survivors
        .iter()
        .flat_map(|s| edges_of(s.node).iter().map(|e| e.pred))
        .collect();
    while let Some(n) = stack.pop() {
        if interior.insert(n) && n != BeamTrace::ROOT {
            stack.extend(edges_of(n).iter().map(|e| e.pred));
        }
    }

    let mut order: Vec<usize> = interior.iter().copied().filter(|&n| n != BeamTrace::ROOT).collect();
    order.sort_by_key(|&n| (trace.nodes[n].frame, n));
    let mut state = vec![usize::MAX; trace.nodes.len()];
    state[BeamTrace::ROOT] = 0;
    for (i, &n) in order.iter().enumerate() {
        state[n] = i + 1;
    }
    let sink = order.len() + 1;

    let label = |n: usize| trace.labels[trace.nodes[n].label.expect("non-root") as usize].clone();
    let mut arcs = Vec::new();
    for &n in &order {
        for e in edges_of(n) {
            arcs.push(Arc::new(state[e.pred], state[n], label(n), e.hat, e.ilm));
        }
    }
    let mut finals: Vec<&Survivor> = survivors;
    finals.sort_by_key(|s| (trace.nodes[s.node].frame, s.node));
    for s in finals {
        let trailing = s.score - trace.nodes[s.node].creation_score;
        for e in edges_of(s.node) {
            arcs.push(Arc::new(state[e.pred], sink, label(s.node), e.hat + trailing, e.ilm));
        }
    }
    Ok(Lattice {
        segment_id: segment_id.to_owned(),
        num_states: sink + 1,
        start: 0,
        finals: vec![sink],
        arcs,
    })
}
