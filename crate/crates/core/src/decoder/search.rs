use std::cmp::Ordering;
use std::collections::HashMap;

use super::label_lm::{LabelLm, BOS};
use super::trace::{BeamTrace, Survivor, TraceEdge, TraceNode};
use super::{DecodeError, DecoderConfig, EmissionMatrix};

struct Hyp {
    node: usize,
    /// emitted labels as indices into the sorted label list
    tokens: Vec<u32>,
    /// last `label_context` label-LM ids, BOS-padded
    ctx: Vec<u32>,
    score: f64,
    /// fusion scorer value of the current prefix
    fused: f64,
}

struct Cand {
    parent: usize,
    emit: Option<u32>,
    tokens: Vec<u32>,
    ctx: Vec<u32>,
    score: f64,
    fused: f64,
    hat: f64,
    ilm: f64,
    merged: Vec<TraceEdge>,
}

/// Best first; ties go to the lexicographically smaller token sequence.
fn rank(a: &Cand, b: &Cand) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| a.emit.is_some().cmp(&b.emit.is_some()))
        .then_with(|| a.parent.cmp(&b.parent))
}

struct Labels {
    /// sorted non-blank tokens
    sorted: Vec<String>,
    /// emission column of each sorted token
    column: Vec<usize>,
    /// label-LM id of each sorted token
    lm_id: Vec<u32>,
}

impl Labels {
    fn new(em: &EmissionMatrix, lm: &LabelLm) -> Result<Self, DecodeError> {
        let mut cols: Vec<usize> = (0..em.vocab().len()).filter(|&c| c != em.blank()).collect();
        cols.sort_by(|&a, &b| em.vocab()[a].cmp(&em.vocab()[b]));
        let sorted: Vec<String> = cols.iter().map(|&c| em.vocab()[c].clone()).collect();
        let lm_id = sorted.iter().map(|t| lm.id(t)).collect::<Result<_, _>>()?;
        Ok(Self {
            sorted,
            column: cols,
            lm_id,
        })
    }

    fn text(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(|&t| self.sorted[t as usize].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub(crate) fn validate(config: &DecoderConfig, lm: &LabelLm) -> Result<(), DecodeError> {
    if config.beam_size == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    if config.label_context == 0 {
        return Err(DecodeError::ZeroContext);
    }
    if lm.order() - 1 > config.label_context {
        return Err(DecodeError::LmOrderTooHigh {
            order: lm.order(),
            context: config.label_context,
        });
    }
    if !(config.label_lm_weight >= 0.0 && config.label_lm_weight.is_finite()) {
        return Err(DecodeError::InvalidConfig(
            "label LM weight must be finite and non-negative".into(),
        ));
    }
    if let Some(f) = &config.fusion {
        for (name, w) in [("fusion weight", f.weight), ("fusion ILM weight", f.ilm_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(DecodeError::InvalidConfig(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
    }
    Ok(())
}

/// Frame-synchronous beam search recording every emission node.
pub(crate) fn beam_search(
    em: &EmissionMatrix,
    lm: &LabelLm,
    config: &DecoderConfig,
    carried: &[String],
) -> Result<BeamTrace, DecodeError> {
    validate(config, lm)?;
    if em.frames() == 0 {
        return Err(DecodeError::NoFrames);
    }
    let labels = Labels::new(em, lm)?;
    let n = config.label_context;
    let merge = config.merge_states && config.fusion.is_none();

    let carried_ids = lm.encode(carried)?;
    let mut ctx = vec![BOS; n.saturating_sub(carried_ids.len())];
    ctx.extend_from_slice(&carried_ids[carried_ids.len().saturating_sub(n)..]);

    let fusion_context = carried.join(" ");
    let mut fusion_cache: HashMap<Vec<u32>, f64> = HashMap::new();
    let mut fused0 = 0.0;
    if let Some(f) = &config.fusion {
        fused0 = f.scorer.score(&fusion_context, &[String::new()])?[0];
    }

    let mut trace = BeamTrace::new(labels.sorted.clone());
    let mut beam = vec![Hyp {
        node: BeamTrace::ROOT,
        tokens: Vec::new(),
        ctx,
        score: 0.0,
        fused: fused0,
    }];

    for frame in 0..em.frames() {
        let row = &em.logits()[frame];
        let blank_lp = row[em.blank()];

        if let Some(f) = &config.fusion {
            let mut missing: Vec<Vec<u32>> = Vec::new();
            for h in &beam {
                for (r, &col) in labels.column.iter().enumerate() {
                    if row[col] == f64::NEG_INFINITY || !h.score.is_finite() {
                        continue;
                    }
                    let mut prefix = h.tokens.clone();
                    prefix.push(r as u32);
                    if !fusion_cache.contains_key(&prefix) {
                        missing.push(prefix);
                    }
                }
            }
            missing.sort();
            missing.dedup();
            if !missing.is_empty() {
                let texts: Vec<String> = missing.iter().map(|p| labels.text(p)).collect();
                let scores = f.scorer.score(&fusion_context, &texts)?;
                for (p, s) in missing.into_iter().zip(scores) {
                    fusion_cache.insert(p, s);
                }
            }
        }

        let mut cands: Vec<Cand> = Vec::with_capacity(beam.len() * (labels.sorted.len() + 1));
        for (pi, h) in beam.iter().enumerate() {
            let base = trace.nodes[h.node].creation_score;
            let score = h.score + blank_lp;
            if score.is_finite() {
                cands.push(Cand {
                    parent: pi,
                    emit: None,
                    tokens: h.tokens.clone(),
                    ctx: h.ctx.clone(),
                    score,
                    fused: h.fused,
                    hat: 0.0,
                    ilm: 0.0,
                    merged: Vec::new(),
                });
            }
            for (r, &col) in labels.column.iter().enumerate() {
                let lm_id = labels.lm_id[r];
                let ilm = lm.log_prob_ids(&h.ctx, lm_id);
                let mut score = h.score + row[col] + config.label_lm_weight * ilm;
                let mut tokens = h.tokens.clone();
                tokens.push(r as u32);
                let mut fused = h.fused;
                if let Some(f) = &config.fusion {
                    let Some(&s) = fusion_cache.get(&tokens) else {
                        continue;
                    };
                    fused = s;
                    score += f.weight * (s - h.fused) - f.ilm_weight * ilm;
                }
                if !score.is_finite() {
                    continue;
                }
                let mut next_ctx = h.ctx[1..].to_vec();
                next_ctx.push(lm_id);
                cands.push(Cand {
                    parent: pi,
                    emit: Some(r as u32),
                    tokens,
                    ctx: next_ctx,
                    score,
                    fused,
                    hat: score - base,
                    ilm,
                    merged: Vec::new(),
                });
            }
        }

        // one candidate per label sequence
        let mut best_for: HashMap<&[u32], usize> = HashMap::new();
        for (i, c) in cands.iter().enumerate() {
            best_for
                .entry(&c.tokens)
                .and_modify(|j| {
                    if rank(c, &cands[*j]) == Ordering::Less {
                        *j = i;
                    }
                })
                .or_insert(i);
        }
        let mut keep: Vec<usize> = best_for.into_values().collect();
        keep.sort_unstable();
        let mut cands: Vec<Cand> = {
            let mut slots: Vec<Option<Cand>> = cands.into_iter().map(Some).collect();
            keep.iter().map(|&i| slots[i].take().expect("kept once")).collect()
        };

        if merge {
            let mut groups: HashMap<Vec<u32>, Vec<usize>> = HashMap::new();
            for (i, c) in cands.iter().enumerate() {
                if c.emit.is_some() {
                    groups.entry(c.ctx.clone()).or_default().push(i);
                }
            }
            let mut dropped = vec![false; cands.len()];
            let mut group_list: Vec<Vec<usize>> = groups.into_values().collect();
            group_list.sort();
            for mut g in group_list {
                if g.len() < 2 {
                    continue;
                }
                g.sort_by(|&a, &b| rank(&cands[a], &cands[b]));
                let winner = g[0];
                for &loser in &g[1..] {
                    let c = &cands[loser];
                    let edge = TraceEdge {
                        pred: beam[c.parent].node,
                        hat: c.hat,
                        ilm: c.ilm,
                    };
                    dropped[loser] = true;
                    cands[winner].merged.push(edge);
                }
            }
            let mut i = 0;
            cands.retain(|_| {
                let keep = !dropped[i];
                i += 1;
                keep
            });
        }

        cands.sort_by(rank);
        cands.truncate(config.beam_size);

        let mut next = Vec::with_capacity(cands.len());
        for c in cands {
            let parent = &beam[c.parent];
            let node = match c.emit {
                None => parent.node,
                Some(label) => {
                    let mut edges = vec![TraceEdge {
                        pred: parent.node,
                        hat: c.hat,
                        ilm: c.ilm,
                    }];
                    edges.extend(c.merged);
                    trace.nodes.push(TraceNode {
                        label: Some(label),
                        frame,
                        creation_score: c.score,
                        edges,
                    });
                    trace.nodes.len() - 1
                }
            };
            next.push(Hyp {
                node,
                tokens: c.tokens,
                ctx: c.ctx,
                score: c.score,
                fused: c.fused,
            });
        }
        if next.is_empty() {
            return Err(DecodeError::NoHypotheses { frame });
        }
        beam = next;
    }

    trace.survivors = beam
        .into_iter()
        .map(|h| Survivor {
            node: h.node,
            tokens: h.tokens.iter().map(|&t| labels.sorted[t as usize].clone()).collect(),
            score: h.score,
        })
        .collect();
    Ok(trace)
}
