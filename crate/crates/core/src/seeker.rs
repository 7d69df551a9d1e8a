//! Beam search for the most likely relation sequences from the anchors.

use std::cmp::Ordering;

use crate::coalesce::{reach_step, EntitySet, RelationSeq};
use crate::error::SeekError;
use crate::kg::{KnowledgeGraph, Subgraph, SELF_RELATION};
use crate::scorer::{step_options, validate_distribution, EdgeScorer, ScoreRequest};

pub const DEFAULT_BEAM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeekParams {
    pub beam: usize,
    pub tau_max: usize,
    pub k: usize,
}

impl Default for SeekParams {
    fn default() -> Self {
        Self { beam: DEFAULT_BEAM, tau_max: 2, k: 1 }
    }
}

impl SeekParams {
    pub fn validate(&self) -> Result<(), SeekError> {
        if self.tau_max < 1 {
            return Err(SeekError::BadParameters("tau_max must be at least 1".into()));
        }
        if self.k < 1 || self.k > self.beam {
            return Err(SeekError::BadParameters(format!(
                "need 1 <= k <= beam, got k={} beam={}",
                self.k, self.beam
            )));
        }
        Ok(())
    }

    /// Upper bound on options scored by one search.
    pub fn cost_bound(&self, num_relations_with_self: usize) -> u64 {
        (self.tau_max * self.beam * num_relations_with_self) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamEntry {
    pub frontier: EntitySet,
    pub seq: RelationSeq,
    pub nll: f64,
}

fn entry_order(a: &BeamEntry, b: &BeamEntry) -> Ordering {
    a.nll.total_cmp(&b.nll).then_with(|| a.seq.cmp(&b.seq))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeekResult {
    /// At most `k` entries, ascending by negative log-likelihood.
    pub entries: Vec<BeamEntry>,
    pub candidates: EntitySet,
    /// Options scored, summed over every scorer call.
    pub scorer_calls: u64,
    /// Entities on any frontier along the returned sequences.
    pub visited: EntitySet,
    /// Beam iterations performed.
    pub steps: usize,
    graph_fingerprint: u64,
}

/// Runs the beam search. Each step expands every live entry along the
/// outgoing relations of its frontier, plus the terminal `self` after the
/// first step; entries already terminated are carried over as they are.
pub fn seek<S: EdgeScorer + ?Sized>(
    g: &KnowledgeGraph,
    anchors: &EntitySet,
    question: &[String],
    scorer: &S,
    params: SeekParams,
) -> Result<SeekResult, SeekError> {
    params.validate()?;
    if anchors.is_empty() {
        return Err(SeekError::EmptyAnchors);
    }
    for &v in anchors.iter() {
        g.check_entity(v)?;
    }

    let mut beam = vec![BeamEntry { frontier: anchors.clone(), seq: RelationSeq::root(), nll: 0.0 }];
    let mut scorer_calls = 0u64;
    let mut t = 1;
    while t <= params.tau_max {
        let mut next = Vec::with_capacity(beam.len() * 4);
        for entry in &beam {
            if entry.seq.is_terminated() {
                next.push(entry.clone());
                continue;
            }
            let options = step_options(g, &entry.frontier, &entry.seq)?;
            if options.is_empty() {
                continue;
            }
            let probs = scorer.score(&ScoreRequest { question, prefix: &entry.seq, options: &options })?;
            validate_distribution(&probs, options.len())?;
            scorer_calls += options.len() as u64;
            for (&r, &p) in options.iter().zip(&probs) {
                if p <= 0.0 {
                    continue;
                }
                let frontier = if r == SELF_RELATION {
                    entry.frontier.clone()
                } else {
                    reach_step(g, &entry.frontier, r)?
                };
                next.push(BeamEntry { frontier, seq: entry.seq.extended(r), nll: entry.nll + (-p.ln()).max(0.0) });
            }
        }
        next.sort_by(entry_order);
        next.truncate(params.beam);
        let unchanged = next == beam;
        beam = next;
        if unchanged {
            break;
        }
        t += 1;
    }

    beam.truncate(params.k);
    let mut candidates = EntitySet::empty();
    let mut visited = EntitySet::empty();
    for e in &beam {
        candidates = candidates.union(&e.frontier);
        let mut frontier = anchors.clone();
        visited = visited.union(&frontier);
        for &r in e.seq.relations() {
            frontier = reach_step(g, &frontier, r)?;
            visited = visited.union(&frontier);
        }
    }
    Ok(SeekResult {
        entries: beam,
        candidates,
        scorer_calls,
        visited,
        steps: t.min(params.tau_max),
        graph_fingerprint: g.fingerprint(),
    })
}

/// Induced subgraph over the visited entities and their one-hop
/// out-neighbors (in-neighbors too, when inverse relations are loaded).
pub fn candidate_subgraph(g: &KnowledgeGraph, result: &SeekResult) -> Result<Subgraph, SeekError> {
    if result.graph_fingerprint != g.fingerprint() {
        return Err(SeekError::GraphMismatch);
    }
    Ok(neighborhood_subgraph(g, &result.visited)?)
}

pub fn neighborhood_subgraph(g: &KnowledgeGraph, visited: &EntitySet) -> Result<Subgraph, crate::error::KgError> {
    let mut nodes: Vec<_> = visited.as_slice().to_vec();
    for &v in visited.iter() {
        g.check_entity(v)?;
        nodes.extend(g.out_edges(v).map(|(_, o)| o));
    }
    g.induced_subgraph(&EntitySet::from_unsorted(nodes))
}
