//! Independent oracles and the randomized verification suites built on them.
//!
//! Nothing here reuses the frontier machinery it checks: reach sets come
//! from explicit node-path enumeration, query denotations from exhaustive
//! assignment search, and beam results from full enumeration of sequences.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coalesce::{reach, EntitySet, RelationSeq};
use crate::epfo::{self, EpfoQuery, Formula, Term};
use crate::error::ScorerError;
use crate::kg::{EntityId, Fnv64, GraphBuilder, KnowledgeGraph, RelationId, SELF_RELATION};
use crate::scorer::{validate_distribution, EdgeScorer, ScoreRequest};
use crate::seeker::{seek, SeekParams};

/// Uniform random multigraph with entities `e0..`, relations `r1..` (all
/// interned, even when unused) and up to `n_edges` distinct edges.
pub fn random_graph(n_entities: usize, n_relations: usize, n_edges: usize, seed: u64) -> KnowledgeGraph {
    let n_entities = n_entities.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::default();
    for i in 0..n_entities {
        b.intern_entity(&format!("e{i}"));
    }
    let rels: Vec<RelationId> = (1..=n_relations)
        .map(|j| b.intern_relation(&format!("r{j}")).expect("fresh relation name"))
        .collect();
    if !rels.is_empty() {
        for _ in 0..n_edges {
            let s = rng.gen_range(0..n_entities) as EntityId;
            let r = rels[rng.gen_range(0..rels.len())];
            let o = rng.gen_range(0..n_entities) as EntityId;
            b.add_edge(s, r, o).expect("ids are interned");
        }
    }
    b.build()
}

/// Endpoints of every node-level path from the anchors whose edge labels
/// spell `rels` (leading `self` entries are ignored).
pub fn brute_force_reach(g: &KnowledgeGraph, anchors: &EntitySet, rels: &[RelationId]) -> EntitySet {
    let rels: Vec<RelationId> = rels.iter().copied().filter(|&r| r != SELF_RELATION).collect();
    let mut out = BTreeSet::new();
    let mut stack: Vec<(EntityId, usize)> = anchors.iter().map(|&a| (a, 0)).collect();
    while let Some((v, depth)) = stack.pop() {
        if depth == rels.len() {
            out.insert(v);
            continue;
        }
        for (r, o) in g.out_edges(v) {
            if r == rels[depth] {
                stack.push((o, depth + 1));
            }
        }
    }
    out.into_iter().collect()
}

/// Walks every node-level path of at most `max_len` edges from the anchors
/// and groups endpoints by the label sequence walked.
pub fn brute_force_path_sets(g: &KnowledgeGraph, anchors: &EntitySet, max_len: usize) -> BTreeMap<Vec<RelationId>, EntitySet> {
    let mut groups: BTreeMap<Vec<RelationId>, BTreeSet<EntityId>> = BTreeMap::new();
    let mut stack: Vec<(EntityId, Vec<RelationId>)> = anchors.iter().map(|&a| (a, Vec::new())).collect();
    while let Some((v, labels)) = stack.pop() {
        if labels.len() < max_len {
            for (r, o) in g.out_edges(v) {
                let mut next = labels.clone();
                next.push(r);
                stack.push((o, next));
            }
        }
        groups.entry(labels).or_default().insert(v);
    }
    groups.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
}

/// Smallest supersets of `answers` among the path-enumerated reach sets of
/// at most `max_len` relations, as sorted sequences.
pub fn brute_force_weak_labels(
    g: &KnowledgeGraph,
    anchors: &EntitySet,
    answers: &EntitySet,
    max_len: usize,
) -> Vec<RelationSeq> {
    let covering: Vec<(Vec<RelationId>, usize)> = brute_force_path_sets(g, anchors, max_len)
        .into_iter()
        .filter(|(_, ends)| answers.iter().all(|a| ends.contains(*a)))
        .map(|(k, ends)| (k, ends.len()))
        .collect();
    let Some(min) = covering.iter().map(|c| c.1).min() else { return Vec::new() };
    let mut out: Vec<RelationSeq> =
        covering.into_iter().filter(|c| c.1 == min).map(|(k, _)| RelationSeq::from_relations(&k)).collect();
    out.sort();
    out
}

/// Deterministic pseudo-random scorer: each option's weight is a hash of
/// (seed, prefix, option), normalized over the request.
#[derive(Debug, Clone, Copy)]
pub struct HashScorer {
    seed: u64,
}

impl HashScorer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl EdgeScorer for HashScorer {
    fn score(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        if req.options.is_empty() {
            return Err(ScorerError::EmptyOptions);
        }
        let weights: Vec<f64> = req
            .options
            .iter()
            .map(|&o| {
                let mut h = Fnv64::default();
                h.write_u64(self.seed);
                for &r in req.prefix.as_slice() {
                    h.write_u64(r as u64);
                }
                h.write_u64(u64::MAX);
                h.write_u64(o as u64);
                0.05 + (h.finish() >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let total: f64 = weights.iter().sum();
        Ok(weights.into_iter().map(|w| w / total).collect())
    }
}

/// Every sequence the beam search could end with when nothing is pruned:
/// terminated sequences of 1..tau_max-1 relations and unterminated ones of
/// exactly tau_max relations, scored by the product of per-step
/// probabilities. Sorted by (nll, sequence).
pub fn exhaustive_seek<S: EdgeScorer + ?Sized>(
    g: &KnowledgeGraph,
    anchors: &EntitySet,
    question: &[String],
    scorer: &S,
    tau_max: usize,
) -> Result<Vec<(RelationSeq, f64)>, ScorerError> {
    let n_rel = g.num_relations() as RelationId;
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<RelationId>, f64)> = vec![(Vec::new(), 0.0)];
    while let Some((rels, nll)) = stack.pop() {
        let prefix = RelationSeq::from_relations(&rels);
        if rels.len() == tau_max {
            out.push((prefix, nll));
            continue;
        }
        let mut options: Vec<RelationId> = Vec::new();
        if !rels.is_empty() {
            options.push(SELF_RELATION);
        }
        for r in 1..n_rel {
            let mut ext = rels.clone();
            ext.push(r);
            if !brute_force_reach(g, anchors, &ext).is_empty() {
                options.push(r);
            }
        }
        if options.is_empty() {
            continue;
        }
        let probs = scorer.score(&ScoreRequest { question, prefix: &prefix, options: &options })?;
        validate_distribution(&probs, options.len())?;
        for (&r, &p) in options.iter().zip(&probs) {
            if p <= 0.0 {
                continue;
            }
            let step = nll + (-p.ln()).max(0.0);
            if r == SELF_RELATION {
                out.push((prefix.extended(SELF_RELATION), step));
            } else {
                let mut ext = rels.clone();
                ext.push(r);
                stack.push((ext, step));
            }
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

fn formula_holds(g: &KnowledgeGraph, f: &Formula, anchors: &[EntityId], value: &[EntityId]) -> bool {
    let term = |t: Term| match t {
        Term::Anchor(i) => anchors[i],
        Term::Var(v) => value[v],
    };
    match f {
        Formula::Atom(a) => g.has_edge(term(a.subject), a.relation, term(a.object)),
        Formula::And(ps) => ps.iter().all(|p| formula_holds(g, p, anchors, value)),
        Formula::Or(ps) => ps.iter().any(|p| formula_holds(g, p, anchors, value)),
    }
}

/// Denotation by trying every assignment of every variable. Exponential in
/// the number of variables; only for tiny graphs.
pub fn naive_denotation(g: &KnowledgeGraph, q: &EpfoQuery) -> EntitySet {
    let n = g.num_entities() as EntityId;
    let k = q.var_names.len();
    let mut out = BTreeSet::new();
    if n == 0 {
        return EntitySet::empty();
    }
    let mut value = vec![0 as EntityId; k];
    loop {
        if formula_holds(g, &q.body, &q.anchors, &value) {
            out.insert(value[q.target]);
        }
        let mut i = 0;
        while i < k {
            value[i] += 1;
            if value[i] < n {
                break;
            }
            value[i] = 0;
            i += 1;
        }
        if i == k {
            break;
        }
    }
    out.into_iter().collect()
}

/// Outcome of one randomized suite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    /// Seed of the first failing instance.
    pub failing_seed: Option<u64>,
    /// Extra sub-counts, e.g. individual sequences compared.
    pub detail: String,
}

impl SuiteOutcome {
    pub fn ok(&self) -> bool {
        self.passed == self.total && self.failing_seed.is_none()
    }

    fn record(&mut self, seed: u64, ok: bool) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else if self.failing_seed.is_none() {
            self.failing_seed = Some(seed);
        }
    }
}

fn instance_seed(root: u64, i: usize) -> u64 {
    root.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64)
}

/// Random graph with |V| <= 200, |E| <= 2000, |R| <= 10, and 1-3 anchors.
fn coalescing_instance(seed: u64) -> (KnowledgeGraph, EntitySet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(10..=200);
    let r = rng.gen_range(1..=10);
    let e = rng.gen_range(0..=2000);
    let g = random_graph(n, r, e, seed);
    let anchors: EntitySet = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..n) as EntityId).collect();
    (g, anchors)
}

/// Compares `reach` against node-path enumeration for every sequence of at
/// most three relations. With `inject_fault`, one reach result is corrupted
/// to prove the suite can fail.
pub fn coalescing_suite(n_graphs: usize, root_seed: u64, inject_fault: bool) -> SuiteOutcome {
    let mut out = SuiteOutcome { name: "coalescing", passed: 0, total: 0, failing_seed: None, detail: String::new() };
    let mut sequences = 0usize;
    for i in 0..n_graphs {
        let seed = instance_seed(root_seed, i);
        let (g, anchors) = coalescing_instance(seed);
        let oracle = brute_force_path_sets(&g, &anchors, 3);
        let n_rel = g.num_relations() as RelationId;
        let mut ok = true;
        let mut layer: Vec<Vec<RelationId>> = vec![Vec::new()];
        for _ in 0..=3 {
            let mut next = Vec::new();
            for rels in layer {
                let mut got = reach(&g, &anchors, &RelationSeq::from_relations(&rels)).expect("valid ids");
                if inject_fault && i == 0 && sequences == 0 {
                    got = got.union(&EntitySet::singleton(g.num_entities() as EntityId));
                }
                sequences += 1;
                let want = oracle.get(&rels).cloned().unwrap_or_default();
                ok &= got == want;
                if rels.len() < 3 {
                    for r in 1..n_rel {
                        let mut ext = rels.clone();
                        ext.push(r);
                        next.push(ext);
                    }
                }
            }
            layer = next;
        }
        out.record(seed, ok);
    }
    out.detail = format!("{sequences} sequences");
    out
}

/// Wide-beam search against exhaustive enumeration on graphs with |R| <= 3
/// and tau_max <= 3, using the hash scorer.
pub fn beam_suite(n_cases: usize, root_seed: u64) -> SuiteOutcome {
    let mut out = SuiteOutcome { name: "beam", passed: 0, total: 0, failing_seed: None, detail: String::new() };
    for i in 0..n_cases {
        let seed = instance_seed(root_seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..=30);
        let r = rng.gen_range(1..=3);
        let e = rng.gen_range(0..=4 * n);
        let tau = rng.gen_range(1..=3);
        let g = random_graph(n, r, e, seed);
        let anchors: EntitySet = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(0..n) as EntityId).collect();
        let beam = (r + 1).pow(tau as u32);
        let k = rng.gen_range(1..=beam);
        let scorer = HashScorer::new(seed);
        let ok = match (
            seek(&g, &anchors, &[], &scorer, SeekParams { beam, tau_max: tau, k }),
            exhaustive_seek(&g, &anchors, &[], &scorer, tau),
        ) {
            (Ok(res), Ok(want)) => {
                res.entries.len() == want.len().min(k)
                    && res.entries.iter().zip(&want).all(|(e, (s, nll))| &e.seq == s && (e.nll - nll).abs() <= 1e-9)
            }
            _ => false,
        };
        out.record(seed, ok);
    }
    out
}

/// Random graph and random valid query; checks the denotation is contained
/// in the union of reach sets of the cover sequences, and that there are at
/// most n_or + 1 of them.
pub fn containment_suite(n_pairs: usize, root_seed: u64) -> SuiteOutcome {
    let mut out = SuiteOutcome { name: "containment", passed: 0, total: 0, failing_seed: None, detail: String::new() };
    let mut nonempty = 0usize;
    for i in 0..n_pairs {
        let seed = instance_seed(root_seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(5..=60);
        let r = rng.gen_range(1..=6);
        let e = rng.gen_range(n..=6 * n);
        let g = random_graph(n, r, e, seed);
        let ok = (|| -> Result<bool, crate::error::QueryError> {
            let q = epfo::random_query(&g, 3, 4, seed)?;
            let answers = epfo::evaluate(&g, &q)?;
            let paths = epfo::cover_paths(&q)?;
            let seqs = epfo::cover_sequences(&q)?;
            let all_anchors: EntitySet = q.anchors.iter().copied().collect();
            let mut per_anchor = EntitySet::empty();
            let mut from_all = EntitySet::empty();
            for p in &paths {
                per_anchor = per_anchor.union(&reach(&g, &EntitySet::singleton(p.anchor), &p.seq)?);
            }
            for s in &seqs {
                from_all = from_all.union(&reach(&g, &all_anchors, s)?);
            }
            if !answers.is_empty() {
                nonempty += 1;
            }
            Ok(seqs.len() <= q.n_or() + 1 && answers.is_subset(&per_anchor) && answers.is_subset(&from_all))
        })()
        .unwrap_or(false);
        out.record(seed, ok);
    }
    out.detail = format!("{nonempty} with nonempty denotation");
    out
}
