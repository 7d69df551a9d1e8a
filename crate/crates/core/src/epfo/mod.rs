//! Existential positive first-order queries: AST, DNF rewriting,
//! dependency-graph validation, brute-force evaluation, and extraction of
//! relation sequences whose reach covers the denotation.

mod parse;

pub use parse::{parse_bindings, parse_query, parse_query_line};

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coalesce::{EntitySet, RelationSeq};
use crate::error::QueryError;
use crate::kg::{EntityId, KnowledgeGraph, RelationId};

/// A query term: an anchor (index into the query's anchors) or a variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Anchor(usize),
    Var(usize),
}

/// `relation(subject, object)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub relation: RelationId,
    pub subject: Term,
    pub object: Term,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Atom(Atom),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    pub fn atoms(&self) -> Vec<Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms(&self, out: &mut Vec<Atom>) {
        match self {
            Formula::Atom(a) => out.push(*a),
            Formula::And(ps) | Formula::Or(ps) => ps.iter().for_each(|p| p.collect_atoms(out)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpfoQuery {
    /// Variable id of the answer variable.
    pub target: usize,
    pub var_names: Vec<String>,
    pub anchor_names: Vec<String>,
    /// Entity bound to each anchor, parallel to `anchor_names`.
    pub anchors: Vec<EntityId>,
    pub body: Formula,
}

/// Disjunction of conjunctions sharing the target and the anchor table.
#[derive(Debug, Clone, PartialEq)]
pub struct DnfQuery {
    pub target: usize,
    pub var_names: Vec<String>,
    pub anchor_names: Vec<String>,
    pub anchors: Vec<EntityId>,
    /// Each conjunct's atoms are sorted and deduplicated.
    pub conjuncts: Vec<Vec<Atom>>,
}

impl DnfQuery {
    /// Number of disjunctions.
    pub fn n_or(&self) -> usize {
        self.conjuncts.len().saturating_sub(1)
    }

    pub fn num_vars(&self) -> usize {
        self.var_names.len()
    }

    fn conjunct_query(&self, i: usize) -> DnfQuery {
        DnfQuery { conjuncts: vec![self.conjuncts[i].clone()], ..self.clone() }
    }
}

fn product(parts: Vec<Vec<Vec<Atom>>>) -> Vec<Vec<Atom>> {
    parts.into_iter().fold(vec![Vec::new()], |acc, part| {
        let mut out = Vec::with_capacity(acc.len() * part.len());
        for left in &acc {
            for right in &part {
                let mut c = left.clone();
                c.extend_from_slice(right);
                out.push(c);
            }
        }
        out
    })
}

fn dnf_of(f: &Formula) -> Vec<Vec<Atom>> {
    match f {
        Formula::Atom(a) => vec![vec![*a]],
        Formula::Or(ps) => ps.iter().flat_map(dnf_of).collect(),
        Formula::And(ps) => product(ps.iter().map(dnf_of).collect()),
    }
}

/// Distributes conjunction over disjunction. Conjuncts are sorted and
/// deduplicated, so the result is canonical.
pub fn to_dnf(q: &EpfoQuery) -> DnfQuery {
    let mut conjuncts: Vec<Vec<Atom>> = dnf_of(&q.body)
        .into_iter()
        .map(|mut c| {
            c.sort_unstable();
            c.dedup();
            c
        })
        .collect();
    conjuncts.sort();
    conjuncts.dedup();
    DnfQuery {
        target: q.target,
        var_names: q.var_names.clone(),
        anchor_names: q.anchor_names.clone(),
        anchors: q.anchors.clone(),
        conjuncts,
    }
}

/// First violated validity condition of a conjunct's dependency graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyConjunct,
    SelfAtom(Atom),
    AnchorAsObject(Atom),
    TargetNotSink,
    TargetMissing,
    Cycle,
    ExtraSink(usize),
    NonAnchorSource(usize),
    OffPath(usize),
    UnknownTerm,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyConjunct => write!(f, "conjunct has no atoms"),
            Violation::SelfAtom(_) => write!(f, "atom relates a term to itself"),
            Violation::AnchorAsObject(_) => write!(f, "anchor appears as an object, so it is not a source"),
            Violation::TargetNotSink => write!(f, "target is the subject of an atom, so it is not the unique sink"),
            Violation::TargetMissing => write!(f, "target does not occur as an object"),
            Violation::Cycle => write!(f, "dependency graph has a cycle"),
            Violation::ExtraSink(v) => write!(f, "variable {v} is a sink other than the target"),
            Violation::NonAnchorSource(v) => write!(f, "variable {v} is a source but not an anchor"),
            Violation::OffPath(v) => write!(f, "variable {v} is not on an anchor-to-target path"),
            Violation::UnknownTerm => write!(f, "atom refers to an undeclared anchor or variable"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityReport {
    /// One entry per conjunct.
    pub conjuncts: Vec<Result<(), Violation>>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        !self.conjuncts.is_empty() && self.conjuncts.iter().all(Result::is_ok)
    }

    pub fn first_violation(&self) -> Option<(usize, &Violation)> {
        self.conjuncts.iter().enumerate().find_map(|(i, r)| r.as_ref().err().map(|v| (i, v)))
    }
}

/// Dependency graph nodes: anchors first, then variables.
struct DepGraph {
    n_anchor: usize,
    n: usize,
    succ: Vec<Vec<(usize, RelationId)>>,
    indeg: Vec<usize>,
    present: Vec<bool>,
}

impl DepGraph {
    fn new(q: &DnfQuery, atoms: &[Atom]) -> Self {
        let n_anchor = q.anchors.len();
        let n = n_anchor + q.var_names.len();
        let mut g = DepGraph { n_anchor, n, succ: vec![Vec::new(); n], indeg: vec![0; n], present: vec![false; n] };
        for a in atoms {
            let (s, o) = (g.node(a.subject), g.node(a.object));
            g.succ[s].push((o, a.relation));
            g.indeg[o] += 1;
            g.present[s] = true;
            g.present[o] = true;
        }
        for list in &mut g.succ {
            list.sort_unstable_by_key(|&(o, r)| (r, o));
        }
        g
    }

    fn node(&self, t: Term) -> usize {
        match t {
            Term::Anchor(i) => i,
            Term::Var(v) => self.n_anchor + v,
        }
    }

    fn topo_order(&self) -> Option<Vec<usize>> {
        let mut indeg = self.indeg.clone();
        let mut stack: Vec<usize> = (0..self.n).rev().filter(|&v| self.present[v] && indeg[v] == 0).collect();
        let mut order = Vec::new();
        while let Some(v) = stack.pop() {
            order.push(v);
            for &(o, _) in self.succ[v].iter().rev() {
                indeg[o] -= 1;
                if indeg[o] == 0 {
                    stack.push(o);
                }
            }
        }
        (order.len() == self.present.iter().filter(|&&p| p).count()).then_some(order)
    }

    fn reachable(&self, starts: &[usize], forward: bool) -> Vec<bool> {
        let mut pred: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        if !forward {
            for (s, list) in self.succ.iter().enumerate() {
                for &(o, _) in list {
                    pred[o].push(s);
                }
            }
        }
        let mut seen = vec![false; self.n];
        let mut stack: Vec<usize> = starts.to_vec();
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut seen[v], true) {
                continue;
            }
            if forward {
                stack.extend(self.succ[v].iter().map(|&(o, _)| o));
            } else {
                stack.extend(pred[v].iter().copied());
            }
        }
        seen
    }
}

fn validate_conjunct(q: &DnfQuery, atoms: &[Atom]) -> Result<(), Violation> {
    if atoms.is_empty() {
        return Err(Violation::EmptyConjunct);
    }
    let known = |t: Term| match t {
        Term::Anchor(i) => i < q.anchors.len(),
        Term::Var(v) => v < q.var_names.len(),
    };
    if q.target >= q.var_names.len() || atoms.iter().any(|a| !known(a.subject) || !known(a.object)) {
        return Err(Violation::UnknownTerm);
    }
    if let Some(a) = atoms.iter().find(|a| a.subject == a.object) {
        return Err(Violation::SelfAtom(*a));
    }
    if let Some(a) = atoms.iter().find(|a| matches!(a.object, Term::Anchor(_))) {
        return Err(Violation::AnchorAsObject(*a));
    }
    let target = Term::Var(q.target);
    if atoms.iter().any(|a| a.subject == target) {
        return Err(Violation::TargetNotSink);
    }
    if !atoms.iter().any(|a| a.object == target) {
        return Err(Violation::TargetMissing);
    }
    let dg = DepGraph::new(q, atoms);
    if dg.topo_order().is_none() {
        return Err(Violation::Cycle);
    }
    let target_node = dg.node(target);
    for v in 0..q.var_names.len() {
        let node = dg.n_anchor + v;
        if !dg.present[node] {
            continue;
        }
        if node != target_node && dg.succ[node].is_empty() {
            return Err(Violation::ExtraSink(v));
        }
        if dg.indeg[node] == 0 {
            return Err(Violation::NonAnchorSource(v));
        }
    }
    let anchors: Vec<usize> = (0..dg.n_anchor).filter(|&a| dg.present[a]).collect();
    let from_anchor = dg.reachable(&anchors, true);
    let to_target = dg.reachable(&[target_node], false);
    for v in 0..q.var_names.len() {
        let node = dg.n_anchor + v;
        if dg.present[node] && !(from_anchor[node] && to_target[node]) {
            return Err(Violation::OffPath(v));
        }
    }
    Ok(())
}

/// Checks every conjunct's dependency graph: no self atoms, acyclic, sources
/// are exactly anchors, the target is the unique sink, and every variable
/// lies on an anchor-to-target path.
pub fn validate(q: &DnfQuery) -> ValidityReport {
    ValidityReport { conjuncts: q.conjuncts.iter().map(|c| validate_conjunct(q, c)).collect() }
}

fn require_valid(q: &DnfQuery) -> Result<(), QueryError> {
    let report = validate(q);
    if q.conjuncts.is_empty() {
        return Err(QueryError::Invalid("query has no conjuncts".into()));
    }
    match report.first_violation() {
        Some((i, v)) => Err(QueryError::Invalid(format!("conjunct {i}: {v}"))),
        None => Ok(()),
    }
}

/// Denotation of one valid conjunct: backtracking over variable assignments
/// in topological order, so each variable ranges over the out-neighbors of
/// an already-bound predecessor. Every atom is checked once both ends are
/// bound.
fn evaluate_conjunct(g: &KnowledgeGraph, q: &DnfQuery, atoms: &[Atom], out: &mut Vec<EntityId>) -> Result<(), QueryError> {
    let dg = DepGraph::new(q, atoms);
    let order = dg.topo_order().ok_or_else(|| QueryError::Invalid("cycle".into()))?;
    let mut value: Vec<Option<EntityId>> = vec![None; dg.n];
    for (i, &e) in q.anchors.iter().enumerate() {
        g.check_entity(e)?;
        value[i] = Some(e);
    }
    for a in atoms {
        g.check_relation(a.relation)?;
    }
    let vars: Vec<usize> = order.into_iter().filter(|&v| v >= dg.n_anchor).collect();
    // For each variable: an incoming atom supplying its domain, and the
    // atoms that become checkable once it is bound.
    let mut feeder = Vec::with_capacity(vars.len());
    let mut checks: Vec<Vec<Atom>> = vec![Vec::new(); vars.len()];
    for (i, &v) in vars.iter().enumerate() {
        let incoming: Vec<&Atom> = atoms.iter().filter(|a| dg.node(a.object) == v).collect();
        feeder.push(*incoming[0]);
        let pos = |n: usize| if n < dg.n_anchor { None } else { vars.iter().position(|&x| x == n) };
        for a in atoms {
            let (s, o) = (dg.node(a.subject), dg.node(a.object));
            let last = pos(s).max(pos(o));
            if last == Some(i) {
                checks[i].push(*a);
            }
        }
    }
    let target_node = dg.n_anchor + q.target;
    #[allow(clippy::too_many_arguments)]
    fn go(
        g: &KnowledgeGraph,
        dg: &DepGraph,
        vars: &[usize],
        feeder: &[Atom],
        checks: &[Vec<Atom>],
        value: &mut Vec<Option<EntityId>>,
        i: usize,
        target_node: usize,
        out: &mut Vec<EntityId>,
    ) {
        if i == vars.len() {
            out.push(value[target_node].unwrap());
            return;
        }
        let f = feeder[i];
        let s = value[dg.node(f.subject)].expect("predecessor bound in topological order");
        for &cand in g.neighbors_unchecked(s, f.relation) {
            value[vars[i]] = Some(cand);
            let ok = checks[i].iter().all(|a| {
                let (x, y) = (value[dg.node(a.subject)].unwrap(), value[dg.node(a.object)].unwrap());
                g.has_edge(x, a.relation, y)
            });
            if ok {
                go(g, dg, vars, feeder, checks, value, i + 1, target_node, out);
            }
        }
        value[vars[i]] = None;
    }
    go(g, &dg, &vars, &feeder, &checks, &mut value, 0, target_node, out);
    Ok(())
}

/// Entities satisfying some conjunct when bound to the target.
pub fn evaluate(g: &KnowledgeGraph, q: &DnfQuery) -> Result<EntitySet, QueryError> {
    require_valid(q)?;
    let mut out = Vec::new();
    for c in &q.conjuncts {
        evaluate_conjunct(g, q, c, &mut out)?;
    }
    Ok(EntitySet::from_unsorted(out))
}

/// A relation sequence and the anchor its path starts from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverPath {
    pub anchor: EntityId,
    pub seq: RelationSeq,
}

fn smallest_path(q: &DnfQuery, atoms: &[Atom]) -> Option<(usize, Vec<RelationId>)> {
    let dg = DepGraph::new(q, atoms);
    let target = dg.n_anchor + q.target;
    let mut best: Option<(Vec<RelationId>, Vec<usize>)> = None;
    fn walk(
        dg: &DepGraph,
        v: usize,
        target: usize,
        labels: &mut Vec<RelationId>,
        nodes: &mut Vec<usize>,
        best: &mut Option<(Vec<RelationId>, Vec<usize>)>,
    ) {
        if v == target {
            let cand = (labels.clone(), nodes.clone());
            if best.as_ref().is_none_or(|b| cand < *b) {
                *best = Some(cand);
            }
            return;
        }
        for &(o, r) in &dg.succ[v] {
            labels.push(r);
            nodes.push(o);
            walk(dg, o, target, labels, nodes, best);
            labels.pop();
            nodes.pop();
        }
    }
    for a in 0..dg.n_anchor {
        if dg.present[a] {
            walk(&dg, a, target, &mut Vec::new(), &mut vec![a], &mut best);
        }
    }
    best.map(|(labels, nodes)| (nodes[0], labels))
}

/// One anchor-to-target path per conjunct, as a relation sequence. The
/// lexicographically smallest path (by labels, then nodes) is chosen.
pub fn cover_paths(q: &DnfQuery) -> Result<Vec<CoverPath>, QueryError> {
    require_valid(q)?;
    let mut out: Vec<CoverPath> = Vec::with_capacity(q.conjuncts.len());
    for c in &q.conjuncts {
        let (anchor_idx, labels) =
            smallest_path(q, c).ok_or_else(|| QueryError::Invalid("conjunct has no anchor-to-target path".into()))?;
        let path = CoverPath { anchor: q.anchors[anchor_idx], seq: RelationSeq::from_relations(&labels) };
        if !out.contains(&path) {
            out.push(path);
        }
    }
    Ok(out)
}

/// The relation sequences of [`cover_paths`].
pub fn cover_sequences(q: &DnfQuery) -> Result<Vec<RelationSeq>, QueryError> {
    let mut seqs: Vec<RelationSeq> = Vec::new();
    for p in cover_paths(q)? {
        if !seqs.contains(&p.seq) {
            seqs.push(p.seq);
        }
    }
    Ok(seqs)
}

/// Generates a valid DNF query. Each conjunct is a random walk along
/// existing edges from a sampled anchor, optionally widened with a second
/// anchor feeding a walk variable or a shortcut atom between walk variables.
pub fn random_query(g: &KnowledgeGraph, max_conjuncts: usize, max_atoms: usize, seed: u64) -> Result<DnfQuery, QueryError> {
    if g.num_entities() == 0 || g.num_relations() < 2 {
        return Err(QueryError::Invalid("graph needs entities and at least one relation".into()));
    }
    let max_conjuncts = max_conjuncts.max(1);
    let max_atoms = max_atoms.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_conj = rng.gen_range(1..=max_conjuncts);
    let mut var_names = vec!["x".to_owned()];
    let mut anchor_names = Vec::new();
    let mut anchors = Vec::new();
    let mut conjuncts = Vec::with_capacity(n_conj);
    let with_edges: Vec<EntityId> = (0..g.num_entities() as EntityId).filter(|&v| g.out_degree(v) > 0).collect();
    let random_rel = |rng: &mut ChaCha8Rng| rng.gen_range(1..g.num_relations() as RelationId);

    for c in 0..n_conj {
        let start = match with_edges.choose(&mut rng) {
            Some(&v) => v,
            None => rng.gen_range(0..g.num_entities() as EntityId),
        };
        anchor_names.push(format!("a{}", anchors.len()));
        anchors.push(start);
        let anchor = Term::Anchor(anchors.len() - 1);

        let len = rng.gen_range(1..=max_atoms);
        let mut atoms = Vec::new();
        // Walk terms and the entities the walk actually visited.
        let mut chain: Vec<(Term, EntityId)> = vec![(anchor, start)];
        for step in 0..len {
            let (prev, at) = *chain.last().unwrap();
            let edges: Vec<(RelationId, EntityId)> = g.out_edges(at).collect();
            let (r, next) = match edges.choose(&mut rng) {
                Some(&e) => e,
                None => (random_rel(&mut rng), at),
            };
            let term = if step + 1 == len {
                Term::Var(0)
            } else {
                var_names.push(format!("v{c}_{step}"));
                Term::Var(var_names.len() - 1)
            };
            atoms.push(Atom { relation: r, subject: prev, object: term });
            chain.push((term, next));
        }
        let budget = max_atoms - atoms.len();
        for _ in 0..budget {
            if !rng.gen_bool(0.5) {
                continue;
            }
            let j = rng.gen_range(1..chain.len());
            let (obj, obj_entity) = chain[j];
            if rng.gen_bool(0.5) {
                // Second anchor: an in-neighbor of the walk entity when one exists.
                let feeders: Vec<(EntityId, RelationId)> =
                    g.edges().filter(|&(_, _, o)| o == obj_entity).map(|(s, r, _)| (s, r)).collect();
                let (s, r) = match feeders.choose(&mut rng) {
                    Some(&f) => f,
                    None => (rng.gen_range(0..g.num_entities() as EntityId), random_rel(&mut rng)),
                };
                anchor_names.push(format!("a{}", anchors.len()));
                anchors.push(s);
                atoms.push(Atom { relation: r, subject: Term::Anchor(anchors.len() - 1), object: obj });
            } else {
                // Shortcut from an earlier walk term; keeps the graph acyclic.
                let i = rng.gen_range(0..j);
                let (subj, subj_entity) = chain[i];
                let labels: Vec<RelationId> = g.out_edges(subj_entity).filter(|&(_, o)| o == obj_entity).map(|(r, _)| r).collect();
                let r = match labels.choose(&mut rng) {
                    Some(&r) => r,
                    None => random_rel(&mut rng),
                };
                atoms.push(Atom { relation: r, subject: subj, object: obj });
            }
        }
        atoms.sort_unstable();
        atoms.dedup();
        conjuncts.push(atoms);
    }
    conjuncts.sort();
    conjuncts.dedup();
    let q = DnfQuery { target: 0, var_names, anchor_names, anchors, conjuncts };
    debug_assert!(validate(&q).is_valid(), "{:?}", validate(&q));
    Ok(q)
}

struct TermDisplay<'a> {
    term: Term,
    var_names: &'a [String],
    anchor_names: &'a [String],
}

impl fmt::Display for TermDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.term {
            Term::Anchor(i) => write!(f, "${}", self.anchor_names[i]),
            Term::Var(v) => write!(f, "?{}", self.var_names[v]),
        }
    }
}

fn write_atom(out: &mut String, g: &KnowledgeGraph, a: &Atom, vars: &[String], anchors: &[String]) {
    let t = |term| TermDisplay { term, var_names: vars, anchor_names: anchors };
    out.push_str(&format!("({} {} {})", g.relation_name(a.relation), t(a.subject), t(a.object)));
}

fn bindings_text(g: &KnowledgeGraph, names: &[String], anchors: &[EntityId]) -> String {
    names
        .iter()
        .zip(anchors)
        .map(|(n, &e)| format!("{n}={}", g.entity_name(e)))
        .collect::<Vec<_>>()
        .join(";")
}

impl EpfoQuery {
    /// The query-file line (`query<TAB>bindings`) for this query.
    pub fn to_line(&self, g: &KnowledgeGraph) -> String {
        fn go(out: &mut String, g: &KnowledgeGraph, f: &Formula, q: &EpfoQuery) {
            match f {
                Formula::Atom(a) => write_atom(out, g, a, &q.var_names, &q.anchor_names),
                Formula::And(ps) | Formula::Or(ps) => {
                    out.push_str(if matches!(f, Formula::And(_)) { "(and" } else { "(or" });
                    for p in ps {
                        out.push(' ');
                        go(out, g, p, q);
                    }
                    out.push(')');
                }
            }
        }
        let mut s = format!("(query ?{} ", self.var_names[self.target]);
        go(&mut s, g, &self.body, self);
        s.push(')');
        format!("{s}\t{}", bindings_text(g, &self.anchor_names, &self.anchors))
    }
}

impl DnfQuery {
    pub fn to_line(&self, g: &KnowledgeGraph) -> String {
        let mut s = format!("(query ?{} (or", self.var_names[self.target]);
        for c in &self.conjuncts {
            s.push_str(" (and");
            for a in c {
                s.push(' ');
                write_atom(&mut s, g, a, &self.var_names, &self.anchor_names);
            }
            s.push(')');
        }
        s.push_str("))");
        format!("{s}\t{}", bindings_text(g, &self.anchor_names, &self.anchors))
    }

    /// The query as a formula (an `or` of `and`s), for re-normalization.
    pub fn to_query(&self) -> EpfoQuery {
        let body = Formula::Or(
            self.conjuncts.iter().map(|c| Formula::And(c.iter().map(|a| Formula::Atom(*a)).collect())).collect(),
        );
        EpfoQuery {
            target: self.target,
            var_names: self.var_names.clone(),
            anchor_names: self.anchor_names.clone(),
            anchors: self.anchors.clone(),
            body,
        }
    }

    /// Conjunct `i` as a query of its own.
    pub fn conjunct(&self, i: usize) -> DnfQuery {
        self.conjunct_query(i)
    }
}
