//! Reach semantics over relation sequences.
//!
//! A node of the question-dependent coalesced graph is the set of entities
//! reachable from the anchors by one relation sequence. Nothing is
//! materialized up front: frontiers are produced one relation step at a time.

use std::fmt;

use crate::error::KgError;
use crate::kg::{EntityId, KnowledgeGraph, RelationId, SELF_RELATION};

/// Sorted, duplicate-free set of entity ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySet(Vec<EntityId>);

impl EntitySet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn singleton(v: EntityId) -> Self {
        Self(vec![v])
    }

    pub fn from_unsorted(mut ids: Vec<EntityId>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        Self(ids)
    }

    /// Caller guarantees `ids` is strictly ascending.
    pub(crate) fn from_sorted_unchecked(ids: Vec<EntityId>) -> Self {
        debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        Self(ids)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EntityId> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[EntityId] {
        &self.0
    }

    pub fn contains(&self, v: EntityId) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn is_subset(&self, other: &EntitySet) -> bool {
        let mut j = 0;
        for &x in &self.0 {
            while j < other.0.len() && other.0[j] < x {
                j += 1;
            }
            if j == other.0.len() || other.0[j] != x {
                return false;
            }
        }
        true
    }

    pub fn union(&self, other: &EntitySet) -> EntitySet {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        EntitySet(out)
    }

    pub fn intersection_len(&self, other: &EntitySet) -> usize {
        let (a, b) = (&self.0, &other.0);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn into_vec(self) -> Vec<EntityId> {
        self.0
    }
}

impl FromIterator<EntityId> for EntitySet {
    fn from_iter<I: IntoIterator<Item = EntityId>>(iter: I) -> Self {
        Self::from_unsorted(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a EntitySet {
    type Item = &'a EntityId;
    type IntoIter = std::slice::Iter<'a, EntityId>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Relation sequence. Always starts with `self`; a trailing `self` after at
/// least one real relation marks a terminated sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationSeq(Vec<RelationId>);

impl Default for RelationSeq {
    fn default() -> Self {
        Self::root()
    }
}

impl RelationSeq {
    pub fn root() -> Self {
        Self(vec![SELF_RELATION])
    }

    /// Builds `(self, rels...)`. A leading `self` in `rels` is not duplicated.
    pub fn from_relations(rels: &[RelationId]) -> Self {
        let mut v = Vec::with_capacity(rels.len() + 1);
        v.push(SELF_RELATION);
        let skip = usize::from(rels.first() == Some(&SELF_RELATION));
        v.extend_from_slice(&rels[skip..]);
        Self(v)
    }

    pub fn extended(&self, r: RelationId) -> Self {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.extend_from_slice(&self.0);
        v.push(r);
        Self(v)
    }

    pub fn as_slice(&self) -> &[RelationId] {
        &self.0
    }

    /// Relations after the leading `self`, excluding a terminal `self`.
    pub fn relations(&self) -> &[RelationId] {
        let end = if self.is_terminated() { self.0.len() - 1 } else { self.0.len() };
        &self.0[1..end]
    }

    /// Number of real relation steps.
    pub fn hops(&self) -> usize {
        self.relations().len()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_terminated(&self) -> bool {
        self.0.len() > 1 && *self.0.last().unwrap() == SELF_RELATION
    }

    /// The sequence without its terminal marker.
    pub fn unterminated(&self) -> RelationSeq {
        RelationSeq::from_relations(self.relations())
    }

    pub fn display<'a>(&'a self, g: &'a KnowledgeGraph) -> SeqDisplay<'a> {
        SeqDisplay { seq: self, graph: g }
    }

    /// Parses space-separated relation names; a leading `self` is optional.
    pub fn parse(g: &KnowledgeGraph, text: &str) -> Result<RelationSeq, KgError> {
        let ids = text
            .split_whitespace()
            .map(|name| g.relation_id(name))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RelationSeq::from_relations(&ids))
    }
}

pub struct SeqDisplay<'a> {
    seq: &'a RelationSeq,
    graph: &'a KnowledgeGraph,
}

impl fmt::Display for SeqDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &r) in self.seq.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(self.graph.relation_name(r))?;
        }
        Ok(())
    }
}

pub const DEFAULT_DENSE_THRESHOLD: usize = 4096;

/// Frontier construction settings.
#[derive(Debug, Clone, Copy)]
pub struct ReachConfig {
    /// Above this many gathered neighbors the union is built in a dense
    /// bitset instead of by sort-and-dedup.
    pub dense_threshold: usize,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
        }
    }
}

/// One relation step from `frontier`. `self` returns the frontier unchanged.
pub fn reach_step(
    g: &KnowledgeGraph,
    frontier: &EntitySet,
    r: RelationId,
) -> Result<EntitySet, KgError> {
    reach_step_with(g, frontier, r, ReachConfig::default())
}

pub fn reach_step_with(
    g: &KnowledgeGraph,
    frontier: &EntitySet,
    r: RelationId,
    cfg: ReachConfig,
) -> Result<EntitySet, KgError> {
    g.check_relation(r)?;
    for &v in frontier.iter() {
        g.check_entity(v)?;
    }
    if r == SELF_RELATION {
        return Ok(frontier.clone());
    }
    let lists: Vec<&[EntityId]> = frontier
        .iter()
        .map(|&v| g.neighbors_unchecked(v, r))
        .filter(|l| !l.is_empty())
        .collect();
    let total: usize = lists.iter().map(|l| l.len()).sum();
    match lists.len() {
        0 => Ok(EntitySet::empty()),
        1 => Ok(EntitySet::from_sorted_unchecked(lists[0].to_vec())),
        _ if total > cfg.dense_threshold => Ok(dense_union(g.num_entities(), &lists)),
        _ => {
            let mut out = Vec::with_capacity(total);
            for l in &lists {
                out.extend_from_slice(l);
            }
            Ok(EntitySet::from_unsorted(out))
        }
    }
}

fn dense_union(n: usize, lists: &[&[EntityId]]) -> EntitySet {
    let mut words = vec![0u64; n.div_ceil(64)];
    for l in lists {
        for &v in *l {
            words[v as usize / 64] |= 1u64 << (v % 64);
        }
    }
    let mut out = Vec::new();
    for (wi, &w) in words.iter().enumerate() {
        let mut w = w;
        while w != 0 {
            let bit = w.trailing_zeros();
            out.push((wi * 64) as EntityId + bit);
            w &= w - 1;
        }
    }
    EntitySet::from_sorted_unchecked(out)
}

/// Left fold of [`reach_step`] over `seq`; empty as soon as any frontier is.
pub fn reach(g: &KnowledgeGraph, anchors: &EntitySet, seq: &RelationSeq) -> Result<EntitySet, KgError> {
    let mut frontier = anchors.clone();
    for &r in seq.as_slice() {
        g.check_relation(r)?;
        if frontier.is_empty() {
            return Ok(frontier);
        }
        frontier = reach_step(g, &frontier, r)?;
    }
    Ok(frontier)
}

/// Every relation sequence of at most `max_len` relations with a nonempty
/// reach, paired with that reach. Ordered by length, then lexicographically.
pub fn enumerate_reachable_sets(
    g: &KnowledgeGraph,
    anchors: &EntitySet,
    max_len: usize,
) -> Result<Vec<(RelationSeq, EntitySet)>, KgError> {
    for &v in anchors.iter() {
        g.check_entity(v)?;
    }
    let mut out = vec![(RelationSeq::root(), anchors.clone())];
    if anchors.is_empty() {
        return Ok(out);
    }
    let mut layer_start = 0;
    for _ in 0..max_len {
        let layer_end = out.len();
        for i in layer_start..layer_end {
            let (seq, frontier) = out[i].clone();
            for r in g.outgoing_relations(&frontier)? {
                let next = reach_step(g, &frontier, r)?;
                out.push((seq.extended(r), next));
            }
        }
        if out.len() == layer_end {
            break;
        }
        layer_start = layer_end;
    }
    Ok(out)
}

/// Path counts at one length in the original and coalesced graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathCountRow {
    pub length: usize,
    pub original_paths: u128,
    pub coalesced_paths: u128,
}

impl PathCountRow {
    pub const CSV_HEADER: &'static str = "length,original_paths,coalesced_paths";

    pub fn csv(&self) -> String {
        format!("{},{},{}", self.length, self.original_paths, self.coalesced_paths)
    }
}

/// For each length `1..=max_len`: the number of labeled edge walks leaving
/// the anchors, and the number of relation sequences with nonempty reach.
pub fn path_count_stats(
    g: &KnowledgeGraph,
    anchors: &EntitySet,
    max_len: usize,
) -> Result<Vec<PathCountRow>, KgError> {
    let sets = enumerate_reachable_sets(g, anchors, max_len)?;
    let mut coalesced = vec![0u128; max_len + 1];
    for (seq, _) in &sets {
        coalesced[seq.hops()] += 1;
    }

    let n = g.num_entities();
    let mut walks = vec![0u128; n];
    for &a in anchors.iter() {
        walks[a as usize] = 1;
    }
    let mut rows = Vec::with_capacity(max_len);
    for length in 1..=max_len {
        let mut next = vec![0u128; n];
        for (s, &count) in walks.iter().enumerate() {
            if count == 0 {
                continue;
            }
            for (_, o) in g.out_edges(s as EntityId) {
                next[o as usize] = next[o as usize].saturating_add(count);
            }
        }
        walks = next;
        rows.push(PathCountRow {
            length,
            original_paths: walks.iter().fold(0u128, |acc, &c| acc.saturating_add(c)),
            coalesced_paths: coalesced[length],
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::tests::films;
    use crate::kg::GraphBuilder;
    use crate::verify::{brute_force_reach, random_graph};
    use proptest::prelude::*;

    fn set(g: &KnowledgeGraph, names: &[&str]) -> EntitySet {
        names.iter().map(|n| g.entity_id(n).unwrap()).collect()
    }

    fn seq(g: &KnowledgeGraph, names: &[&str]) -> RelationSeq {
        let ids: Vec<_> = names.iter().map(|n| g.relation_id(n).unwrap()).collect();
        RelationSeq::from_relations(&ids)
    }

    #[test]
    fn reach_step_examples() {
        let g = films();
        let d = g.relation_id("directed").unwrap();
        let s = g.relation_id("starred").unwrap();
        let gl = set(&g, &["GL"]);
        assert_eq!(reach_step(&g, &gl, SELF_RELATION).unwrap(), gl);
        assert_eq!(reach_step(&g, &gl, d).unwrap(), set(&g, &["SW", "ESB"]));
        assert_eq!(
            reach_step(&g, &set(&g, &["SW", "ESB"]), s).unwrap(),
            set(&g, &["MH", "HF"])
        );
        assert!(reach_step(&g, &gl, 17).is_err());
    }

    #[test]
    fn reach_examples() {
        let g = films();
        let gl = set(&g, &["GL"]);
        assert_eq!(reach(&g, &gl, &RelationSeq::root()).unwrap(), gl);
        assert_eq!(
            reach(&g, &gl, &seq(&g, &["directed", "starred"])).unwrap(),
            set(&g, &["MH", "HF"])
        );
        assert!(reach(&g, &gl, &seq(&g, &["starred"])).unwrap().is_empty());
    }

    #[test]
    fn enumerate_examples() {
        let g = films();
        let gl = set(&g, &["GL"]);
        assert_eq!(
            enumerate_reachable_sets(&g, &gl, 0).unwrap(),
            vec![(RelationSeq::root(), gl.clone())]
        );
        assert_eq!(
            enumerate_reachable_sets(&g, &gl, 2).unwrap(),
            vec![
                (RelationSeq::root(), gl.clone()),
                (seq(&g, &["directed"]), set(&g, &["SW", "ESB"])),
                (seq(&g, &["directed", "starred"]), set(&g, &["MH", "HF"])),
            ]
        );
    }

    #[test]
    fn enumerate_matches_brute_force_paths() {
        let g = random_graph(50, 4, 200, 11);
        let anchors = EntitySet::from_unsorted(vec![0, 1]);
        let got = enumerate_reachable_sets(&g, &anchors, 3).unwrap();
        // Oracle: every label sequence of length <= 3 over all relations,
        // kept when some node-level path realizes it.
        let mut expected = Vec::new();
        let n_rel = g.num_relations() as RelationId;
        let mut frontier: Vec<Vec<RelationId>> = vec![vec![]];
        for _ in 0..=3 {
            let mut next = Vec::new();
            for rels in &frontier {
                let reach = brute_force_reach(&g, &anchors, rels);
                if reach.is_empty() {
                    continue;
                }
                expected.push((RelationSeq::from_relations(rels), reach));
                for r in 1..n_rel {
                    let mut ext = rels.clone();
                    ext.push(r);
                    next.push(ext);
                }
            }
            frontier = next;
        }
        let mut got_sorted = got.clone();
        got_sorted.sort();
        expected.sort();
        assert_eq!(got_sorted, expected);
        // Order is by length then lexicographic.
        let keys: Vec<_> = got.iter().map(|(s, _)| (s.len(), s.clone())).collect();
        let mut sorted_keys = keys.clone();
        sorted_keys.sort();
        assert_eq!(keys, sorted_keys);
    }

    #[test]
    fn path_counts_examples() {
        let g = films();
        let rows = path_count_stats(&g, &set(&g, &["GL"]), 2).unwrap();
        assert_eq!(
            rows,
            vec![
                PathCountRow { length: 1, original_paths: 2, coalesced_paths: 1 },
                PathCountRow { length: 2, original_paths: 3, coalesced_paths: 1 },
            ]
        );
        assert_eq!(rows[0].csv(), "1,2,1");

        let mut b = GraphBuilder::default();
        b.add_triple("a", "r", "b").unwrap();
        let single = b.build();
        let rows = path_count_stats(&single, &EntitySet::singleton(0), 1).unwrap();
        assert_eq!((rows[0].original_paths, rows[0].coalesced_paths), (1, 1));

        let mut b = GraphBuilder::default();
        for i in 1..=10 {
            b.add_triple("a", "r", &format!("b{i}")).unwrap();
        }
        let star = b.build();
        let rows = path_count_stats(&star, &EntitySet::singleton(0), 1).unwrap();
        assert_eq!((rows[0].original_paths, rows[0].coalesced_paths), (10, 1));
    }

    #[test]
    fn dense_and_sparse_unions_agree() {
        let g = random_graph(300, 3, 3000, 5);
        let frontier: EntitySet = (0..150).collect();
        for r in 1..g.num_relations() as RelationId {
            let sparse = reach_step_with(&g, &frontier, r, ReachConfig { dense_threshold: usize::MAX }).unwrap();
            let dense = reach_step_with(&g, &frontier, r, ReachConfig { dense_threshold: 0 }).unwrap();
            assert_eq!(sparse, dense);
        }
    }

    #[test]
    fn relation_seq_accessors() {
        let s = RelationSeq::from_relations(&[0, 3, 4]);
        assert_eq!(s.as_slice(), &[0, 3, 4]);
        assert!(!s.is_terminated());
        let t = s.extended(SELF_RELATION);
        assert!(t.is_terminated());
        assert_eq!(t.relations(), &[3, 4]);
        assert_eq!(t.unterminated(), s);
        assert!(!RelationSeq::root().is_terminated());
    }

    fn arb_graph() -> impl Strategy<Value = (KnowledgeGraph, Vec<RelationId>, Vec<RelationId>, EntitySet)> {
        (5usize..40, 1usize..5, 0usize..200, any::<u64>()).prop_flat_map(|(n, r, e, seed)| {
            let g = random_graph(n, r, e, seed);
            let nr = g.num_relations() as RelationId;
            (
                Just(g),
                proptest::collection::vec(1..nr, 0..3),
                proptest::collection::vec(1..nr, 0..3),
                proptest::collection::btree_set(0..n as EntityId, 1..4)
                    .prop_map(|s| s.into_iter().collect::<EntitySet>()),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn reach_equals_brute_force((g, a, _b, anchors) in arb_graph()) {
            let got = reach(&g, &anchors, &RelationSeq::from_relations(&a)).unwrap();
            prop_assert_eq!(got, brute_force_reach(&g, &anchors, &a));
        }

        #[test]
        fn reach_composes((g, a, b, anchors) in arb_graph()) {
            let mut ab = a.clone();
            ab.extend_from_slice(&b);
            let whole = reach(&g, &anchors, &RelationSeq::from_relations(&ab)).unwrap();
            let mid = reach(&g, &anchors, &RelationSeq::from_relations(&a)).unwrap();
            let split = reach(&g, &mid, &RelationSeq::from_relations(&b)).unwrap();
            prop_assert_eq!(whole, split);
        }

        #[test]
        fn reach_step_is_monotone((g, a, _b, anchors) in arb_graph(), extra in 0u32..5) {
            let bigger = anchors.union(&EntitySet::singleton(extra.min(g.num_entities() as u32 - 1)));
            for r in 1..g.num_relations() as RelationId {
                let small = reach_step(&g, &anchors, r).unwrap();
                let large = reach_step(&g, &bigger, r).unwrap();
                prop_assert!(small.is_subset(&large));
            }
            let _ = a;
        }

        #[test]
        fn empty_frontier_absorbs((g, a, b, anchors) in arb_graph()) {
            let mid = reach(&g, &anchors, &RelationSeq::from_relations(&a)).unwrap();
            if mid.is_empty() {
                let mut ab = a.clone();
                ab.extend_from_slice(&b);
                prop_assert!(reach(&g, &anchors, &RelationSeq::from_relations(&ab)).unwrap().is_empty());
            }
        }

        #[test]
        fn coalesced_counts_bounded((g, _a, _b, anchors) in arb_graph()) {
            let rows = path_count_stats(&g, &anchors, 3).unwrap();
            let real_rels = (g.num_relations() - 1) as u128;
            for row in rows {
                prop_assert!(row.coalesced_paths <= row.original_paths);
                prop_assert!(row.coalesced_paths <= real_rels.pow(row.length as u32));
            }
        }

        #[test]
        fn neighbors_consistent_with_relations((g, _a, _b, _anchors) in arb_graph()) {
            for v in 0..g.num_entities() as EntityId {
                let rels = g.outgoing_relations(&EntitySet::singleton(v)).unwrap();
                for r in 1..g.num_relations() as RelationId {
                    let nonempty = !g.out_neighbors(v, r).unwrap().is_empty();
                    prop_assert_eq!(nonempty, rels.contains(&r));
                }
            }
        }

        #[test]
        fn induced_subgraph_edge_count((g, _a, _b, nodes) in arb_graph()) {
            let sub = g.induced_subgraph(&nodes).unwrap();
            prop_assert!(sub.graph.num_edges() <= g.num_edges());
            let covers = g.edges().all(|(s, _, o)| nodes.contains(s) && nodes.contains(o));
            prop_assert_eq!(sub.graph.num_edges() == g.num_edges(), covers);
        }
    }
}
