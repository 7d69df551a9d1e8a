//! In-memory knowledge graph with interned entities and relations.
//!
//! Edges are stored in a compressed sparse row layout sorted by
//! `(subject, relation, object)`, so the objects reachable from a subject
//! through one relation form a contiguous, sorted, duplicate-free slice.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use crate::coalesce::EntitySet;
use crate::error::KgError;

pub type EntityId = u32;
pub type RelationId = u32;

/// Reserved relation denoting the empty step (start and end of decoding).
pub const SELF_RELATION: RelationId = 0;
pub const SELF_NAME: &str = "self";
pub const INVERSE_SUFFIX: &str = "^-1";

/// Bidirectional map between names and dense ids assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl SymbolTable {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One parsed line of a triple file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleRecord {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl TripleRecord {
    /// Parses `subject\trelation\tobject`. Fields are whitespace-trimmed and
    /// must be non-empty.
    pub fn parse(line: &str, line_no: usize) -> Result<Self, KgError> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Parse {
                line: line_no,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let trimmed: Vec<&str> = fields.iter().map(|f| f.trim()).collect();
        if let Some(pos) = trimmed.iter().position(|f| f.is_empty()) {
            return Err(KgError::Parse {
                line: line_no,
                message: format!("field {} is empty", pos + 1),
            });
        }
        Ok(Self {
            subject: trimmed[0].to_owned(),
            relation: trimmed[1].to_owned(),
            object: trimmed[2].to_owned(),
        })
    }
}

/// Incremental constructor for [`KnowledgeGraph`].
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    entities: SymbolTable,
    relations: SymbolTable,
    edges: Vec<(EntityId, RelationId, EntityId)>,
    inverse_of: HashMap<RelationId, RelationId>,
    add_inverses: bool,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new(false)
    }
}

impl GraphBuilder {
    pub fn new(add_inverses: bool) -> Self {
        let mut relations = SymbolTable::default();
        relations.intern(SELF_NAME);
        Self {
            entities: SymbolTable::default(),
            relations,
            edges: Vec::new(),
            inverse_of: HashMap::new(),
            add_inverses,
        }
    }

    pub fn intern_entity(&mut self, name: &str) -> EntityId {
        self.entities.intern(name)
    }

    /// Interns a relation (and its inverse when inverse augmentation is on).
    pub fn intern_relation(&mut self, name: &str) -> Result<RelationId, KgError> {
        if name == SELF_NAME {
            return Err(KgError::ReservedRelation);
        }
        let known = self.relations.get(name);
        let id = self.relations.intern(name);
        if self.add_inverses && known.is_none() {
            let inv = self.relations.intern(&format!("{name}{INVERSE_SUFFIX}"));
            self.inverse_of.insert(id, inv);
        }
        Ok(id)
    }

    pub fn add_triple(&mut self, subject: &str, relation: &str, object: &str) -> Result<(), KgError> {
        let s = self.intern_entity(subject);
        let r = self.intern_relation(relation)?;
        let o = self.intern_entity(object);
        self.add_edge(s, r, o)
    }

    pub fn add_edge(&mut self, s: EntityId, r: RelationId, o: EntityId) -> Result<(), KgError> {
        if r == SELF_RELATION {
            return Err(KgError::ReservedRelation);
        }
        if s as usize >= self.entities.len() {
            return Err(KgError::UnknownEntityId(s));
        }
        if o as usize >= self.entities.len() {
            return Err(KgError::UnknownEntityId(o));
        }
        if r as usize >= self.relations.len() {
            return Err(KgError::UnknownRelationId(r));
        }
        self.edges.push((s, r, o));
        if let Some(&inv) = self.inverse_of.get(&r) {
            self.edges.push((o, inv, s));
        }
        Ok(())
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn build(self) -> KnowledgeGraph {
        KnowledgeGraph::from_parts(self.entities, self.relations, self.edges)
    }
}

/// Immutable relation-typed directed graph.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: SymbolTable,
    relations: SymbolTable,
    // CSR over edges sorted by (subject, relation, object).
    edge_offsets: Vec<usize>,
    edge_rel: Vec<RelationId>,
    edge_obj: Vec<EntityId>,
    // Per subject: the distinct outgoing relations and where their objects start.
    rel_offsets: Vec<usize>,
    rel_ids: Vec<RelationId>,
    rel_starts: Vec<usize>,
    fingerprint: u64,
}

impl KnowledgeGraph {
    fn from_parts(
        entities: SymbolTable,
        relations: SymbolTable,
        mut edges: Vec<(EntityId, RelationId, EntityId)>,
    ) -> Self {
        edges.sort_unstable();
        edges.dedup();

        let n = entities.len();
        let mut edge_offsets = vec![0usize; n + 1];
        for &(s, _, _) in &edges {
            edge_offsets[s as usize + 1] += 1;
        }
        for i in 0..n {
            edge_offsets[i + 1] += edge_offsets[i];
        }
        let edge_rel: Vec<RelationId> = edges.iter().map(|e| e.1).collect();
        let edge_obj: Vec<EntityId> = edges.iter().map(|e| e.2).collect();

        let mut rel_offsets = Vec::with_capacity(n + 1);
        let mut rel_ids = Vec::new();
        let mut rel_starts = Vec::new();
        rel_offsets.push(0);
        for v in 0..n {
            let (lo, hi) = (edge_offsets[v], edge_offsets[v + 1]);
            let mut i = lo;
            while i < hi {
                let r = edge_rel[i];
                rel_ids.push(r);
                rel_starts.push(i);
                while i < hi && edge_rel[i] == r {
                    i += 1;
                }
            }
            rel_offsets.push(rel_ids.len());
        }

        let mut hasher = Fnv64::default();
        hasher.write_u64(n as u64);
        hasher.write_u64(relations.len() as u64);
        for &(s, r, o) in &edges {
            hasher.write_u64(((s as u64) << 32) | r as u64);
            hasher.write_u64(o as u64);
        }

        Self {
            entities,
            relations,
            edge_offsets,
            edge_rel,
            edge_obj,
            rel_offsets,
            rel_ids,
            rel_starts,
            fingerprint: hasher.finish(),
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Number of relations including the reserved `self`.
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_obj.len()
    }

    pub fn entities(&self) -> &SymbolTable {
        &self.entities
    }

    pub fn relations(&self) -> &SymbolTable {
        &self.relations
    }

    pub fn entity_id(&self, name: &str) -> Result<EntityId, KgError> {
        self.entities
            .get(name)
            .ok_or_else(|| KgError::UnknownEntity(name.to_owned()))
    }

    pub fn relation_id(&self, name: &str) -> Result<RelationId, KgError> {
        self.relations
            .get(name)
            .ok_or_else(|| KgError::UnknownRelation(name.to_owned()))
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.entities.name(id).unwrap_or("<invalid>")
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        self.relations.name(id).unwrap_or("<invalid>")
    }

    /// Hash of the table sizes and edge multiset; used to detect results
    /// paired with the wrong graph.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn check_entity(&self, v: EntityId) -> Result<(), KgError> {
        if (v as usize) < self.num_entities() {
            Ok(())
        } else {
            Err(KgError::UnknownEntityId(v))
        }
    }

    pub fn check_relation(&self, r: RelationId) -> Result<(), KgError> {
        if (r as usize) < self.num_relations() {
            Ok(())
        } else {
            Err(KgError::UnknownRelationId(r))
        }
    }

    /// Objects `o` with an edge `(v, r, o)`, sorted ascending.
    pub fn out_neighbors(&self, v: EntityId, r: RelationId) -> Result<&[EntityId], KgError> {
        self.check_entity(v)?;
        self.check_relation(r)?;
        if r == SELF_RELATION {
            return Err(KgError::ReservedRelation);
        }
        Ok(self.neighbors_unchecked(v, r))
    }

    pub(crate) fn neighbors_unchecked(&self, v: EntityId, r: RelationId) -> &[EntityId] {
        let v = v as usize;
        let (lo, hi) = (self.rel_offsets[v], self.rel_offsets[v + 1]);
        match self.rel_ids[lo..hi].binary_search(&r) {
            Ok(i) => {
                let start = self.rel_starts[lo + i];
                let end = if lo + i + 1 < hi {
                    self.rel_starts[lo + i + 1]
                } else {
                    self.edge_offsets[v + 1]
                };
                &self.edge_obj[start..end]
            }
            Err(_) => &[],
        }
    }

    /// Distinct relations with at least one outgoing edge from `v`, sorted.
    pub fn relations_of(&self, v: EntityId) -> Result<&[RelationId], KgError> {
        self.check_entity(v)?;
        let v = v as usize;
        Ok(&self.rel_ids[self.rel_offsets[v]..self.rel_offsets[v + 1]])
    }

    /// Union of outgoing relations over every member of `vs`. Never contains `self`.
    pub fn outgoing_relations(&self, vs: &EntitySet) -> Result<Vec<RelationId>, KgError> {
        let mut out: Vec<RelationId> = Vec::new();
        for &v in vs.iter() {
            out.extend_from_slice(self.relations_of(v)?);
        }
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// All outgoing `(relation, object)` pairs of `v`.
    pub fn out_edges(&self, v: EntityId) -> impl Iterator<Item = (RelationId, EntityId)> + '_ {
        let v = v as usize;
        let (lo, hi) = if v < self.num_entities() {
            (self.edge_offsets[v], self.edge_offsets[v + 1])
        } else {
            (0, 0)
        };
        (lo..hi).map(move |i| (self.edge_rel[i], self.edge_obj[i]))
    }

    pub fn out_degree(&self, v: EntityId) -> usize {
        let v = v as usize;
        self.edge_offsets[v + 1] - self.edge_offsets[v]
    }

    pub fn has_edge(&self, s: EntityId, r: RelationId, o: EntityId) -> bool {
        if (s as usize) >= self.num_entities() || r == SELF_RELATION {
            return false;
        }
        self.neighbors_unchecked(s, r).binary_search(&o).is_ok()
    }

    /// Every edge as `(subject, relation, object)` in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (EntityId, RelationId, EntityId)> + '_ {
        (0..self.num_entities()).flat_map(move |s| {
            let s = s as EntityId;
            self.out_edges(s).map(move |(r, o)| (s, r, o))
        })
    }

    /// Subgraph induced by `nodes`. Entities are re-interned in ascending
    /// original-id order; the relation table is kept whole so relation ids
    /// are shared with `self`.
    pub fn induced_subgraph(&self, nodes: &EntitySet) -> Result<Subgraph, KgError> {
        for &v in nodes.iter() {
            self.check_entity(v)?;
        }
        let to_original: Vec<EntityId> = nodes.iter().copied().collect();
        let mut entities = SymbolTable::default();
        for &v in &to_original {
            entities.intern(self.entity_name(v));
        }
        let mut edges = Vec::new();
        for (local_s, &s) in to_original.iter().enumerate() {
            for (r, o) in self.out_edges(s) {
                if let Ok(local_o) = to_original.binary_search(&o) {
                    edges.push((local_s as EntityId, r, local_o as EntityId));
                }
            }
        }
        let graph = KnowledgeGraph::from_parts(entities, self.relations.clone(), edges);
        Ok(Subgraph { graph, to_original })
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            entities: self.num_entities(),
            relations: self.num_relations(),
            edges: self.num_edges(),
        }
    }

    /// Writes the graph back out as triple lines.
    pub fn write_triples<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (s, r, o) in self.edges() {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.entity_name(s),
                self.relation_name(r),
                self.entity_name(o)
            )?;
        }
        Ok(())
    }
}

/// Summary line `entities=<n> relations=<n> edges=<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphStats {
    pub entities: usize,
    pub relations: usize,
    pub edges: usize,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "entities={} relations={} edges={}",
            self.entities, self.relations, self.edges
        )
    }
}

/// An induced subgraph plus the mapping from its entity ids to the parent's.
#[derive(Debug, Clone)]
pub struct Subgraph {
    pub graph: KnowledgeGraph,
    pub to_original: Vec<EntityId>,
}

impl Subgraph {
    pub fn local_id(&self, original: EntityId) -> Option<EntityId> {
        self.to_original
            .binary_search(&original)
            .ok()
            .map(|i| i as EntityId)
    }

    pub fn original_id(&self, local: EntityId) -> EntityId {
        self.to_original[local as usize]
    }

    /// Maps a set of parent ids into local ids; fails on ids outside the subgraph.
    pub fn localize(&self, set: &EntitySet) -> Result<EntitySet, KgError> {
        set.iter()
            .map(|&v| self.local_id(v).ok_or(KgError::UnknownEntityId(v)))
            .collect::<Result<Vec<_>, _>>()
            .map(EntitySet::from_unsorted)
    }
}

/// Reads a triple file: UTF-8, one `subject\trelation\tobject` per line,
/// blank lines and `#` comments skipped, duplicates collapsed.
pub fn load_triples(path: impl AsRef<Path>, add_inverses: bool) -> Result<KnowledgeGraph, KgError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| KgError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_triples(BufReader::new(file), add_inverses)
}

pub fn parse_triples<R: BufRead>(reader: R, add_inverses: bool) -> Result<KnowledgeGraph, KgError> {
    let mut builder = GraphBuilder::new(add_inverses);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| KgError::Io {
            path: "<reader>".into(),
            source: e,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rec = TripleRecord::parse(&line, i + 1)?;
        builder
            .add_triple(&rec.subject, &rec.relation, &rec.object)
            .map_err(|e| match e {
                KgError::ReservedRelation => KgError::Parse {
                    line: i + 1,
                    message: format!("relation name '{SELF_NAME}' is reserved"),
                },
                other => other,
            })?;
    }
    Ok(builder.build())
}

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv64 {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, x: u64) {
        self.write(&x.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const FILMS: &str = "GL\tdirected\tSW\n\
        GL\tdirected\tESB\n\
        SW\tstarred\tMH\n\
        SW\tstarred\tHF\n\
        ESB\tstarred\tMH\n";

    pub(crate) fn films() -> KnowledgeGraph {
        parse_triples(FILMS.as_bytes(), false).unwrap()
    }

    fn ids(g: &KnowledgeGraph, names: &[&str]) -> Vec<EntityId> {
        names.iter().map(|n| g.entity_id(n).unwrap()).collect()
    }

    fn set(g: &KnowledgeGraph, names: &[&str]) -> EntitySet {
        EntitySet::from_unsorted(ids(g, names))
    }

    #[test]
    fn empty_file() {
        let g = parse_triples("".as_bytes(), false).unwrap();
        assert_eq!(g.stats(), GraphStats { entities: 0, relations: 1, edges: 0 });
        assert_eq!(g.relation_name(SELF_RELATION), "self");
    }

    #[test]
    fn films_counts() {
        let g = films();
        assert_eq!(g.stats().to_string(), "entities=5 relations=3 edges=5");
        assert_eq!(g.relations().names(), &["self", "directed", "starred"]);
    }

    #[test]
    fn films_with_inverses() {
        let g = parse_triples(FILMS.as_bytes(), true).unwrap();
        assert_eq!(g.num_relations(), 5);
        assert_eq!(g.num_edges(), 10);
        assert_eq!(
            g.relations().names(),
            &["self", "directed", "directed^-1", "starred", "starred^-1"]
        );
        let inv = g.relation_id("starred^-1").unwrap();
        let mh = g.entity_id("MH").unwrap();
        assert_eq!(g.out_neighbors(mh, inv).unwrap(), ids(&g, &["SW", "ESB"]).as_slice());
    }

    #[test]
    fn comments_blank_lines_and_duplicates() {
        let text = "# header\n\nGL\tdirected\tSW\n  \nGL\tdirected\tSW\n";
        let g = parse_triples(text.as_bytes(), false).unwrap();
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_triples("a\tr\tb\na\tr\n".as_bytes(), false).unwrap_err();
        match err {
            KgError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_triples("a\t \tb\n".as_bytes(), false).is_err());
        assert!(parse_triples("a\tself\tb\n".as_bytes(), false).is_err());
    }

    #[test]
    fn out_neighbors_examples() {
        let g = films();
        let d = g.relation_id("directed").unwrap();
        let s = g.relation_id("starred").unwrap();
        let gl = g.entity_id("GL").unwrap();
        let sw = g.entity_id("SW").unwrap();
        assert_eq!(g.out_neighbors(gl, d).unwrap(), ids(&g, &["SW", "ESB"]).as_slice());
        assert!(g.out_neighbors(gl, s).unwrap().is_empty());
        assert_eq!(g.out_neighbors(sw, s).unwrap(), ids(&g, &["MH", "HF"]).as_slice());
        assert!(g.out_neighbors(99, d).is_err());
        assert!(g.out_neighbors(gl, 99).is_err());
        assert!(g.out_neighbors(gl, SELF_RELATION).is_err());
    }

    #[test]
    fn outgoing_relations_examples() {
        let g = films();
        let d = g.relation_id("directed").unwrap();
        let s = g.relation_id("starred").unwrap();
        assert_eq!(g.outgoing_relations(&set(&g, &["GL"])).unwrap(), vec![d]);
        assert!(g.outgoing_relations(&EntitySet::empty()).unwrap().is_empty());
        assert_eq!(g.outgoing_relations(&set(&g, &["SW", "ESB"])).unwrap(), vec![s]);
        assert!(g.outgoing_relations(&EntitySet::from_unsorted(vec![42])).is_err());
    }

    #[test]
    fn induced_subgraph_examples() {
        let g = films();
        let all = EntitySet::from_unsorted((0..5).collect());
        let whole = g.induced_subgraph(&all).unwrap();
        assert_eq!(whole.graph.num_edges(), 5);
        assert_eq!(whole.graph.fingerprint(), g.fingerprint());

        let sub = g.induced_subgraph(&set(&g, &["GL", "SW"])).unwrap();
        let edges: Vec<_> = sub.graph.edges().collect();
        assert_eq!(edges.len(), 1);
        let (s, r, o) = edges[0];
        assert_eq!(sub.graph.entity_name(s), "GL");
        assert_eq!(sub.graph.relation_name(r), "directed");
        assert_eq!(sub.graph.entity_name(o), "SW");
        assert_eq!(sub.original_id(o), g.entity_id("SW").unwrap());

        let leaves = g.induced_subgraph(&set(&g, &["MH", "HF"])).unwrap();
        assert_eq!(leaves.graph.num_edges(), 0);
        assert!(g.induced_subgraph(&EntitySet::from_unsorted(vec![7])).is_err());
    }

    #[test]
    fn write_then_reload_round_trips() {
        let g = parse_triples(FILMS.as_bytes(), false).unwrap();
        let mut buf = Vec::new();
        g.write_triples(&mut buf).unwrap();
        let h = parse_triples(buf.as_slice(), false).unwrap();
        let named = |g: &KnowledgeGraph| {
            let mut v: Vec<_> = g
                .edges()
                .map(|(s, r, o)| {
                    (
                        g.entity_name(s).to_owned(),
                        g.relation_name(r).to_owned(),
                        g.entity_name(o).to_owned(),
                    )
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(named(&g), named(&h));
    }
}
