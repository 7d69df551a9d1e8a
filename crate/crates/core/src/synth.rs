//! Synthetic knowledge graphs and templated questions.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coalesce::{reach, EntitySet, RelationSeq};
use crate::error::KgError;
use crate::kg::{EntityId, GraphBuilder, KnowledgeGraph, RelationId};
use crate::scorer::QAExample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    pub seed: u64,
    pub answer_hops: usize,
    pub n_examples: usize,
}

impl SynthSpec {
    pub fn new(n_entities: usize, n_relations: usize, seed: u64) -> Self {
        Self { n_entities, n_relations, seed, answer_hops: 2, n_examples: 100 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_relations == 0 {
            return Err("need at least one relation".into());
        }
        if self.n_entities < self.n_relations + 1 {
            return Err(format!("need more entities ({}) than relations ({})", self.n_entities, self.n_relations));
        }
        if self.answer_hops == 0 {
            return Err("answer_hops must be at least 1".into());
        }
        Ok(())
    }
}

pub fn entity_name(i: usize) -> String {
    format!("e{i}")
}

pub fn relation_name(j: usize) -> String {
    format!("r{j}")
}

/// Question text for the gold relations `rels`, innermost first:
/// `what is r2 of r1 of [e0]`.
pub fn templated_question(g: &KnowledgeGraph, rels: &[RelationId], anchor: EntityId) -> String {
    let mut text = String::from("what is");
    for &r in rels.iter().rev() {
        text.push(' ');
        text.push_str(g.relation_name(r));
        text.push_str(" of");
    }
    text.push_str(&format!(" [{}]", g.entity_name(anchor)));
    text
}

/// Every entity gets one edge per relation, to a uniformly random target.
/// Examples pick a random anchor and `answer_hops` random relations; the
/// answer is where that sequence leads.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<(KnowledgeGraph, Vec<QAExample>), String> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut b = GraphBuilder::default();
    for i in 0..spec.n_entities {
        b.intern_entity(&entity_name(i));
    }
    let rels: Vec<RelationId> = (0..spec.n_relations)
        .map(|j| b.intern_relation(&relation_name(j)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    for s in 0..spec.n_entities {
        for &r in &rels {
            let o = rng.gen_range(0..spec.n_entities);
            b.add_edge(s as EntityId, r, o as EntityId).map_err(|e| e.to_string())?;
        }
    }
    let g = b.build();
    let examples = (0..spec.n_examples)
        .map(|_| {
            let anchor = rng.gen_range(0..spec.n_entities) as EntityId;
            let path: Vec<RelationId> = (0..spec.answer_hops).map(|_| *rels.choose(&mut rng).unwrap()).collect();
            synthetic_example(&g, anchor, &path)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok((g, examples))
}

fn synthetic_example(g: &KnowledgeGraph, anchor: EntityId, path: &[RelationId]) -> Result<QAExample, KgError> {
    let seq = RelationSeq::from_relations(path);
    let anchors = EntitySet::singleton(anchor);
    let answers = reach(g, &anchors, &seq)?;
    let mut ex = QAExample::new(&templated_question(g, path, anchor), anchors, answers);
    ex.gold_sequences = Some(vec![seq]);
    Ok(ex)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntersectionSpec {
    pub n_questions: usize,
    pub min_members: usize,
    pub max_members: usize,
    pub noise_relations: usize,
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for IntersectionSpec {
    fn default() -> Self {
        Self { n_questions: 300, min_members: 2, max_members: 5, noise_relations: 3, pool_size: 50, seed: 0 }
    }
}

/// Questions where following `member` from the anchor overshoots: one
/// member per question is flagged and is not an answer. The flag is only
/// visible as an extra edge, so relation sequences cannot separate it.
pub fn gen_intersection(spec: &IntersectionSpec) -> Result<(KnowledgeGraph, Vec<QAExample>), String> {
    if spec.min_members < 2 || spec.max_members < spec.min_members {
        return Err("need 2 <= min_members <= max_members".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut b = GraphBuilder::default();
    let member = b.intern_relation("member").map_err(|e| e.to_string())?;
    let flag = b.intern_relation("flag").map_err(|e| e.to_string())?;
    let noise: Vec<RelationId> = (0..spec.noise_relations)
        .map(|j| b.intern_relation(&format!("n{j}")))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let pool: Vec<EntityId> = (0..spec.pool_size.max(1)).map(|k| b.intern_entity(&format!("p{k}"))).collect();
    let mut plans = Vec::with_capacity(spec.n_questions);
    for i in 0..spec.n_questions {
        let q = b.intern_entity(&format!("q{i}"));
        let m = rng.gen_range(spec.min_members..=spec.max_members);
        let members: Vec<EntityId> = (0..m).map(|j| b.intern_entity(&format!("c{i}_{j}"))).collect();
        let flagged = rng.gen_range(0..m);
        let marker = b.intern_entity(&format!("m{i}"));
        for (j, &c) in members.iter().enumerate() {
            b.add_edge(q, member, c).map_err(|e| e.to_string())?;
            if j == flagged {
                b.add_edge(c, flag, marker).map_err(|e| e.to_string())?;
            }
            for &r in &noise {
                if rng.gen_bool(0.5) {
                    b.add_edge(c, r, *pool.choose(&mut rng).unwrap()).map_err(|e| e.to_string())?;
                }
            }
        }
        plans.push((q, members, flagged));
    }
    let g = b.build();
    let examples = plans
        .into_iter()
        .map(|(q, members, flagged)| {
            let answers: Vec<EntityId> =
                members.iter().enumerate().filter(|&(j, _)| j != flagged).map(|(_, &c)| c).collect();
            let text = format!("which member of [{}] is not flagged", g.entity_name(q));
            let mut ex = QAExample::new(&text, EntitySet::singleton(q), EntitySet::from_unsorted(answers));
            ex.gold_sequences = Some(vec![RelationSeq::from_relations(&[member])]);
            ex
        })
        .collect();
    Ok((g, examples))
}
