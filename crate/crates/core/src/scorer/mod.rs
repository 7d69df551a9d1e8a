//! Edge-likelihood scorers: given a question and the relations decoded so
//! far, a probability distribution over the valid next relations.

mod model;
mod train;

pub use model::{central_difference, gradient_check, randomized, relative_error, FeaturizedModel, ModelConfig, FD_STEP};
pub use train::{
    dropout_schedule, prepare_training, teacher_forced_loss, train, TrainConfig, TrainReport, TrainingItem,
};

use crate::coalesce::{enumerate_reachable_sets, EntitySet, RelationSeq};
use crate::error::ScorerError;
use crate::kg::{KnowledgeGraph, RelationId, SELF_RELATION};

/// Tolerance on the sum of a returned distribution.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Smoothing mass the oracle scorer leaves for non-gold options.
pub const ORACLE_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub question: &'a [String],
    pub prefix: &'a RelationSeq,
    /// Candidate next relations; `self` here means "terminate".
    pub options: &'a [RelationId],
}

/// Implementations must be read-only so one scorer can serve concurrent
/// searches.
pub trait EdgeScorer {
    fn score(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, ScorerError>;
}

impl<T: EdgeScorer + ?Sized> EdgeScorer for &T {
    fn score(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        (**self).score(req)
    }
}

/// Checks that `probs` is a distribution over `n` options.
pub fn validate_distribution(probs: &[f64], n: usize) -> Result<(), ScorerError> {
    if probs.len() != n {
        return Err(ScorerError::WrongArity { expected: n, got: probs.len() });
    }
    for (index, &value) in probs.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(ScorerError::InvalidProbability { index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(ScorerError::NotNormalized { sum, tolerance: DISTRIBUTION_TOLERANCE });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformScorer;

impl EdgeScorer for UniformScorer {
    fn score(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        let n = req.options.len();
        if n == 0 {
            return Err(ScorerError::EmptyOptions);
        }
        Ok(vec![1.0 / n as f64; n])
    }
}

/// Puts mass `1 - epsilon` on the options that continue one of the gold
/// sequences, split evenly, and spreads `epsilon` over the rest.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    gold: Vec<Vec<RelationId>>,
    epsilon: f64,
}

impl OracleScorer {
    pub fn new(gold: &[RelationSeq]) -> Self {
        Self::with_epsilon(gold, ORACLE_EPSILON)
    }

    pub fn with_epsilon(gold: &[RelationSeq], epsilon: f64) -> Self {
        Self {
            gold: gold.iter().map(|s| s.relations().to_vec()).collect(),
            epsilon,
        }
    }

    /// Relations that continue some gold sequence after `prefix`; `self` when
    /// the prefix already spells out a whole gold sequence.
    pub fn gold_next(&self, prefix: &RelationSeq) -> Vec<RelationId> {
        let done = prefix.relations();
        let mut next: Vec<RelationId> = self
            .gold
            .iter()
            .filter(|g| g.starts_with(done))
            .map(|g| g.get(done.len()).copied().unwrap_or(SELF_RELATION))
            .collect();
        next.sort_unstable();
        next.dedup();
        next
    }
}

impl EdgeScorer for OracleScorer {
    fn score(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        let n = req.options.len();
        if n == 0 {
            return Err(ScorerError::EmptyOptions);
        }
        let gold = self.gold_next(req.prefix);
        let is_gold: Vec<bool> = req.options.iter().map(|r| gold.contains(r)).collect();
        let n_gold = is_gold.iter().filter(|&&b| b).count();
        if n_gold == 0 || n_gold == n {
            return Ok(vec![1.0 / n as f64; n]);
        }
        let hi = (1.0 - self.epsilon) / n_gold as f64;
        let lo = self.epsilon / (n - n_gold) as f64;
        Ok(is_gold.iter().map(|&g| if g { hi } else { lo }).collect())
    }
}

/// A question-answer pair over a knowledge graph.
#[derive(Debug, Clone, PartialEq)]
pub struct QAExample {
    pub text: String,
    pub question: Vec<String>,
    pub anchors: EntitySet,
    pub answers: EntitySet,
    pub gold_sequences: Option<Vec<RelationSeq>>,
}

impl QAExample {
    pub fn new(text: &str, anchors: EntitySet, answers: EntitySet) -> Self {
        Self {
            text: text.to_owned(),
            question: crate::features::tokenize(text),
            anchors,
            answers,
            gold_sequences: None,
        }
    }
}

/// Which scorer a run uses. The oracle needs each example's gold sequences,
/// so scorers are bound per example.
#[derive(Debug, Clone)]
pub enum ScorerChoice {
    Uniform,
    Oracle,
    Featurized(FeaturizedModel),
}

pub enum BoundScorer<'a> {
    Uniform(UniformScorer),
    Oracle(OracleScorer),
    Featurized(&'a FeaturizedModel),
}

impl ScorerChoice {
    pub fn name(&self) -> &'static str {
        match self {
            ScorerChoice::Uniform => "uniform",
            ScorerChoice::Oracle => "oracle",
            ScorerChoice::Featurized(_) => "featurized",
        }
    }

    /// `None` when the oracle is requested for an example without gold
    /// sequences.
    pub fn bind<'a>(&'a self, ex: &QAExample) -> Option<BoundScorer<'a>> {
        Some(match self {
            ScorerChoice::Uniform => BoundScorer::Uniform(UniformScorer),
            ScorerChoice::Oracle => BoundScorer::Oracle(OracleScorer::new(ex.gold_sequences.as_deref()?)),
            ScorerChoice::Featurized(m) => BoundScorer::Featurized(m),
        })
    }
}

impl EdgeScorer for BoundScorer<'_> {
    fn score(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        match self {
            BoundScorer::Uniform(s) => s.score(req),
            BoundScorer::Oracle(s) => s.score(req),
            BoundScorer::Featurized(s) => s.score(req),
        }
    }
}

/// Sequences of at most `max_len` relations whose reach is a smallest
/// superset of the answers. Empty when no reachable set covers them.
pub fn weak_labels(g: &KnowledgeGraph, ex: &QAExample, max_len: usize) -> Result<Vec<RelationSeq>, crate::error::KgError> {
    let sets = enumerate_reachable_sets(g, &ex.anchors, max_len)?;
    let covering: Vec<(RelationSeq, usize)> = sets
        .into_iter()
        .filter(|(_, reach)| ex.answers.is_subset(reach))
        .map(|(seq, reach)| (seq, reach.len()))
        .collect();
    let Some(min) = covering.iter().map(|(_, n)| *n).min() else {
        return Ok(Vec::new());
    };
    Ok(covering.into_iter().filter(|(_, n)| *n == min).map(|(s, _)| s).collect())
}

/// Options available after `prefix` when its frontier is `frontier`:
/// outgoing relations, plus terminal `self` once a real relation was taken.
pub fn step_options(g: &KnowledgeGraph, frontier: &EntitySet, prefix: &RelationSeq) -> Result<Vec<RelationId>, crate::error::KgError> {
    let mut opts = g.outgoing_relations(frontier)?;
    if prefix.hops() > 0 {
        opts.insert(0, SELF_RELATION);
    }
    Ok(opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::tests::films;

    fn seq(g: &KnowledgeGraph, names: &[&str]) -> RelationSeq {
        let ids: Vec<_> = names.iter().map(|n| g.relation_id(n).unwrap()).collect();
        RelationSeq::from_relations(&ids)
    }

    fn set(g: &KnowledgeGraph, names: &[&str]) -> EntitySet {
        names.iter().map(|n| g.entity_id(n).unwrap()).collect()
    }

    #[test]
    fn uniform_over_four() {
        let q = vec![];
        let p = RelationSeq::root();
        let probs = UniformScorer.score(&ScoreRequest { question: &q, prefix: &p, options: &[1, 2, 3, 4] }).unwrap();
        assert_eq!(probs, vec![0.25; 4]);
        assert_eq!(
            UniformScorer.score(&ScoreRequest { question: &q, prefix: &p, options: &[] }),
            Err(ScorerError::EmptyOptions)
        );
    }

    #[test]
    fn oracle_indicator() {
        let g = films();
        let gold = seq(&g, &["directed", "starred"]);
        let oracle = OracleScorer::new(&[gold]);
        let d = g.relation_id("directed").unwrap();
        let q = vec![];
        let root = RelationSeq::root();
        let probs = oracle.score(&ScoreRequest { question: &q, prefix: &root, options: &[SELF_RELATION, d] }).unwrap();
        assert_eq!(probs, vec![ORACLE_EPSILON, 1.0 - ORACLE_EPSILON]);
        validate_distribution(&probs, 2).unwrap();

        // After the whole gold sequence, terminating is the gold move.
        let full = seq(&g, &["directed", "starred"]);
        assert_eq!(oracle.gold_next(&full), vec![SELF_RELATION]);
    }

    #[test]
    fn validate_rejects_bad_distributions() {
        assert!(matches!(validate_distribution(&[0.5], 2), Err(ScorerError::WrongArity { .. })));
        assert!(matches!(validate_distribution(&[1.5, -0.5], 2), Err(ScorerError::InvalidProbability { index: 1, .. })));
        assert!(matches!(validate_distribution(&[0.5, 0.6], 2), Err(ScorerError::NotNormalized { .. })));
        assert!(matches!(validate_distribution(&[f64::NAN, 1.0], 2), Err(ScorerError::InvalidProbability { .. })));
        validate_distribution(&[0.5, 0.5 + 1e-7], 2).unwrap();
    }

    #[test]
    fn weak_label_examples() {
        let g = films();
        let gl = set(&g, &["GL"]);
        let ex = QAExample::new("q", gl.clone(), set(&g, &["MH", "HF"]));
        assert_eq!(weak_labels(&g, &ex, 2).unwrap(), vec![seq(&g, &["directed", "starred"])]);
        let ex = QAExample::new("q", gl.clone(), set(&g, &["MH"]));
        assert_eq!(weak_labels(&g, &ex, 2).unwrap(), vec![seq(&g, &["directed", "starred"])]);
        let ex = QAExample::new("q", gl.clone(), gl.clone());
        assert_eq!(weak_labels(&g, &ex, 0).unwrap(), vec![RelationSeq::root()]);
        let ex = QAExample::new("q", gl.clone(), set(&g, &["MH", "GL"]));
        assert!(weak_labels(&g, &ex, 2).unwrap().is_empty());
    }

    #[test]
    fn weak_labels_keep_all_minimal_ties() {
        let mut b = crate::kg::GraphBuilder::default();
        b.add_triple("a", "p", "x").unwrap();
        b.add_triple("a", "q", "x").unwrap();
        b.add_triple("a", "r", "x").unwrap();
        b.add_triple("a", "r", "y").unwrap();
        let g = b.build();
        let ex = QAExample::new("q", set(&g, &["a"]), set(&g, &["x"]));
        assert_eq!(weak_labels(&g, &ex, 1).unwrap(), vec![seq(&g, &["p"]), seq(&g, &["q"])]);
    }
}
