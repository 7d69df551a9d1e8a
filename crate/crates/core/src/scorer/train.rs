//! Weakly supervised teacher-forced training with path dropout.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{Encoded, FeaturizedModel, StepTarget};
use super::{step_options, weak_labels, EdgeScorer, OracleScorer, QAExample, ScoreRequest};
use crate::coalesce::{reach_step, RelationSeq};
use crate::error::{KgError, TrainError};
use crate::kg::{Fnv64, KnowledgeGraph, RelationId, SELF_RELATION};

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub p_drop_init: f64,
    pub seed: u64,
    /// Horizon for weak labels.
    pub max_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, lr: 0.1, p_drop_init: 0.5, seed: 0, max_len: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub trained_examples: usize,
    /// Hash of every option set presented during training.
    pub option_digest: u64,
}

/// One decoding step of a gold sequence with the full option set.
#[derive(Debug, Clone)]
struct GoldStep {
    options: Vec<RelationId>,
    target: usize,
    /// Options continuing some gold sequence; never dropped.
    protected: Vec<bool>,
}

#[derive(Debug, Clone)]
struct GoldPath {
    rels: Vec<RelationId>,
    steps: Vec<GoldStep>,
}

/// An example with its weak labels resolved into teacher-forcing steps.
#[derive(Debug, Clone)]
pub struct TrainingItem {
    pub example_index: usize,
    pub question: Vec<String>,
    pub golds: Vec<RelationSeq>,
    paths: Vec<GoldPath>,
}

impl TrainingItem {
    /// Builds the item from explicit gold sequences (unterminated). Each path
    /// is decoded step by step and closed with the terminal `self`.
    pub fn new(
        g: &KnowledgeGraph,
        example_index: usize,
        ex: &QAExample,
        golds: Vec<RelationSeq>,
    ) -> Result<Option<Self>, KgError> {
        let golds: Vec<RelationSeq> = golds.into_iter().filter(|s| s.hops() > 0).collect();
        if golds.is_empty() {
            return Ok(None);
        }
        let oracle = OracleScorer::new(&golds);
        let mut paths = Vec::with_capacity(golds.len());
        for gold in &golds {
            let rels = gold.relations();
            let mut prefix = RelationSeq::root();
            let mut frontier = ex.anchors.clone();
            let mut steps = Vec::with_capacity(rels.len() + 1);
            for t in 0..=rels.len() {
                let next = rels.get(t).copied().unwrap_or(SELF_RELATION);
                let options = step_options(g, &frontier, &prefix)?;
                let Some(target) = options.iter().position(|&o| o == next) else {
                    return Ok(None);
                };
                let gold_next = oracle.gold_next(&prefix);
                let protected = options.iter().map(|o| gold_next.contains(o)).collect();
                steps.push(GoldStep { options, target, protected });
                if next != SELF_RELATION {
                    frontier = reach_step(g, &frontier, next)?;
                    prefix = prefix.extended(next);
                }
            }
            paths.push(GoldPath { rels: gold.as_slice().to_vec(), steps });
        }
        Ok(Some(Self { example_index, question: ex.question.clone(), golds, paths }))
    }
}

/// Resolves weak labels for every example. Examples with no covering
/// sequence within `max_len` (or only the empty one) are skipped and
/// counted.
pub fn prepare_training(
    g: &KnowledgeGraph,
    data: &[QAExample],
    max_len: usize,
) -> Result<(Vec<TrainingItem>, usize), KgError> {
    let mut items = Vec::with_capacity(data.len());
    let mut skipped = 0;
    for (i, ex) in data.iter().enumerate() {
        if ex.anchors.is_empty() || ex.answers.is_empty() {
            skipped += 1;
            continue;
        }
        let labels = weak_labels(g, ex, max_len)?;
        match TrainingItem::new(g, i, ex, labels)? {
            Some(item) => items.push(item),
            None => skipped += 1,
        }
    }
    Ok((items, skipped))
}

/// Path-dropout probability at `epoch`: linear from `p0` down to zero at
/// half the epochs, zero afterwards.
pub fn dropout_schedule(p0: f64, epoch: usize, epochs: usize) -> f64 {
    let half = epochs as f64 / 2.0;
    if half <= 0.0 || epoch as f64 >= half {
        0.0
    } else {
        p0 * (1.0 - epoch as f64 / half)
    }
}

fn item_steps(item: &TrainingItem, p_drop: f64, rng: &mut ChaCha8Rng, digest: &mut Fnv64) -> Vec<(Vec<RelationId>, Vec<StepTarget>)> {
    let weight = 1.0 / item.paths.len() as f64;
    item.paths
        .iter()
        .map(|path| {
            let steps = path
                .steps
                .iter()
                .enumerate()
                .map(|(t, st)| {
                    let mut options = Vec::with_capacity(st.options.len());
                    let mut target = 0;
                    for (i, (&o, &keep)) in st.options.iter().zip(&st.protected).enumerate() {
                        if keep || p_drop <= 0.0 || !rng.gen_bool(p_drop) {
                            if i == st.target {
                                target = options.len();
                            }
                            options.push(o);
                        }
                    }
                    for &o in &options {
                        digest.write_u64(o as u64);
                    }
                    digest.write_u64(u64::MAX);
                    StepTarget { pos: t + 1, options, target, weight }
                })
                .collect();
            (path.rels.clone(), steps)
        })
        .collect()
}

/// SGD over `items`, one update per example. Shuffling and dropout draw from
/// separate streams derived from `cfg.seed`.
pub fn train(model: &mut FeaturizedModel, items: &[TrainingItem], cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    if items.is_empty() && cfg.epochs > 0 {
        return Err(TrainError::NoExamples("no example has a covering relation sequence".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd1b5_4a32_d192_ed03);
    let encoded: Vec<Encoded> = items.iter().map(|it| model.encode(&it.question)).collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut digest = Fnv64::default();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut grad = model.new_grad();
    for epoch in 0..cfg.epochs {
        let p_drop = dropout_schedule(cfg.p_drop_init, epoch, cfg.epochs);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for &i in &order {
            let item = &items[i];
            reset(&mut grad);
            let mut loss = 0.0;
            for (rels, steps) in item_steps(item, p_drop, &mut dropout_rng, &mut digest) {
                loss += model.loss_grad(&encoded[i], &rels, &steps, Some(&mut grad));
            }
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, example: item.example_index, loss });
            }
            model.apply(&encoded[i], &grad, cfg.lr);
            total += loss;
        }
        let mean = total / items.len() as f64;
        if !mean.is_finite() || !model.all_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, example: usize::MAX, loss: mean });
        }
        epoch_losses.push(mean);
    }
    Ok(TrainReport {
        epoch_losses,
        trained_examples: items.len(),
        option_digest: digest.finish(),
    })
}

fn reset(g: &mut super::model::Grad) {
    g.rel_emb.iter_mut().for_each(|v| *v = 0.0);
    g.recur.iter_mut().for_each(|v| *v = 0.0);
    g.bias.iter_mut().for_each(|v| *v = 0.0);
    g.du.iter_mut().for_each(|v| *v = 0.0);
    g.overlap = 0.0;
}

/// Teacher-forced cross-entropy of any scorer on one item, with full option
/// sets and gold paths weighted uniformly.
pub fn teacher_forced_loss(scorer: &dyn EdgeScorer, item: &TrainingItem) -> Result<f64, crate::error::ScorerError> {
    let weight = 1.0 / item.paths.len() as f64;
    let mut loss = 0.0;
    for path in &item.paths {
        for (t, st) in path.steps.iter().enumerate() {
            let prefix = RelationSeq::from_relations(&path.rels[..t + 1]);
            let probs = scorer.score(&ScoreRequest { question: &item.question, prefix: &prefix, options: &st.options })?;
            loss -= weight * probs[st.target].ln();
        }
    }
    Ok(loss)
}
