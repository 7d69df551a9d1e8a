//! Seek, then refine: candidate episodes and Hits@1 evaluation.

use crate::coalesce::EntitySet;
use crate::error::EvalError;
use crate::kg::{EntityId, KnowledgeGraph};
use crate::refiner::{unrefined_hits, Episode, RefinerModel};
use crate::scorer::{QAExample, ScorerChoice};
use crate::seeker::{candidate_subgraph, seek, SeekParams, SeekResult};

/// Restricts a search result to its candidate subgraph, in local ids.
/// Answers outside the subgraph are dropped.
pub fn build_episode(g: &KnowledgeGraph, ex: &QAExample, res: &SeekResult) -> Result<Episode, EvalError> {
    let sub = candidate_subgraph(g, res)?;
    let anchors = sub.localize(&ex.anchors)?;
    let candidates = sub.localize(&res.candidates)?;
    let answers: Vec<EntityId> = ex.answers.iter().filter_map(|&v| sub.local_id(v)).collect();
    Ok(Episode {
        sub: sub.graph,
        question: ex.question.clone(),
        anchors,
        candidates,
        answers: EntitySet::from_unsorted(answers),
    })
}

/// Refines a search result's candidates; ids are the parent graph's.
pub fn refine_result(
    g: &KnowledgeGraph,
    ex: &QAExample,
    res: &SeekResult,
    model: &RefinerModel,
) -> Result<Vec<(EntityId, f64)>, EvalError> {
    let sub = candidate_subgraph(g, res)?;
    let anchors = sub.localize(&ex.anchors)?;
    let candidates = sub.localize(&res.candidates)?;
    let ranked = model.refine(&sub.graph, &ex.question, &anchors, &candidates)?;
    Ok(ranked.into_iter().map(|(v, s)| (sub.original_id(v), s)).collect())
}

fn run_seek(g: &KnowledgeGraph, i: usize, ex: &QAExample, scorer: &ScorerChoice, params: SeekParams) -> Result<SeekResult, EvalError> {
    let bound = scorer.bind(ex).ok_or(EvalError::MissingGold(i))?;
    Ok(seek(g, &ex.anchors, &ex.question, &bound, params)?)
}

/// Searches every example and keeps those with at least one candidate.
pub fn collect_episodes(
    g: &KnowledgeGraph,
    examples: &[QAExample],
    scorer: &ScorerChoice,
    params: SeekParams,
) -> Result<Vec<Episode>, EvalError> {
    let mut out = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        let res = run_seek(g, i, ex, scorer, params)?;
        if !res.candidates.is_empty() {
            out.push(build_episode(g, ex, &res)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleOutcome {
    pub index: usize,
    pub candidates: usize,
    pub answers_in_candidates: usize,
    pub unrefined: f64,
    pub refined: Option<f64>,
}

impl ExampleOutcome {
    pub const CSV_HEADER: &'static str = "example,candidates,answers_in_candidates,unrefined_hits1,refined_hits1";

    pub fn csv(&self) -> String {
        let refined = self.refined.map(|r| format!("{r:.0}")).unwrap_or_default();
        format!("{},{},{},{:.6},{}", self.index, self.candidates, self.answers_in_candidates, self.unrefined, refined)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub outcomes: Vec<ExampleOutcome>,
    /// Expected Hits@1 picking uniformly among the candidates.
    pub unrefined_hits: f64,
    pub refined_hits: Option<f64>,
    pub mean_candidates: f64,
}

/// Hits@1 over `examples`. Without candidates an example scores 0 in both
/// variants.
pub fn evaluate(
    g: &KnowledgeGraph,
    examples: &[QAExample],
    scorer: &ScorerChoice,
    params: SeekParams,
    refiner: Option<&RefinerModel>,
) -> Result<EvalReport, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::NoExamples);
    }
    let mut outcomes = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        let res = run_seek(g, i, ex, scorer, params)?;
        let unrefined = unrefined_hits(&res.candidates, &ex.answers);
        let refined = match refiner {
            None => None,
            Some(_) if res.candidates.is_empty() => Some(0.0),
            Some(m) => {
                let ranked = refine_result(g, ex, &res, m)?;
                Some(if ex.answers.contains(ranked[0].0) { 1.0 } else { 0.0 })
            }
        };
        outcomes.push(ExampleOutcome {
            index: i,
            candidates: res.candidates.len(),
            answers_in_candidates: res.candidates.intersection_len(&ex.answers),
            unrefined,
            refined,
        });
    }
    let n = outcomes.len() as f64;
    Ok(EvalReport {
        unrefined_hits: outcomes.iter().map(|o| o.unrefined).sum::<f64>() / n,
        refined_hits: refiner.map(|_| outcomes.iter().filter_map(|o| o.refined).sum::<f64>() / n),
        mean_candidates: outcomes.iter().map(|o| o.candidates as f64).sum::<f64>() / n,
        outcomes,
    })
}
