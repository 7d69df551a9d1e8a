//! Candidate refinement on the induced subgraph.
//!
//! Node states start from the anchor indicator and the projected question,
//! `h0_v = tanh(a_v w_a + b_0 + u)`. Each round sends messages along both
//! edge directions, gated per (relation, direction) by
//! `sigmoid(c + p * u)`, and updates `h_v = tanh(W h_v + m_v + b_h)`.
//! The readout is `w_out . h_v + b_out`; only candidates are ranked.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, CheckpointReader, CheckpointWriter};
use crate::coalesce::EntitySet;
use crate::error::{CheckpointError, RefineError, TrainError};
use crate::features::{self, NUM_FEATURES};
use crate::kg::{EntityId, KnowledgeGraph, RelationId};
use crate::scorer::{central_difference, relative_error};

#[derive(Debug, Clone, Copy)]
pub struct RefinerConfig {
    pub dim: usize,
    pub rounds: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self { dim: 16, rounds: 2, seed: 0, init_scale: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerModel {
    dim: usize,
    rounds: usize,
    n_rel: usize,
    seed: u64,
    q_proj: Vec<f64>,
    w_anchor: Vec<f64>,
    b0: Vec<f64>,
    w_self: Vec<f64>,
    b_h: Vec<f64>,
    /// `2 x n_rel x dim`: forward-direction gates, then backward.
    gate_c: Vec<f64>,
    gate_p: Vec<f64>,
    w_out: Vec<f64>,
    b_out: f64,
}

/// One training or evaluation instance, in subgraph-local ids.
#[derive(Debug, Clone)]
pub struct Episode {
    pub sub: KnowledgeGraph,
    pub question: Vec<String>,
    pub anchors: EntitySet,
    pub candidates: EntitySet,
    pub answers: EntitySet,
}

struct Forward {
    u: Vec<f64>,
    gates: Vec<f64>,
    /// `rounds + 1` layers of `n x dim` states.
    hs: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

#[derive(Debug, Clone)]
struct RefinerGrad {
    du: Vec<f64>,
    w_anchor: Vec<f64>,
    b0: Vec<f64>,
    w_self: Vec<f64>,
    b_h: Vec<f64>,
    gate_c: Vec<f64>,
    gate_p: Vec<f64>,
    w_out: Vec<f64>,
    b_out: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl RefinerModel {
    /// `n_rel` is the size of the relation table the subgraphs share
    /// (including `self`).
    pub fn new(n_rel: usize, cfg: RefinerConfig) -> Self {
        let d = cfg.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let s = cfg.init_scale;
        let mut draw = |n: usize, scale: f64| -> Vec<f64> {
            if scale > 0.0 {
                (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
            } else {
                vec![0.0; n]
            }
        };
        Self {
            dim: d,
            rounds: cfg.rounds.max(1),
            n_rel,
            seed: cfg.seed,
            q_proj: vec![0.0; NUM_FEATURES * d],
            w_anchor: draw(d, s),
            b0: draw(d, s),
            w_self: draw(d * d, s / (d as f64).sqrt()),
            b_h: vec![0.0; d],
            gate_c: draw(2 * n_rel * d, s),
            gate_p: draw(2 * n_rel * d, s),
            w_out: draw(d, s),
            b_out: 0.0,
        }
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_relations(&self) -> usize {
        self.n_rel
    }

    fn check(&self, sub: &KnowledgeGraph, anchors: &EntitySet, candidates: &EntitySet) -> Result<(), RefineError> {
        if candidates.is_empty() {
            return Err(RefineError::EmptyCandidates);
        }
        let n = sub.num_entities() as EntityId;
        if let Some(&v) = candidates.iter().chain(anchors.iter()).find(|&&v| v >= n) {
            return Err(RefineError::OutsideSubgraph(v));
        }
        if sub.num_relations() > self.n_rel {
            return Err(RefineError::UnknownRelation(sub.num_relations() as RelationId - 1, self.n_rel));
        }
        Ok(())
    }

    fn forward(&self, sub: &KnowledgeGraph, feats: &[(u32, f64)], anchors: &EntitySet) -> Forward {
        let d = self.dim;
        let n = sub.num_entities();
        let mut u = vec![0.0; d];
        for &(f, x) in feats {
            for k in 0..d {
                u[k] += x * self.q_proj[f as usize * d + k];
            }
        }
        let gates: Vec<f64> = (0..self.gate_c.len()).map(|i| sigmoid(self.gate_c[i] + self.gate_p[i] * u[i % d])).collect();
        let mut h0 = vec![0.0; n * d];
        for v in 0..n {
            let a = if anchors.contains(v as EntityId) { 1.0 } else { 0.0 };
            for k in 0..d {
                h0[v * d + k] = (a * self.w_anchor[k] + self.b0[k] + u[k]).tanh();
            }
        }
        let mut hs = vec![h0];
        for _ in 0..self.rounds {
            let h = hs.last().unwrap();
            let mut pre = vec![0.0; n * d];
            for (s, r, o) in sub.edges() {
                let (s, o, r) = (s as usize, o as usize, r as usize);
                let gf = &gates[r * d..(r + 1) * d];
                let gb = &gates[(self.n_rel + r) * d..(self.n_rel + r + 1) * d];
                for k in 0..d {
                    pre[o * d + k] += gf[k] * h[s * d + k];
                    pre[s * d + k] += gb[k] * h[o * d + k];
                }
            }
            for v in 0..n {
                for i in 0..d {
                    let mut acc = self.b_h[i];
                    for k in 0..d {
                        acc += self.w_self[i * d + k] * h[v * d + k];
                    }
                    pre[v * d + i] += acc;
                }
            }
            hs.push(pre.into_iter().map(f64::tanh).collect());
        }
        let last = hs.last().unwrap();
        let scores = (0..n)
            .map(|v| self.b_out + (0..d).map(|k| self.w_out[k] * last[v * d + k]).sum::<f64>())
            .collect();
        Forward { u, gates, hs, scores }
    }

    /// Candidates ranked by score, descending; ties by id.
    pub fn refine(
        &self,
        sub: &KnowledgeGraph,
        question: &[String],
        anchors: &EntitySet,
        candidates: &EntitySet,
    ) -> Result<Vec<(EntityId, f64)>, RefineError> {
        self.check(sub, anchors, candidates)?;
        let fwd = self.forward(sub, &features::question_features(question), anchors);
        let mut ranked: Vec<(EntityId, f64)> = candidates.iter().map(|&v| (v, fwd.scores[v as usize])).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(ranked)
    }

    fn zero_grad(&self) -> RefinerGrad {
        let d = self.dim;
        RefinerGrad {
            du: vec![0.0; d],
            w_anchor: vec![0.0; d],
            b0: vec![0.0; d],
            w_self: vec![0.0; d * d],
            b_h: vec![0.0; d],
            gate_c: vec![0.0; self.gate_c.len()],
            gate_p: vec![0.0; self.gate_p.len()],
            w_out: vec![0.0; d],
            b_out: 0.0,
        }
    }

    /// Mean binary cross-entropy over the candidates, with gradients.
    fn loss_grad(&self, ep: &Episode, feats: &[(u32, f64)], grad: Option<&mut RefinerGrad>) -> f64 {
        let d = self.dim;
        let n = ep.sub.num_entities();
        let fwd = self.forward(&ep.sub, feats, &ep.anchors);
        let m = ep.candidates.len() as f64;
        let mut loss = 0.0;
        let mut dscore = vec![0.0; n];
        for &v in ep.candidates.iter() {
            let z = fwd.scores[v as usize];
            let y = if ep.answers.contains(v) { 1.0 } else { 0.0 };
            loss += (softplus(z) - y * z) / m;
            dscore[v as usize] = (sigmoid(z) - y) / m;
        }
        let Some(g) = grad else { return loss };

        let last = fwd.hs.last().unwrap();
        let mut dh = vec![0.0; n * d];
        for v in 0..n {
            if dscore[v] == 0.0 {
                continue;
            }
            g.b_out += dscore[v];
            for k in 0..d {
                g.w_out[k] += dscore[v] * last[v * d + k];
                dh[v * d + k] = dscore[v] * self.w_out[k];
            }
        }
        let mut dgate = vec![0.0; fwd.gates.len()];
        for t in (0..self.rounds).rev() {
            let h_prev = &fwd.hs[t];
            let h_next = &fwd.hs[t + 1];
            let dpre: Vec<f64> = (0..n * d).map(|i| dh[i] * (1.0 - h_next[i] * h_next[i])).collect();
            let mut dprev = vec![0.0; n * d];
            for v in 0..n {
                for i in 0..d {
                    let dp = dpre[v * d + i];
                    g.b_h[i] += dp;
                    for k in 0..d {
                        g.w_self[i * d + k] += dp * h_prev[v * d + k];
                        dprev[v * d + k] += self.w_self[i * d + k] * dp;
                    }
                }
            }
            for (s, r, o) in ep.sub.edges() {
                let (s, o, r) = (s as usize, o as usize, r as usize);
                let fi = r * d;
                let bi = (self.n_rel + r) * d;
                for k in 0..d {
                    dprev[s * d + k] += fwd.gates[fi + k] * dpre[o * d + k];
                    dgate[fi + k] += dpre[o * d + k] * h_prev[s * d + k];
                    dprev[o * d + k] += fwd.gates[bi + k] * dpre[s * d + k];
                    dgate[bi + k] += dpre[s * d + k] * h_prev[o * d + k];
                }
            }
            dh = dprev;
        }
        let h0 = &fwd.hs[0];
        for v in 0..n {
            let a = if ep.anchors.contains(v as EntityId) { 1.0 } else { 0.0 };
            for k in 0..d {
                let dp = dh[v * d + k] * (1.0 - h0[v * d + k] * h0[v * d + k]);
                g.w_anchor[k] += a * dp;
                g.b0[k] += dp;
                g.du[k] += dp;
            }
        }
        for (i, &dg) in dgate.iter().enumerate() {
            if dg == 0.0 {
                continue;
            }
            let gt = fwd.gates[i];
            let dz = dg * gt * (1.0 - gt);
            g.gate_c[i] += dz;
            g.gate_p[i] += dz * fwd.u[i % d];
            g.du[i % d] += dz * self.gate_p[i];
        }
        loss
    }

    fn apply(&mut self, g: &RefinerGrad, feats: &[(u32, f64)], lr: f64) {
        let d = self.dim;
        let step = |w: &mut [f64], gr: &[f64]| w.iter_mut().zip(gr).for_each(|(w, g)| *w -= lr * g);
        step(&mut self.w_anchor, &g.w_anchor);
        step(&mut self.b0, &g.b0);
        step(&mut self.w_self, &g.w_self);
        step(&mut self.b_h, &g.b_h);
        step(&mut self.gate_c, &g.gate_c);
        step(&mut self.gate_p, &g.gate_p);
        step(&mut self.w_out, &g.w_out);
        self.b_out -= lr * g.b_out;
        for &(f, x) in feats {
            for k in 0..d {
                self.q_proj[f as usize * d + k] -= lr * x * g.du[k];
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        [&self.q_proj, &self.w_anchor, &self.b0, &self.w_self, &self.b_h, &self.gate_c, &self.gate_p, &self.w_out]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
            && self.b_out.is_finite()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), CheckpointError> {
        let mut w = CheckpointWriter::new(out, checkpoint::Kind::Refiner)?;
        for v in [self.dim, self.rounds, self.n_rel] {
            w.u64(v as u64)?;
        }
        w.u64(self.seed)?;
        for v in [&self.w_anchor, &self.b0, &self.w_self, &self.b_h, &self.gate_c, &self.gate_p, &self.w_out] {
            w.f64s(v)?;
        }
        w.f64(self.b_out)?;
        w.sparse_rows(&self.q_proj, self.dim)?;
        w.finish()
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, CheckpointError> {
        let mut r = CheckpointReader::new(input, checkpoint::Kind::Refiner)?;
        let dim = r.u64()? as usize;
        let rounds = r.u64()? as usize;
        let n_rel = r.u64()? as usize;
        if dim == 0 || dim > 1024 || rounds == 0 || rounds > 64 || n_rel == 0 || n_rel > 1 << 20 {
            return Err(CheckpointError::Corrupt(format!("implausible shape dim={dim} rounds={rounds} relations={n_rel}")));
        }
        let seed = r.u64()?;
        let mut m = RefinerModel::new(n_rel, RefinerConfig { dim, rounds, seed, init_scale: 0.0 });
        for v in [&mut m.w_anchor, &mut m.b0, &mut m.w_self, &mut m.b_h, &mut m.gate_c, &mut m.gate_p, &mut m.w_out] {
            r.f64s_into(v)?;
        }
        m.b_out = r.f64()?;
        r.sparse_rows_into(&mut m.q_proj, dim)?;
        r.finish()?;
        if !m.all_finite() {
            return Err(CheckpointError::Corrupt("non-finite parameter".into()));
        }
        Ok(m)
    }

    fn params_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.q_proj,
            &mut self.w_anchor,
            &mut self.b0,
            &mut self.w_self,
            &mut self.b_h,
            &mut self.gate_c,
            &mut self.gate_p,
            &mut self.w_out,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerReport {
    pub epoch_losses: Vec<f64>,
    pub trained_episodes: usize,
    pub skipped_episodes: usize,
}

/// Per-episode SGD on the candidate cross-entropy. Episodes whose answers
/// miss every candidate are skipped and counted.
pub fn train_refiner(
    model: &mut RefinerModel,
    episodes: &[Episode],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<RefinerReport, TrainError> {
    let usable: Vec<usize> = (0..episodes.len())
        .filter(|&i| {
            let ep = &episodes[i];
            ep.answers.intersection_len(&ep.candidates) > 0 && model.check(&ep.sub, &ep.anchors, &ep.candidates).is_ok()
        })
        .collect();
    let skipped = episodes.len() - usable.len();
    if usable.is_empty() && epochs > 0 {
        return Err(TrainError::NoExamples("no episode has an answer among its candidates".into()));
    }
    let feats: Vec<Vec<(u32, f64)>> = episodes.iter().map(|ep| features::question_features(&ep.question)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order = usable.clone();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let mut g = model.zero_grad();
            let loss = model.loss_grad(&episodes[i], &feats[i], Some(&mut g));
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, example: i, loss });
            }
            model.apply(&g, &feats[i], lr);
            total += loss;
        }
        let mean = total / order.len() as f64;
        if !mean.is_finite() || !model.all_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, example: usize::MAX, loss: mean });
        }
        epoch_losses.push(mean);
    }
    Ok(RefinerReport { epoch_losses, trained_episodes: usable.len(), skipped_episodes: skipped })
}

/// Candidate cross-entropy of one episode.
pub fn episode_loss(model: &RefinerModel, ep: &Episode) -> f64 {
    model.loss_grad(ep, &features::question_features(&ep.question), None)
}

/// Finite-difference check of the episode loss gradient over every
/// parameter the episode touches; returns the max relative error.
pub fn refiner_gradient_check(model: &RefinerModel, ep: &Episode) -> f64 {
    let d = model.dim;
    let feats = features::question_features(&ep.question);
    let mut g = model.zero_grad();
    model.loss_grad(ep, &feats, Some(&mut g));

    let mut rels: Vec<usize> = ep.sub.edges().map(|(_, r, _)| r as usize).collect();
    rels.sort_unstable();
    rels.dedup();
    // (parameter block, index, analytic gradient)
    let mut params: Vec<(usize, usize, f64)> = Vec::new();
    for &(f, x) in &feats {
        for k in 0..d {
            params.push((0, f as usize * d + k, x * g.du[k]));
        }
    }
    for k in 0..d {
        params.push((1, k, g.w_anchor[k]));
        params.push((2, k, g.b0[k]));
        params.push((4, k, g.b_h[k]));
        params.push((7, k, g.w_out[k]));
    }
    for i in 0..d * d {
        params.push((3, i, g.w_self[i]));
    }
    for dir in 0..2 {
        for &r in &rels {
            for k in 0..d {
                let i = (dir * model.n_rel + r) * d + k;
                params.push((5, i, g.gate_c[i]));
                params.push((6, i, g.gate_p[i]));
            }
        }
    }

    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (block, i, analytic) in params {
        let orig = probe.params_mut()[block][i];
        let numeric = central_difference(orig, |x| {
            probe.params_mut()[block][i] = x;
            probe.loss_grad(ep, &feats, None)
        });
        probe.params_mut()[block][i] = orig;
        worst = worst.max(relative_error(analytic, numeric));
    }
    let orig = probe.b_out;
    let numeric = central_difference(orig, |x| {
        probe.b_out = x;
        probe.loss_grad(ep, &feats, None)
    });
    worst.max(relative_error(g.b_out, numeric))
}

/// Randomizes the question projection rows `question` touches, so gradient
/// checks exercise them.
pub fn randomize_question_rows(model: &mut RefinerModel, question: &[String], seed: u64) {
    let d = model.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (f, _) in features::question_features(question) {
        for k in 0..d {
            model.q_proj[f as usize * d + k] = rng.gen_range(-0.5..0.5);
        }
    }
}

/// Expected Hits@1 when picking uniformly from the candidates: a / m.
pub fn unrefined_hits(candidates: &EntitySet, answers: &EntitySet) -> f64 {
    if candidates.is_empty() {
        0.0
    } else {
        candidates.intersection_len(answers) as f64 / candidates.len() as f64
    }
}

/// 1 when the top-ranked candidate is an answer.
pub fn refined_hits(model: &RefinerModel, ep: &Episode) -> Result<f64, RefineError> {
    let ranked = model.refine(&ep.sub, &ep.question, &ep.anchors, &ep.candidates)?;
    Ok(if ep.answers.contains(ranked[0].0) { 1.0 } else { 0.0 })
}
