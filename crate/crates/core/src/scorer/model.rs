//! Trainable featurized scorer.
//!
//! The question becomes a sparse hashed n-gram vector `x`, projected to
//! `u = Q^T x`. The decoded prefix `(self, r1, ..., r_{t-1})` is folded by a
//! small recurrence `h_j = tanh(u + W h_{j-1} + E[r_{j-1}])` with `h_0 = 0`,
//! and each option `o` gets the logit
//! `E[o] . h_t + b[o] + w_ov * overlap(question, name(o))`.
//! Probabilities are the softmax over the requested options only.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EdgeScorer, ScoreRequest};
use crate::checkpoint::{self, CheckpointReader, CheckpointWriter};
use crate::error::{CheckpointError, ScorerError};
use crate::features::{self, NUM_FEATURES};
use crate::kg::{KnowledgeGraph, RelationId};

#[derive(Debug, Clone, Copy)]
pub struct ModelConfig {
    pub dim: usize,
    pub seed: u64,
    /// Half-width of the uniform initialization of dense parameters.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { dim: 64, seed: 0, init_scale: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedModel {
    dim: usize,
    seed: u64,
    relation_names: Vec<String>,
    relation_tokens: Vec<Vec<String>>,
    /// `n_rel x dim`, row per relation id (including `self`).
    rel_emb: Vec<f64>,
    /// `NUM_FEATURES x dim`; starts at zero and only touched rows move.
    q_proj: Vec<f64>,
    /// `dim x dim`, row-major.
    recur: Vec<f64>,
    bias: Vec<f64>,
    overlap_w: f64,
}

/// Gradient of everything but the question projection, which is recovered
/// from `du` and the sparse features.
#[derive(Debug, Clone)]
pub(crate) struct Grad {
    pub rel_emb: Vec<f64>,
    pub recur: Vec<f64>,
    pub bias: Vec<f64>,
    pub overlap: f64,
    pub du: Vec<f64>,
}

/// One supervised decoding step: score `options` from state `h_pos`.
#[derive(Debug, Clone)]
pub(crate) struct StepTarget {
    pub pos: usize,
    pub options: Vec<RelationId>,
    pub target: usize,
    pub weight: f64,
}

/// Question-dependent quantities shared by every step of one request.
pub(crate) struct Encoded {
    pub feats: Vec<(u32, f64)>,
    pub overlap: Vec<f64>,
}

impl FeaturizedModel {
    pub fn new(g: &KnowledgeGraph, cfg: ModelConfig) -> Self {
        let names: Vec<String> = g.relations().names().to_vec();
        let mut m = Self::zeros(names, cfg.dim, cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let s = cfg.init_scale;
        if s <= 0.0 {
            return m;
        }
        for w in &mut m.rel_emb {
            *w = rng.gen_range(-s..s);
        }
        let rs = s / (cfg.dim as f64).sqrt();
        for w in &mut m.recur {
            *w = rng.gen_range(-rs..rs);
        }
        m
    }

    /// All parameters zero: every request scores uniformly.
    pub fn zeros(relation_names: Vec<String>, dim: usize, seed: u64) -> Self {
        let n_rel = relation_names.len();
        let relation_tokens = relation_names.iter().map(|n| features::relation_tokens(n)).collect();
        Self {
            dim,
            seed,
            relation_names,
            relation_tokens,
            rel_emb: vec![0.0; n_rel * dim],
            q_proj: vec![0.0; NUM_FEATURES * dim],
            recur: vec![0.0; dim * dim],
            bias: vec![0.0; n_rel],
            overlap_w: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    /// True when the model was built for a graph with the same relation table.
    pub fn matches_graph(&self, g: &KnowledgeGraph) -> bool {
        g.relations().names() == self.relation_names.as_slice()
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn all_finite(&self) -> bool {
        self.rel_emb.iter().chain(&self.q_proj).chain(&self.recur).chain(&self.bias).all(|w| w.is_finite())
            && self.overlap_w.is_finite()
    }

    pub(crate) fn encode(&self, question: &[String]) -> Encoded {
        let overlap = self.relation_tokens.iter().map(|t| features::token_overlap(question, t)).collect();
        Encoded { feats: features::question_features(question), overlap }
    }

    fn check_ids(&self, ids: &[RelationId]) -> Result<(), ScorerError> {
        // Relation ids beyond the model's table cannot be scored; treat as an
        // arity problem so callers surface a contract error.
        match ids.iter().find(|&&r| r as usize >= self.num_relations()) {
            Some(_) => Err(ScorerError::WrongArity { expected: self.num_relations(), got: ids.len() }),
            None => Ok(()),
        }
    }

    /// Hidden states `h_0..=h_len` after consuming `rels` one by one.
    fn states(&self, enc: &Encoded, rels: &[RelationId]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.dim;
        let mut u = vec![0.0; d];
        for &(f, x) in &enc.feats {
            let row = &self.q_proj[f as usize * d..(f as usize + 1) * d];
            for (ui, wi) in u.iter_mut().zip(row) {
                *ui += x * wi;
            }
        }
        let mut hs = Vec::with_capacity(rels.len() + 1);
        hs.push(vec![0.0; d]);
        for &r in rels {
            let prev = hs.last().unwrap();
            let emb = &self.rel_emb[r as usize * d..(r as usize + 1) * d];
            let mut next = vec![0.0; d];
            for i in 0..d {
                let row = &self.recur[i * d..(i + 1) * d];
                let mut a = u[i] + emb[i];
                for k in 0..d {
                    a += row[k] * prev[k];
                }
                next[i] = a.tanh();
            }
            hs.push(next);
        }
        (u, hs)
    }

    fn logits(&self, enc: &Encoded, h: &[f64], options: &[RelationId]) -> Vec<f64> {
        let d = self.dim;
        options
            .iter()
            .map(|&o| {
                let emb = &self.rel_emb[o as usize * d..(o as usize + 1) * d];
                let dot: f64 = emb.iter().zip(h).map(|(a, b)| a * b).sum();
                dot + self.bias[o as usize] + self.overlap_w * enc.overlap[o as usize]
            })
            .collect()
    }

    pub(crate) fn new_grad(&self) -> Grad {
        Grad {
            rel_emb: vec![0.0; self.rel_emb.len()],
            recur: vec![0.0; self.recur.len()],
            bias: vec![0.0; self.bias.len()],
            overlap: 0.0,
            du: vec![0.0; self.dim],
        }
    }

    /// Weighted cross-entropy over `steps` along the input sequence `rels`,
    /// accumulating gradients into `grad` when given.
    pub(crate) fn loss_grad(
        &self,
        enc: &Encoded,
        rels: &[RelationId],
        steps: &[StepTarget],
        mut grad: Option<&mut Grad>,
    ) -> f64 {
        let d = self.dim;
        let (_, hs) = self.states(enc, rels);
        let mut dh = vec![vec![0.0; d]; hs.len()];
        let mut loss = 0.0;
        for st in steps {
            let h = &hs[st.pos];
            let logits = self.logits(enc, h, &st.options);
            let lse = log_sum_exp(&logits);
            loss += st.weight * (lse - logits[st.target]);
            let Some(g) = grad.as_deref_mut() else { continue };
            for (i, (&o, &z)) in st.options.iter().zip(&logits).enumerate() {
                let p = (z - lse).exp();
                let dz = st.weight * (p - if i == st.target { 1.0 } else { 0.0 });
                let o = o as usize;
                g.bias[o] += dz;
                g.overlap += dz * enc.overlap[o];
                let emb = &self.rel_emb[o * d..(o + 1) * d];
                let gemb = &mut g.rel_emb[o * d..(o + 1) * d];
                for k in 0..d {
                    gemb[k] += dz * h[k];
                    dh[st.pos][k] += dz * emb[k];
                }
            }
        }
        if let Some(g) = grad {
            for j in (1..hs.len()).rev() {
                let da: Vec<f64> = (0..d).map(|i| dh[j][i] * (1.0 - hs[j][i] * hs[j][i])).collect();
                let r = rels[j - 1] as usize;
                for i in 0..d {
                    g.du[i] += da[i];
                    g.rel_emb[r * d + i] += da[i];
                }
                let prev = &hs[j - 1];
                let mut carry = vec![0.0; d];
                for i in 0..d {
                    let row = &self.recur[i * d..(i + 1) * d];
                    let grow = &mut g.recur[i * d..(i + 1) * d];
                    for k in 0..d {
                        grow[k] += da[i] * prev[k];
                        carry[k] += row[k] * da[i];
                    }
                }
                for k in 0..d {
                    dh[j - 1][k] += carry[k];
                }
            }
        }
        loss
    }

    /// Plain SGD step.
    pub(crate) fn apply(&mut self, enc: &Encoded, grad: &Grad, lr: f64) {
        let d = self.dim;
        for (w, g) in self.rel_emb.iter_mut().zip(&grad.rel_emb) {
            *w -= lr * g;
        }
        for (w, g) in self.recur.iter_mut().zip(&grad.recur) {
            *w -= lr * g;
        }
        for (w, g) in self.bias.iter_mut().zip(&grad.bias) {
            *w -= lr * g;
        }
        self.overlap_w -= lr * grad.overlap;
        for &(f, x) in &enc.feats {
            let row = &mut self.q_proj[f as usize * d..(f as usize + 1) * d];
            for (w, g) in row.iter_mut().zip(&grad.du) {
                *w -= lr * x * g;
            }
        }
    }

    /// Probabilities over `options` from an already encoded question.
    pub(crate) fn probs(&self, enc: &Encoded, prefix: &[RelationId], options: &[RelationId]) -> Vec<f64> {
        let (_, hs) = self.states(enc, prefix);
        softmax(&self.logits(enc, hs.last().unwrap(), options))
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
        let mut w = CheckpointWriter::new(out, checkpoint::Kind::Scorer)?;
        w.u64(self.dim as u64)?;
        w.u64(self.seed)?;
        w.strings(&self.relation_names)?;
        w.f64s(&self.rel_emb)?;
        w.f64s(&self.recur)?;
        w.f64s(&self.bias)?;
        w.f64(self.overlap_w)?;
        w.sparse_rows(&self.q_proj, self.dim)?;
        w.finish()
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, CheckpointError> {
        let mut r = CheckpointReader::new(input, checkpoint::Kind::Scorer)?;
        let dim = r.u64()? as usize;
        if dim == 0 || dim > 4096 {
            return Err(CheckpointError::Corrupt(format!("implausible dimension {dim}")));
        }
        let seed = r.u64()?;
        let names = r.strings()?;
        let mut m = Self::zeros(names, dim, seed);
        r.f64s_into(&mut m.rel_emb)?;
        r.f64s_into(&mut m.recur)?;
        r.f64s_into(&mut m.bias)?;
        m.overlap_w = r.f64()?;
        r.sparse_rows_into(&mut m.q_proj, dim)?;
        r.finish()?;
        if !m.all_finite() {
            return Err(CheckpointError::Corrupt("non-finite parameter".into()));
        }
        Ok(m)
    }

    /// Mutable handle to one scalar parameter, for finite differences.
    fn param_mut(&mut self, p: Param) -> &mut f64 {
        match p {
            Param::RelEmb(i) => &mut self.rel_emb[i],
            Param::QProj(i) => &mut self.q_proj[i],
            Param::Recur(i) => &mut self.recur[i],
            Param::Bias(i) => &mut self.bias[i],
            Param::Overlap => &mut self.overlap_w,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Param {
    RelEmb(usize),
    QProj(usize),
    Recur(usize),
    Bias(usize),
    Overlap,
}

impl EdgeScorer for FeaturizedModel {
    fn score(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, ScorerError> {
        if req.options.is_empty() {
            return Err(ScorerError::EmptyOptions);
        }
        self.check_ids(req.options)?;
        self.check_ids(req.prefix.as_slice())?;
        let enc = self.encode(req.question);
        Ok(self.probs(&enc, req.prefix.as_slice(), req.options))
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Relative error used by the gradient checks. The `1e-6` floor keeps
/// near-zero gradients from turning rounding noise into large ratios.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Finite-difference step for [`central_difference`].
pub const FD_STEP: f64 = 1e-3;

/// Fourth-order central difference `f'(x)` with step [`FD_STEP`]. The wide
/// stencil keeps rounding noise near 1e-13, well under the check tolerance
/// for gradients close to the relative-error floor.
pub fn central_difference(x: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = FD_STEP;
    let (p1, m1, p2, m2) = (f(x + h), f(x - h), f(x + 2.0 * h), f(x - 2.0 * h));
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h)
}

/// Compares the analytic cross-entropy gradient for choosing `gold` against
/// fourth-order central differences, over every parameter the request
/// touches. Returns the largest relative error.
pub fn gradient_check(model: &FeaturizedModel, req: &ScoreRequest<'_>, gold: RelationId) -> f64 {
    let target = req.options.iter().position(|&o| o == gold).expect("gold must be one of the options");
    let rels: Vec<RelationId> = req.prefix.as_slice().to_vec();
    let steps = [StepTarget { pos: rels.len(), options: req.options.to_vec(), target, weight: 1.0 }];
    let enc = model.encode(req.question);
    let mut grad = model.new_grad();
    model.loss_grad(&enc, &rels, &steps, Some(&mut grad));

    let d = model.dim;
    let mut params: Vec<(Param, f64)> = Vec::new();
    let mut rel_rows: Vec<RelationId> = rels.iter().chain(req.options).copied().collect();
    rel_rows.sort_unstable();
    rel_rows.dedup();
    for &r in &rel_rows {
        for k in 0..d {
            let i = r as usize * d + k;
            params.push((Param::RelEmb(i), grad.rel_emb[i]));
        }
    }
    for &o in req.options {
        params.push((Param::Bias(o as usize), grad.bias[o as usize]));
    }
    for i in 0..d * d {
        params.push((Param::Recur(i), grad.recur[i]));
    }
    params.push((Param::Overlap, grad.overlap));
    for &(f, x) in &enc.feats {
        for k in 0..d {
            params.push((Param::QProj(f as usize * d + k), x * grad.du[k]));
        }
    }

    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (p, analytic) in params {
        let orig = *probe.param_mut(p);
        let numeric = central_difference(orig, |x| {
            *probe.param_mut(p) = x;
            probe.loss_grad(&enc, &rels, &steps, None)
        });
        *probe.param_mut(p) = orig;
        worst = worst.max(relative_error(analytic, numeric));
    }
    worst
}

/// A model with every parameter drawn at random, including the question
/// projection rows a request touches. Used by gradient checks.
pub fn randomized(g: &KnowledgeGraph, dim: usize, seed: u64, question: &[String]) -> FeaturizedModel {
    let mut m = FeaturizedModel::new(g, ModelConfig { dim, seed, init_scale: 0.5 });
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for b in &mut m.bias {
        *b = rng.gen_range(-0.5..0.5);
    }
    m.overlap_w = rng.gen_range(-0.5..0.5);
    for (f, _) in features::question_features(question) {
        for k in 0..dim {
            m.q_proj[f as usize * dim + k] = rng.gen_range(-0.5..0.5);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coalesce::RelationSeq;
    use crate::features::tokenize;
    use crate::kg::tests::films;
    use crate::scorer::validate_distribution;
    use crate::verify::random_graph;

    #[test]
    fn deterministic_and_normalized() {
        let g = films();
        let starred = g.relation_id("starred").unwrap();
        let a = FeaturizedModel::new(&g, ModelConfig { seed: 3, ..Default::default() });
        let b = FeaturizedModel::new(&g, ModelConfig { seed: 3, ..Default::default() });
        assert_eq!(a, b);
        let q = tokenize("who starred in films directed by [George Lucas]");
        let prefix = RelationSeq::from_relations(&[1]);
        let req = ScoreRequest { question: &q, prefix: &prefix, options: &[0, starred] };
        let pa = a.score(&req).unwrap();
        assert_eq!(pa, b.score(&req).unwrap());
        validate_distribution(&pa, 2).unwrap();
    }

    #[test]
    fn zero_model_bias_gradient_is_softmax_minus_onehot() {
        let g = crate::kg::parse_triples(crate::kg::tests::FILMS.as_bytes(), true).unwrap();
        let m = FeaturizedModel::zeros(g.relations().names().to_vec(), 8, 0);
        let q = tokenize("anything");
        let enc = m.encode(&q);
        let options = vec![1, 2, 3, 4];
        let steps = [StepTarget { pos: 1, options: options.clone(), target: 2, weight: 1.0 }];
        let mut grad = m.new_grad();
        m.loss_grad(&enc, &[0], &steps, Some(&mut grad));
        for (i, &o) in options.iter().enumerate() {
            let expected = 0.25 - if i == 2 { 1.0 } else { 0.0 };
            assert!((grad.bias[o as usize] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_check_random_models() {
        let g = random_graph(30, 6, 200, 1);
        let q = tokenize("what is r3 of r1 of [e4]");
        for seed in 0..5 {
            let m = randomized(&g, 8, seed, &q);
            let prefix = RelationSeq::from_relations(&[1, 3]);
            let req = ScoreRequest { question: &q, prefix: &prefix, options: &[0, 2, 3, 5] };
            let err = gradient_check(&m, &req, 3);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = films();
        let mut m = FeaturizedModel::new(&g, ModelConfig { dim: 4, seed: 9, init_scale: 0.1 });
        m.q_proj[5 * 4 + 1] = 0.25;
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = FeaturizedModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(matches!(FeaturizedModel::read_from(&b"garbage!"[..]), Err(CheckpointError::BadMagic)));
    }
}
