//! Acceptance criteria, run in order with one PASS/FAIL line each.
//!
//! Runs as a plain binary (no libtest harness) so the criteria execute
//! sequentially; the timing criteria would be distorted by parallel tests.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgseek::bench::{bench_throughput, compression_rows, precision_recall_at_k, BenchRow, PrRow};
use kgseek::coalesce::{reach, EntitySet, RelationSeq};
use kgseek::features::tokenize;
use kgseek::kg::{EntityId, KnowledgeGraph, RelationId};
use kgseek::pipeline::{collect_episodes, evaluate};
use kgseek::refiner::{
    randomize_question_rows, refiner_gradient_check, train_refiner, RefinerConfig, RefinerModel,
};
use kgseek::scorer::{
    gradient_check, prepare_training, randomized, train, weak_labels, FeaturizedModel, ModelConfig, QAExample,
    ScoreRequest, ScorerChoice, TrainConfig,
};
use kgseek::seeker::SeekParams;
use kgseek::synth::{gen_intersection, gen_synthetic, IntersectionSpec, SynthSpec};
use kgseek::verify::{beam_suite, brute_force_weak_labels, coalescing_suite, containment_suite, random_graph};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn coalescing() -> Verdict {
    let start = Instant::now();
    let out = coalescing_suite(200, 1, false);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        out.ok() && secs < 60.0,
        format!("{}/{} graphs match ({}), {secs:.1}s, failing seed {:?}", out.passed, out.total, out.detail, out.failing_seed),
    )
}

fn containment() -> Verdict {
    let start = Instant::now();
    let out = containment_suite(1000, 2);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        out.ok() && secs < 120.0,
        format!("{}/{} contained ({}), {secs:.1}s, failing seed {:?}", out.passed, out.total, out.detail, out.failing_seed),
    )
}

fn beam_exhaustive() -> Verdict {
    let out = beam_suite(500, 3);
    verdict(out.ok(), format!("{}/{} match, failing seed {:?}", out.passed, out.total, out.failing_seed))
}

/// Every throughput row from the sweeps below; the cost bound is also
/// asserted inside each benchmark run.
#[derive(Default)]
struct Sweeps {
    rows: Vec<BenchRow>,
}

fn synth(n: usize, r: usize, seed: u64, n_examples: usize) -> (KnowledgeGraph, Vec<QAExample>) {
    gen_synthetic(&SynthSpec { n_examples, ..SynthSpec::new(n, r, seed) }).expect("valid spec")
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn entity_scaling(sweeps: &mut Sweeps) -> Verdict {
    let start = Instant::now();
    let params = SeekParams::default();
    let mut qps = Vec::new();
    for n in [100, 1_000, 10_000, 100_000] {
        let (g, ex) = synth(n, 10, 5, 200);
        let mut runs = Vec::new();
        for rep in 0..3 {
            match bench_throughput(&g, &ex, &ScorerChoice::Oracle, params, 200, 3000, &format!("entities={n},rep={rep}")) {
                Ok(row) => {
                    runs.push(row.queries_per_second);
                    sweeps.rows.push(row);
                }
                Err(e) => return verdict(false, format!("|V|={n}: {e}")),
            }
        }
        qps.push((n, median(runs)));
    }
    let secs = start.elapsed().as_secs_f64();
    let ratio = qps[0].1 / qps[3].1;
    let shown: Vec<String> = qps.iter().map(|(n, q)| format!("{n}:{q:.0}")).collect();
    verdict(ratio <= 3.0 && secs < 600.0, format!("qps {} ; ratio 10^2/10^5 = {ratio:.2}, {secs:.1}s", shown.join(" ")))
}

fn relation_scaling(sweeps: &mut Sweeps) -> Verdict {
    let params = SeekParams::default();
    let mut calls = Vec::new();
    for r in [1usize, 10, 100] {
        let (g, ex) = synth(5_000, r, 6, 200);
        match bench_throughput(&g, &ex, &ScorerChoice::Oracle, params, 0, 200, &format!("relations={r}")) {
            Ok(row) => {
                calls.push((r as f64, row.scorer_calls_mean, row.cost_bound as f64));
                sweeps.rows.push(row);
            }
            Err(e) => return verdict(false, format!("|R|={r}: {e}")),
        }
    }
    let within_bound = calls.iter().all(|&(_, c, b)| c <= b);
    let slope = |a: (f64, f64, f64), b: (f64, f64, f64)| (b.1 - a.1) / (b.0 - a.0);
    let (s1, s2) = (slope(calls[0], calls[1]), slope(calls[1], calls[2]));
    let shown: Vec<String> = calls.iter().map(|(r, c, _)| format!("{r}:{c:.1}")).collect();
    verdict(
        within_bound && s2 <= s1 + 1e-9,
        format!("mean calls {} ; slopes {s1:.2} then {s2:.2}", shown.join(" ")),
    )
}

fn cost_bound(sweeps: &mut Sweeps) -> Verdict {
    // Extra configurations with multi-target relations and the uniform scorer.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..30 {
        let n = rng.gen_range(20..300);
        let r = rng.gen_range(1..12);
        let g = random_graph(n, r, n * rng.gen_range(1..8), i);
        let ex: Vec<QAExample> = (0..20)
            .map(|_| QAExample::new("q", EntitySet::singleton(rng.gen_range(0..n) as EntityId), EntitySet::empty()))
            .collect();
        let params = SeekParams { beam: rng.gen_range(1..12), tau_max: rng.gen_range(1..4), k: 1 };
        match bench_throughput(&g, &ex, &ScorerChoice::Uniform, params, 0, 20, &format!("random={i}")) {
            Ok(row) => sweeps.rows.push(row),
            Err(e) => return verdict(false, e.to_string()),
        }
    }
    let queries: usize = sweeps.rows.iter().map(|r| r.queries).sum();
    let violations = sweeps.rows.iter().filter(|r| r.scorer_calls_max > r.cost_bound).count();
    verdict(violations == 0, format!("{queries} queries over {} runs, {violations} violations", sweeps.rows.len()))
}

fn compression() -> Verdict {
    let mut worst = f64::INFINITY;
    let mut shown = Vec::new();
    for (n, r, deg, seed) in [(500, 5, 20, 1), (500, 10, 40, 2), (400, 20, 80, 3)] {
        let g = random_graph(n, r, n * deg, seed);
        let rows = match compression_rows(&g, 50, 2) {
            Ok(rows) => rows,
            Err(e) => return verdict(false, e.to_string()),
        };
        let mean_deg = g.num_edges() as f64 / g.num_entities() as f64;
        if mean_deg < 10.0 {
            return verdict(false, format!("graph |R|={r} has mean out-degree {mean_deg:.1} < 10"));
        }
        let ratio = rows[1].ratio();
        worst = worst.min(ratio);
        shown.push(format!("|R|={r},deg={mean_deg:.1}: {}/{} = {ratio:.1}x", rows[1].original_paths, rows[1].coalesced_paths));
    }
    verdict(worst >= 10.0, shown.join(" ; "))
}

fn weak_supervision() -> Verdict {
    let mut mismatches = 0;
    let mut nonempty = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(5..40);
        let g = random_graph(n, rng.gen_range(1..5), rng.gen_range(n..5 * n), seed);
        let anchors: EntitySet = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(0..n) as EntityId).collect();
        let max_len = rng.gen_range(1..4);
        let answers: EntitySet = if seed % 4 == 3 {
            (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..n) as EntityId).collect()
        } else {
            // A random subset of a random reachable set.
            let n_rel = g.num_relations() as RelationId;
            let rels: Vec<RelationId> = (0..rng.gen_range(0..=max_len)).map(|_| rng.gen_range(1..n_rel.max(2))).collect();
            let reached = reach(&g, &anchors, &RelationSeq::from_relations(&rels)).unwrap_or_default();
            let mut pick: Vec<EntityId> = reached.iter().copied().collect();
            pick.shuffle(&mut rng);
            pick.truncate(rng.gen_range(1..4));
            if pick.is_empty() {
                pick.push(rng.gen_range(0..n) as EntityId);
            }
            pick.into_iter().collect()
        };
        let ex = QAExample::new("q", anchors.clone(), answers.clone());
        let mut got = weak_labels(&g, &ex, max_len).expect("valid ids");
        got.sort();
        let want = brute_force_weak_labels(&g, &anchors, &answers, max_len);
        if !want.is_empty() {
            nonempty += 1;
        }
        if got != want {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{} / 100 match ({nonempty} with labels)", 100 - mismatches))
}

fn end_to_end() -> (Verdict, Option<(KnowledgeGraph, Vec<QAExample>, FeaturizedModel)>) {
    let (g, ex) = synth(1_000, 10, 9, 2_500);
    let (train_set, test_set) = ex.split_at(2_000);
    let cfg = TrainConfig { epochs: 30, lr: 0.1, p_drop_init: 0.5, seed: 9, max_len: 2 };
    let (items, skipped) = prepare_training(&g, train_set, cfg.max_len).expect("valid ids");
    let mut model = FeaturizedModel::new(&g, ModelConfig { seed: 9, ..Default::default() });
    let report = match train(&mut model, &items, &cfg) {
        Ok(r) => r,
        Err(e) => return (verdict(false, e.to_string()), None),
    };
    let choice = ScorerChoice::Featurized(model.clone());
    let eval = match evaluate(&g, test_set, &choice, SeekParams { beam: 10, tau_max: 2, k: 1 }, None) {
        Ok(r) => r,
        Err(e) => return (verdict(false, e.to_string()), None),
    };
    let v = verdict(
        eval.unrefined_hits >= 0.95,
        format!(
            "Hits@1 {:.3} on {} test questions ({} trained, {skipped} skipped, final loss {:.4})",
            eval.unrefined_hits,
            test_set.len(),
            report.trained_examples,
            report.epoch_losses.last().copied().unwrap_or(f64::NAN)
        ),
    );
    (v, Some((g, test_set.to_vec(), model)))
}

fn refinement() -> Verdict {
    let params = SeekParams { beam: 10, tau_max: 1, k: 1 };
    let mut gains = Vec::new();
    let mut shown = Vec::new();
    for seed in 0..3u64 {
        let (g, ex) = gen_intersection(&IntersectionSpec { n_questions: 300, seed, ..Default::default() }).expect("valid spec");
        let (train_set, test_set) = ex.split_at(200);
        let episodes = match collect_episodes(&g, train_set, &ScorerChoice::Oracle, params) {
            Ok(e) => e,
            Err(e) => return verdict(false, e.to_string()),
        };
        let mut model = RefinerModel::new(g.num_relations(), RefinerConfig { seed, ..Default::default() });
        if let Err(e) = train_refiner(&mut model, &episodes, 30, 0.1, seed) {
            return verdict(false, e.to_string());
        }
        let report = match evaluate(&g, test_set, &ScorerChoice::Oracle, params, Some(&model)) {
            Ok(r) => r,
            Err(e) => return verdict(false, e.to_string()),
        };
        let refined = report.refined_hits.unwrap_or(0.0);
        gains.push(refined - report.unrefined_hits);
        shown.push(format!("{refined:.3} vs {:.3}", report.unrefined_hits));
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    verdict(mean >= 0.15, format!("refined vs a/m: {} ; mean gain {mean:.3}", shown.join(", ")))
}

fn gradients() -> Verdict {
    let q = tokenize("what is r3 of r1 of [e4]");
    let mut scorer_worst: f64 = 0.0;
    for seed in 0..100u64 {
        let g = random_graph(30, 6, 200, seed);
        let m = randomized(&g, ModelConfig::default().dim, seed, &q);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prefix = RelationSeq::from_relations(&[rng.gen_range(1..7), rng.gen_range(1..7)]);
        let mut options: Vec<RelationId> = (0..7).filter(|_| rng.gen_bool(0.6)).collect();
        if options.is_empty() {
            options.push(0);
        }
        let gold = *options.choose(&mut rng).unwrap();
        let req = ScoreRequest { question: &q, prefix: &prefix, options: &options };
        scorer_worst = scorer_worst.max(gradient_check(&m, &req, gold));
    }
    let mut refiner_worst: f64 = 0.0;
    let params = SeekParams { beam: 10, tau_max: 1, k: 1 };
    let (g, ex) = gen_intersection(&IntersectionSpec { n_questions: 100, seed: 77, ..Default::default() }).expect("valid spec");
    let episodes = collect_episodes(&g, &ex, &ScorerChoice::Oracle, params).expect("oracle has gold");
    for seed in 0..100u64 {
        let ep = &episodes[seed as usize % episodes.len()];
        let mut m = RefinerModel::new(g.num_relations(), RefinerConfig { seed, ..Default::default() });
        randomize_question_rows(&mut m, &ep.question, seed);
        refiner_worst = refiner_worst.max(refiner_gradient_check(&m, ep));
    }
    verdict(
        scorer_worst < 1e-4 && refiner_worst < 1e-4,
        format!("max relative error: scorer {scorer_worst:.2e}, refiner {refiner_worst:.2e}"),
    )
}

fn precision_recall(trained: Option<&(KnowledgeGraph, Vec<QAExample>, FeaturizedModel)>) -> Verdict {
    let params = SeekParams { beam: 10, tau_max: 2, k: 1 };
    let monotone = |rows: &[PrRow]| rows.windows(2).all(|w| w[0].recall <= w[1].recall);
    let mut datasets: Vec<(String, KnowledgeGraph, Vec<QAExample>, ScorerChoice)> = Vec::new();
    let (g, ex) = synth(500, 10, 12, 200);
    datasets.push(("synthetic/oracle".into(), g.clone(), ex.clone(), ScorerChoice::Oracle));
    datasets.push(("synthetic/uniform".into(), g, ex, ScorerChoice::Uniform));
    let (g, ex) = gen_intersection(&IntersectionSpec { n_questions: 100, seed: 3, ..Default::default() }).expect("valid spec");
    datasets.push(("intersection/oracle".into(), g.clone(), ex.clone(), ScorerChoice::Oracle));
    datasets.push(("intersection/uniform".into(), g, ex, ScorerChoice::Uniform));
    let g = random_graph(80, 4, 400, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ex: Vec<QAExample> = (0..100)
        .map(|_| {
            let anchors = EntitySet::singleton(rng.gen_range(0..80));
            let seq = RelationSeq::from_relations(&[rng.gen_range(1..5), rng.gen_range(1..5)]);
            QAExample::new("q", anchors.clone(), reach(&g, &anchors, &seq).unwrap())
        })
        .filter(|e| !e.answers.is_empty())
        .collect();
    datasets.push(("random/uniform".into(), g, ex, ScorerChoice::Uniform));
    if let Some((g, ex, m)) = trained {
        datasets.push(("synthetic/featurized".into(), g.clone(), ex.clone(), ScorerChoice::Featurized(m.clone())));
    }
    let mut ok = true;
    let mut shown = Vec::new();
    for (name, g, ex, scorer) in &datasets {
        match precision_recall_at_k(g, ex, scorer, params, 10) {
            Ok(rows) => {
                let mono = monotone(&rows);
                let needs_one = name == "synthetic/oracle";
                ok &= mono && (!needs_one || rows[0].recall == 1.0);
                shown.push(format!("{name} r@1={:.3} r@10={:.3}{}", rows[0].recall, rows[9].recall, if mono { "" } else { " NOT MONOTONE" }));
            }
            Err(e) => {
                ok = false;
                shown.push(format!("{name}: {e}"));
            }
        }
    }
    verdict(ok, shown.join(" ; "))
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|p| {
        p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
    })
}

fn main() {
    let started = Instant::now();
    let mut sweeps = Sweeps::default();
    let mut results: Vec<(usize, &str, Result<Verdict, String>)> = Vec::new();
    let mut report = |n: usize, name: &'static str, r: Result<Verdict, String>| {
        let line = match &r {
            Ok(v) => format!("criterion {n:>2} {name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail),
            Err(p) => format!("criterion {n:>2} {name}: FAIL (panicked: {p})"),
        };
        println!("{line}");
        results.push((n, name, r));
    };

    report(1, "coalescing oracle equivalence", guarded(coalescing));
    report(2, "containment of query answers", guarded(containment));
    report(3, "beam vs exhaustive", guarded(beam_exhaustive));
    // The cost bound covers the scaling sweeps, so those run first.
    let c5 = guarded(|| entity_scaling(&mut sweeps));
    let c6 = guarded(|| relation_scaling(&mut sweeps));
    report(4, "scorer-call bound", guarded(|| cost_bound(&mut sweeps)));
    report(5, "throughput vs entities", c5);
    report(6, "scorer calls vs relations", c6);
    report(7, "coalescing compression", guarded(compression));
    report(8, "weak supervision", guarded(weak_supervision));
    let c9 = guarded(end_to_end);
    let (c9, trained) = match c9 {
        Ok((v, t)) => (Ok(v), t),
        Err(p) => (Err(p), None),
    };
    report(9, "end-to-end learning", c9);
    report(10, "refinement gain", guarded(refinement));
    report(11, "gradient checks", guarded(gradients));
    report(12, "precision/recall harness", guarded(|| precision_recall(trained.as_ref())));

    let failed: Vec<usize> =
        results.iter().filter(|(_, _, r)| !matches!(r, Ok(v) if v.pass)).map(|(n, _, _)| *n).collect();
    println!(
        "acceptance: {}/{} passed in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
