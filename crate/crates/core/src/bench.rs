//! Throughput, preprocessing and precision/recall benchmarks.

use std::collections::HashSet;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::coalesce::{path_count_stats, EntitySet};
use crate::error::BenchError;
use crate::kg::{EntityId, KnowledgeGraph};
use crate::scorer::{QAExample, ScorerChoice};
use crate::seeker::{seek, SeekParams};
use crate::synth::{gen_synthetic, SynthSpec};
use crate::verify::random_graph;

/// One throughput measurement. `wall_time_s` and `queries_per_second` are
/// the only timing columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub config: String,
    /// 0 for the sequential benchmark, otherwise the worker count.
    pub workers: usize,
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_edges: usize,
    pub queries: usize,
    pub wall_time_s: f64,
    pub queries_per_second: f64,
    pub scorer_calls_mean: f64,
    pub scorer_calls_max: u64,
    pub cost_bound: u64,
}

impl BenchRow {
    pub const CSV_HEADER: &'static str = "config,workers,n_entities,n_relations,n_edges,queries,wall_time_s,queries_per_second,scorer_calls_mean,scorer_calls_max,cost_bound";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.3},{:.3},{},{}",
            self.config,
            self.workers,
            self.n_entities,
            self.n_relations,
            self.n_edges,
            self.queries,
            self.wall_time_s,
            self.queries_per_second,
            self.scorer_calls_mean,
            self.scorer_calls_max,
            self.cost_bound
        )
    }
}

/// Runs one seek and checks the scorer-call bound.
fn timed_query(
    g: &KnowledgeGraph,
    index: usize,
    ex: &QAExample,
    scorer: &ScorerChoice,
    params: SeekParams,
) -> Result<u64, BenchError> {
    let bound = scorer.bind(ex).ok_or(BenchError::MissingGold(index))?;
    let res = seek(g, &ex.anchors, &ex.question, &bound, params)?;
    let limit = params.cost_bound(g.num_relations());
    if res.scorer_calls > limit {
        return Err(BenchError::CostBound { example: index, calls: res.scorer_calls, bound: limit });
    }
    Ok(res.scorer_calls)
}

fn row(g: &KnowledgeGraph, config: &str, workers: usize, params: SeekParams, calls: &[u64], secs: f64) -> BenchRow {
    let secs = secs.max(f64::MIN_POSITIVE);
    BenchRow {
        config: config.to_owned(),
        workers,
        n_entities: g.num_entities(),
        n_relations: g.num_relations() - 1,
        n_edges: g.num_edges(),
        queries: calls.len(),
        wall_time_s: secs,
        queries_per_second: calls.len() as f64 / secs,
        scorer_calls_mean: calls.iter().sum::<u64>() as f64 / calls.len() as f64,
        scorer_calls_max: calls.iter().copied().max().unwrap_or(0),
        cost_bound: params.cost_bound(g.num_relations()),
    }
}

/// Times `iters` queries one at a time, cycling through `examples`, after
/// `warmup` untimed ones. Fails if any query exceeds the scorer-call bound.
pub fn bench_throughput(
    g: &KnowledgeGraph,
    examples: &[QAExample],
    scorer: &ScorerChoice,
    params: SeekParams,
    warmup: usize,
    iters: usize,
    config: &str,
) -> Result<BenchRow, BenchError> {
    if examples.is_empty() || iters == 0 {
        return Err(BenchError::NoExamples);
    }
    for i in 0..warmup {
        let idx = i % examples.len();
        timed_query(g, idx, &examples[idx], scorer, params)?;
    }
    let mut calls = Vec::with_capacity(iters);
    let start = Instant::now();
    for i in 0..iters {
        let idx = i % examples.len();
        calls.push(timed_query(g, idx, &examples[idx], scorer, params)?);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(row(g, config, 0, params, &calls, secs))
}

/// Aggregate throughput with `workers` threads each taking queries
/// round-robin. Reported separately from the sequential benchmark.
pub fn bench_throughput_parallel(
    g: &KnowledgeGraph,
    examples: &[QAExample],
    scorer: &ScorerChoice,
    params: SeekParams,
    iters: usize,
    workers: usize,
    config: &str,
) -> Result<BenchRow, BenchError> {
    if examples.is_empty() || iters == 0 {
        return Err(BenchError::NoExamples);
    }
    let workers = workers.max(1);
    let start = Instant::now();
    let results: Vec<Result<Vec<(usize, u64)>, BenchError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..iters)
                        .step_by(workers)
                        .map(|i| {
                            let idx = i % examples.len();
                            timed_query(g, idx, &examples[idx], scorer, params).map(|c| (i, c))
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("benchmark worker panicked")).collect()
    });
    let secs = start.elapsed().as_secs_f64();
    let mut calls: Vec<(usize, u64)> = Vec::with_capacity(iters);
    for r in results {
        calls.extend(r?);
    }
    calls.sort_unstable();
    let calls: Vec<u64> = calls.into_iter().map(|(_, c)| c).collect();
    Ok(row(g, config, workers, params, &calls, secs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocRow {
    pub query: usize,
    pub method: &'static str,
    pub nodes_touched: usize,
    pub wall_time_s: f64,
}

impl PreprocRow {
    pub const CSV_HEADER: &'static str = "query,method,nodes_touched,wall_time_s";

    pub fn csv(&self) -> String {
        format!("{},{},{},{:.9}", self.query, self.method, self.nodes_touched, self.wall_time_s)
    }
}

/// Entities within two out-hops of `anchors`, anchors included.
pub fn two_hop_neighborhood(g: &KnowledgeGraph, anchors: &EntitySet) -> EntitySet {
    let mut seen: HashSet<EntityId> = anchors.iter().copied().collect();
    let mut layer: Vec<EntityId> = anchors.iter().copied().collect();
    for _ in 0..2 {
        let mut next = Vec::new();
        for &v in &layer {
            for (_, o) in g.out_edges(v) {
                if seen.insert(o) {
                    next.push(o);
                }
            }
        }
        layer = next;
    }
    EntitySet::from_unsorted(seen.into_iter().collect())
}

/// Per query: full two-hop extraction versus the coalesced search setup,
/// which only lists the anchors' outgoing relation types.
pub fn bench_preprocessing(g: &KnowledgeGraph, examples: &[QAExample]) -> Result<Vec<PreprocRow>, BenchError> {
    let mut rows = Vec::with_capacity(2 * examples.len());
    for (i, ex) in examples.iter().enumerate() {
        for &v in ex.anchors.iter() {
            g.check_entity(v)?;
        }
        let start = Instant::now();
        let hood = two_hop_neighborhood(g, &ex.anchors);
        rows.push(PreprocRow {
            query: i,
            method: "two_hop",
            nodes_touched: hood.len(),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        let start = Instant::now();
        let options = g.outgoing_relations(&ex.anchors)?;
        rows.push(PreprocRow {
            query: i,
            method: "coalesced",
            nodes_touched: options.len(),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrRow {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
}

impl PrRow {
    pub const CSV_HEADER: &'static str = "k,precision,recall";

    pub fn csv(&self) -> String {
        format!("{},{:.6},{:.6}", self.k, self.precision, self.recall)
    }
}

/// Precision and recall of the union of the top-k sequences' reach sets,
/// averaged over examples, for `k = 1..=k_max`. One search per example
/// with `k = k_max` (the beam is widened to at least `k_max`).
pub fn precision_recall_at_k(
    g: &KnowledgeGraph,
    examples: &[QAExample],
    scorer: &ScorerChoice,
    params: SeekParams,
    k_max: usize,
) -> Result<Vec<PrRow>, BenchError> {
    if examples.is_empty() || k_max == 0 {
        return Err(BenchError::NoExamples);
    }
    let params = SeekParams { beam: params.beam.max(k_max), k: k_max, ..params };
    let mut prec = vec![0.0; k_max];
    let mut rec = vec![0.0; k_max];
    for (i, ex) in examples.iter().enumerate() {
        let bound = scorer.bind(ex).ok_or(BenchError::MissingGold(i))?;
        let res = seek(g, &ex.anchors, &ex.question, &bound, params)?;
        let mut cands = EntitySet::empty();
        for k in 0..k_max {
            if let Some(e) = res.entries.get(k) {
                cands = cands.union(&e.frontier);
            }
            let hit = cands.intersection_len(&ex.answers) as f64;
            if !cands.is_empty() {
                prec[k] += hit / cands.len() as f64;
            }
            if !ex.answers.is_empty() {
                rec[k] += hit / ex.answers.len() as f64;
            }
        }
    }
    let n = examples.len() as f64;
    Ok((0..k_max).map(|k| PrRow { k: k + 1, precision: prec[k] / n, recall: rec[k] / n }).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleRow {
    pub n_entities: usize,
    pub n_edges: usize,
    pub preprocessing_s: f64,
    pub inference_s: f64,
}

impl ScaleRow {
    pub const CSV_HEADER: &'static str = "n_entities,n_edges,preprocessing_s,inference_s,total_s";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6}",
            self.n_entities,
            self.n_edges,
            self.preprocessing_s,
            self.inference_s,
            self.preprocessing_s + self.inference_s
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionRow {
    pub n_entities: usize,
    pub n_relations: usize,
    pub mean_out_degree: f64,
    pub length: usize,
    pub original_paths: u128,
    pub coalesced_paths: u128,
}

impl CompressionRow {
    pub const CSV_HEADER: &'static str =
        "n_entities,n_relations,mean_out_degree,length,original_paths,coalesced_paths,ratio";

    pub fn ratio(&self) -> f64 {
        self.original_paths as f64 / (self.coalesced_paths.max(1)) as f64
    }

    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.3},{},{},{},{:.3}",
            self.n_entities,
            self.n_relations,
            self.mean_out_degree,
            self.length,
            self.original_paths,
            self.coalesced_paths,
            self.ratio()
        )
    }
}

/// Path counts from `n_anchors` anchors (ids `0..n_anchors`), summed, for
/// lengths `1..=max_len`.
pub fn compression_rows(
    g: &KnowledgeGraph,
    n_anchors: usize,
    max_len: usize,
) -> Result<Vec<CompressionRow>, BenchError> {
    let mut orig = vec![0u128; max_len];
    let mut coal = vec![0u128; max_len];
    for a in 0..n_anchors.min(g.num_entities()) {
        for r in path_count_stats(g, &EntitySet::singleton(a as EntityId), max_len)? {
            orig[r.length - 1] += r.original_paths;
            coal[r.length - 1] += r.coalesced_paths;
        }
    }
    let deg = g.num_edges() as f64 / g.num_entities().max(1) as f64;
    Ok((0..max_len)
        .map(|l| CompressionRow {
            n_entities: g.num_entities(),
            n_relations: g.num_relations() - 1,
            mean_out_degree: deg,
            length: l + 1,
            original_paths: orig[l],
            coalesced_paths: coal[l],
        })
        .collect())
}

/// Sizes and counts for the full benchmark sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub entity_sizes: Vec<usize>,
    pub fixed_relations: usize,
    pub relation_counts: Vec<usize>,
    pub fixed_entities: usize,
    pub queries: usize,
    pub warmup: usize,
    pub iters: usize,
    pub params: SeekParams,
    pub k_max: usize,
    pub compression_entities: usize,
    pub compression_relations: usize,
    pub compression_out_degree: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            entity_sizes: vec![100, 1_000, 10_000, 100_000],
            fixed_relations: 10,
            relation_counts: vec![1, 10, 100],
            fixed_entities: 5_000,
            queries: 100,
            warmup: 20,
            iters: 500,
            params: SeekParams::default(),
            k_max: 5,
            compression_entities: 500,
            compression_relations: 5,
            compression_out_degree: 20,
            seed: 0,
        }
    }
}

impl SweepConfig {
    /// Small sizes for smoke runs.
    pub fn quick() -> Self {
        Self {
            entity_sizes: vec![100, 1_000],
            relation_counts: vec![1, 10],
            fixed_entities: 500,
            queries: 20,
            warmup: 2,
            iters: 40,
            compression_entities: 100,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    /// Throughput as entities grow.
    pub entities: Vec<BenchRow>,
    /// Throughput and scorer calls as relation types grow.
    pub relations: Vec<BenchRow>,
    /// Index construction plus inference as edges grow.
    pub scale: Vec<ScaleRow>,
    pub precision_recall: Vec<PrRow>,
    pub compression: Vec<CompressionRow>,
}

/// Runs every plot sweep with the oracle scorer on synthetic graphs.
/// The same seed yields the same graphs and queries.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport, String> {
    let oracle = ScorerChoice::Oracle;
    let mut out = SweepReport::default();
    let gen = |n: usize, r: usize| -> Result<(KnowledgeGraph, Vec<QAExample>, f64), String> {
        let start = Instant::now();
        let spec = SynthSpec { n_examples: cfg.queries, ..SynthSpec::new(n, r, cfg.seed) };
        let (g, ex) = gen_synthetic(&spec)?;
        Ok((g, ex, start.elapsed().as_secs_f64()))
    };
    for &n in &cfg.entity_sizes {
        let (g, ex, build_s) = gen(n, cfg.fixed_relations)?;
        let row = bench_throughput(&g, &ex, &oracle, cfg.params, cfg.warmup, cfg.iters, &format!("entities={n}"))
            .map_err(|e| e.to_string())?;
        out.scale.push(ScaleRow {
            n_entities: n,
            n_edges: g.num_edges(),
            preprocessing_s: build_s,
            inference_s: row.wall_time_s / row.queries as f64,
        });
        if n == cfg.entity_sizes[0] {
            out.precision_recall =
                precision_recall_at_k(&g, &ex, &oracle, cfg.params, cfg.k_max).map_err(|e| e.to_string())?;
        }
        out.entities.push(row);
    }
    for &r in &cfg.relation_counts {
        let (g, ex, _) = gen(cfg.fixed_entities.max(r + 1), r)?;
        let row = bench_throughput(&g, &ex, &oracle, cfg.params, cfg.warmup, cfg.iters, &format!("relations={r}"))
            .map_err(|e| e.to_string())?;
        out.relations.push(row);
    }
    let n = cfg.compression_entities;
    let g = random_graph(n, cfg.compression_relations, n * cfg.compression_out_degree, cfg.seed);
    out.compression = compression_rows(&g, n.min(50), 2).map_err(|e| e.to_string())?;
    Ok(out)
}

/// Writes `# seed=<seed>`, the CSV header and the rows.
pub fn write_report<W: Write>(mut out: W, seed: u64, header: &str, rows: impl IntoIterator<Item = String>) -> io::Result<()> {
    writeln!(out, "# seed={seed}")?;
    writeln!(out, "{header}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    out.flush()
}

fn write_file(path: &Path, seed: u64, header: &str, rows: Vec<String>) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_report(io::BufWriter::new(file), seed, header, rows)
}

/// One file per plot under `dir`; returns the paths written.
pub fn write_plots_data(dir: &Path, seed: u64, report: &SweepReport) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        ("throughput_entities.csv", BenchRow::CSV_HEADER, report.entities.iter().map(BenchRow::csv).collect::<Vec<_>>()),
        ("throughput_relations.csv", BenchRow::CSV_HEADER, report.relations.iter().map(BenchRow::csv).collect()),
        ("time_edges.csv", ScaleRow::CSV_HEADER, report.scale.iter().map(ScaleRow::csv).collect()),
        ("precision_recall.csv", PrRow::CSV_HEADER, report.precision_recall.iter().map(PrRow::csv).collect()),
        ("compression.csv", CompressionRow::CSV_HEADER, report.compression.iter().map(CompressionRow::csv).collect()),
    ];
    let mut paths = Vec::with_capacity(files.len());
    for (name, header, rows) in files {
        let p = dir.join(name);
        write_file(&p, seed, header, rows)?;
        paths.push(p);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::GraphBuilder;

    fn small() -> (KnowledgeGraph, Vec<QAExample>) {
        gen_synthetic(&SynthSpec { n_examples: 10, ..SynthSpec::new(100, 4, 3) }).unwrap()
    }

    #[test]
    fn single_query_single_row() {
        let (g, ex) = small();
        let row = bench_throughput(&g, &ex[..1], &ScorerChoice::Oracle, SeekParams::default(), 0, 1, "one").unwrap();
        assert_eq!(row.queries, 1);
        assert!(row.wall_time_s > 0.0);
        assert!((row.queries_per_second - 1.0 / row.wall_time_s).abs() <= 1e-9 * row.queries_per_second);
        assert!(row.scorer_calls_max <= row.cost_bound);
    }

    #[test]
    fn parallel_matches_sequential_calls() {
        let (g, ex) = small();
        let p = SeekParams::default();
        let seq = bench_throughput(&g, &ex, &ScorerChoice::Uniform, p, 0, 25, "s").unwrap();
        let par = bench_throughput_parallel(&g, &ex, &ScorerChoice::Uniform, p, 25, 3, "p").unwrap();
        assert_eq!(seq.scorer_calls_mean, par.scorer_calls_mean);
        assert_eq!(par.workers, 3);
    }

    #[test]
    fn oracle_without_gold_is_an_error() {
        let (g, mut ex) = small();
        ex[0].gold_sequences = None;
        assert!(matches!(
            bench_throughput(&g, &ex, &ScorerChoice::Oracle, SeekParams::default(), 0, 1, "x"),
            Err(BenchError::MissingGold(0))
        ));
    }

    #[test]
    fn star_preprocessing_counters() {
        let mut b = GraphBuilder::default();
        for i in 0..10_000 {
            b.add_triple("hub", if i % 2 == 0 { "a" } else { "b" }, &format!("leaf{i}")).unwrap();
        }
        b.intern_entity("lonely");
        let g = b.build();
        let ex = vec![
            QAExample::new("q", EntitySet::singleton(g.entity_id("hub").unwrap()), EntitySet::empty()),
            QAExample::new("q", EntitySet::singleton(g.entity_id("lonely").unwrap()), EntitySet::empty()),
        ];
        let rows = bench_preprocessing(&g, &ex).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[0].nodes_touched >= 10_000);
        assert!(rows[1].nodes_touched < g.num_relations());
        assert_eq!((rows[2].nodes_touched, rows[3].nodes_touched), (1, 0));
        let again = bench_preprocessing(&g, &ex).unwrap();
        let touched = |r: &[PreprocRow]| r.iter().map(|x| x.nodes_touched).collect::<Vec<_>>();
        assert_eq!(touched(&rows), touched(&again));
    }

    #[test]
    fn oracle_recall_is_one_at_k1_and_monotone() {
        let (g, ex) = small();
        let rows = precision_recall_at_k(&g, &ex, &ScorerChoice::Oracle, SeekParams::default(), 4).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].recall, 1.0);
        assert!(rows.windows(2).all(|w| w[0].recall <= w[1].recall));
        let one = precision_recall_at_k(&g, &ex, &ScorerChoice::Uniform, SeekParams::default(), 1).unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn quick_sweep_writes_every_plot_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SweepConfig { entity_sizes: vec![50], relation_counts: vec![1, 3], fixed_entities: 60, iters: 5, queries: 5, compression_entities: 30, ..SweepConfig::quick() };
        let report = run_sweep(&cfg).unwrap();
        let paths = write_plots_data(dir.path(), 7, &report).unwrap();
        assert_eq!(paths.len(), 5);
        for p in paths {
            let text = std::fs::read_to_string(p).unwrap();
            assert!(text.starts_with("# seed=7\n"));
            assert!(text.lines().count() >= 3);
        }
    }
}
