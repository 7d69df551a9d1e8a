use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use kgseek::bench::{
    bench_preprocessing, bench_throughput, bench_throughput_parallel, precision_recall_at_k, run_sweep,
    write_plots_data, write_report, BenchRow, PrRow, PreprocRow, SweepConfig,
};
use kgseek::coalesce::{EntitySet, RelationSeq};
use kgseek::config::RunConfig;
use kgseek::dataset::{load_dataset, write_dataset};
use kgseek::epfo::{self, parse_query, parse_query_line, DnfQuery};
use kgseek::error::{
    BenchError, CheckpointError, DatasetError, EvalError, KgError, QueryError, ScorerError, SeekError, TrainError,
};
use kgseek::kg::{load_triples, KnowledgeGraph};
use kgseek::pipeline::{collect_episodes, evaluate, refine_result, ExampleOutcome};
use kgseek::refiner::{train_refiner, RefinerConfig, RefinerModel};
use kgseek::scorer::{
    prepare_training, train, weak_labels, FeaturizedModel, ModelConfig, QAExample, ScorerChoice, TrainConfig,
};
use kgseek::seeker::seek;
use kgseek::synth::{gen_intersection, gen_synthetic, IntersectionSpec, SynthSpec};
use kgseek::verify::{beam_suite, coalescing_suite, containment_suite, SuiteOutcome};

const EXIT_IO: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_SCORER: u8 = 3;
const EXIT_PROPERTY: u8 = 4;
const EXIT_TRAINING: u8 = 5;

#[derive(Parser)]
#[command(name = "kgseek", version, about = "Multi-hop question answering by beam search over relation sequences")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with defaults; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Triple file: subject<TAB>relation<TAB>object per line.
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    /// Question file: question<TAB>anchors<TAB>answers[<TAB>gold sequences].
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// uniform, oracle or featurized.
    #[arg(long, global = true)]
    scorer: Option<String>,
    /// Featurized scorer checkpoint.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Refiner checkpoint.
    #[arg(long, global = true)]
    refiner: Option<PathBuf>,
    /// Beam width (default 10)
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Maximum sequence length (default 2)
    #[arg(long, global = true)]
    tau_max: Option<usize>,
    /// Sequences whose reach forms the candidate set (default 1)
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Root seed, written to every report header (default 0)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report directory (default: $KGSEEK_OUT_DIR, then the current directory).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Add an inverse edge `r^-1` for every triple.
    #[arg(long, global = true)]
    add_inverses: bool,
    /// Worker threads for the parallel benchmark; 0 runs sequentially only.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load a graph and print its size.
    Load,
    /// Search relation sequences for one question.
    Seek {
        /// Anchor entity names separated by '|'.
        #[arg(long)]
        anchors: String,
        #[arg(long, default_value = "")]
        question: String,
        /// Gold sequences for the oracle scorer, separated by '|'.
        #[arg(long)]
        gold: Option<String>,
    },
    /// Evaluate existential positive queries.
    Query(QueryArgs),
    /// Relation sequences covering each conjunct of a query.
    Cover(QueryArgs),
    /// Attach weak-supervision gold sequences to a dataset.
    Labels {
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Train the featurized scorer.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        p_drop: Option<f64>,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Train the refiner on candidate subgraphs from the configured scorer.
    TrainRefiner {
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        rounds: usize,
    },
    /// Hits@1 of the unrefined candidates and, with --refiner, the refined ranking.
    Eval,
    /// Throughput, preprocessing and precision/recall benchmarks.
    Bench(BenchArgs),
    /// Randomized oracle suites.
    Verify {
        #[arg(long)]
        quick: bool,
        /// Corrupt one reach result to check the suite fails.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Generate a synthetic graph and question file.
    Synth {
        #[arg(long, default_value_t = 1000)]
        entities: usize,
        #[arg(long, default_value_t = 10)]
        relations: usize,
        #[arg(long, default_value_t = 100)]
        examples: usize,
        #[arg(long, default_value_t = 2)]
        hops: usize,
        /// Generate the intersection task instead.
        #[arg(long)]
        intersection: bool,
    },
}

#[derive(Args)]
struct QueryArgs {
    /// One query, e.g. `(query ?x (and (directed $gl ?v) (starred ?v ?x)))`.
    #[arg(long)]
    query: Option<String>,
    /// Anchor bindings for --query, e.g. `gl=George Lucas`.
    #[arg(long, default_value = "")]
    bindings: String,
    /// File of `query<TAB>bindings` lines.
    #[arg(long)]
    queries: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Smaller sweep sizes.
    #[arg(long)]
    quick: bool,
    /// Write one data file per plot.
    #[arg(long)]
    emit_plots_data: bool,
    /// Comma-separated entity counts for the entity sweep.
    #[arg(long, value_delimiter = ',')]
    entity_sizes: Option<Vec<usize>>,
    /// Comma-separated relation counts for the relation sweep.
    #[arg(long, value_delimiter = ',')]
    relation_counts: Option<Vec<usize>>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, default_value_t = 5)]
    k_max: usize,
}

/// An error with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn failure(code: u8, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

/// Exit code for an error, from the first classifiable cause.
fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<KgError>() {
            return if matches!(e, KgError::Io { .. }) { EXIT_IO } else { EXIT_INPUT };
        }
        if let Some(e) = cause.downcast_ref::<DatasetError>() {
            return if matches!(e, DatasetError::Io { .. }) { EXIT_IO } else { EXIT_INPUT };
        }
        if let Some(e) = cause.downcast_ref::<CheckpointError>() {
            return if matches!(e, CheckpointError::Io(_)) { EXIT_IO } else { EXIT_INPUT };
        }
        if cause.is::<ScorerError>() {
            return EXIT_SCORER;
        }
        if let Some(e) = cause.downcast_ref::<SeekError>() {
            return if matches!(e, SeekError::Scorer(_)) { EXIT_SCORER } else { EXIT_INPUT };
        }
        if let Some(e) = cause.downcast_ref::<BenchError>() {
            return match e {
                BenchError::Seek(SeekError::Scorer(_)) => EXIT_SCORER,
                BenchError::CostBound { .. } => EXIT_PROPERTY,
                _ => EXIT_INPUT,
            };
        }
        if let Some(e) = cause.downcast_ref::<EvalError>() {
            return if matches!(e, EvalError::Seek(SeekError::Scorer(_))) { EXIT_SCORER } else { EXIT_INPUT };
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return match e {
                TrainError::Scorer(_) | TrainError::Seek(SeekError::Scorer(_)) => EXIT_SCORER,
                _ => EXIT_TRAINING,
            };
        }
        if cause.is::<QueryError>() {
            return EXIT_INPUT;
        }
    }
    EXIT_INPUT
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve_config(&cli.common).map_err(|e| failure(EXIT_INPUT, e))?;
    let outcome = match cli.command {
        Command::Load => cmd_load(&cfg),
        Command::Seek { anchors, question, gold } => cmd_seek(&cfg, &anchors, &question, gold.as_deref()),
        Command::Query(args) => cmd_query(&cfg, &args, false),
        Command::Cover(args) => cmd_query(&cfg, &args, true),
        Command::Labels { max_len } => cmd_labels(&cfg, max_len),
        Command::Train { epochs, lr, p_drop, dim, max_len } => cmd_train(&cfg, epochs, lr, p_drop, dim, max_len),
        Command::TrainRefiner { epochs, lr, dim, rounds } => cmd_train_refiner(&cfg, epochs, lr, dim, rounds),
        Command::Eval => cmd_eval(&cfg),
        Command::Bench(args) => cmd_bench(&cfg, &args),
        Command::Verify { quick, inject_fault } => return cmd_verify(&cfg, quick, inject_fault),
        Command::Synth { entities, relations, examples, hops, intersection } => {
            cmd_synth(&cfg, entities, relations, examples, hops, intersection)
        }
    };
    outcome.map_err(|e| failure(classify(&e), e))
}

fn resolve_config(c: &Common) -> Result<RunConfig> {
    let file = match &c.config {
        Some(p) => RunConfig::load(p).map_err(|e| anyhow!(e))?,
        None => RunConfig::default(),
    };
    let flags = RunConfig {
        graph: c.graph.clone(),
        dataset: c.dataset.clone(),
        scorer: c.scorer.clone(),
        checkpoint: c.checkpoint.clone(),
        refiner: c.refiner.clone(),
        beam: c.beam,
        tau_max: c.tau_max,
        k: c.k,
        seed: c.seed,
        out_dir: c.out_dir.clone(),
        add_inverses: c.add_inverses.then_some(true),
        emit_plots_data: None,
        workers: c.workers,
    };
    Ok(file.overlay(flags))
}

fn graph(cfg: &RunConfig) -> Result<KnowledgeGraph> {
    let path = cfg.graph.as_ref().ok_or_else(|| anyhow!("--graph is required"))?;
    Ok(load_triples(path, cfg.add_inverses())?)
}

fn dataset(cfg: &RunConfig, g: &KnowledgeGraph) -> Result<Vec<QAExample>> {
    let path = cfg.dataset.as_ref().ok_or_else(|| anyhow!("--dataset is required"))?;
    Ok(load_dataset(g, path)?)
}

fn scorer(cfg: &RunConfig, g: &KnowledgeGraph) -> Result<ScorerChoice> {
    match cfg.scorer.as_deref().unwrap_or("uniform") {
        "uniform" => Ok(ScorerChoice::Uniform),
        "oracle" => Ok(ScorerChoice::Oracle),
        "featurized" => {
            let path = cfg.checkpoint.as_ref().ok_or_else(|| anyhow!("the featurized scorer needs --checkpoint"))?;
            let model = FeaturizedModel::load(path).with_context(|| format!("loading {}", path.display()))?;
            if !model.matches_graph(g) {
                bail!("checkpoint {} was trained on a graph with different relations", path.display());
            }
            Ok(ScorerChoice::Featurized(model))
        }
        other => bail!("unknown scorer '{other}' (expected uniform, oracle or featurized)"),
    }
}

fn load_refiner(path: &Path, g: &KnowledgeGraph) -> Result<RefinerModel> {
    let m = RefinerModel::load(path).with_context(|| format!("loading {}", path.display()))?;
    if m.num_relations() < g.num_relations() {
        bail!("refiner {} knows {} relations, the graph has {}", path.display(), m.num_relations(), g.num_relations());
    }
    Ok(m)
}

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.join(name))
}

fn write_csv(cfg: &RunConfig, name: &str, header: &str, rows: Vec<String>) -> Result<PathBuf> {
    let path = out_path(cfg, name)?;
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_report(BufWriter::new(file), cfg.seed(), header, rows).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn names(g: &KnowledgeGraph, set: &EntitySet) -> String {
    set.iter().map(|&v| g.entity_name(v)).collect::<Vec<_>>().join(" ")
}

fn cmd_load(cfg: &RunConfig) -> Result<()> {
    let g = graph(cfg)?;
    println!("{}", g.stats());
    println!("fingerprint={:016x}", g.fingerprint());
    Ok(())
}

fn cmd_seek(cfg: &RunConfig, anchors: &str, question: &str, gold: Option<&str>) -> Result<()> {
    let g = graph(cfg)?;
    let params = cfg.seek_params().map_err(|e| anyhow!(e))?;
    let ids = anchors
        .split('|')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(|a| g.entity_id(a))
        .collect::<Result<Vec<_>, _>>()?;
    let mut ex = QAExample::new(question, EntitySet::from_unsorted(ids), EntitySet::empty());
    if let Some(gold) = gold {
        let seqs = gold.split('|').map(|s| RelationSeq::parse(&g, s)).collect::<Result<Vec<_>, _>>()?;
        ex.gold_sequences = Some(seqs);
    }
    let choice = scorer(cfg, &g)?;
    let bound = choice.bind(&ex).ok_or_else(|| anyhow!("the oracle scorer needs --gold"))?;
    let res = seek(&g, &ex.anchors, &ex.question, &bound, params)?;

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "rank,nll,sequence,candidate_count")?;
    for (i, e) in res.entries.iter().enumerate() {
        writeln!(out, "{},{:.6},{},{}", i + 1, e.nll, e.seq.display(&g), e.frontier.len())?;
    }
    writeln!(out, "candidates={} scorer_calls={}", res.candidates.len(), res.scorer_calls)?;
    writeln!(out, "candidate_names={}", names(&g, &res.candidates))?;
    if res.entries.len() < params.k {
        eprintln!("warning: only {} sequence(s) found, fewer than k={}", res.entries.len(), params.k);
    }
    if let (Some(path), false) = (&cfg.refiner, res.candidates.is_empty()) {
        let model = load_refiner(path, &g)?;
        writeln!(out, "entity_name,score")?;
        for (v, s) in refine_result(&g, &ex, &res, &model)? {
            writeln!(out, "{},{s:.6}", g.entity_name(v))?;
        }
    }
    Ok(())
}

fn read_queries(g: &KnowledgeGraph, args: &QueryArgs) -> Result<Vec<(String, DnfQuery)>> {
    let mut out = Vec::new();
    if let Some(text) = &args.query {
        let bindings = epfo::parse_bindings(&args.bindings)?;
        out.push((text.clone(), epfo::to_dnf(&parse_query(g, text, &bindings)?)));
    }
    if let Some(path) = &args.queries {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let q = parse_query_line(g, line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            out.push((line.to_owned(), epfo::to_dnf(&q)));
        }
    }
    if out.is_empty() {
        bail!("give --query or --queries");
    }
    Ok(out)
}

fn cmd_query(cfg: &RunConfig, args: &QueryArgs, cover: bool) -> Result<()> {
    let g = graph(cfg)?;
    let queries = read_queries(&g, args)?;
    for (i, (text, q)) in queries.iter().enumerate() {
        if let Some((c, v)) = epfo::validate(q).first_violation() {
            bail!("query {} (conjunct {c}) is not supported: {v}", i + 1);
        }
        println!("# query {}: {}", i + 1, text.split('\t').next().unwrap_or(text));
        if cover {
            println!("anchor,sequence");
            for p in epfo::cover_paths(q)? {
                println!("{},{}", g.entity_name(p.anchor), p.seq.display(&g));
            }
        } else {
            let answers = epfo::evaluate(&g, q)?;
            println!("answers={}", answers.len());
            for &v in answers.iter() {
                println!("{}", g.entity_name(v));
            }
        }
    }
    Ok(())
}

fn cmd_labels(cfg: &RunConfig, max_len: Option<usize>) -> Result<()> {
    let g = graph(cfg)?;
    let mut data = dataset(cfg, &g)?;
    let max_len = max_len.or(cfg.tau_max).unwrap_or(2);
    let mut unlabeled = 0;
    for ex in &mut data {
        let labels = weak_labels(&g, ex, max_len)?;
        if labels.is_empty() {
            unlabeled += 1;
        }
        ex.gold_sequences = Some(labels);
    }
    let path = out_path(cfg, "labels.tsv")?;
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_dataset(&g, BufWriter::new(file), &data)?;
    println!("labeled={} unanswerable={unlabeled} written={}", data.len() - unlabeled, path.display());
    Ok(())
}

fn cmd_train(
    cfg: &RunConfig,
    epochs: Option<usize>,
    lr: Option<f64>,
    p_drop: Option<f64>,
    dim: usize,
    max_len: Option<usize>,
) -> Result<()> {
    let g = graph(cfg)?;
    let data = dataset(cfg, &g)?;
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        epochs: epochs.unwrap_or(defaults.epochs),
        lr: lr.unwrap_or(defaults.lr),
        p_drop_init: p_drop.unwrap_or(defaults.p_drop_init),
        seed: cfg.seed(),
        max_len: max_len.or(cfg.tau_max).unwrap_or(defaults.max_len),
    };
    if !(0.0..=1.0).contains(&tc.p_drop_init) || tc.lr.is_nan() || tc.lr <= 0.0 || dim == 0 {
        bail!("need 0 <= p_drop <= 1, lr > 0 and dim > 0");
    }
    let (items, skipped) = prepare_training(&g, &data, tc.max_len)?;
    eprintln!("training on {} examples, skipped {skipped} without weak labels", items.len());
    let mut model = FeaturizedModel::new(&g, ModelConfig { dim, seed: cfg.seed(), ..Default::default() });
    let report = train(&mut model, &items, &tc)?;
    let ckpt = match &cfg.checkpoint {
        Some(p) => p.clone(),
        None => out_path(cfg, "scorer.ckpt")?,
    };
    model.save(&ckpt).with_context(|| format!("saving {}", ckpt.display()))?;
    let rows = report.epoch_losses.iter().enumerate().map(|(e, l)| format!("{},{l:.6}", e + 1)).collect();
    let loss_path = write_csv(cfg, "train_loss.csv", "epoch,loss", rows)?;
    println!(
        "trained={} skipped={skipped} final_loss={:.6} checkpoint={} losses={}",
        report.trained_examples,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        ckpt.display(),
        loss_path.display()
    );
    Ok(())
}

fn cmd_train_refiner(cfg: &RunConfig, epochs: usize, lr: f64, dim: usize, rounds: usize) -> Result<()> {
    let g = graph(cfg)?;
    let data = dataset(cfg, &g)?;
    if dim == 0 || rounds == 0 || lr.is_nan() || lr <= 0.0 {
        bail!("need dim > 0, rounds > 0 and lr > 0");
    }
    let choice = scorer(cfg, &g)?;
    let params = cfg.seek_params().map_err(|e| anyhow!(e))?;
    let episodes = collect_episodes(&g, &data, &choice, params)?;
    let mut model = RefinerModel::new(g.num_relations(), RefinerConfig { dim, rounds, seed: cfg.seed(), ..Default::default() });
    let report = train_refiner(&mut model, &episodes, epochs, lr, cfg.seed())?;
    let path = match &cfg.refiner {
        Some(p) => p.clone(),
        None => out_path(cfg, "refiner.ckpt")?,
    };
    model.save(&path).with_context(|| format!("saving {}", path.display()))?;
    let rows = report.epoch_losses.iter().enumerate().map(|(e, l)| format!("{},{l:.6}", e + 1)).collect();
    write_csv(cfg, "refiner_loss.csv", "epoch,loss", rows)?;
    println!(
        "trained={} skipped={} final_loss={:.6} checkpoint={}",
        report.trained_episodes,
        report.skipped_episodes + (data.len() - episodes.len()),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let g = graph(cfg)?;
    let data = dataset(cfg, &g)?;
    let choice = scorer(cfg, &g)?;
    let params = cfg.seek_params().map_err(|e| anyhow!(e))?;
    let refiner = cfg.refiner.as_deref().map(|p| load_refiner(p, &g)).transpose()?;
    let report = evaluate(&g, &data, &choice, params, refiner.as_ref())?;
    let rows = report.outcomes.iter().map(ExampleOutcome::csv).collect();
    let path = write_csv(cfg, "eval.csv", ExampleOutcome::CSV_HEADER, rows)?;
    println!("examples={} scorer={} mean_candidates={:.3}", data.len(), choice.name(), report.mean_candidates);
    println!("unrefined_hits1={:.4}", report.unrefined_hits);
    match report.refined_hits {
        Some(h) => println!("refined_hits1={h:.4}"),
        None => println!("refined_hits1=n/a (no --refiner)"),
    }
    println!("report={}", path.display());
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, args: &BenchArgs) -> Result<()> {
    let params = cfg.seek_params().map_err(|e| anyhow!(e))?;
    let workers = cfg.workers();
    if cfg.graph.is_some() {
        let g = graph(cfg)?;
        let data = dataset(cfg, &g)?;
        let choice = scorer(cfg, &g)?;
        let iters = args.iters.unwrap_or(data.len());
        let row = bench_throughput(&g, &data, &choice, params, args.warmup.unwrap_or(0), iters, "dataset")?;
        let path = write_csv(cfg, "bench_throughput.csv", BenchRow::CSV_HEADER, vec![row.csv()])?;
        println!("queries_per_second={:.1} scorer_calls_mean={:.2} report={}", row.queries_per_second, row.scorer_calls_mean, path.display());
        if workers > 0 {
            let par = bench_throughput_parallel(&g, &data, &choice, params, iters, workers, "dataset")?;
            write_csv(cfg, "bench_parallel.csv", BenchRow::CSV_HEADER, vec![par.csv()])?;
            println!("parallel workers={workers} queries_per_second={:.1}", par.queries_per_second);
        }
        let pre = bench_preprocessing(&g, &data)?;
        write_csv(cfg, "bench_preprocessing.csv", PreprocRow::CSV_HEADER, pre.iter().map(PreprocRow::csv).collect())?;
        if data.iter().all(|e| !e.answers.is_empty()) {
            let pr = precision_recall_at_k(&g, &data, &choice, params, args.k_max)?;
            write_csv(cfg, "bench_precision_recall.csv", PrRow::CSV_HEADER, pr.iter().map(PrRow::csv).collect())?;
        }
        return Ok(());
    }

    let base = if args.quick { SweepConfig::quick() } else { SweepConfig::default() };
    let sweep = SweepConfig {
        entity_sizes: args.entity_sizes.clone().unwrap_or(base.entity_sizes.clone()),
        relation_counts: args.relation_counts.clone().unwrap_or(base.relation_counts.clone()),
        iters: args.iters.unwrap_or(base.iters),
        warmup: args.warmup.unwrap_or(base.warmup),
        params,
        k_max: args.k_max,
        seed: cfg.seed(),
        ..base
    };
    let report = run_sweep(&sweep).map_err(|e| anyhow!(e))?;
    let rows: Vec<String> = report.entities.iter().chain(&report.relations).map(BenchRow::csv).collect();
    let path = write_csv(cfg, "bench_sweep.csv", BenchRow::CSV_HEADER, rows)?;
    for r in report.entities.iter().chain(&report.relations) {
        println!("{}: queries_per_second={:.1} scorer_calls_mean={:.2}", r.config, r.queries_per_second, r.scorer_calls_mean);
    }
    println!("report={}", path.display());
    if workers > 0 {
        let mut rows = Vec::new();
        for &n in &sweep.entity_sizes {
            let (g, ex) = gen_synthetic(&SynthSpec { n_examples: sweep.queries, ..SynthSpec::new(n, sweep.fixed_relations, sweep.seed) })
                .map_err(|e| anyhow!(e))?;
            rows.push(bench_throughput_parallel(&g, &ex, &ScorerChoice::Oracle, params, sweep.iters, workers, &format!("entities={n}"))?.csv());
        }
        write_csv(cfg, "bench_parallel.csv", BenchRow::CSV_HEADER, rows)?;
    }
    if args.emit_plots_data || cfg.emit_plots_data.unwrap_or(false) {
        for p in write_plots_data(&cfg.out_dir(), cfg.seed(), &report)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn cmd_verify(cfg: &RunConfig, quick: bool, inject_fault: bool) -> Result<(), Failure> {
    let seed = cfg.seed();
    let (n_graphs, n_beam, n_prop) = if quick { (20, 50, 100) } else { (200, 500, 1000) };
    let suites: [SuiteOutcome; 3] =
        [coalescing_suite(n_graphs, seed, inject_fault), beam_suite(n_beam, seed), containment_suite(n_prop, seed)];
    let verbs = ["matched", "matched", "contained"];
    let mut ok = true;
    for (s, verb) in suites.iter().zip(verbs) {
        let extra = if s.detail.is_empty() { String::new() } else { format!(" ({})", s.detail) };
        println!("{}: {}/{} {verb}{extra}", s.name, s.passed, s.total);
        if let Some(fs) = s.failing_seed {
            println!("{}: first failing seed {fs}", s.name);
        }
        ok &= s.ok();
    }
    if ok {
        Ok(())
    } else {
        Err(failure(EXIT_PROPERTY, anyhow!("property violations found")))
    }
}

fn cmd_synth(cfg: &RunConfig, entities: usize, relations: usize, examples: usize, hops: usize, intersection: bool) -> Result<()> {
    let (g, data) = if intersection {
        gen_intersection(&IntersectionSpec { n_questions: examples, seed: cfg.seed(), ..Default::default() })
    } else {
        gen_synthetic(&SynthSpec { n_entities: entities, n_relations: relations, seed: cfg.seed(), answer_hops: hops, n_examples: examples })
    }
    .map_err(|e| anyhow!(e))?;
    let gpath = out_path(cfg, "graph.tsv")?;
    let qpath = out_path(cfg, "questions.tsv")?;
    let mut gw = BufWriter::new(File::create(&gpath).with_context(|| format!("creating {}", gpath.display()))?);
    g.write_triples(&mut gw)?;
    gw.flush()?;
    write_dataset(&g, BufWriter::new(File::create(&qpath).with_context(|| format!("creating {}", qpath.display()))?), &data)?;
    println!("{} graph={} questions={} ({} examples)", g.stats(), gpath.display(), qpath.display(), data.len());
    Ok(())
}
