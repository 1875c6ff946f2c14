use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use malgraph::explain::{
    default_p_grid, explain_graph, explainer_accuracy, write_accuracy_csv, ExplainConfig,
};
use malgraph::features::{
    benign_instruction_vectors, embed_fne_graph, encode_graph, read_json, write_json,
    AutoencoderCheckpoint, EmbeddingKind, EmbeddingSpec, Featurizer, GcnCheckpoint,
};
use malgraph::graph::{load_graphs, write_graphs, AttrGraph};
use malgraph::nn::{
    evaluate, train_autoencoder, train_gcn, AutoencoderConfig, EmbeddingTable, FeatureMatrix,
    GcnConfig,
};
use malgraph::pipeline::{
    featurize, run_pipeline, samples, trainable, write_stats_csv, PipelineConfig,
};
use malgraph::reduce::{reduce_corpus, ReductionConfig, ReductionMethod, Timing};
use malgraph::seed::derive_seed;
use malgraph::synth::{write_synthetic, GraphKind, MotifSpec, SyntheticSpec};
use malgraph::x86::Aggregation;
use malgraph::{Error, Result};

#[derive(Parser)]
#[command(name = "malgraph", version, about = "CFG/FCG malware graph toolkit")]
struct Cli {
    /// Worker threads for per-graph parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus with a planted malicious motif.
    GenSynth(GenSynthArgs),
    /// Per-graph node/edge/component counts.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        /// CSV destination (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a graph reduction to every graph.
    Prune(PruneArgs),
    /// Replace instruction bytes with 406-wide encodings.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        skip_bad_nodes: bool,
        #[arg(long, value_parser = parse_aggregation, default_value = "mean")]
        aggregation: Aggregation,
    },
    /// Replace function names with 384-wide embeddings.
    EmbedFne {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSONL table of {"name", "vector"} records.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the instruction autoencoder on benign graphs' nodes.
    TrainAe(TrainAeArgs),
    /// Train the GCN classifier.
    Train(TrainArgs),
    /// Evaluate a trained classifier.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Learn edge masks and write important/unimportant subgraphs.
    Explain(ExplainArgs),
    /// Run the whole pipeline from a TOML or JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Malicious graph count, for imbalanced corpora.
    #[arg(long)]
    malicious: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_kind, default_value = "cfg")]
    kind: GraphKind,
    #[arg(long, default_value_t = 20)]
    min_nodes: usize,
    #[arg(long, default_value_t = 40)]
    max_nodes: usize,
    #[arg(long, default_value_t = 5)]
    motif_size: usize,
    #[arg(long, default_value_t = 0.8)]
    shift: f64,
    /// Generate both classes from the same distribution.
    #[arg(long)]
    no_motif: bool,
    #[arg(long)]
    no_decoys: bool,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    method: ReductionMethod,
    #[arg(long, default_value_t = 0.5)]
    u: f64,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 0.2)]
    n_frac: f64,
    /// Rank WIS edges once instead of after every removal.
    #[arg(long)]
    wis_batch: bool,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Record wall times in the report (makes it differ between runs).
    #[arg(long)]
    timings: bool,
}

#[derive(Args)]
struct TrainAeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_aggregation, default_value = "mean")]
    aggregation: Aggregation,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "raw")]
    features: EmbeddingKind,
    /// Autoencoder checkpoint, required with `--features ae`.
    #[arg(long)]
    ae: Option<PathBuf>,
    /// Function-name table for `--features fne`.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, value_parser = parse_aggregation, default_value = "mean")]
    aggregation: Aggregation,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    top_p: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.005)]
    lambda: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated p values for the accuracy curve.
    #[arg(long, value_delimiter = ',')]
    p_grid: Option<Vec<f64>>,
    #[arg(long)]
    table: Option<PathBuf>,
}

fn parse_aggregation(s: &str) -> std::result::Result<Aggregation, String> {
    match s {
        "mean" => Ok(Aggregation::Mean),
        "sum" => Ok(Aggregation::Sum),
        _ => Err(format!("expected mean or sum, got `{s}`")),
    }
}

fn parse_kind(s: &str) -> std::result::Result<GraphKind, String> {
    match s {
        "cfg" => Ok(GraphKind::Cfg),
        "fcg" => Ok(GraphKind::Fcg),
        _ => Err(format!("expected cfg or fcg, got `{s}`")),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_table(path: &Option<PathBuf>) -> Result<EmbeddingTable> {
    path.as_ref()
        .map_or_else(|| Ok(EmbeddingTable::default()), EmbeddingTable::load)
}

fn load_featurizer(model: &GcnCheckpoint, table: &Option<PathBuf>) -> Result<Featurizer> {
    Ok(Featurizer::new(model.embedding.clone()).with_table(load_table(table)?))
}

fn file_stem(graph_id: &str) -> String {
    graph_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn gen_synth(a: GenSynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        per_class: a.per_class,
        malicious: a.malicious,
        min_nodes: a.min_nodes,
        max_nodes: a.max_nodes,
        kind: a.kind,
        motif: (!a.no_motif).then_some(MotifSpec {
            size: a.motif_size,
            shift: a.shift,
            decoys: !a.no_decoys,
        }),
        train_fraction: a.train_fraction,
        ..Default::default()
    };
    let files = write_synthetic(&a.out, &spec, a.seed)?;
    log::info!("wrote {}", files.graphs.display());
    Ok(())
}

fn prune(a: PruneArgs) -> Result<()> {
    let cfg = ReductionConfig {
        method: a.method,
        u: a.u,
        k: a.k,
        n_frac: a.n_frac,
        wis_batch: a.wis_batch,
    };
    let graphs = load_graphs(&a.input)?;
    let (out, report) = reduce_corpus(&graphs, &cfg)?;
    write_graphs(&a.out, &out)?;
    let timing = if a.timings {
        Timing::Record
    } else {
        Timing::Omit
    };
    report.write_csv(create(&a.report)?, timing)?;
    let t = report.totals;
    log::info!(
        "{} graphs: nodes {} -> {}, edges {} -> {}",
        t.graphs,
        t.nodes_before,
        t.nodes_after,
        t.edges_before,
        t.edges_after
    );
    Ok(())
}

fn encode(input: &Path, out: &Path, skip_bad: bool, agg: Aggregation) -> Result<()> {
    let mut encoded = Vec::new();
    let mut dropped = 0;
    for g in load_graphs(input)? {
        let (g, bad) = encode_graph(&g, agg, skip_bad)?;
        dropped += bad.len();
        encoded.push(g);
    }
    if dropped > 0 {
        log::warn!("{dropped} undecodable nodes dropped");
    }
    write_graphs(out, &encoded)
}

fn embed_fne(input: &Path, out: &Path, table: &Option<PathBuf>, seed: u64) -> Result<()> {
    let table = load_table(table)?;
    let mut embedded = Vec::new();
    let (mut found, mut fallback) = (0, 0);
    for g in load_graphs(input)? {
        let (g, r) = embed_fne_graph(&g, &table, seed)?;
        found += r.found;
        fallback += r.fallback;
        embedded.push(g);
    }
    log::info!("{found} names found in table, {fallback} fallback embeddings");
    write_graphs(out, &embedded)
}

fn train_ae(a: TrainAeArgs) -> Result<()> {
    let graphs = load_graphs(&a.input)?;
    let cfg = AutoencoderConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
        ..Default::default()
    };
    let data = benign_instruction_vectors(&graphs, a.aggregation)?;
    let trained = train_autoencoder(&data, &cfg)?;
    if let Some(last) = trained.loss_log.last() {
        log::info!("final reconstruction loss {last:.6}");
    }
    write_json(
        &a.out,
        &AutoencoderCheckpoint {
            config: cfg,
            model: trained.model,
            loss_log: trained.loss_log,
        },
    )
}

fn train(a: TrainArgs) -> Result<()> {
    let embedding = match a.features {
        EmbeddingKind::Raw => EmbeddingSpec::Raw {
            aggregation: a.aggregation,
        },
        EmbeddingKind::Fne => EmbeddingSpec::Fne { seed: a.seed },
        EmbeddingKind::Ae => {
            let path =
                a.ae.as_ref()
                    .ok_or_else(|| Error::Config("--features ae needs --ae CHECKPOINT".into()))?;
            let ckpt: AutoencoderCheckpoint = read_json(path)?;
            EmbeddingSpec::Ae {
                aggregation: a.aggregation,
                autoencoder: ckpt.model,
            }
        }
    };
    let featurizer = Featurizer::new(embedding).with_table(load_table(&a.table)?);
    let graphs = load_graphs(&a.input)?;
    let train_samples = trainable(samples(&graphs, featurize(&featurizer, &graphs)?)?);
    let cfg = GcnConfig {
        hidden: a.hidden,
        dropout: a.dropout,
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let trained = train_gcn(&train_samples, &cfg)?;
    if let Some(last) = trained.loss_log.last() {
        log::info!("final training loss {last:.6}");
    }
    write_json(
        &a.out,
        &GcnCheckpoint {
            config: cfg,
            embedding: featurizer.spec,
            model: trained.model,
            loss_log: trained.loss_log,
        },
    )
}

fn eval(model: &Path, input: &Path, metrics: &Path, table: &Option<PathBuf>) -> Result<()> {
    let ckpt: GcnCheckpoint = read_json(model)?;
    let featurizer = load_featurizer(&ckpt, table)?;
    let graphs = load_graphs(input)?;
    let m = evaluate(
        &ckpt.model,
        &samples(&graphs, featurize(&featurizer, &graphs)?)?,
    )?;
    m.write_csv(create(metrics)?)?;
    println!(
        "accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}",
        m.accuracy, m.precision, m.recall, m.f1
    );
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<()> {
    let ckpt: GcnCheckpoint = read_json(&a.model)?;
    let featurizer = load_featurizer(&ckpt, &a.table)?;
    let graphs = load_graphs(&a.input)?;
    let xs = featurize(&featurizer, &graphs)?;
    let cfg = ExplainConfig {
        epochs: a.epochs,
        lr: a.lr,
        sparsity_lambda: a.lambda,
        top_p: a.top_p,
        ..Default::default()
    };
    cfg.validate()?;
    std::fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;

    let mut per_graph = csv::Writer::from_writer(create(&a.out.join("explanations.csv"))?);
    per_graph.write_record([
        "graph_id",
        "label",
        "edges",
        "kept",
        "original_p1",
        "masked_p1",
        "subgraph_p1",
    ])?;
    for (g, x) in graphs.iter().zip(&xs) {
        if g.edge_count() == 0 {
            log::warn!("graph `{}` has no edges; skipped", g.graph_id());
            continue;
        }
        let (_, result) =
            explain_graph(&ckpt.model, g, x, &cfg, derive_seed(a.seed, g.graph_id()))?;
        let stem = file_stem(g.graph_id());
        for (suffix, sub) in [
            ("important", &result.important),
            ("unimportant", &result.unimportant),
        ] {
            let path = a.out.join(format!("{stem}.{suffix}.dot"));
            std::fs::write(&path, sub.to_dot()).map_err(|e| io_err(&path, e))?;
        }
        let f = result.fidelity.expect("explain_graph records fidelity");
        per_graph.write_record([
            g.graph_id().to_string(),
            g.label().map_or(String::new(), |l| l.index().to_string()),
            g.edge_count().to_string(),
            result.kept.to_string(),
            format!("{:.6}", f.original[1]),
            format!("{:.6}", f.masked[1]),
            format!("{:.6}", f.subgraph[1]),
        ])?;
    }
    per_graph.flush().map_err(|e| io_err(&a.out, e))?;

    let corpus: Vec<(AttrGraph, FeatureMatrix)> = graphs.into_iter().zip(xs).collect();
    let grid = a.p_grid.unwrap_or_else(default_p_grid);
    let rows = explainer_accuracy(&ckpt.model, &corpus, &cfg, &grid, a.seed)?;
    write_accuracy_csv(&rows, create(&a.out.join("explainer_accuracy.csv"))?)?;
    for r in &rows {
        println!("p={:.2} accuracy={:.4}", r.p, r.accuracy);
    }
    Ok(())
}

fn stats(input: &Path, out: Option<&Path>) -> Result<()> {
    let graphs = load_graphs(input)?;
    match out {
        Some(path) => write_stats_csv(&graphs, create(path)?),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_stats_csv(&graphs, &mut lock)?;
            lock.flush().map_err(|e| io_err(Path::new("<stdout>"), e))
        }
    }
}

fn run(config: &Path, jobs: Option<usize>) -> Result<()> {
    let mut cfg = PipelineConfig::load(config)?;
    if let Some(j) = jobs {
        cfg.jobs = Some(j);
    }
    set_jobs(cfg.jobs)?;
    let out = run_pipeline(&cfg)?;
    println!(
        "test accuracy {:.4} on {} graphs; outputs in {}",
        out.metrics.accuracy,
        out.metrics.total(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn set_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    if !matches!(cli.command, Command::Run { .. }) {
        set_jobs(cli.jobs)?;
    }
    match cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Stats { input, out } => stats(&input, out.as_deref()),
        Command::Prune(a) => prune(a),
        Command::Encode {
            input,
            out,
            skip_bad_nodes,
            aggregation,
        } => encode(&input, &out, skip_bad_nodes, aggregation),
        Command::EmbedFne {
            input,
            out,
            table,
            seed,
        } => embed_fne(&input, &out, &table, seed),
        Command::TrainAe(a) => train_ae(a),
        Command::Train(a) => train(a),
        Command::Eval {
            model,
            input,
            metrics,
            table,
        } => eval(&model, &input, &metrics, &table),
        Command::Explain(a) => explain(a),
        Command::Run { config } => run(&config, cli.jobs),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
