//! `rac`: generate synthetic corpora, train, predict, evaluate and inspect
//! belief propagation from the command line.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rac_core::aggregator::{AggregationError, ValueScoreTable};
use rac_core::compute::checkpoint::{Checkpoint, CheckpointError};
use rac_core::constraints::{graph_from_table, run_bp_traced, write_trace_csv, BpIterations, ConstraintError};
use rac_core::corpus::{load_clusters, split_dev_with_extra, write_clusters, Cluster, CorpusError, Split};
use rac_core::encoder::{EmbeddingError, EmbeddingTable};
use rac_core::evaluation::{evaluate, format_per_slot_table, format_systems_table, ClusterPrediction, EvalError, PredictionRecord};
use rac_core::model::{apply_bp, local_logits, predict_table, ClusterIndex, LossMode, MentionDecoding, ModelParams};
use rac_core::synth::{generate, SynthConfig, SynthError};
use rac_core::training::{gradient_check, train, Hyperparams, TrainError, TrainOptions};

const EXIT_FAILURE: u8 = 1;
const EXIT_MISSING_FILE: u8 = 2;
const EXIT_INVALID: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

/// Largest acceptable relative gradient error for `grad-check`.
const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "rac", version, about = "Multi-document event slot filling with attention and constrained decoding")]
struct Cli {
    /// Seed for every random choice; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for cluster-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus and its provenance sidecar.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus an epoch log.
    Train(TrainArgs),
    /// Decode slot values for a corpus, or for stored score tables.
    Predict(PredictArgs),
    /// Score prediction files against gold clusters.
    Eval(EvalArgs),
    /// Write per-iteration beliefs of one cluster's constraint graph.
    BpTrace(BpTraceArgs),
    /// Compare backpropagated gradients with finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct SynthArgs {
    /// TOML file with generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Provenance sidecar (one JSON record per mention).
    #[arg(long)]
    provenance: Option<PathBuf>,
    #[arg(long)]
    n_clusters: Option<usize>,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
    #[arg(long)]
    id_prefix: Option<String>,
    #[arg(long)]
    misinformation_rate: Option<f64>,
    #[arg(long)]
    offtopic_rate: Option<f64>,
    #[arg(long)]
    missing_slot_rate: Option<f64>,
    #[arg(long)]
    coincidental_rate: Option<f64>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum LossArg {
    ValueLevel,
    MentionLevel,
}

#[derive(Copy, Clone, Debug, PartialEq, ValueEnum)]
enum AggregationArg {
    Max,
    Sum,
    Topic,
    Date,
    PerDoc,
}

impl AggregationArg {
    fn key(self) -> &'static str {
        match self {
            AggregationArg::Max => "max",
            AggregationArg::Sum => "sum",
            AggregationArg::Topic => "topic",
            AggregationArg::Date => "date",
            AggregationArg::PerDoc => "per-doc",
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum DecodingArg {
    None,
    Max,
    Sum,
}

impl From<DecodingArg> for MentionDecoding {
    fn from(d: DecodingArg) -> Self {
        match d {
            DecodingArg::None => MentionDecoding::None,
            DecodingArg::Max => MentionDecoding::Max,
            DecodingArg::Sum => MentionDecoding::Sum,
        }
    }
}

/// Hyperparameter overrides shared by `train` and `grad-check`.
#[derive(Args, Debug, Default)]
struct HyperArgs {
    /// TOML file with hyperparameters; flags below win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    keep_prob: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["W1", "W2"])]
    widths: Option<Vec<usize>>,
    #[arg(long, num_args = 2, value_names = ["D1", "D2"])]
    dims: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    aggregation: Option<AggregationArg>,
    #[arg(long, value_enum)]
    loss_mode: Option<LossArg>,
    #[arg(long, value_enum)]
    decoding: Option<DecodingArg>,
    /// Disable null prediction.
    #[arg(long)]
    no_null: bool,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    bp_train_rounds: Option<usize>,
    #[arg(long)]
    dev_extra_clusters: Option<usize>,
}

impl HyperArgs {
    fn resolve(&self, base: Hyperparams, seed: Option<u64>) -> Result<Hyperparams> {
        let mut hp = match &self.config {
            Some(p) => Hyperparams::from_toml(&read_to_string(p)?).with_context(|| format!("reading {}", p.display()))?,
            None => base,
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { hp.$f = v; })*};
        }
        set!(lr, l2, keep_prob, embed_dim, max_epochs, patience, bp_train_rounds, dev_extra_clusters);
        if let Some(w) = &self.widths {
            hp.widths = [w[0], w[1]];
        }
        if let Some(d) = &self.dims {
            hp.dims = [d[0], d[1]];
        }
        if let Some(a) = self.aggregation {
            hp.aggregation = a.key().to_string();
        }
        if let Some(l) = self.loss_mode {
            hp.loss_mode = match l {
                LossArg::ValueLevel => LossMode::ValueLevel,
                LossArg::MentionLevel => LossMode::MentionLevel,
            };
        }
        if let Some(d) = self.decoding {
            hp.mention_decoding = d.into();
        }
        if self.no_null {
            hp.null = false;
        }
        if let Some(s) = seed {
            hp.seed = s;
        }
        hp.model_config()?;
        Ok(hp)
    }
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct TrainArgs {
    /// Training clusters.
    #[arg(long)]
    train: PathBuf,
    /// Development clusters; by default every fifth training document is
    /// held out.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Word vectors (`token v1 ... ve` per line); hashed vectors otherwise.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Epoch log CSV: epoch, train loss, dev F1 without and with one BP round.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Print the resolved configuration and stop.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long, requires = "corpus", conflicts_with = "tables")]
    model: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Stored score tables to decode instead of running a model.
    #[arg(long, required_unless_present = "model")]
    tables: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Aggregation at inference (defaults to the trained one).
    #[arg(long, value_enum)]
    aggregation: Option<AggregationArg>,
    /// Belief propagation rounds: a number or `conv`.
    #[arg(long, default_value = "0", value_parser = parse_bp)]
    bp: BpIterations,
    /// Decoding of a mention classifier (defaults to the trained one).
    #[arg(long, value_enum)]
    decoding: Option<DecodingArg>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the score tables before belief propagation.
    #[arg(long)]
    tables_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Prediction files; each becomes one row of the report.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    #[arg(long)]
    gold: PathBuf,
    /// Row labels, in the order of `--pred` (default: file stems).
    #[arg(long)]
    name: Vec<String>,
    /// Add per-slot correct / findable counts.
    #[arg(long)]
    per_slot: bool,
    /// Also write the reports as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BpTraceArgs {
    #[arg(long)]
    tables: PathBuf,
    /// Cluster to trace (default: the first table).
    #[arg(long)]
    cluster: Option<String>,
    #[arg(long, default_value = "conv", value_parser = parse_bp)]
    bp: BpIterations,
    /// CSV destination (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct GradCheckArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Cluster to check (default: the first).
    #[arg(long)]
    cluster: Option<String>,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[command(flatten)]
    hyper: HyperArgs,
}

fn parse_bp(s: &str) -> Result<BpIterations, String> {
    s.parse().map_err(|e: ConstraintError| e.to_string())
}

/// A score table with the cluster it belongs to, one per line on disk.
#[derive(Debug, Serialize, Deserialize)]
struct TableRecord {
    cluster_id: String,
    #[serde(flatten)]
    table: ValueScoreTable<f64>,
}

/// Error raised for malformed command input that no library type covers.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct InvalidInput(String);

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    InvalidInput(msg.into()).into()
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_corpus(path: &Path) -> Result<Vec<Cluster>> {
    let mut clusters = load_clusters(path).with_context(|| format!("loading {}", path.display()))?;
    clusters.sort_by(|a, b| a.cluster_id.cmp(&b.cluster_id));
    info!("loaded {} clusters from {}", clusters.len(), path.display());
    Ok(clusters)
}

fn load_embeddings(path: Option<&Path>, clusters: &[Cluster], dim: usize, seed: u64) -> Result<EmbeddingTable<f64>> {
    match path {
        Some(p) => {
            let t = EmbeddingTable::load(p).with_context(|| format!("loading {}", p.display()))?;
            info!("loaded {} word vectors of size {}", t.len(), t.dim());
            Ok(t)
        }
        None => {
            info!("using hashed word vectors of size {} (seed {})", dim, seed);
            Ok(EmbeddingTable::hashed_for_clusters(clusters, dim, seed))
        }
    }
}

fn load_tables(path: &Path) -> Result<Vec<TableRecord>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TableRecord = serde_json::from_str(&line).map_err(|e| invalid(format!("{} line {}: {}", path.display(), i + 1, e)))?;
        rec.table.check().map_err(|e| invalid(format!("{} cluster {}: {}", path.display(), rec.cluster_id, e)))?;
        out.push(rec);
    }
    out.sort_by(|a, b| a.cluster_id.cmp(&b.cluster_id));
    Ok(out)
}

fn describe(hp: &Hyperparams) -> String {
    format!(
        "lr={} l2={} keep={} widths {}/{} dims {}/{} embed_dim={} aggregation={} null={} loss_mode={:?} decoding={} max_epochs={} patience={} bp_train_rounds={} seed={}",
        hp.lr,
        hp.l2,
        hp.keep_prob,
        hp.widths[0],
        hp.widths[1],
        hp.dims[0],
        hp.dims[1],
        hp.embed_dim,
        hp.aggregation,
        hp.null,
        hp.loss_mode,
        hp.mention_decoding,
        hp.max_epochs,
        hp.patience,
        hp.bp_train_rounds,
        hp.seed
    )
}

fn cmd_synth(args: &SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: SynthConfig = match &args.config {
        Some(p) => toml::from_str(&read_to_string(p)?).map_err(|e| invalid(format!("{}: {}", p.display(), e)))?,
        None => SynthConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => {$(if let Some(v) = args.$f { cfg.$f = v; })*};
    }
    set!(n_clusters, misinformation_rate, offtopic_rate, missing_slot_rate, coincidental_rate);
    if let Some(s) = args.split {
        cfg.split = s.into();
    }
    if let Some(p) = &args.id_prefix {
        cfg.id_prefix = p.clone();
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    info!(
        "synth: n_clusters={} docs={}..={} misinformation={} offtopic={} missing={} coincidental={} split={:?} seed={}",
        cfg.n_clusters,
        cfg.docs_per_cluster[0],
        cfg.docs_per_cluster[1],
        cfg.misinformation_rate,
        cfg.offtopic_rate,
        cfg.missing_slot_rate,
        cfg.coincidental_rate,
        cfg.split,
        cfg.seed
    );
    let corpus = generate(&cfg)?;
    write_clusters(&args.out, &corpus.clusters)?;
    if let Some(p) = &args.provenance {
        corpus.write_provenance(p)?;
    }
    println!("wrote {} clusters to {}", corpus.clusters.len(), args.out.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs, seed: Option<u64>) -> Result<()> {
    let hp = args.hyper.resolve(Hyperparams::default(), seed)?;
    println!("{}", describe(&hp));
    info!("resolved config: {}", describe(&hp));
    if args.dry_run {
        return Ok(());
    }
    let train_set = load_corpus(&args.train)?;
    let (train_set, dev) = match &args.dev {
        Some(p) => (train_set, load_corpus(p)?),
        None => split_dev_with_extra(train_set, hp.dev_extra_clusters),
    };
    let mut all = train_set.clone();
    all.extend(dev.iter().cloned());
    let table = load_embeddings(args.embeddings.as_deref(), &all, hp.embed_dim, hp.seed)?;
    let opts = TrainOptions {
        dump_path: Some(args.out.with_extension("diverged.json")),
    };
    let out = train(&train_set, &dev, &table, &hp, &opts)?;
    for e in &out.report.history {
        info!("epoch {} loss {:.5} dev F1 {:?} (bp1 {:?})", e.epoch, e.train_loss, e.dev_f1, e.dev_f1_bp1);
    }
    let meta = serde_json::json!({
        "hyperparams": hp,
        "embeddings": args.embeddings,
        "report": out.report,
    });
    out.params.to_checkpoint(hp.seed, Some(&out.adam), meta).save(&args.out)?;
    if let Some(p) = &args.log {
        let mut w = create(p)?;
        writeln!(w, "epoch,train_loss,dev_f1,dev_f1_bp1")?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for e in &out.report.history {
            writeln!(w, "{},{},{},{}", e.epoch, e.train_loss, opt(e.dev_f1), opt(e.dev_f1_bp1))?;
        }
        w.flush()?;
    }
    println!(
        "trained {} epochs, best epoch {}, best dev F1 {}; wrote {}",
        out.report.history.len(),
        out.report.best_epoch,
        out.report.best_dev_f1.map_or("n/a".into(), |f| format!("{:.4}", f)),
        args.out.display()
    );
    Ok(())
}

fn model_tables(args: &PredictArgs, model: &Path, corpus: &Path) -> Result<Vec<TableRecord>> {
    let ck = Checkpoint::load(model).with_context(|| format!("loading {}", model.display()))?;
    let mut hp: Hyperparams = serde_json::from_value(ck.meta.get("hyperparams").cloned().unwrap_or_default())
        .map_err(|e| invalid(format!("{}: no usable hyperparameters: {}", model.display(), e)))?;
    if let Some(a) = args.aggregation {
        hp.aggregation = a.key().to_string();
    }
    if let Some(d) = args.decoding {
        hp.mention_decoding = d.into();
    }
    let cfg = hp.model_config()?;
    info!("predict: {} bp={}", describe(&hp), args.bp);
    let params = ModelParams::<f64>::from_checkpoint(&ck)?;
    let clusters = load_corpus(corpus)?;
    let stored: Option<PathBuf> = ck.meta.get("embeddings").and_then(|v| serde_json::from_value(v.clone()).ok()).flatten();
    let emb = args.embeddings.clone().or(stored);
    let table = load_embeddings(emb.as_deref(), &clusters, hp.embed_dim, hp.seed)?;
    if table.dim() != hp.embed_dim {
        return Err(invalid(format!("embeddings have size {}, model expects {}", table.dim(), hp.embed_dim)));
    }
    clusters
        .par_iter()
        .map(|c| {
            let index = ClusterIndex::new(c, &table);
            let t = predict_table(&params, &cfg, c, &index, BpIterations::Fixed(0))?;
            Ok(TableRecord {
                cluster_id: c.cluster_id.clone(),
                table: t,
            })
        })
        .collect()
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let tables = match (&args.model, &args.corpus, &args.tables) {
        (Some(m), Some(c), None) => model_tables(args, m, c)?,
        (None, _, Some(t)) => load_tables(t)?,
        _ => bail!(invalid("give either --model with --corpus, or --tables")),
    };
    if let Some(p) = &args.tables_out {
        let mut w = create(p)?;
        for rec in &tables {
            writeln!(w, "{}", serde_json::to_string(rec)?)?;
        }
        w.flush()?;
    }
    let preds: Vec<PredictionRecord> = tables
        .par_iter()
        .map(|rec| {
            let t = apply_bp(rec.table.clone(), args.bp)?;
            Ok(PredictionRecord::from_prediction(&ClusterPrediction::from_table(&rec.cluster_id, &t)))
        })
        .collect::<Result<_>>()?;
    let mut w = create(&args.out)?;
    serde_json::to_writer_pretty(&mut w, &preds)?;
    writeln!(w)?;
    w.flush()?;
    println!("wrote predictions for {} clusters to {}", preds.len(), args.out.display());
    Ok(())
}

fn load_predictions(path: &Path) -> Result<Vec<ClusterPrediction>> {
    let recs: Vec<PredictionRecord> = serde_json::from_str(&read_to_string(path)?).map_err(|e| invalid(format!("{}: {}", path.display(), e)))?;
    let mut preds = recs.iter().map(PredictionRecord::to_prediction).collect::<Result<Vec<_>, _>>()?;
    preds.sort_by(|a, b| a.cluster_id.cmp(&b.cluster_id));
    Ok(preds)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    if !args.name.is_empty() && args.name.len() != args.pred.len() {
        bail!(invalid(format!("{} names for {} prediction files", args.name.len(), args.pred.len())));
    }
    let gold = load_corpus(&args.gold)?;
    let mut rows = Vec::new();
    for (i, p) in args.pred.iter().enumerate() {
        let name = args
            .name
            .get(i)
            .cloned()
            .unwrap_or_else(|| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()));
        let report = evaluate(&load_predictions(p)?, &gold)?;
        rows.push((name, report));
    }
    println!("{}", format_systems_table(&rows));
    if args.per_slot {
        for (name, report) in &rows {
            println!("\n{}\n{}", name, format_per_slot_table(report));
        }
    }
    if let Some(p) = &args.json {
        let map: std::collections::BTreeMap<&str, _> = rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &map)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_bp_trace(args: &BpTraceArgs) -> Result<()> {
    let tables = load_tables(&args.tables)?;
    let rec = match &args.cluster {
        Some(id) => tables.iter().find(|r| &r.cluster_id == id).ok_or_else(|| invalid(format!("no table for cluster {}", id)))?,
        None => tables.first().ok_or_else(|| invalid(format!("{} holds no tables", args.tables.display())))?,
    };
    let graph = graph_from_table(&local_logits(&rec.table))?;
    let mut trace = Vec::new();
    let final_beliefs = run_bp_traced(&graph, args.bp, |b| trace.push(b.clone()))?;
    info!("bp-trace: cluster {} ran {} rounds", rec.cluster_id, final_beliefs.iterations);
    match &args.out {
        Some(p) => {
            let mut w = create(p)?;
            write_trace_csv(&mut w, &graph, &trace)?;
            w.flush()?;
        }
        None => write_trace_csv(io::stdout().lock(), &graph, &trace)?,
    }
    Ok(())
}

fn cmd_grad_check(args: &GradCheckArgs, seed: Option<u64>) -> Result<()> {
    let small = Hyperparams {
        embed_dim: 8,
        widths: [3, 3],
        dims: [4, 4],
        keep_prob: 1.0,
        ..Hyperparams::default()
    };
    let hp = args.hyper.resolve(small, seed)?;
    info!("grad-check: {}", describe(&hp));
    let clusters = load_corpus(&args.corpus)?;
    let cluster = match &args.cluster {
        Some(id) => clusters.iter().find(|c| &c.cluster_id == id).ok_or_else(|| invalid(format!("no cluster {}", id)))?,
        None => clusters.first().ok_or_else(|| invalid(format!("{} holds no clusters", args.corpus.display())))?,
    };
    if cluster.num_tokens() > 30 {
        warn!("cluster {} has {} tokens; the check is meant for at most 30", cluster.cluster_id, cluster.num_tokens());
    }
    let cfg = hp.model_config()?;
    let table = EmbeddingTable::hashed_for_clusters(std::slice::from_ref(cluster), hp.embed_dim, hp.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let params = ModelParams::<f64>::init(&cfg, hp.init_scale, &mut rng);
    let report = gradient_check(cluster, &table, &cfg, &params, hp.bp_train_rounds, args.step)?;
    let worst = report.worst.as_ref().map_or("none".to_string(), |(n, i)| format!("{}[{}]", n, i));
    println!(
        "checked {} coordinates, loss {:.6}, max relative error {:.3e} at {}",
        report.checked, report.loss, report.max_rel_error, worst
    );
    if report.max_rel_error > GRAD_TOLERANCE {
        bail!("gradient check failed: relative error {:.3e} at {} exceeds {:e}", report.max_rel_error, worst, GRAD_TOLERANCE);
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(invalid("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    info!("seed {:?}, threads {}", cli.seed, rayon::current_num_threads());
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, cli.seed),
        Command::Train(a) => cmd_train(a, cli.seed),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::BpTrace(a) => cmd_bp_trace(a),
        Command::GradCheck(a) => cmd_grad_check(a, cli.seed),
    }
}

fn is_missing_file(e: &(dyn std::error::Error + 'static)) -> bool {
    e.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::NotFound)
}

fn is_invalid(e: &(dyn std::error::Error + 'static)) -> bool {
    e.is::<InvalidInput>()
        || e.is::<EvalError>()
        || e.is::<AggregationError>()
        || e.is::<ConstraintError>()
        || matches!(e.downcast_ref::<CorpusError>(), Some(CorpusError::Parse { .. } | CorpusError::Validation { .. }))
        || matches!(e.downcast_ref::<TrainError>(), Some(TrainError::Config(_) | TrainError::NoData))
        || matches!(e.downcast_ref::<SynthError>(), Some(e) if !matches!(e, SynthError::Io { .. }))
        || matches!(e.downcast_ref::<CheckpointError>(), Some(e) if !matches!(e, CheckpointError::Io { .. }))
        || matches!(e.downcast_ref::<EmbeddingError>(), Some(EmbeddingError::Format { .. }))
}

/// Exit status for an error: the first recognized cause in the chain wins.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if matches!(cause.downcast_ref::<TrainError>(), Some(TrainError::Divergence { .. })) {
            return EXIT_DIVERGED;
        }
        if is_missing_file(cause) {
            return EXIT_MISSING_FILE;
        }
        if is_invalid(cause) {
            return EXIT_INVALID;
        }
    }
    EXIT_FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_INVALID) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        let missing = anyhow::Error::new(io::Error::new(io::ErrorKind::NotFound, "x")).context("reading a");
        assert_eq!(exit_code(&missing), EXIT_MISSING_FILE);
        assert_eq!(exit_code(&invalid("bad")), EXIT_INVALID);
        let div = anyhow::Error::new(TrainError::Divergence {
            epoch: 1,
            cluster_id: "c".into(),
            reason: "nan".into(),
            dump: None,
        });
        assert_eq!(exit_code(&div), EXIT_DIVERGED);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), EXIT_FAILURE);
    }

    #[test]
    fn flags_override_config() {
        let args = HyperArgs {
            lr: Some(0.1),
            widths: Some(vec![3, 2]),
            aggregation: Some(AggregationArg::PerDoc),
            no_null: true,
            ..HyperArgs::default()
        };
        let hp = args.resolve(Hyperparams::default(), Some(9)).unwrap();
        assert_eq!((hp.lr, hp.widths, hp.aggregation.as_str(), hp.null, hp.seed), (0.1, [3, 2], "per-doc", false, 9));
        assert_eq!(hp.l2, 0.01);
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
