//! Command-line front end: prepare splits, train, evaluate, run ablations,
//! and produce per-user recommendations.
//!
//! Exit codes: 0 success, 1 usage or configuration problem, 2 data problem,
//! 3 numeric failure during training or scoring.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use srgformer_core::config::AblationFlags;
use srgformer_core::dataio::{self, IdMap, InteractionDataset, SplitManifest};
use srgformer_core::error::Error;
use srgformer_core::model::{ModelDims, ModelState};
use srgformer_core::trainer::PreparedGraph;
use srgformer_core::{eval, trainer, TrainConfig};

#[derive(Parser)]
#[command(name = "srgformer", version, about = "Multimodal graph recommender")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse an interaction log, build per-user splits, and write a data directory.
    Prepare(PrepareArgs),
    /// Train a model on a prepared data directory and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on the held-out test split and write a report.
    Evaluate(EvaluateArgs),
    /// Train and evaluate a set of structural variants.
    Ablate(AblateArgs),
    /// Print the top-n unseen items for one user.
    Recommend(RecommendArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// TSV interaction log: user<TAB>item[<TAB>unix_timestamp].
    #[arg(long)]
    interactions: PathBuf,
    /// Output data directory.
    #[arg(long)]
    out: PathBuf,
    /// train:val:test ratio.
    #[arg(long, default_value = "8:1:1")]
    ratios: String,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset: baby, sports, clothing.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Structural variant tag, e.g. "full" or "w/GT+w/MCL".
    #[arg(long)]
    variant: Option<String>,
    /// Full dense attention instead of the interaction-masked form.
    #[arg(long)]
    dense_attention: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared data directory.
    #[arg(long)]
    data: PathBuf,
    /// Directory holding features.<modality>.fmat files.
    #[arg(long)]
    features: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Report TSV output path; a .json sidecar is written next to it.
    #[arg(long)]
    report: PathBuf,
    /// Dataset label for the report; defaults to the data directory name.
    #[arg(long)]
    dataset: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Comma-separated variant tags.
    #[arg(long, default_value = "full,w/GT,w/MCL,w/v,w/t,w/h")]
    variants: String,
    #[arg(long)]
    dataset: Option<String>,
    /// Directory for per-variant checkpoints; skipped when absent.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Raw user id as it appeared in the interaction log.
    #[arg(long)]
    user: String,
    /// Number of recommendations.
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Prepare(a) => prepare(a),
        Cmd::Train(a) => train(a),
        Cmd::Evaluate(a) => evaluate(a),
        Cmd::Ablate(a) => ablate(a),
        Cmd::Recommend(a) => recommend(a),
    }
}

fn parse_ratios(s: &str) -> Result<(u32, u32, u32), Error> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("bad ratio {s:?}, expected a:b:c")));
    }
    let nums: Vec<u32> = parts
        .iter()
        .map(|p| {
            p.parse()
                .map_err(|_| Error::Config(format!("bad ratio component {p:?}")))
        })
        .collect::<Result<_, Error>>()?;
    Ok((nums[0], nums[1], nums[2]))
}

fn prepare(a: PrepareArgs) -> Result<(), Error> {
    let ratios = parse_ratios(&a.ratios)?;
    let (records, users, items) = dataio::load_interactions(&a.interactions)?;
    let ds = dataio::split_dataset(&records, users.len(), items.len(), ratios, a.seed)?;
    std::fs::create_dir_all(&a.out)?;
    users.save(&a.out.join("users.tsv"))?;
    items.save(&a.out.join("items.tsv"))?;
    write_partition(&a.out.join("train.tsv"), &ds.train)?;
    write_partition(&a.out.join("val.tsv"), &ds.val)?;
    write_partition(&a.out.join("test.tsv"), &ds.test)?;
    let manifest = SplitManifest {
        seed: a.seed,
        ratios,
        user_count: ds.user_count,
        item_count: ds.item_count,
        train_count: ds.train.len(),
        val_count: ds.val.len(),
        test_count: ds.test.len(),
        user_map_file: "users.tsv".into(),
        item_map_file: "items.tsv".into(),
    };
    std::fs::write(
        a.out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?,
    )?;
    println!(
        "{} users, {} items, {} interactions (sparsity {:.4}%)",
        ds.user_count,
        ds.item_count,
        ds.interaction_count(),
        ds.sparsity() * 100.0
    );
    println!(
        "split {}:{}:{} -> {} train / {} val / {} test",
        ratios.0,
        ratios.1,
        ratios.2,
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );
    Ok(())
}

fn write_partition(path: &Path, records: &[dataio::InteractionRecord]) -> Result<(), Error> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        match r.timestamp {
            Some(ts) => writeln!(w, "{}\t{}\t{}", r.user, r.item, ts)?,
            None => writeln!(w, "{}\t{}", r.user, r.item)?,
        }
    }
    Ok(())
}

fn read_partition(path: &Path) -> Result<Vec<dataio::InteractionRecord>, Error> {
    use std::io::BufRead;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(std::fs::File::open(path)?)
        .lines()
        .enumerate()
    {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let parse = |field: Option<&str>, what: &str| -> Result<usize, Error> {
            field
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad {what} in {}", path.display()),
                })
        };
        let user = parse(parts.next(), "user index")?;
        let item = parse(parts.next(), "item index")?;
        let timestamp = match parts.next() {
            Some(t) => Some(t.parse::<i64>().map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("bad timestamp in {}", path.display()),
            })?),
            None => None,
        };
        out.push(dataio::InteractionRecord {
            user,
            item,
            timestamp,
        });
    }
    Ok(out)
}

struct LoadedData {
    dataset: InteractionDataset,
    users: IdMap,
    items: IdMap,
    label: String,
}

fn load_prepared(dir: &Path) -> Result<LoadedData, Error> {
    let manifest: SplitManifest = serde_json::from_str(
        &std::fs::read_to_string(dir.join("manifest.json"))
            .map_err(|_| Error::Data(format!("{}: not a prepared data directory", dir.display())))?,
    )
    .map_err(|e| Error::Data(format!("bad manifest: {e}")))?;
    let users = IdMap::load(&dir.join(&manifest.user_map_file))?;
    let items = IdMap::load(&dir.join(&manifest.item_map_file))?;
    if users.len() != manifest.user_count || items.len() != manifest.item_count {
        return Err(Error::Data("id maps disagree with the manifest".into()));
    }
    let train = read_partition(&dir.join("train.tsv"))?;
    let val = read_partition(&dir.join("val.tsv"))?;
    let test = read_partition(&dir.join("test.tsv"))?;
    if train.len() != manifest.train_count
        || val.len() != manifest.val_count
        || test.len() != manifest.test_count
    {
        return Err(Error::Data("split files disagree with the manifest".into()));
    }
    let dataset = InteractionDataset::from_partitions(
        manifest.user_count,
        manifest.item_count,
        train,
        val,
        test,
    );
    let label = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".to_string());
    Ok(LoadedData {
        dataset,
        users,
        items,
        label,
    })
}

/// Preset/file < flags < SRGF_SEED, in increasing precedence.
fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig, Error> {
    if args.config.is_some() && args.preset.is_some() {
        return Err(Error::Config("--config and --preset are exclusive".into()));
    }
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => TrainConfig::from_json(&std::fs::read_to_string(path)?)?,
        (None, Some(name)) => TrainConfig::preset(name)?,
        (None, None) => TrainConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = args.patience {
        cfg.patience = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.embedding_dim {
        cfg.embedding_dim = v;
    }
    if let Some(v) = args.heads {
        cfg.heads = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.gamma {
        cfg.gamma = v;
    }
    if let Some(tag) = &args.variant {
        cfg.ablation = AblationFlags::parse_variant(tag)?;
    }
    if args.dense_attention {
        cfg.dense_attention = true;
    }
    if let Ok(seed) = std::env::var("SRGF_SEED") {
        cfg.seed = seed
            .parse()
            .map_err(|_| Error::Config(format!("SRGF_SEED={seed:?} is not a u64")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_graph(
    data: &LoadedData,
    features_dir: &Path,
    cfg: &TrainConfig,
) -> Result<PreparedGraph, Error> {
    let mut tables = Vec::new();
    for tag in cfg.modalities() {
        let path = features_dir.join(format!("features.{tag}.fmat"));
        tables.push(dataio::load_modal_features(
            &path,
            tag,
            data.dataset.item_count,
        )?);
    }
    PreparedGraph::build(&data.dataset, &tables, cfg)
}

fn train_once(
    data: &LoadedData,
    features_dir: &Path,
    cfg: &TrainConfig,
) -> Result<(ModelState, trainer::TrainReport), Error> {
    let graph = load_graph(data, features_dir, cfg)?;
    let dims = ModelDims {
        user_count: data.dataset.user_count,
        item_count: data.dataset.item_count,
        modal_dims: graph.modal_dims(),
    };
    let mut state = ModelState::new(cfg, &dims, cfg.seed)?;
    let report = trainer::fit(&mut state, &data.dataset, &graph, cfg)?;
    Ok((state, report))
}

fn train(a: TrainArgs) -> Result<(), Error> {
    let cfg = resolve_config(&a.config)?;
    let data = load_prepared(&a.data)?;
    let (state, report) = train_once(&data, &a.features, &cfg)?;
    state.save(&a.out, &cfg.digest(), true)?;
    let sidecar = a.out.with_extension("train.json");
    std::fs::write(
        &sidecar,
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Data(format!("report serialization: {e}")))?,
    )?;
    println!(
        "trained {} for {} epochs (best epoch {}, val R@20 {:.6}); {}",
        cfg.ablation.tag(),
        report.epoch_losses.len(),
        report.best_epoch,
        report.best_val_recall.max(0.0),
        report.stop_reason
    );
    println!("checkpoint: {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ReportRow {
    variant: String,
    dataset: String,
    #[serde(rename = "R@10")]
    r10: f64,
    #[serde(rename = "R@20")]
    r20: f64,
    #[serde(rename = "N@10")]
    n10: f64,
    #[serde(rename = "N@20")]
    n20: f64,
    epoch: usize,
    seed: u64,
}

fn write_report(path: &Path, rows: &[ReportRow]) -> Result<(), Error> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "variant\tdataset\tR@10\tR@20\tN@10\tN@20\tepoch\tseed")?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            r.variant, r.dataset, r.r10, r.r20, r.n10, r.n20, r.epoch, r.seed
        )?;
    }
    drop(w);
    std::fs::write(
        path.with_extension("json"),
        serde_json::to_string_pretty(rows)
            .map_err(|e| Error::Data(format!("report serialization: {e}")))?,
    )?;
    Ok(())
}

fn score_state(
    state: &ModelState,
    data: &LoadedData,
    features_dir: &Path,
    cfg: &TrainConfig,
    dataset_label: &str,
    epoch: usize,
) -> Result<ReportRow, Error> {
    let graph = load_graph(data, features_dir, cfg)?;
    let e_star = trainer::compute_final_embeddings(state, &graph, cfg)?;
    let test = data.dataset.test_items_by_user();
    let report = eval::evaluate_topn(&e_star, &data.dataset, &test)?;
    Ok(ReportRow {
        variant: cfg.ablation.tag(),
        dataset: dataset_label.to_string(),
        r10: report.recall_at_10,
        r20: report.recall_at_20,
        n10: report.ndcg_at_10,
        n20: report.ndcg_at_20,
        epoch,
        seed: cfg.seed,
    })
}

fn evaluate(a: EvaluateArgs) -> Result<(), Error> {
    let cfg = resolve_config(&a.config)?;
    let data = load_prepared(&a.data)?;
    let (state, digest) = ModelState::load(&a.checkpoint)?;
    if digest != cfg.digest() {
        eprintln!("warning: checkpoint was trained under a different configuration");
    }
    let label = a.dataset.unwrap_or_else(|| data.label.clone());
    let row = score_state(
        &state,
        &data,
        &a.features,
        &cfg,
        &label,
        state.epoch as usize,
    )?;
    println!(
        "{}: R@10 {:.6}  R@20 {:.6}  N@10 {:.6}  N@20 {:.6}",
        label, row.r10, row.r20, row.n10, row.n20
    );
    write_report(&a.report, &[row])?;
    println!("report: {}", a.report.display());
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<(), Error> {
    let base = resolve_config(&a.config)?;
    let data = load_prepared(&a.data)?;
    let label = a.dataset.clone().unwrap_or_else(|| data.label.clone());
    if let Some(dir) = &a.checkpoints {
        std::fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::new();
    for tag in a.variants.split(',') {
        let tag = tag.trim();
        if tag.is_empty() {
            continue;
        }
        let mut cfg = base.clone();
        cfg.ablation = AblationFlags::parse_variant(tag)?;
        cfg.validate()?;
        let (state, report) = train_once(&data, &a.features, &cfg)?;
        if let Some(dir) = &a.checkpoints {
            let file = tag.replace('/', "_").replace('+', "-");
            state.save(&dir.join(format!("{file}.srgf")), &cfg.digest(), true)?;
        }
        let row = score_state(&state, &data, &a.features, &cfg, &label, report.best_epoch)?;
        println!(
            "{}\tR@10 {:.6}\tR@20 {:.6}\tN@10 {:.6}\tN@20 {:.6}",
            row.variant, row.r10, row.r20, row.n10, row.n20
        );
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Config("no variants requested".into()));
    }
    write_report(&a.report, &rows)?;
    println!("report: {}", a.report.display());
    Ok(())
}

fn recommend(a: RecommendArgs) -> Result<(), Error> {
    if a.n == 0 {
        return Err(Error::Config("--n must be positive".into()));
    }
    let cfg = resolve_config(&a.config)?;
    let data = load_prepared(&a.data)?;
    let (state, digest) = ModelState::load(&a.checkpoint)?;
    if digest != cfg.digest() {
        eprintln!("warning: checkpoint was trained under a different configuration");
    }
    let user = data
        .users
        .get(&a.user)
        .ok_or_else(|| Error::Data(format!("unknown user {:?}", a.user)))?;
    let graph = load_graph(&data, &a.features, &cfg)?;
    let e_star = trainer::compute_final_embeddings(&state, &graph, &cfg)?;
    let ranked = eval::rank_items(
        &e_star,
        data.dataset.user_count,
        data.dataset.item_count,
        user,
        &data.dataset.train_neighbors[user],
    )?;
    let scores = trainer::predict_scores(&e_star, data.dataset.user_count, user, &ranked)?;
    for (rank, (&item, &score)) in ranked.iter().zip(&scores).take(a.n).enumerate() {
        println!("{}\t{}\t{:.6}", rank + 1, data.items.labels[item], score);
    }
    Ok(())
}
