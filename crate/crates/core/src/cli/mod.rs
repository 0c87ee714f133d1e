//! The `graphfm` command line.
//!
//! Every command that writes JSON writes it deterministically: the same
//! inputs and `--seed` give byte-identical files. Wall-clock information is
//! kept out of those files and goes to `timing.json` and `history.jsonl`.

mod config;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{parse_kind, parse_mk, preset_neighbors, variant_name, RunConfig};

use crate::data::{load_csv, movielens, split, Dataset, Encoder, SchemaFile, SplitSpec};
use crate::error::{Error, Result};
use crate::explain::{explain_rows, selection_frequency, write_exports};
use crate::model::{checkpoint, Model, ModelKind, Variant};
use crate::synth::{self, SynthSpec};
use crate::train::{evaluate, Trainer, BEST_DIR};

pub const METRICS_FILE: &str = "metrics.json";
pub const ABLATION_FILE: &str = "ablation.json";
pub const TIMING_FILE: &str = "timing.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Parser)]
#[command(name = "graphfm", version, args_override_self = true)]
#[command(about = "Graph factorization machines for multi-field tabular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model on an 8:1:1 split and report test metrics.
    Train(RunArgs),
    /// Train the full model and its three ablations on the same split.
    Ablate(RunArgs),
    /// Score a checkpoint on a CSV file or one of its seeded splits.
    Eval(EvalArgs),
    /// Export per-instance edge-weight matrices and selection frequencies.
    Explain(ExplainArgs),
    /// Generate a synthetic dataset with planted pairwise interactions.
    Synth(SynthArgs),
    /// Convert the MovieLens-1M release into CSV + schema.
    PrepareMovielens(PrepareArgs),
}

/// Flags shared by `train` and `ablate`; each overrides the config file.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// JSON file of dotted keys, e.g. {"train.lr": 0.001}.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// graphfm, fm or lr.
    #[arg(long)]
    pub model: Option<String>,
    /// full, no_select, no_interact or single_head.
    #[arg(long)]
    pub variant: Option<String>,
    /// Published neighbourhood sizes: criteo, avazu or movielens.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Neighbourhood size per layer, e.g. "7,4,2".
    #[arg(long)]
    pub mk: Option<String>,
    /// relu, elu or sigmoid.
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Values seen fewer times share the unknown index.
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A checkpoint directory, or a run directory holding `best/`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// all, train, val or test; the splits are re-derived from --seed.
    #[arg(long, default_value = "all")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// all, train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Row positions within the split, e.g. "0,17,42".
    #[arg(long, conflicts_with = "first")]
    pub ids: Option<String>,
    /// Export the first k rows of the split.
    #[arg(long, default_value_t = 5)]
    pub first: usize,
    /// Include per-head attention coefficients.
    #[arg(long)]
    pub attention: bool,
    /// Skip the selection-frequency pass over the whole split.
    #[arg(long)]
    pub no_frequency: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub fields: usize,
    #[arg(long, default_value_t = 10)]
    pub vocab: usize,
    /// Planted pairs, e.g. "0-1,2-5".
    #[arg(long, default_value = "0-1")]
    pub planted: String,
    #[arg(long, default_value_t = 50_000)]
    pub rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Logit contribution of one firing pair.
    #[arg(long, default_value_t = 4.0)]
    pub weight: f64,
    /// Standard deviation of the logit noise.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Directory holding users.dat, movies.dat and ratings.dat.
    #[arg(long)]
    pub src: PathBuf,
    /// Receives data.csv and schema.json.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let config = resolve(&args)?;
            let summary = cmd_train(&config)?;
            print_json(&summary)
        }
        Command::Ablate(args) => {
            let config = resolve(&args)?;
            let table = cmd_ablate(&config)?;
            print_json(&table)
        }
        Command::Eval(args) => {
            let metrics = cmd_eval(&args)?;
            if let Some(path) = &args.out {
                write_json(path, &metrics)?;
            }
            print_json(&metrics)
        }
        Command::Explain(args) => cmd_explain(&args),
        Command::Synth(args) => {
            let summary = cmd_synth(&args)?;
            print_json(&summary)
        }
        Command::PrepareMovielens(args) => {
            std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
            let stats = movielens::prepare(&args.src, &args.out.join("data.csv"), &args.out.join("schema.json"))?;
            print_json(&json!({
                "ratings": stats.ratings,
                "kept": stats.kept,
                "dropped_neutral": stats.dropped_neutral,
            }))
        }
    }
}

/// Defaults, then `--config`, then the remaining flags.
pub fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut c = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &args.data {
        c.data = Some(v.clone());
    }
    if let Some(v) = &args.schema {
        c.schema = Some(v.clone());
    }
    if let Some(v) = &args.out {
        c.out = Some(v.clone());
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = &args.model {
        c.kind = parse_kind(v)?;
    }
    if let Some(v) = &args.variant {
        c.variant = v.parse()?;
    }
    if let Some(v) = &args.preset {
        preset_neighbors(v)?;
        c.preset = Some(v.clone());
    }
    if let Some(v) = args.layers {
        c.layers = Some(v);
    }
    if let Some(v) = args.heads {
        c.heads = Some(v);
    }
    if let Some(v) = args.dim {
        c.dim = Some(v);
    }
    if let Some(v) = &args.mk {
        c.mk = Some(parse_mk(v)?);
    }
    if let Some(v) = &args.activation {
        c.activation = v.parse()?;
    }
    if let Some(v) = args.batch {
        c.batch = v;
    }
    if let Some(v) = args.lr {
        c.lr = v;
    }
    if let Some(v) = args.epochs {
        c.epochs = v;
    }
    if let Some(v) = args.patience {
        c.patience = v;
    }
    if let Some(v) = args.min_count {
        c.min_count = v;
    }
    Ok(c)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::Config(format!("--{flag} is required (or set it in the config file)")))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json("<stdout>", e))?;
    println!("{text}");
    Ok(())
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Test metrics of one trained model, as written to `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub test_auc: f64,
    pub test_logloss: f64,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub epochs_run: usize,
}

struct Prepared {
    encoder: Encoder,
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn prepare(config: &RunConfig, out: &Path) -> Result<Prepared> {
    let data = required(&config.data, "data")?;
    let schema_path = required(&config.schema, "schema")?;
    let schema = SchemaFile::load(schema_path)?;
    let loaded = load_csv(data, &schema, config.min_count)?;
    let splits = split(&loaded.dataset, &SplitSpec::standard(config.seed))?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    splits.manifest.save(&out.join(SPLIT_FILE))?;
    Ok(Prepared {
        encoder: loaded.encoder,
        train: splits.train,
        val: splits.val,
        test: splits.test,
    })
}

fn train_prepared(config: &RunConfig, variant: Variant, data: &Prepared, out: &Path) -> Result<RunSummary> {
    let started = unix_ms();
    let clock = Instant::now();
    let n = data.encoder.schema().n_fields();
    let model = Model::new(config.model_config(n, variant)?, data.encoder.schema().clone())?;
    let mut resolved = config.clone();
    resolved.variant = variant;
    resolved.out = Some(out.to_path_buf());
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(CONFIG_FILE), &resolved.to_flat())?;

    let trainer = Trainer::new(model, data.encoder.clone(), config.train_config())?;
    let fit = trainer.fit_with(&data.train, &data.val, Some(out), |r| {
        eprintln!(
            "epoch {:>3}  train_logloss {:.5}  val_auc {:.5}  val_logloss {:.5}  ({} ms)",
            r.epoch, r.train_logloss, r.val_auc, r.val_logloss, r.wall_ms
        );
    })?;
    let test = evaluate(&fit.best, &data.test)?;
    let summary = RunSummary {
        test_auc: test.auc,
        test_logloss: test.logloss,
        best_epoch: fit.best_epoch,
        best_val_auc: fit.best_val_auc,
        epochs_run: fit.history.len(),
    };
    write_json(&out.join(METRICS_FILE), &summary)?;
    write_json(
        &out.join(TIMING_FILE),
        &json!({
            "started_unix_ms": started,
            "finished_unix_ms": unix_ms(),
            "wall_ms": clock.elapsed().as_millis() as u64,
        }),
    )?;
    Ok(summary)
}

/// Loads and splits the data, trains, and writes `metrics.json` plus the
/// checkpoints and history under `out`.
pub fn cmd_train(config: &RunConfig) -> Result<RunSummary> {
    let out = required(&config.out, "out")?;
    let data = prepare(config, out)?;
    train_prepared(config, config.variant, &data, out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub label: String,
    #[serde(flatten)]
    pub summary: RunSummary,
}

/// Trains every variant on one split into `out/<variant>/` and writes the
/// four-row comparison to `out/ablation.json`.
pub fn cmd_ablate(config: &RunConfig) -> Result<Vec<AblationRow>> {
    if config.kind != ModelKind::GraphFm {
        return Err(Error::Config("ablations apply to the graphfm model only".into()));
    }
    let out = required(&config.out, "out")?;
    let data = prepare(config, out)?;
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        eprintln!("== {}", variant.label());
        let summary = train_prepared(config, variant, &data, &out.join(variant_name(variant)))?;
        rows.push(AblationRow {
            variant: variant_name(variant).into(),
            label: variant.label().into(),
            summary,
        });
    }
    write_json(&out.join(ABLATION_FILE), &json!({ "seed": config.seed, "rows": rows }))?;
    Ok(rows)
}

fn load_checkpoint(path: &Path) -> Result<checkpoint::Checkpoint> {
    let best = path.join(BEST_DIR);
    if best.join("manifest.json").is_file() {
        checkpoint::load(&best)
    } else {
        checkpoint::load(path)
    }
}

/// Encodes `data` with the checkpoint's vocabulary and picks the requested
/// split.
fn select_split(
    encoder: &Encoder,
    data: &Path,
    schema: &Path,
    which: &str,
    seed: u64,
) -> Result<Dataset> {
    let schema = SchemaFile::load(schema)?;
    let dataset = crate::data::encode_csv(data, &schema, encoder)?;
    if which == "all" {
        return Ok(dataset);
    }
    let splits = split(&dataset, &SplitSpec::standard(seed))?;
    match which {
        "train" => Ok(splits.train),
        "val" => Ok(splits.val),
        "test" => Ok(splits.test),
        other => Err(Error::Config(format!("unknown split `{other}` (expected all, train, val or test)"))),
    }
}

/// AUC and log loss of a checkpoint on a dataset.
pub fn cmd_eval(args: &EvalArgs) -> Result<Value> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = select_split(&ckpt.encoder, &args.data, &args.schema, &args.split, args.seed)?;
    let m = evaluate(&ckpt.model, &data)?;
    Ok(json!({
        "split": args.split,
        "rows": data.len(),
        "auc": m.auc,
        "logloss": m.logloss,
    }))
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = select_split(&ckpt.encoder, &args.data, &args.schema, &args.split, args.seed)?;
    let rows: Vec<usize> = match &args.ids {
        Some(ids) => ids
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad instance id `{s}` in `{ids}`")))
            })
            .collect::<Result<_>>()?,
        None => (0..args.first.min(data.len())).collect(),
    };
    let records = explain_rows(&ckpt.model, &data, &rows, args.attention)?;
    let frequency = if args.no_frequency {
        None
    } else {
        Some(selection_frequency(&ckpt.model, &data)?)
    };
    write_exports(&args.out, &records, frequency.as_deref())?;
    eprintln!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

/// Parses `"0-1,2-5"` into planted pairs.
pub fn parse_pairs(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|p| {
            let bad = || Error::Config(format!("bad pair `{p}` in `{s}` (expected i-j)"));
            let (a, b) = p.trim().split_once('-').ok_or_else(bad)?;
            Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Value> {
    let spec = SynthSpec {
        n_fields: args.fields,
        vocab: args.vocab,
        planted: parse_pairs(&args.planted)?,
        rows: args.rows,
        seed: args.seed,
        weight: args.weight,
        noise: args.noise,
    };
    let s = synth::generate(&spec)?;
    let files = s.write(&args.out)?;
    Ok(json!({
        "data": files.data,
        "schema": files.schema,
        "truth": files.truth,
        "rows": s.labels.len(),
        "positive_rate": s.truth.positive_rate,
    }))
}
