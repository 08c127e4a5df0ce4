//! Command-line front end. Every command reads its inputs from explicit files
//! and flags and writes its outputs under `--out`.
//!
//! Run directory written by `train`:
//!
//! ```text
//! config.json      fully resolved training configuration (written first)
//! metrics.jsonl    one EpochMetrics object per line
//! checkpoint.json  final model
//! report.json      MetricsReport on the validation splits, when both exist
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::{generate_synthetic, load_feature_file, save_feature_file, DomainDataset, SyntheticShiftSpec};
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport};
use crate::model::{load_checkpoint, save_checkpoint, AttentionMode, Ta3nModel, TemporalVariant};
use crate::train::{grid_candidates, grid_search, train_with, GridStage, Method, TrainConfig, TrainData};

pub const SOURCE_TRAIN: &str = "source_train.feat";
pub const SOURCE_VAL: &str = "source_val.feat";
pub const TARGET_TRAIN: &str = "target_train.feat";
pub const TARGET_VAL: &str = "target_val.feat";

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ta3n", version, about = "Temporal attentive adversarial adaptation on frame features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-domain dataset.
    GenData(GenDataArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the validation splits of a data directory.
    Eval(EvalArgs),
    /// Search the loss trade-off weights.
    Grid(GridArgs),
    /// Write final video features and a 2-D projection.
    DumpFeatures(DumpArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// JSON spec; omitted fields take the defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Starting point that the config file and flags refine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Default weights and optimizer settings.
    #[default]
    Standard,
    /// Tuned for the default synthetic benchmark.
    Synthetic,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frames sampled per video.
    #[arg(long)]
    pub k_frames: Option<usize>,
    /// Enables the terms of a named method, zeroing the others.
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long, value_enum)]
    pub variant: Option<TemporalVariant>,
    #[arg(long, value_enum)]
    pub attention: Option<AttentionMode>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    pub lambda_r: Option<f64>,
    #[arg(long)]
    pub lambda_t: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub source_batch: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON training config; omitted fields come from the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Standard)]
    pub preset: Preset,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory holding the split files written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Report (or run directory) of a source-only run; enables the gain field.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Report path; defaults to eval.json next to the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = GridStage::Coarse)]
    pub stage: GridStage,
    /// Sweep the fine grid over all weight combinations.
    #[arg(long)]
    pub joint: bool,
    /// Candidates trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => EXIT_IO,
        Error::Config(_) | Error::Json { .. } => EXIT_CONFIG,
        Error::Shape { .. } | Error::InvalidInput(_) | Error::Format { .. } | Error::Record { .. } => EXIT_DATA,
        Error::NonFinite { .. } => EXIT_NUMERICAL,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Grid(a) => cmd_grid(&a),
        Command::DumpFeatures(a) => cmd_dump_features(&a),
    }
}

/// Writes a line to stdout, ignoring a closed pipe.
fn say(line: &str) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json_value(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Overlays the keys of a JSON object file onto `base`.
fn overlay<T: Serialize + serde::de::DeserializeOwned>(base: &T, file: &Path) -> Result<T> {
    let mut merged = serde_json::to_value(base).map_err(|e| Error::json(file, e))?;
    let patch = read_json_value(file)?;
    let serde_json::Value::Object(fields) = patch else {
        return Err(Error::Config(format!("{} must hold a JSON object", file.display())));
    };
    let target = merged.as_object_mut().expect("structs serialize to objects");
    for (k, v) in fields {
        target.insert(k, v);
    }
    serde_json::from_value(merged).map_err(|e| Error::json(file, e))
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => overlay(&SyntheticShiftSpec::default(), path)?,
        None => SyntheticShiftSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let data = generate_synthetic(&spec)?;
    create_dir(&args.out)?;
    for (name, ds) in [
        (SOURCE_TRAIN, &data.source_train),
        (SOURCE_VAL, &data.source_val),
        (TARGET_TRAIN, &data.target_train),
        (TARGET_VAL, &data.target_val),
    ] {
        save_feature_file(ds, &args.out.join(name))?;
    }
    write_json(&args.out.join("spec.json"), &spec)
}

/// Preset, then config file, then method, then individual flags.
pub fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let preset = match args.preset {
        Preset::Standard => TrainConfig::default(),
        Preset::Synthetic => TrainConfig::synthetic(),
    };
    let mut c = match &args.config {
        Some(path) => overlay(&preset, path)?,
        None => preset,
    };
    let o = &args.overrides;
    if let Some(m) = o.method {
        c = c.with_method(m);
    }
    macro_rules! set {
        ($($field:ident <- $flag:ident),*) => { $(if let Some(v) = o.$flag { c.$field = v; })* };
    }
    set!(seed <- seed, frames <- k_frames, variant <- variant, attention <- attention,
         lambda_s <- lambda_s, lambda_r <- lambda_r, lambda_t <- lambda_t, gamma <- gamma,
         epochs <- epochs, lr0 <- lr0, momentum <- momentum, source_batch <- source_batch,
         feature_dim <- feature_dim);
    c.validate()?;
    Ok(c)
}

/// The four splits of a data directory; only the source training split is required.
pub struct Splits {
    pub source_train: DomainDataset,
    pub source_val: Option<DomainDataset>,
    pub target_train: Option<DomainDataset>,
    pub target_val: Option<DomainDataset>,
}

impl Splits {
    pub fn load(dir: &Path) -> Result<Self> {
        let optional = |name: &str| -> Result<Option<DomainDataset>> {
            let path = dir.join(name);
            if path.exists() {
                load_feature_file(&path).map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(Splits {
            source_train: load_feature_file(&dir.join(SOURCE_TRAIN))?,
            source_val: optional(SOURCE_VAL)?,
            target_train: optional(TARGET_TRAIN)?,
            target_val: optional(TARGET_VAL)?,
        })
    }

    pub fn train_data(&self) -> TrainData<'_> {
        TrainData {
            source_train: &self.source_train,
            target_train: self.target_train.as_ref(),
            source_val: self.source_val.as_ref(),
            target_val: self.target_val.as_ref(),
        }
    }
}

/// Trains into `out`: config snapshot first, then one log line per epoch.
fn run_training(config: &TrainConfig, data: &TrainData, out: &Path) -> Result<(Ta3nModel, Option<MetricsReport>)> {
    create_dir(out)?;
    write_json(&out.join("config.json"), config)?;
    let log_path = out.join("metrics.jsonl");
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut model = Ta3nModel::new(config.model_config(data.input_dim(), data.classes()?))?;
    train_with(config, &mut model, data, |m| {
        let line = serde_json::to_string(m).map_err(|e| Error::json(&log_path, e))?;
        writeln!(log, "{line}").and_then(|_| log.flush()).map_err(|e| Error::io(&log_path, e))
    })?;
    save_checkpoint(&model, &out.join("checkpoint.json"))?;
    let report = match (data.source_val, data.target_val) {
        (Some(s), Some(t)) if s.is_labelled() && t.is_labelled() => {
            let report = eval::evaluate(&model, s, t, None)?;
            write_json(&out.join("report.json"), &report)?;
            Some(report)
        }
        _ => None,
    };
    Ok((model, report))
}

pub fn cmd_train(args: &TrainArgs) -> Result<Option<MetricsReport>> {
    let config = resolve_config(&args.config)?;
    let splits = Splits::load(&args.data)?;
    let (_, report) = run_training(&config, &splits.train_data(), &args.out)?;
    if let Some(r) = &report {
        say(&format!("source accuracy {:.4}  target accuracy {:.4}", r.source_accuracy, r.target_accuracy));
    }
    Ok(report)
}

fn reference_accuracy(path: &Path) -> Result<f64> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let value = read_json_value(&file)?;
    value
        .get("target_accuracy")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::Config(format!("{} has no target_accuracy", file.display())))
}

fn check_input_dim(model: &Ta3nModel, ds: &DomainDataset, name: &str) -> Result<()> {
    let want = model.config().input_dim;
    if ds.feature_dim != want {
        return Err(Error::shape(
            "checkpoint",
            format!("{name} has {} feature columns, model expects {want}", ds.feature_dim),
        ));
    }
    Ok(())
}

fn require(split: Option<DomainDataset>, name: &str, dir: &Path) -> Result<DomainDataset> {
    split.ok_or_else(|| Error::invalid(format!("{} is missing {name}", dir.display())))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricsReport> {
    let model = load_checkpoint(&args.checkpoint)?;
    let splits = Splits::load(&args.data)?;
    let source_val = require(splits.source_val, SOURCE_VAL, &args.data)?;
    let target_val = require(splits.target_val, TARGET_VAL, &args.data)?;
    check_input_dim(&model, &source_val, SOURCE_VAL)?;
    check_input_dim(&model, &target_val, TARGET_VAL)?;
    let reference = args.reference.as_deref().map(reference_accuracy).transpose()?;
    let report = eval::evaluate(&model, &source_val, &target_val, reference)?;
    let out = match &args.out {
        Some(p) => p.clone(),
        None => args.checkpoint.parent().unwrap_or(Path::new(".")).join("eval.json"),
    };
    write_json(&out, &report)?;
    say(&serde_json::to_string_pretty(&report).map_err(|e| Error::json(&out, e))?);
    Ok(report)
}

pub fn cmd_grid(args: &GridArgs) -> Result<()> {
    let base = resolve_config(&args.config)?;
    let splits = Splits::load(&args.data)?;
    let data = splits.train_data();
    let candidates = grid_candidates(&base, args.stage, args.joint);
    let report = grid_search(&base, &data, &candidates, args.stage, args.jobs)?;

    create_dir(&args.out)?;
    write_json(&args.out.join("config.json"), &base)?;
    for row in &report.rows {
        let dir = args.out.join("candidates").join(format!("{:03}", row.candidate.index));
        create_dir(&dir)?;
        let mut config = base.clone();
        config.set_weights(row.candidate.weights);
        write_json(&dir.join("config.json"), &config)?;
        let mut lines = String::new();
        for m in &row.history {
            lines.push_str(&serde_json::to_string(m).map_err(|e| Error::json(&dir, e))?);
            lines.push('\n');
        }
        let log = dir.join("metrics.jsonl");
        fs::write(&log, lines).map_err(|e| Error::io(&log, e))?;
    }

    let mut table =
        String::from("index\tswept\tlambda_s\tlambda_r\tlambda_t\tgamma\ttarget_accuracy\tsource_accuracy\tbest\n");
    for (i, row) in report.rows.iter().enumerate() {
        let w = row.candidate.weights;
        let swept = serde_json::to_value(row.candidate.swept).ok().and_then(|v| v.as_str().map(String::from));
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            row.candidate.index,
            swept.unwrap_or_default(),
            w.lambda_s,
            w.lambda_r,
            w.lambda_t,
            w.gamma,
            row.target_accuracy.map(|v| v.to_string()).unwrap_or_else(|| "diverged".into()),
            row.source_accuracy.map(|v| v.to_string()).unwrap_or_default(),
            if i == report.best { "*" } else { "" },
        ));
    }
    let table_path = args.out.join("scores.tsv");
    fs::write(&table_path, table).map_err(|e| Error::io(&table_path, e))?;
    write_json(&args.out.join("grid.json"), &report)?;

    let best = report.best_row();
    let mut best_config = base.clone();
    best_config.set_weights(best.candidate.weights);
    write_json(&args.out.join("best_config.json"), &best_config)?;
    say(&format!(
        "best candidate {} target accuracy {:.4} weights {:?}",
        best.candidate.index,
        best.target_accuracy.unwrap_or(f64::NAN),
        best.candidate.weights
    ));
    Ok(())
}

pub fn cmd_dump_features(args: &DumpArgs) -> Result<()> {
    let model = load_checkpoint(&args.checkpoint)?;
    let splits = Splits::load(&args.data)?;
    create_dir(&args.out)?;
    let named = [
        ("source_train", Some(splits.source_train)),
        ("source_val", splits.source_val),
        ("target_train", splits.target_train),
        ("target_val", splits.target_val),
    ];
    let mut dumped = Vec::new();
    for (name, ds) in named {
        let Some(ds) = ds else { continue };
        check_input_dim(&model, &ds, name)?;
        let feats = eval::feature_dataset(&model, &ds)?;
        save_feature_file(&feats, &args.out.join(format!("{name}.features.feat")))?;
        dumped.push((name, feats));
    }

    let rows: Vec<&crate::autodiff::Tensor> =
        dumped.iter().flat_map(|(_, ds)| ds.records.iter().map(|r| &r.frames)).collect();
    let projection = eval::project_2d(&crate::autodiff::Tensor::vstack(&rows)?)?;
    let mut table = String::from("split\tvideo_id\tdomain\tlabel\tpc1\tpc2\n");
    let mut i = 0;
    for (name, ds) in &dumped {
        for r in &ds.records {
            let domain = serde_json::to_value(r.domain).ok().and_then(|v| v.as_str().map(String::from));
            table.push_str(&format!(
                "{name}\t{}\t{}\t{}\t{}\t{}\n",
                r.video_id,
                domain.unwrap_or_default(),
                r.label.map(|l| l.to_string()).unwrap_or_default(),
                projection.coords.get(i, 0),
                projection.coords.get(i, 1),
            ));
            i += 1;
        }
    }
    let path = args.out.join("projection.tsv");
    fs::write(&path, table).map_err(|e| Error::io(&path, e))?;
    write_json(
        &args.out.join("projection.json"),
        &serde_json::json!({
            "variances": projection.variances,
            "total_variance": projection.total_variance,
            "explained_ratio": projection.explained_ratio(),
        }),
    )
}
