//! The `cxr` command: synthetic data, splitting, training, evaluation,
//! prediction and the HTTP service behind one binary.

pub mod service;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{IsTerminal, Write as _};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cxr_core::arch::parse_shape;
use cxr_core::data::{
    decode_any, read_split_csv, scan_directory, stratified_split, synth_dataset, write_dataset, write_split_csv, AugmentationPolicy,
    Fraction, ImageFormat, LabeledDataset, SynthConfig,
};
use cxr_core::eval::{auc, confusion, confusion_to_csv, curve_to_csv, report, report_to_csv, roc, ClassificationReport};
use cxr_core::train::{fine_tune, Classifier, TrainConfig};
use cxr_core::weights::{self, export_manifest, import_manifest, init_random_base};
use cxr_core::{build, ArchitectureConfig, DepthPreset, Family, WidthScale};
use serde_json::json;

use crate::service::{verdict, ServiceConfig, DEFAULT_BODY_LIMIT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cxr", version, about = "Chest X-ray COVID screening: data, training, evaluation and serving")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-class dataset as `<out>/<label>/*.png`
    Synth(SynthArgs),
    /// Write a stratified train/test split of a dataset directory
    Split(SplitArgs),
    /// Fine-tune the classification head on the train partition
    Train(TrainArgs),
    /// Evaluate a model: report, confusion matrices and ROC curve
    Eval(EvalArgs),
    /// Classify one image and print the verdict
    Predict(PredictArgs),
    /// Serve POST /detect and GET /health
    Serve(ServeArgs),
    /// Print an architecture's layer table and parameter counts
    Arch(ArchArgs),
    /// Convert a manifest with raw f32 tensor files into a bundle
    Import(ImportArgs),
    /// Write a bundle out as a manifest with raw f32 tensor files
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OutputFormat {
    Png,
    Pgm,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "CXR_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "CXR_PER_CLASS", default_value_t = 200)]
    pub per_class: usize,
    /// Square image side in pixels
    #[arg(long, env = "CXR_SIZE", default_value_t = 64)]
    pub size: usize,
    /// Minimum gap between class mean intensities (0-255 scale)
    #[arg(long, env = "CXR_MARGIN", default_value_t = 60.0)]
    pub margin: f64,
    #[arg(long, env = "CXR_FORMAT", value_enum, default_value_t = OutputFormat::Png)]
    pub format: OutputFormat,
    #[arg(long, env = "CXR_SEED", default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Dataset root containing `covid/` and `normal/`
    #[arg(long, env = "CXR_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "CXR_OUT")]
    pub out: PathBuf,
    /// Train share, as a decimal (`0.8`) or a ratio (`4/5`)
    #[arg(long, env = "CXR_TRAIN_FRACTION", default_value = "0.8")]
    pub train_fraction: Fraction,
    #[arg(long, env = "CXR_SEED", default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ArchSelect {
    #[arg(long, env = "CXR_FAMILY", default_value = "vgg16")]
    pub family: Family,
    #[arg(long, env = "CXR_PRESET", default_value = "desk")]
    pub preset: DepthPreset,
    /// Channel multiplier such as `1/8`; defaults to the preset's
    #[arg(long, env = "CXR_WIDTH_SCALE")]
    pub width_scale: Option<WidthScale>,
    /// Input shape `CxHxW`, `HxW` or a side length; defaults to the preset's
    #[arg(long, env = "CXR_INPUT_SIZE")]
    pub input_size: Option<String>,
}

impl ArchSelect {
    pub fn config(&self) -> anyhow::Result<ArchitectureConfig> {
        let mut cfg = ArchitectureConfig::new(self.family, self.preset);
        if let Some(w) = self.width_scale {
            cfg = cfg.with_width_scale(w);
        }
        if let Some(s) = &self.input_size {
            cfg = cfg.with_input_size(parse_shape(s)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "CXR_DATA")]
    pub data: PathBuf,
    /// Split file from `cxr split`; without it the data is split with `--train-fraction`
    #[arg(long, env = "CXR_SPLIT")]
    pub split: Option<PathBuf>,
    #[arg(long, env = "CXR_TRAIN_FRACTION", default_value = "0.8")]
    pub train_fraction: Fraction,
    /// Output bundle path
    #[arg(long, env = "CXR_OUT")]
    pub out: PathBuf,
    /// Per-epoch history CSV; defaults to `<out>.history.csv`
    #[arg(long, env = "CXR_HISTORY")]
    pub history: Option<PathBuf>,
    /// Start from this bundle's base instead of a seeded random base
    #[arg(long, env = "CXR_BASE")]
    pub base: Option<PathBuf>,
    #[command(flatten)]
    pub arch: ArchSelect,
    #[arg(long, env = "CXR_EPOCHS", default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, env = "CXR_BATCH_SIZE", default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, env = "CXR_LEARNING_RATE", default_value_t = 0.01)]
    pub learning_rate: f32,
    #[arg(long, env = "CXR_MOMENTUM", default_value_t = 0.9)]
    pub momentum: f32,
    /// Train on un-augmented images
    #[arg(long, env = "CXR_NO_AUGMENT")]
    pub no_augment: bool,
    #[arg(long, env = "CXR_SEED", default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, env = "CXR_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "CXR_DATA")]
    pub data: PathBuf,
    /// Evaluate only this split's test partition
    #[arg(long, env = "CXR_SPLIT")]
    pub split: Option<PathBuf>,
    /// Directory for report.csv, confusion.csv, confusion_normalized.csv and roc.csv
    #[arg(long, env = "CXR_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Positive-class probability at which an image is called covid
    #[arg(long, env = "CXR_THRESHOLD", value_parser = parse_threshold)]
    pub threshold: Option<f32>,
    #[arg(long, env = "CXR_JSON")]
    pub json: bool,
    #[arg(long, env = "CXR_SEED", default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, env = "CXR_MODEL")]
    pub model: PathBuf,
    /// PNG, PGM or PPM image
    pub image: PathBuf,
    #[arg(long, env = "CXR_THRESHOLD", value_parser = parse_threshold)]
    pub threshold: Option<f32>,
    #[arg(long, env = "CXR_JSON")]
    pub json: bool,
    #[arg(long, env = "CXR_SEED", default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CXR_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "CXR_BIND", default_value = "127.0.0.1:5000")]
    pub bind: SocketAddr,
    #[arg(long, env = "CXR_THRESHOLD", value_parser = parse_threshold)]
    pub threshold: Option<f32>,
    /// Maximum request body in bytes
    #[arg(long, env = "CXR_BODY_LIMIT", default_value_t = DEFAULT_BODY_LIMIT)]
    pub body_limit: usize,
    /// Answer /detect with the bare verdict text
    #[arg(long, env = "CXR_PLAIN")]
    pub plain: bool,
    /// Allowed CORS origin; repeat for several. Any origin when absent
    #[arg(long = "cors-origin", env = "CXR_CORS_ORIGIN", value_delimiter = ',')]
    pub cors_origins: Vec<String>,
    #[arg(long, env = "CXR_SEED", default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    #[command(flatten)]
    pub arch: ArchSelect,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long, env = "CXR_MANIFEST")]
    pub manifest: PathBuf,
    #[arg(long, env = "CXR_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, env = "CXR_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "CXR_OUT_DIR")]
    pub out_dir: PathBuf,
}

fn parse_threshold(s: &str) -> Result<f32, String> {
    let t: f32 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if t > 0.0 && t <= 1.0 {
        Ok(t)
    } else {
        Err(format!("threshold must lie in (0, 1], got {t}"))
    }
}

/// A failed command, split by who has to fix it.
#[derive(Debug)]
pub enum Failure {
    User(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::User(_) => EXIT_USER,
            Failure::Internal(_) => EXIT_INTERNAL,
        }
    }
}

macro_rules! internal_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Internal(e.into())
            }
        }
    )*};
}

internal_from!(anyhow::Error, cxr_core::WeightsError, cxr_core::ArchError, cxr_core::eval::EvalError);

trait UserContext<T> {
    fn user(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UserContext<T> for Result<T, E> {
    fn user(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::User(e.into()))
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("CXR_LOG").unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .try_init();
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let (kind, e) = match &f {
                Failure::User(e) => ("error", e),
                Failure::Internal(e) => ("internal error", e),
            };
            eprintln!("cxr: {kind}: {e:#}");
            f.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Serve(a) => serve(a),
        Command::Arch(a) => arch(a),
        Command::Import(a) => {
            let bundle = import_manifest(&a.manifest).user()?;
            weights::save(&bundle, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
            println!("{} {}", a.out.display(), bundle.model_id()?);
            Ok(())
        }
        Command::Export(a) => {
            let bundle = weights::load(&a.model).user()?;
            let manifest = export_manifest(&bundle, &a.out_dir).with_context(|| format!("writing {}", a.out_dir.display()))?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

fn stdout_line(s: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{s}").context("writing to stdout")?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let cfg = SynthConfig {
        margin: a.margin,
        format: match a.format {
            OutputFormat::Png => ImageFormat::Png,
            OutputFormat::Pgm => ImageFormat::Pgm,
        },
        ..SynthConfig::new(a.per_class, a.size, a.seed)
    };
    let dataset = synth_dataset(&cfg).user()?;
    write_dataset(&dataset, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    stdout_line(&format!("wrote {} images to {}", dataset.len(), a.out.display()))
}

fn load_dataset(root: &Path) -> Result<LabeledDataset, Failure> {
    let scanned = scan_directory(root).with_context(|| format!("reading dataset {}", root.display())).user()?;
    for w in &scanned.warnings {
        tracing::warn!("skipped {w}");
    }
    Ok(scanned.dataset)
}

fn split(a: SplitArgs) -> Result<(), Failure> {
    let dataset = load_dataset(&a.data)?;
    let plan = stratified_split(&dataset, a.train_fraction, a.seed).user()?;
    write_split_csv(&plan, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    stdout_line(&format!("train {} test {} -> {}", plan.train_ids.len(), plan.test_ids.len(), a.out.display()))
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        momentum: a.momentum,
        seed: a.seed,
        augmentation: if a.no_augment {
            AugmentationPolicy::identity()
        } else {
            AugmentationPolicy {
                seed: a.seed,
                ..AugmentationPolicy::default()
            }
        },
        feature_cache: true,
    };
    config.validate().user()?;
    let base = match &a.base {
        Some(path) => weights::load(path).user()?,
        None => init_random_base(&a.arch.config().user()?, a.seed).user()?,
    };
    let dataset = load_dataset(&a.data)?;
    let plan = match &a.split {
        Some(path) => read_split_csv(path).user()?,
        None => stratified_split(&dataset, a.train_fraction, a.seed).user()?,
    };
    plan.check_against(&dataset).user()?;
    tracing::info!(
        family = %base.architecture.family,
        train = plan.train_ids.len(),
        test = plan.test_ids.len(),
        epochs = config.epochs,
        "training head"
    );
    let (tuned, history) = fine_tune(&base, &dataset, &plan, &config, None).context("training")?;
    for e in &history.epochs {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        tracing::info!(
            "epoch {:>3} train_loss {:.4} train_acc {:.4} test_loss {} test_acc {}",
            e.epoch,
            e.train_loss,
            e.train_accuracy,
            opt(e.test_loss),
            opt(e.test_accuracy)
        );
    }
    weights::save(&tuned, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    history.write_csv(&history_path).context("writing history")?;
    let acc = history.final_test_accuracy().map_or("-".to_string(), |v| format!("{v:.4}"));
    stdout_line(&format!("{} {} test_accuracy {acc}", a.out.display(), tuned.model_id()?))
}

fn load_classifier(path: &Path) -> Result<(Classifier, String), Failure> {
    let bundle = weights::load(path).with_context(|| format!("loading model {}", path.display())).user()?;
    let classifier = Classifier::new(&bundle).user()?;
    Ok((classifier, bundle.model_id()?))
}

struct Evaluation {
    report: ClassificationReport,
    auc: f64,
    json: serde_json::Value,
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let (classifier, model_id) = load_classifier(&a.model)?;
    let dataset = load_dataset(&a.data)?;
    let records: Vec<_> = match &a.split {
        Some(path) => {
            let plan = read_split_csv(path).user()?;
            dataset.select(&plan.test_ids).user()?
        }
        None => dataset.records().iter().collect(),
    };
    if records.is_empty() {
        return Err(Failure::User(anyhow!("nothing to evaluate")));
    }
    let labels = classifier.labels().to_vec();
    let mut truth = Vec::with_capacity(records.len());
    let mut predicted = Vec::with_capacity(records.len());
    let mut scores = Vec::with_capacity(records.len());
    for r in &records {
        let t = labels
            .iter()
            .position(|l| l == r.label.as_str())
            .ok_or_else(|| Failure::User(anyhow!("`{}` has label {} which the model does not know", r.id, r.label)))?;
        let p = classifier.predict_with_threshold(&r.pixels, a.threshold).with_context(|| format!("predicting {}", r.id))?;
        truth.push(t);
        predicted.push(p.class_index);
        scores.push(f64::from(p.positive_probability()));
    }
    let cm = confusion(&truth, &predicted, labels.len())?.with_labels(labels.clone())?;
    let rep = report(&cm)?;
    let positives = truth.iter().filter(|t| **t == 0).count();
    let curve = if positives > 0 && positives < truth.len() {
        Some(roc(&scores, &truth, 0)?)
    } else {
        None
    };
    let area = curve.as_ref().map_or(f64::NAN, auc);
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let write = |name: &str, body: &str| fs::write(dir.join(name), body).with_context(|| format!("writing {name}"));
        write("report.csv", &report_to_csv(&rep)?)?;
        write("confusion.csv", &confusion_to_csv(&cm, false))?;
        write("confusion_normalized.csv", &confusion_to_csv(&cm, true))?;
        if let Some(c) = &curve {
            write("roc.csv", &curve_to_csv(c))?;
        }
    }
    let result = Evaluation {
        json: json!({
            "model_id": model_id,
            "samples": records.len(),
            "accuracy": rep.accuracy.value,
            "auc": curve.as_ref().map(|_| area),
            "labels": labels,
            "confusion": cm.counts(),
            "classes": rep.classes.iter().map(|c| json!({
                "label": c.label,
                "precision": c.precision.value,
                "recall": c.recall.value,
                "f1": c.f1.value,
                "support": c.support,
            })).collect::<Vec<_>>(),
            "macro_avg": {"precision": rep.macro_avg.precision.value, "recall": rep.macro_avg.recall.value, "f1": rep.macro_avg.f1.value},
            "weighted_avg": {"precision": rep.weighted_avg.precision.value, "recall": rep.weighted_avg.recall.value, "f1": rep.weighted_avg.f1.value},
        }),
        report: rep,
        auc: area,
    };
    if a.json {
        stdout_line(&result.json.to_string())
    } else {
        let mut text = result.report.to_text();
        if curve.is_some() {
            let _ = writeln!(text, "\nauc {:.4}", result.auc);
        }
        stdout_line(text.trim_end())
    }
}

fn predict(a: PredictArgs) -> Result<(), Failure> {
    let (classifier, model_id) = load_classifier(&a.model)?;
    let bytes = fs::read(&a.image).with_context(|| format!("reading {}", a.image.display())).user()?;
    let pixels = decode_any(&bytes).with_context(|| format!("decoding {}", a.image.display())).user()?;
    let p = classifier.predict_with_threshold(&pixels, a.threshold).context("predicting")?;
    let message = verdict(&p.label);
    if a.json {
        stdout_line(
            &json!({
                "label": p.label,
                "probability": p.positive_probability(),
                "message": message,
                "model_id": model_id,
            })
            .to_string(),
        )
    } else {
        stdout_line(&message)
    }
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    let bundle = weights::load(&a.model).with_context(|| format!("loading model {}", a.model.display())).user()?;
    let config = ServiceConfig {
        threshold: a.threshold,
        body_limit: a.body_limit,
        plain: a.plain,
        cors_origins: a.cors_origins,
    };
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(service::serve(&bundle, a.bind, &config)).user()
}

fn arch(a: ArchArgs) -> Result<(), Failure> {
    let cfg = a.arch.config().user()?;
    let graph = build(&cfg).user()?;
    let counts = graph.count_parameters()?;
    let mut text = graph.summary()?;
    let _ = writeln!(text, "total {} trainable {} weighted_layers {}", counts.total, counts.trainable, graph.weighted_layer_count());
    stdout_line(text.trim_end())
}
