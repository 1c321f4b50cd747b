//! Command-line front end: `fit`, `score`, `eval`, `demo two-moons`, `validate-store`.
//!
//! Settings resolve as command-line flags, then the JSON file given with
//! `--config`, then built-in defaults. Exit codes: 0 success, 1 validation
//! error, 2 I/O error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::boxes::{load_monitor, save_monitor};
use crate::clustering::{Algorithm, ClusterConfig, ClusterCountRule, Metric};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, OodSetReport};
use crate::geometry::two_moons::{two_moons_demo, TwoMoonsConfig, WeightSource};
use crate::monitor_vars::{ClusterFeature, ConvFeature, MonitorVarConfig};
use crate::pipeline::fit_monitor;
use crate::scoring::{read_scores_csv, save_scores_csv, score_batch, ScoreTable, Variants};
use crate::store::read_store;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bbas", version, about = "Bounding-box OOD monitors over network activations")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "BBAS_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a monitor on a labelled training store.
    Fit(FitArgs),
    /// Score a store against a fitted monitor.
    Score(ScoreArgs),
    /// AUROC and FPR95 from score files.
    Eval(EvalArgs),
    /// Geometry demonstrations.
    #[command(subcommand)]
    Demo(DemoCommand),
    /// Check a feature store for format errors.
    ValidateStore { store: PathBuf },
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file with defaults for any of the options below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub options: FitOptions,
}

/// Fit settings; every field may also come from the `--config` file under the same name.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Convolutional layers to monitor (comma separated; default: all).
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<String>>,
    /// Per-channel conv features: activation_fraction, channel_min, channel_max.
    #[arg(long, value_delimiter = ',', value_parser = token::<ConvFeature>)]
    pub conv_features: Option<Vec<ConvFeature>>,
    /// Vector layers holding dense preactivations.
    #[arg(long, value_delimiter = ',')]
    pub dense_layers: Option<Vec<String>>,
    /// Leave the penultimate features out of the monitoring vector.
    #[arg(long)]
    #[serde(skip)]
    pub no_penultimate: bool,
    #[arg(skip)]
    pub penultimate: Option<bool>,
    #[arg(long)]
    pub penultimate_layer: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// agglomerative_complete, agglomerative_single, agglomerative_average or kmeans.
    #[arg(long, value_parser = token::<Algorithm>)]
    pub algorithm: Option<Algorithm>,
    /// Shorthand for an agglomerative algorithm: single, complete or average.
    #[arg(long, value_parser = parse_linkage)]
    #[serde(deserialize_with = "linkage_from_str")]
    pub linkage: Option<Algorithm>,
    /// manhattan, euclidean or hamming (default follows the clustering feature).
    #[arg(long, value_parser = token::<Metric>)]
    pub metric: Option<Metric>,
    /// Fixed number of clusters per class (default: ⌊√n⌋).
    #[arg(long)]
    pub clusters: Option<usize>,
    /// activation_fraction, channel_min, channel_max, penultimate or activation_pattern.
    #[arg(long, value_parser = token::<ClusterFeature>)]
    pub cluster_feature: Option<ClusterFeature>,
    /// Drop training samples the network misclassifies.
    #[arg(long = "exclude-misclassified")]
    #[serde(skip)]
    pub exclude_misclassified_flag: bool,
    #[arg(skip)]
    pub exclude_misclassified: Option<bool>,
    /// Drop training samples whose top softmax probability is below this.
    #[arg(long)]
    pub min_confidence: Option<f64>,
    /// Seed for k-means.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub monitor: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated subset of ec, ed, agg_ec, agg_ed, or `all`.
    #[arg(long, default_value = "all")]
    pub variants: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores of in-distribution test samples.
    #[arg(long)]
    pub ind: PathBuf,
    /// OOD score files, as `name=path` or just `path`.
    #[arg(long, required = true)]
    pub ood: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Restrict to these variants (default: every column in the InD file).
    #[arg(long)]
    pub variants: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum DemoCommand {
    /// Activation regions and cluster-wise boxes of a small regression MLP.
    TwoMoons(TwoMoonsArgs),
}

#[derive(Debug, Args)]
pub struct TwoMoonsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, value_delimiter = ',', default_value = "32,32")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub clusters: usize,
    /// Grid points per axis.
    #[arg(long, default_value_t = 500)]
    pub grid: usize,
    /// Train a fresh network instead of loading the bundled weights.
    #[arg(long)]
    pub train: bool,
    #[arg(long, default_value_t = 4000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
}

/// Parses a snake_case token into any serde enum.
fn token<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_linkage(s: &str) -> std::result::Result<Algorithm, String> {
    match s {
        "single" => Ok(Algorithm::AgglomerativeSingle),
        "complete" => Ok(Algorithm::AgglomerativeComplete),
        "average" => Ok(Algorithm::AgglomerativeAverage),
        other => Err(format!("unknown linkage `{other}` (single, complete, average)")),
    }
}

fn linkage_from_str<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<Algorithm>, D::Error> {
    let s = String::deserialize(d)?;
    parse_linkage(&s).map(Some).map_err(serde::de::Error::custom)
}

fn read_config_file(path: &Path) -> Result<FitOptions> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Merges flags over file values over defaults.
pub fn resolve_fit_config(flags: &FitOptions, file: &FitOptions) -> Result<(MonitorVarConfig, ClusterConfig)> {
    let defaults = MonitorVarConfig::default();
    let include_penultimate = if flags.no_penultimate {
        false
    } else {
        file.penultimate.unwrap_or(defaults.include_penultimate)
    };
    let vars = MonitorVarConfig {
        monitored_layers: flags.layers.clone().or_else(|| file.layers.clone()),
        conv_features: flags
            .conv_features
            .clone()
            .or_else(|| file.conv_features.clone())
            .unwrap_or(defaults.conv_features),
        dense_layers: flags
            .dense_layers
            .clone()
            .or_else(|| file.dense_layers.clone())
            .unwrap_or_default(),
        include_penultimate,
        penultimate_layer: flags
            .penultimate_layer
            .clone()
            .or_else(|| file.penultimate_layer.clone()),
        epsilon: flags.epsilon.or(file.epsilon).unwrap_or(defaults.epsilon),
    };
    vars.validate()?;

    let base = ClusterConfig::default();
    let algorithm = match (flags.algorithm, flags.linkage) {
        (Some(a), Some(l)) if a != l => {
            return Err(Error::Config("--algorithm and --linkage disagree".into()));
        }
        (a, l) => a.or(l).or(file.algorithm).or(file.linkage).unwrap_or(base.algorithm),
    };
    let feature = flags.cluster_feature.or(file.cluster_feature).unwrap_or(base.feature);
    let metric = flags.metric.or(file.metric).unwrap_or(if feature.is_binary() {
        Metric::Hamming
    } else if algorithm == Algorithm::Kmeans {
        Metric::Euclidean
    } else {
        base.metric
    });
    let clustering = ClusterConfig {
        algorithm,
        metric,
        count_rule: flags
            .clusters
            .or(file.clusters)
            .map_or(ClusterCountRule::Sqrt, ClusterCountRule::Fixed),
        feature,
        exclude_misclassified: flags.exclude_misclassified_flag || file.exclude_misclassified.unwrap_or(false),
        min_confidence: flags.min_confidence.or(file.min_confidence),
        seed: flags.seed.or(file.seed).unwrap_or(base.seed),
    };
    clustering.validate()?;
    Ok((vars, clustering))
}

fn secs(d: Duration) -> String {
    format!("{:.3} s", d.as_secs_f64())
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => FitOptions::default(),
    };
    let (vars, clustering) = resolve_fit_config(&args.options, &file)?;

    let t = Instant::now();
    let store = read_store(&args.train)?;
    log::info!("Feature loading: {}", secs(t.elapsed()));

    let (monitor, timings) = fit_monitor(&store, &vars, &clustering)?;
    log::info!("Monitoring variables: {}", secs(timings.monitoring_variables));
    log::info!("Bounding-box construction: {}", secs(timings.construction()));
    log::info!("  Clustering: {}", secs(timings.clustering));
    log::info!("  Bounding-box calculation: {}", secs(timings.box_calculation));
    log::info!(
        "{} boxes over {} classes, {} monitoring variables",
        monitor.total_boxes(),
        monitor.num_classes,
        monitor.width()
    );
    save_monitor(&monitor, &args.out)
}

pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let variants = Variants::parse(&args.variants)?;
    let monitor = load_monitor(&args.monitor)?;
    let t = Instant::now();
    let store = read_store(&args.data)?;
    log::info!("Feature loading: {}", secs(t.elapsed()));

    let t = Instant::now();
    let batch = score_batch(&store, &monitor, variants)?;
    let elapsed = t.elapsed();
    let n = batch.records.len().max(1);
    log::info!(
        "Single anomaly score calculation: {:.3} µs per sample ({} samples, {} total)",
        elapsed.as_secs_f64() * 1e6 / n as f64,
        batch.records.len(),
        secs(elapsed)
    );
    save_scores_csv(&batch, &args.out)
}

fn split_ood_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
            (name, path)
        }
    }
}

fn score_column<'a>(table: &'a ScoreTable, variant: &str, file: &Path) -> Result<&'a [f64]> {
    table
        .column(variant)
        .ok_or_else(|| Error::Invalid(format!("{}: missing score column `{variant}`", file.display())))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ind = read_scores_csv(&args.ind)?;
    let variants: Vec<String> = match &args.variants {
        Some(list) => {
            let wanted = Variants::parse(list)?;
            Variants::NAMES
                .iter()
                .filter(|n| match **n {
                    "ec" => wanted.ec,
                    "ed" => wanted.ed,
                    "agg_ec" => wanted.agg_ec,
                    _ => wanted.agg_ed,
                })
                .map(|n| n.to_string())
                .collect()
        }
        None => ind.variant_names().into_iter().map(String::from).collect(),
    };
    let mut sets = Vec::with_capacity(args.ood.len());
    for arg in &args.ood {
        let (name, path) = split_ood_arg(arg);
        let ood = read_scores_csv(&path)?;
        let mut report = OodSetReport {
            name,
            variants: Default::default(),
        };
        for v in &variants {
            let r = evaluate(score_column(&ind, v, &args.ind)?, score_column(&ood, v, &path)?)?;
            log::info!("{}/{v}: AUROC {:.4}, FPR95 {:.4}", report.name, r.auroc, r.fpr95);
            report.variants.insert(v.clone(), r);
        }
        sets.push(report);
    }
    let report = EvalReport::from_sets(sets);
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    std::fs::write(&args.out, text).map_err(|e| Error::io(&args.out, e))
}

pub fn cmd_demo(args: &TwoMoonsArgs) -> Result<()> {
    let cfg = TwoMoonsConfig {
        seed: args.seed,
        n_samples: args.samples,
        hidden_widths: args.hidden.clone(),
        n_clusters: args.clusters,
        grid_resolution: args.grid,
        weights: if args.train {
            WeightSource::Train
        } else {
            WeightSource::Shipped
        },
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        ..Default::default()
    };
    let t = Instant::now();
    let out = two_moons_demo(&cfg, &args.out)?;
    if let Some(loss) = out.training_loss {
        log::info!("Training loss: {loss:.5}");
    }
    log::info!(
        "{} activation patterns in {} clusters, {} boundary segments",
        out.clustering.groups,
        out.clustering.clusters.len(),
        out.boundaries.len()
    );
    let failed = out.fragments.iter().filter(|f| !f.passed).count();
    let worst = out.fragments.iter().map(|f| f.n_b).max().unwrap_or(0);
    log::info!(
        "Fragment bound: {} of {} boxes within 2^n_b (max n_b = {worst})",
        out.fragments.len() - failed,
        out.fragments.len()
    );
    log::info!("Demo written to {} in {}", args.out.display(), secs(t.elapsed()));
    if failed > 0 {
        return Err(Error::Invalid(format!("{failed} boxes exceed the fragment bound")));
    }
    Ok(())
}

pub fn cmd_validate_store(path: &Path) -> Result<()> {
    let store = read_store(path)?;
    let m = store.manifest();
    println!(
        "{}: {} samples, {} classes, labels {}, logits {}",
        path.display(),
        m.num_samples,
        m.num_classes,
        if store.labels().is_some() { "yes" } else { "no" },
        if store.logits().is_some() { "yes" } else { "no" },
    );
    for l in &m.layers {
        println!("  {} {} {:?}", l.name, l.kind.as_str(), l.dims);
    }
    Ok(())
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Score(a) => cmd_score(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Demo(DemoCommand::TwoMoons(a)) => cmd_demo(a),
        Command::ValidateStore { store } => cmd_validate_store(store),
    }
}

/// Runs a parsed command on a pool of `threads` workers (all cores when `None`).
pub fn run(cli: &Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| dispatch(&cli.command)),
        None => dispatch(&cli.command),
    }
}

pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => EXIT_OK,
        Err(e) if e.is_io() => EXIT_IO,
        Err(_) => EXIT_VALIDATION,
    }
}

/// Parses `args`, runs the command, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let result = run(&cli);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}
