use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use super::experiment::{run_experiment, ExperimentConfig};
use super::grid::{grid_or_default, run_grid_search};
use super::io::{
    read_json, read_predictions_file, write_json, write_predictions_file, write_sidecar, BagOutput, ModelFile,
    RunRecord, FORMAT_VERSION,
};
use crate::bagcore::io::{
    apply_labels, read_bags_file, read_labels_file, write_bags_file, write_extent_labels, write_rater_labels,
};
use crate::bagcore::{Bag, BagDataset, Instance};
use crate::eval::{evaluate, rank_classifiers, stability_report};
use crate::features::{extract_bag, read_mask, read_volume, write_mask, write_volume, ExtractConfig, FilterBankConfig, QuantileEdges};
use crate::synth::{generate_dataset, generate_volume, simulate_raters, SynthConfig, VolumePreset};
use crate::weak::Method;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "bagwise", version, about = "Bag-level extent prediction with weakly supervised classifiers")]
pub struct Cli {
    /// Worker threads (BAGWISE_JOBS takes precedence).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Patch features from volumes.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Synthetic data.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Fit a classifier with cross-validated grid search.
    Train(TrainArgs),
    /// Instance probabilities, labels and bag extents for new bags.
    Predict(PredictArgs),
    /// ICC and rater agreement of one prediction file.
    Evaluate(EvaluateArgs),
    /// Friedman and Nemenyi tests over several prediction files.
    Rank(RankArgs),
    /// Agreement between replications predicting the same bags.
    Stability(StabilityArgs),
    /// Replicated split, training, evaluation, ranking and stability.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Subcommand)]
pub enum FeaturesCommand {
    Extract(ExtractArgs),
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Bags of Gaussian instances with simulated raters.
    Generate(GenerateArgs),
    /// A CT-like volume with lesions filling a target fraction.
    Volume(VolumeArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub volume: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub patches: usize,
    #[arg(long, default_value_t = 11.0)]
    pub side_mm: f64,
    #[arg(long, default_value_t = 16)]
    pub bins: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub scales: Vec<f64>,
    #[arg(long)]
    pub seed: u64,
    /// Histogram edges to apply; fitted on this volume when absent.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Where to write the fitted edges.
    #[arg(long)]
    pub out_edges: Option<PathBuf>,
    /// Bag id for the rows (default: volume file stem).
    #[arg(long)]
    pub bag_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out_bags: PathBuf,
    #[arg(long)]
    pub out_labels: PathBuf,
    #[arg(long)]
    pub out_truth: PathBuf,
}

#[derive(Debug, Args)]
pub struct VolumeArgs {
    #[arg(long)]
    pub preset: Option<PathBuf>,
    #[arg(long)]
    pub fraction: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out_volume: PathBuf,
    #[arg(long)]
    pub out_mask: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub cv_folds: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub bags: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n_boot: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long, num_args = 2.., required = true)]
    pub pred: Vec<PathBuf>,
    /// Classifier names (default: prediction file stems).
    #[arg(long, value_delimiter = ',')]
    pub names: Vec<String>,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[arg(long, num_args = 2.., required = true)]
    pub pred: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub bags: PathBuf,
    /// Training labels (rater or extent CSV).
    #[arg(long)]
    pub labels: PathBuf,
    /// Extent labels to evaluate against instead of `--labels`.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

fn paths(ps: &[PathBuf]) -> Value {
    Value::from(ps.iter().map(|p| p.display().to_string()).collect::<Vec<_>>())
}

fn create_file(path: &Path) -> Result<std::fs::File> {
    crate::bagcore::io::create(path)
}

fn features_extract(a: &ExtractArgs) -> Result<()> {
    let volume = read_volume(&a.volume)?;
    let mask = read_mask(&a.mask)?;
    let config = ExtractConfig {
        patches: a.patches,
        side_mm: a.side_mm,
        bank: FilterBankConfig {
            scales: a.scales.clone(),
            bins: a.bins,
        },
        seed: a.seed,
    };
    let edges: Option<QuantileEdges> = a.edges.as_deref().map(read_json).transpose()?;
    let (features, fitted) = extract_bag(&volume, &mask, &config, edges.as_ref())?;
    let id = a.bag_id.clone().unwrap_or_else(|| stem(&a.volume));
    let instances = features.into_iter().enumerate().map(|(j, f)| Instance::new(j.to_string(), f)).collect();
    let dataset = BagDataset::new(vec![Bag::new(id, instances)?])?;
    write_bags_file(&dataset, &a.out)?;
    let run = RunRecord::new(
        "features extract",
        Some(a.seed),
        json!({
            "volume": a.volume.display().to_string(),
            "mask": a.mask.display().to_string(),
            "patches": a.patches,
            "side_mm": a.side_mm,
            "bins": a.bins,
            "scales": a.scales,
            "edges": a.edges.as_ref().map(|p| p.display().to_string()),
            "bag_id": a.bag_id,
        }),
    );
    write_sidecar(&a.out, &run)?;
    if let Some(p) = &a.out_edges {
        write_json(&json!({ "run": run, "edges": fitted }), p)?;
    }
    Ok(())
}

fn synth_generate(a: &GenerateArgs) -> Result<()> {
    let mut config: SynthConfig = match &a.config {
        Some(p) => read_json(p).map_err(|e| Error::config(e.to_string()))?,
        None => SynthConfig::default(),
    };
    config.seed = a.seed;
    let (dataset, truth) = generate_dataset(&config)?;
    write_bags_file(&dataset, &a.out_bags)?;
    let labels = create_file(&a.out_labels)?;
    if config.n_raters == 0 {
        write_extent_labels(&truth.extents(), labels)?;
    } else {
        let raters = simulate_raters(&truth, config.confusion, config.n_raters, crate::seed::derive_str(a.seed, "raters"))?;
        write_rater_labels(&raters, labels)?;
    }
    truth.write_csv(create_file(&a.out_truth)?)?;
    let run = RunRecord::new("synth generate", Some(a.seed), serde_json::to_value(&config)?);
    for p in [&a.out_bags, &a.out_labels, &a.out_truth] {
        write_sidecar(p, &run)?;
    }
    Ok(())
}

fn synth_volume(a: &VolumeArgs) -> Result<()> {
    let preset: VolumePreset = match &a.preset {
        Some(p) => read_json(p).map_err(|e| Error::config(e.to_string()))?,
        None => VolumePreset::default(),
    };
    let (volume, mask, reached) = generate_volume(&preset, a.fraction, a.seed)?;
    write_volume(&a.out_volume, &volume)?;
    write_mask(&a.out_mask, &mask, preset.spacing_mm)?;
    let run = RunRecord::new(
        "synth volume",
        Some(a.seed),
        json!({ "preset": preset, "fraction": a.fraction, "lesion_fraction": reached }),
    );
    write_sidecar(&a.out_volume, &run)
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut dataset = read_bags_file(&a.train)?;
    let labels = read_labels_file(&a.labels)?;
    apply_labels(&mut dataset, &labels)?;
    let grid_value: Option<Value> = a.grid.as_deref().map(read_json).transpose().map_err(|e| Error::config(e.to_string()))?;
    let grid = grid_or_default(a.method, grid_value.as_ref())?;
    let (model, search) = run_grid_search(a.method, &grid, dataset.bags(), a.cv_folds, a.seed)?;
    let run = RunRecord::new(
        "train",
        Some(a.seed),
        json!({
            "method": a.method,
            "train": a.train.display().to_string(),
            "labels": a.labels.display().to_string(),
            "grid": grid,
            "cv_folds": a.cv_folds,
        }),
    );
    write_json(
        &ModelFile {
            format_version: FORMAT_VERSION,
            run,
            grid_search: Some(search),
            model,
        },
        &a.out,
    )
}

fn predict(a: &PredictArgs) -> Result<()> {
    let file: ModelFile = read_json(&a.model)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::data(format!("unsupported model format version {}", file.format_version)));
    }
    let dataset = read_bags_file(&a.bags)?;
    let outputs: Vec<BagOutput> = dataset.bags().iter().map(|b| BagOutput::predict(&file.model, b)).collect::<Result<_>>()?;
    write_predictions_file(&outputs, &a.out)?;
    let run = RunRecord::new(
        "predict",
        file.run.seed,
        json!({ "model": a.model.display().to_string(), "bags": a.bags.display().to_string(), "model_run": file.run }),
    );
    write_sidecar(&a.out, &run)
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let preds = read_predictions_file(&a.pred)?;
    let labels = read_labels_file(&a.labels)?;
    let report = evaluate(&preds, &labels, a.n_boot, a.seed)?;
    let run = RunRecord::new(
        "evaluate",
        Some(a.seed),
        json!({ "pred": a.pred.display().to_string(), "labels": a.labels.display().to_string(), "n_boot": a.n_boot }),
    );
    write_json(&json!({ "run": run, "report": report }), &a.out)
}

fn rank_cmd(a: &RankArgs) -> Result<()> {
    let names: Vec<String> = if a.names.is_empty() {
        a.pred.iter().map(|p| stem(p)).collect()
    } else if a.names.len() == a.pred.len() {
        a.names.clone()
    } else {
        return Err(Error::config("--names needs one name per prediction file"));
    };
    let preds = a.pred.iter().map(|p| read_predictions_file(p)).collect::<Result<Vec<_>>>()?;
    let labels = read_labels_file(&a.labels)?;
    let report = rank_classifiers(&names, &preds, &labels, a.alpha)?;
    let run = RunRecord::new(
        "rank",
        None,
        json!({ "pred": paths(&a.pred), "names": names, "labels": a.labels.display().to_string(), "alpha": a.alpha }),
    );
    write_json(&json!({ "run": run, "report": report }), &a.out)
}

fn stability_cmd(a: &StabilityArgs) -> Result<()> {
    let preds = a.pred.iter().map(|p| read_predictions_file(p)).collect::<Result<Vec<_>>>()?;
    let report = stability_report(&preds)?;
    let run = RunRecord::new("stability", None, json!({ "pred": paths(&a.pred) }));
    write_json(&json!({ "run": run, "report": report }), &a.out)
}

fn experiment_cmd(a: &ExperimentArgs) -> Result<()> {
    let config: ExperimentConfig = match &a.config {
        Some(p) => read_json(p).map_err(|e| Error::config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    let dataset = read_bags_file(&a.bags)?;
    let labels = read_labels_file(&a.labels)?;
    let reference = a.reference.as_deref().map(read_labels_file).transpose()?;
    let report = run_experiment(&dataset, &labels, reference.as_ref(), &config, a.seed)?;
    let run = RunRecord::new(
        "experiment",
        Some(a.seed),
        json!({
            "bags": a.bags.display().to_string(),
            "labels": a.labels.display().to_string(),
            "reference": a.reference.as_ref().map(|p| p.display().to_string()),
            "experiment": config,
        }),
    );
    let dir = &a.out_dir;
    write_json(&json!({ "run": run, "report": report }), &dir.join("report.json"))?;
    type Writer = fn(&super::ExperimentReport, std::fs::File) -> Result<()>;
    let tables: [(&str, Writer); 5] = [
        ("icc.csv", |r, f| r.write_icc_csv(f)),
        ("agreement.csv", |r, f| r.write_agreement_csv(f)),
        ("stability.csv", |r, f| r.write_stability_csv(f)),
        ("ranks.csv", |r, f| r.write_ranks_csv(f)),
        ("thresholds.csv", |r, f| r.write_thresholds_csv(f)),
    ];
    for (name, write) in tables {
        let path = dir.join(name);
        write(&report, create_file(&path)?)?;
        write_sidecar(&path, &run)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Features(FeaturesCommand::Extract(a)) => features_extract(a).map_err(|e| e.in_stage("features extract")),
        Command::Synth(SynthCommand::Generate(a)) => synth_generate(a).map_err(|e| e.in_stage("synth generate")),
        Command::Synth(SynthCommand::Volume(a)) => synth_volume(a).map_err(|e| e.in_stage("synth volume")),
        Command::Train(a) => train(a).map_err(|e| e.in_stage("train")),
        Command::Predict(a) => predict(a).map_err(|e| e.in_stage("predict")),
        Command::Evaluate(a) => evaluate_cmd(a).map_err(|e| e.in_stage("evaluate")),
        Command::Rank(a) => rank_cmd(a).map_err(|e| e.in_stage("rank")),
        Command::Stability(a) => stability_cmd(a).map_err(|e| e.in_stage("stability")),
        Command::Experiment(a) => experiment_cmd(a).map_err(|e| e.in_stage("experiment")),
    }
}

/// Worker count: BAGWISE_JOBS, then `--jobs`, then rayon's default.
pub fn resolve_jobs(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("BAGWISE_JOBS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::config(format!("BAGWISE_JOBS must be a positive integer, got `{v}`"))),
        _ => match flag {
            Some(0) => Err(Error::config("--jobs must be positive")),
            other => Ok(other),
        },
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let result = resolve_jobs(cli.jobs).and_then(|jobs| {
        if let Some(n) = jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        }
        run(&cli)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
