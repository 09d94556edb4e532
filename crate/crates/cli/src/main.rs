use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fedlab::attack::OmpOptions;
use fedlab::data::{DataPrior, Dataset, Partition};
use fedlab::defense::DefenseConfig;
use fedlab::experiment::{
    prepare_data, run_attack, run_experiment_on, summarize_accuracy, AccuracySummary, AttackOptions, CsvRow,
    ExperimentConfig, GroundTruth, TraceFiles,
};
use fedlab::model::LabeledExample;
use fedlab::sim::{evaluate, run_training};
use fedlab::trace::write_trace;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

mod files;
mod sweep;

use files::{read_json, write_csv, write_json};

/// Federated-learning lab: train FedAvg grids, attack the aggregated
/// iterates, sweep one axis at a time.
#[derive(Parser)]
#[command(name = "fedlab", version)]
struct Cli {
    /// Worker threads for training and attack grids.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every (lr, seed) of a config and write one trace per training.
    Train(TrainArgs),
    /// Recover samples and group them by client from trace files.
    Attack(AttackArgs),
    /// Train and attack while varying one axis.
    Sweep(SweepArgs),
    /// Train and attack one config in memory.
    Run(RunArgs),
    /// Print a bundled config: `dna-like` or `fmnist-like`.
    Preset { name: String },
}

#[derive(Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, env = "FEDLAB_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainFlags {
    /// Client-side censoring, `q:<int>` or `beta:<float>`; overrides the config.
    #[arg(long, value_parser = parse_defense)]
    defense: Option<DefenseConfig>,
}

#[derive(Args)]
struct AttackFlags {
    /// Data prior, e.g. `grid:256`, `binary`, `unit-norm`; inferred when absent.
    #[arg(long)]
    prior: Option<String>,
    /// Largest activation set OMP reconstructs.
    #[arg(long)]
    nmax: Option<usize>,
    /// Also cluster the recovered samples with K-means.
    #[arg(long)]
    baseline: bool,
    /// Log ground truth during training and attach the verification report.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    out: OutArg,
    #[command(flatten)]
    train: TrainFlags,
    /// Log ground-truth activation sets in the traces.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct AttackArgs {
    /// Trace files or directories holding them.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Directory with `dataset.json` and `partition.json`; looked up next to
    /// the traces when absent.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Experiment id written to the CSV.
    #[arg(long, default_value = "attack")]
    name: String,
    #[command(flatten)]
    out: OutArg,
    #[command(flatten)]
    attack: AttackFlags,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep file: a base config, one axis and its values.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    out: OutArg,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    attack: AttackFlags,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    out: OutArg,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    attack: AttackFlags,
}

fn parse_defense(s: &str) -> Result<DefenseConfig, String> {
    s.parse().map_err(|e: fedlab::Error| e.to_string())
}

impl TrainFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(d) = self.defense {
            cfg.training.defense = d;
        }
    }
}

impl AttackFlags {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(p) = &self.prior {
            cfg.prior = Some(p.clone());
        }
        if let Some(n) = self.nmax {
            cfg.omp.n_max = n;
        }
        cfg.baseline |= self.baseline;
    }
}

pub(crate) fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = read_json(path)?;
    cfg.validate()
        .with_context(|| format!("invalid config {}", path.display()))?;
    Ok(cfg)
}

#[derive(Serialize, Deserialize)]
struct AccuracyFile {
    learning_rates: Vec<f64>,
    seeds: Vec<u64>,
    #[serde(flatten)]
    summary: AccuracySummary,
}

fn trace_name(lr_index: usize, seed: u64) -> String {
    format!("lr{lr_index:02}-seed{seed}.fltrace")
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    args.train.apply(&mut cfg);
    cfg.validate()?;
    let out = &args.out.out;
    let data = prepare_data(&cfg)?;
    let trace_dir = out.join("traces");
    fs::create_dir_all(&trace_dir).with_context(|| format!("creating {}", trace_dir.display()))?;
    write_json(&out.join("config.json"), &cfg)?;
    write_json(&out.join("dataset.json"), &data.dataset)?;
    write_json(&out.join("partition.json"), &data.partition)?;
    write_json(&out.join("heldout.json"), &data.heldout)?;

    let seeds = cfg.seeds.len();
    let jobs = cfg.jobs();
    let scores: Vec<f64> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, job)| {
            let mut job = job.clone();
            job.oracle_logging |= args.oracle;
            let mut trace = run_training(&job, &data.dataset, &data.partition)?;
            let score = evaluate(trace.final_params(), &data.heldout)?;
            trace.accuracy = Some(score);
            let path = trace_dir.join(trace_name(i / seeds, job.seed));
            write_trace(&path, &trace).with_context(|| format!("writing {}", path.display()))?;
            Ok(score)
        })
        .collect::<Result<_>>()?;
    let lrs = cfg.learning_rates();
    let summary = summarize_accuracy(&scores, lrs.len(), seeds);
    println!(
        "trained {} models into {}; best accuracy {:.4} (mean over {} seeds of the best of {} learning rates)",
        scores.len(),
        trace_dir.display(),
        summary.best,
        seeds,
        lrs.len()
    );
    write_json(
        &out.join("accuracy.json"),
        &AccuracyFile {
            learning_rates: lrs,
            seeds: cfg.seeds.clone(),
            summary,
        },
    )
}

/// Trace files in argument order; directories contribute their `.fltrace`
/// files sorted by name.
fn collect_traces(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            found.retain(|f| f.extension().is_some_and(|e| e == "fltrace"));
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!("no trace files found");
    }
    Ok(out)
}

fn find_truth(explicit: Option<&Path>, first_trace: &Path) -> Option<PathBuf> {
    if let Some(dir) = explicit {
        return Some(dir.to_path_buf());
    }
    first_trace
        .ancestors()
        .skip(1)
        .take(2)
        .find(|d| d.join("dataset.json").is_file() && d.join("partition.json").is_file())
        .map(Path::to_path_buf)
}

fn load_truth(dir: &Path) -> Result<(Dataset, Partition)> {
    let examples: Vec<LabeledExample> = read_json(&dir.join("dataset.json"))?;
    let dataset = Dataset::new(examples)?;
    let partition: Partition = read_json(&dir.join("partition.json"))?;
    let partition = Partition::new(partition.members)?;
    partition.validate(&dataset)?;
    Ok((dataset, partition))
}

fn attack(args: AttackArgs) -> Result<()> {
    let files = collect_traces(&args.traces)?;
    let truth_dir = find_truth(args.truth.as_deref(), &files[0]);
    let truth = truth_dir.as_deref().map(load_truth).transpose()?;
    if args.attack.oracle && truth.is_none() {
        bail!("--oracle needs dataset.json and partition.json (see --truth)");
    }
    let prior: DataPrior = match &args.attack.prior {
        Some(p) => p.parse()?,
        None => infer_prior(truth_dir.as_deref())?,
    };
    let mut opts = AttackOptions::new(prior);
    opts.omp = OmpOptions {
        n_max: args.attack.nmax.unwrap_or(OmpOptions::default().n_max),
        ..OmpOptions::default()
    };
    if opts.omp.n_max == 0 {
        bail!("--nmax must be at least 1");
    }
    opts.baseline = args.attack.baseline;
    opts.oracle = args.attack.oracle;

    let source = TraceFiles(files);
    let report = run_attack(
        &source,
        truth.as_ref().map(|(dataset, partition)| GroundTruth { dataset, partition }),
        &opts,
    )?;
    let best = truth_dir
        .map(|d| d.join("accuracy.json"))
        .filter(|p| p.is_file())
        .map(|p| read_json::<AccuracyFile>(&p))
        .transpose()?
        .map(|a| a.summary.best);
    let row = CsvRow::new(&args.name, "none", "", 0, &report, best);
    let out = &args.out.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("report.json"), &report)?;
    write_csv(&out.join("summary.csv"), &[row])?;
    print_summary(&report);
    Ok(())
}

/// The prior of the `config.json` that `train` left next to the traces,
/// else the 256-level grid.
fn infer_prior(truth_dir: Option<&Path>) -> Result<DataPrior> {
    if let Some(cfg) = truth_dir.map(|d| d.join("config.json")).filter(|p| p.is_file()) {
        return Ok(load_config(&cfg)?.prior()?);
    }
    Ok("grid:256".parse()?)
}

fn print_summary(report: &fedlab::experiment::AttackReport) {
    println!(
        "{} traces: {} samples recovered, {} reconstructions, {} components",
        report.traces,
        report.recovered.len(),
        report.reconstructions.len(),
        report.components.len()
    );
    if let Some(m) = &report.metrics {
        println!(
            "rho_recovered {:.4} rho_matched {:.4} homogeneity {:.4} v_normalized {:.4} p_censored {:.4}",
            m.rho_recovered, m.rho_matched, m.homogeneity, m.v_normalized, m.p_censored
        );
    }
    if let Some(b) = &report.baseline {
        println!("k-means v_normalized {:.4}", b.v_normalized);
    }
    if let Some(o) = &report.oracle {
        println!(
            "oracle: batch deviation {:.2e}, first-activation violations {}, isolated {}/{} recovered",
            o.decomposition.batch_max_deviation,
            o.first_activation_violations.len(),
            o.isolated_recovered,
            o.isolated
        );
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    args.train.apply(&mut cfg);
    args.attack.apply(&mut cfg);
    cfg.validate()?;
    let data = prepare_data(&cfg)?;
    let outcome = run_experiment_on(&cfg, &data, args.attack.oracle)?;
    let out = &args.out.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let row = CsvRow::new(&cfg.name, "none", "", 0, &outcome.attack, Some(outcome.accuracy.best));
    write_json(&out.join("report.json"), &outcome)?;
    write_csv(&out.join("summary.csv"), &[row])?;
    println!("best accuracy {:.4}", outcome.accuracy.best);
    print_summary(&outcome.attack);
    Ok(())
}

fn preset(name: &str) -> Result<()> {
    let cfg = match name {
        "dna-like" => fedlab::experiment::dna_like(),
        "fmnist-like" => fedlab::experiment::fmnist_like(),
        _ => bail!("unknown preset {name:?}; expected dna-like or fmnist-like"),
    };
    println!("{}", serde_json::to_string_pretty(&cfg)?);
    Ok(())
}

/// 3 for filesystem failures, 2 for everything the user can fix in the
/// inputs.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
        match cause.downcast_ref::<fedlab::Error>() {
            Some(fedlab::Error::Io(_)) => return 3,
            Some(fedlab::Error::Json(e)) if e.is_io() => return 3,
            _ => {}
        }
        if let Some(e) = cause.downcast_ref::<csv::Error>() {
            if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                return 3;
            }
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Attack(a) => attack(a),
        Command::Sweep(a) => sweep::sweep(a),
        Command::Run(a) => run(a),
        Command::Preset { name } => preset(&name),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
