//! End-to-end experiments: data and partition, the training grid, the
//! attack over every trace, and metrics against ground truth.

use std::borrow::Cow;
use std::collections::HashMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{
    build_grouping_graph, kmeans_baseline, omp_reconstruct, Dictionary, OmpOptions, Provenance, ReconstructedActivation,
    RecoveredSet, Recovery,
};
use crate::data::{
    generate_synthetic, load_idx, parse_idx_labels, partition_dirichlet, partition_iid, DataPrior, Dataset, Partition,
    PriorKind, SyntheticKind, SyntheticSpec, Task,
};
use crate::error::{Error, Result};
use crate::metrics::{compute_ratios, v_measure, AttackReportMetrics};
use crate::model::SampleId;
use crate::oracle;
use crate::rng::{self, tag};
use crate::sim::{evaluate, run_training, TrainingConfig, TrainingTrace};
use crate::trace::read_trace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub d: usize,
    pub classes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic(SyntheticData),
    /// IDX image and label files; a uniform random selection is used.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        seed: u64,
    },
}

impl DataSource {
    pub fn default_prior(&self) -> DataPrior {
        match self {
            DataSource::Synthetic(s) => match s.kind {
                SyntheticKind::Binary { .. } | SyntheticKind::Nucleotide => DataPrior::new(PriorKind::Binary),
                SyntheticKind::Grid { levels, .. } => DataPrior::new(PriorKind::Grid { levels }),
            },
            DataSource::Idx { .. } => DataPrior::new(PriorKind::Grid { levels: 256 }),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Split {
    #[default]
    Iid,
    Dirichlet {
        alpha: f64,
    },
}

fn default_name() -> String {
    "experiment".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub data: DataSource,
    #[serde(default)]
    pub split: Split,
    /// Samples the partition draws from; defaults to exactly the clients'
    /// total for IID splits and `classes` times that for Dirichlet splits.
    #[serde(default)]
    pub pool: Option<usize>,
    #[serde(default)]
    pub partition_seed: u64,
    pub training: TrainingConfig,
    /// Defaults to the training learning rate alone.
    #[serde(default)]
    pub learning_rates: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Prior in `grid:256` / `binary` / ... notation; inferred from the data
    /// when absent.
    #[serde(default)]
    pub prior: Option<String>,
    #[serde(default)]
    pub omp: OmpOptions,
    #[serde(default)]
    pub baseline: bool,
}

impl ExperimentConfig {
    pub fn prior(&self) -> Result<DataPrior> {
        match &self.prior {
            Some(p) => p.parse(),
            None => Ok(self.data.default_prior()),
        }
    }

    pub fn learning_rates(&self) -> Vec<f64> {
        if self.learning_rates.is_empty() {
            vec![self.training.learning_rate]
        } else {
            self.learning_rates.clone()
        }
    }

    /// One training config per `(lr, seed)`, lr-major.
    pub fn jobs(&self) -> Vec<TrainingConfig> {
        self.learning_rates()
            .into_iter()
            .flat_map(|lr| {
                self.seeds.iter().map(move |&seed| TrainingConfig {
                    learning_rate: lr,
                    seed,
                    ..self.training.clone()
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        if self.training.clients < 2 {
            return Err(Error::invalid(format!(
                "experiments need at least 2 clients, got {}",
                self.training.clients
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds must be nonempty"));
        }
        if let Split::Dirichlet { alpha } = self.split {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::invalid("dirichlet alpha must be positive"));
            }
        }
        if self.omp.n_max == 0 {
            return Err(Error::invalid("n_max must be at least 1"));
        }
        self.prior()?;
        Ok(())
    }
}

/// Pooled data with ground-truth clients and a disjoint held-out set of the
/// same size as the clients' union.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub partition: Partition,
    pub heldout: Dataset,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let train = &cfg.training;
    let total_train = train.clients * train.samples_per_client;
    let heldout_n = total_train;
    let classes_hint = match &cfg.data {
        DataSource::Synthetic(s) => s.classes,
        DataSource::Idx { .. } => 10,
    };
    let pool = cfg.pool.unwrap_or(match cfg.split {
        Split::Iid => total_train,
        Split::Dirichlet { .. } => classes_hint * total_train,
    });
    if pool < total_train {
        return Err(Error::invalid(format!("pool of {pool} is smaller than the {total_train} client samples")));
    }

    let examples = match &cfg.data {
        DataSource::Synthetic(s) => generate_synthetic(&SyntheticSpec {
            kind: s.kind.clone(),
            d: s.d,
            n: pool + heldout_n,
            classes: s.classes,
            seed: s.seed,
            task: s.task,
        })?,
        DataSource::Idx { images, labels, seed } => {
            let count = parse_idx_labels(&std::fs::read(labels)?)?.len();
            let mut order: Vec<usize> = (0..count).collect();
            order.shuffle(&mut rng::stream(*seed, &[tag::SPLIT]));
            let mut loaded = load_idx(images, labels, Some(&order))?;
            if loaded.len() < pool + heldout_n {
                return Err(Error::invalid(format!(
                    "{} distinct images available, {} needed",
                    loaded.len(),
                    pool + heldout_n
                )));
            }
            loaded.truncate(pool + heldout_n);
            loaded
        }
    };
    let all = Dataset::new(examples)?;
    let (pool_ids, heldout_ids): (Vec<SampleId>, Vec<SampleId>) = {
        let ids: Vec<SampleId> = all.examples().iter().map(|e| e.sample_id).collect();
        (ids[..pool].to_vec(), ids[pool..].to_vec())
    };
    let pool_ds = all.subset(&pool_ids)?;
    let partition = match cfg.split {
        Split::Iid => partition_iid(&pool_ds, train.clients, train.samples_per_client, cfg.partition_seed)?,
        Split::Dirichlet { alpha } => {
            partition_dirichlet(&pool_ds, train.clients, alpha, train.samples_per_client, cfg.partition_seed)?
        }
    };
    let mut dataset = all.subset(&partition.all_ids())?;
    dataset.assign_clients(&partition);
    let heldout = all.subset(&heldout_ids)?;
    Ok(PreparedData {
        dataset,
        partition,
        heldout,
    })
}

/// Traces an attack walks over twice: once to recover samples, once to
/// reconstruct activation sets against the full recovered set.
pub trait TraceSource: Sync {
    fn count(&self) -> usize;
    fn load(&self, i: usize) -> Result<Cow<'_, TrainingTrace>>;
}

impl TraceSource for [TrainingTrace] {
    fn count(&self) -> usize {
        self.len()
    }

    fn load(&self, i: usize) -> Result<Cow<'_, TrainingTrace>> {
        Ok(Cow::Borrowed(&self[i]))
    }
}

impl TraceSource for Vec<TrainingTrace> {
    fn count(&self) -> usize {
        self.len()
    }

    fn load(&self, i: usize) -> Result<Cow<'_, TrainingTrace>> {
        Ok(Cow::Borrowed(&self[i]))
    }
}

/// Trace files read on demand.
pub struct TraceFiles(pub Vec<PathBuf>);

impl TraceSource for TraceFiles {
    fn count(&self) -> usize {
        self.0.len()
    }

    fn load(&self, i: usize) -> Result<Cow<'_, TrainingTrace>> {
        read_trace(&self.0[i]).map(Cow::Owned)
    }
}

/// Recomputes each training when asked; trainings are deterministic.
pub struct Retrain<'a> {
    pub jobs: Vec<TrainingConfig>,
    pub data: &'a PreparedData,
}

impl TraceSource for Retrain<'_> {
    fn count(&self) -> usize {
        self.jobs.len()
    }

    fn load(&self, i: usize) -> Result<Cow<'_, TrainingTrace>> {
        run_training(&self.jobs[i], &self.data.dataset, &self.data.partition).map(Cow::Owned)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GroundTruth<'a> {
    pub dataset: &'a Dataset,
    pub partition: &'a Partition,
}

#[derive(Clone, Debug)]
pub struct AttackOptions {
    pub prior: DataPrior,
    pub omp: OmpOptions,
    pub baseline: bool,
    /// Run the oracle checks; needs ground truth and oracle-logged traces.
    pub oracle: bool,
    pub kmeans_seed: u64,
}

impl AttackOptions {
    pub fn new(prior: DataPrior) -> Self {
        Self {
            prior,
            omp: OmpOptions::default(),
            baseline: false,
            oracle: false,
            kmeans_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub labels: Vec<usize>,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_recovered: f64,
    pub v_normalized: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub decomposition: oracle::DecompositionReport,
    pub first_activation_checks: usize,
    pub first_activation_violations: Vec<(usize, usize, usize, usize)>,
    pub isolated: usize,
    pub isolated_hits: usize,
    pub isolated_recovered: usize,
    pub isolated_max_error: f64,
    /// Recovered vectors that are not a dataset sample.
    pub false_recoveries: usize,
    /// Share of accepted reconstructions equal to the true set.
    pub reconstruction_exactness: f64,
    /// Homogeneity of the grouping built from the true sets.
    pub true_set_homogeneity: f64,
    /// Homogeneity of the attack's grouping, restricted to real samples.
    pub attack_homogeneity: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub traces: usize,
    pub recovered: Vec<Vec<f64>>,
    pub provenance: Vec<Provenance>,
    pub reconstructions: Vec<ReconstructedActivation>,
    pub components: Vec<Vec<usize>>,
    pub sweeps: usize,
    pub p_censored: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<AttackReportMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
}

struct TrueLabels {
    matches: Vec<Option<SampleId>>,
    /// Client of each recovered node that is a real sample.
    clients: Vec<Option<usize>>,
}

impl TrueLabels {
    fn new(recovered: &RecoveredSet, truth: &GroundTruth<'_>) -> Self {
        let matches = oracle::match_recovered(recovered, truth.dataset);
        let lookup = truth.partition.lookup();
        let clients = matches.iter().map(|m| m.and_then(|id| lookup.get(&id).copied())).collect();
        Self { matches, clients }
    }

    /// `(predicted, truth)` over nodes with a known client.
    fn restrict(&self, predicted: &[usize]) -> (Vec<usize>, Vec<usize>) {
        predicted
            .iter()
            .zip(&self.clients)
            .filter_map(|(&p, c)| c.map(|c| (p, c)))
            .unzip()
    }
}

fn labels_of(components: &[Vec<usize>], nodes: usize) -> Vec<usize> {
    let mut out = vec![0; nodes];
    for (c, comp) in components.iter().enumerate() {
        for &i in comp {
            out[i] = c;
        }
    }
    out
}

struct PerTrace {
    reconstructions: Vec<ReconstructedActivation>,
    p_censored: f64,
    oracle: Option<(oracle::DecompositionReport, oracle::FirstActivationReport, oracle::IsolatedReport, Vec<ReconstructedActivation>)>,
}

/// Sample recovery, activation-set reconstruction and grouping over every
/// trace of `source`; metrics and oracle checks when ground truth is given.
pub fn run_attack<S: TraceSource + ?Sized>(
    source: &S,
    truth: Option<GroundTruth<'_>>,
    opts: &AttackOptions,
) -> Result<AttackReport> {
    let n = source.count();
    if n == 0 {
        return Err(Error::invalid("no traces to attack"));
    }
    if opts.oracle && truth.is_none() {
        return Err(Error::invalid("oracle checks need the dataset and partition"));
    }

    let parts: Vec<(usize, RecoveredSet)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let trace = source.load(i)?;
            let view = trace.public();
            let mut acc = Recovery::new(view.input_dim, opts.prior.clone());
            acc.add(&view, i)?;
            Ok((view.input_dim, acc.finish()))
        })
        .collect::<Result<_>>()?;
    let d = parts[0].0;
    let mut acc = Recovery::new(d, opts.prior.clone());
    for (di, part) in parts {
        if di != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: di,
                context: "trace input dimension",
            });
        }
        acc.merge(part)?;
    }
    let recovered = acc.finish();
    let dictionary = Dictionary::new(recovered.extended());
    let labels = truth.as_ref().map(|t| TrueLabels::new(&recovered, t));

    let per_trace: Vec<PerTrace> = (0..n)
        .into_par_iter()
        .map(|i| {
            let trace = source.load(i)?;
            let reconstructions = omp_reconstruct(&trace.public(), i, &recovered, &dictionary, &opts.omp);
            let oracle = match (&truth, &labels) {
                (Some(t), Some(l)) if opts.oracle => Some((
                    oracle::verify_decomposition(&trace, t.dataset)?,
                    oracle::verify_first_activation(&trace)?,
                    oracle::verify_isolated_recovery(&trace, t.dataset, &opts.prior)?,
                    oracle::true_reconstructions(&trace, i, &l.matches)?,
                )),
                _ => None,
            };
            Ok(PerTrace {
                reconstructions,
                p_censored: trace.p_censored(),
                oracle,
            })
        })
        .collect::<Result<_>>()?;

    let p_censored = per_trace.iter().map(|p| p.p_censored).sum::<f64>() / n as f64;
    let mut reconstructions = Vec::new();
    let mut oracle_parts = Vec::new();
    for p in per_trace {
        reconstructions.extend(p.reconstructions);
        if let Some(o) = p.oracle {
            oracle_parts.push(o);
        }
    }
    let graph = build_grouping_graph(&reconstructions, recovered.len());
    let predicted = labels_of(&graph.components, recovered.len());

    let mut report = AttackReport {
        traces: n,
        recovered: recovered.samples.iter().map(|x| x.to_vec()).collect(),
        provenance: recovered.provenance.clone(),
        reconstructions,
        components: graph.components.clone(),
        sweeps: graph.sweeps,
        p_censored,
        ..Default::default()
    };

    let (Some(truth), Some(labels)) = (truth, labels) else {
        return Ok(report);
    };
    let pooled = truth.partition.all_ids().len();
    let client_size = truth.partition.mean_client_size();
    let k = truth.partition.clients;
    let (rho_recovered, rho_matched, rho_component) = compute_ratios(&graph.components, pooled, client_size, k);
    let (pred, true_clients) = labels.restrict(&predicted);
    let (homogeneity, completeness, v_recovered) = if pred.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        v_measure(&pred, &true_clients)
    };
    report.metrics = Some(AttackReportMetrics {
        rho_recovered,
        rho_matched,
        rho_component,
        homogeneity,
        completeness,
        v_recovered,
        v_normalized: rho_recovered * v_recovered,
        p_censored,
    });

    if opts.baseline && recovered.len() >= k {
        let km = kmeans_baseline(recovered.matrix().view(), k, opts.kmeans_seed)?;
        let (pred, true_clients) = labels.restrict(&km);
        let (h, c, v) = if pred.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            v_measure(&pred, &true_clients)
        };
        report.baseline = Some(BaselineReport {
            labels: km,
            homogeneity: h,
            completeness: c,
            v_recovered: v,
            v_normalized: rho_recovered * v,
        });
    } else if opts.baseline {
        report.baseline = Some(BaselineReport::default());
    }

    if opts.oracle {
        let mut s = OracleSummary {
            decomposition: oracle::DecompositionReport {
                replay_exact: true,
                round_max_deviation: Some(0.0),
                ..Default::default()
            },
            ..Default::default()
        };
        let mut true_recs = Vec::new();
        for (i, (dec, first, iso, recs)) in oracle_parts.into_iter().enumerate() {
            let agg = &mut s.decomposition;
            agg.steps += dec.steps;
            agg.batch_max_deviation = agg.batch_max_deviation.max(dec.batch_max_deviation);
            agg.set_mismatches += dec.set_mismatches;
            agg.round_rows += dec.round_rows;
            agg.round_max_deviation = match (agg.round_max_deviation, dec.round_max_deviation) {
                (Some(a), Some(b)) => Some(a.max(b)),
                _ => None,
            };
            agg.replay_exact &= dec.replay_exact;
            agg.freeze_violations += dec.freeze_violations;
            s.first_activation_checks += first.checks;
            s.first_activation_violations
                .extend(first.violations.into_iter().map(|(t, h, k)| (i, t, h, k)));
            s.isolated += iso.isolated;
            s.isolated_hits += iso.hits;
            s.isolated_recovered += iso.recovered;
            s.isolated_max_error = s.isolated_max_error.max(iso.max_error);
            true_recs.extend(recs);
        }
        s.false_recoveries = labels.matches.iter().filter(|m| m.is_none()).count();
        s.reconstruction_exactness = exactness(&report.reconstructions, &true_recs);
        let true_graph = build_grouping_graph(&true_recs, recovered.len());
        let (pred, truth_labels) = labels.restrict(&labels_of(&true_graph.components, recovered.len()));
        s.true_set_homogeneity = if pred.is_empty() { 1.0 } else { v_measure(&pred, &truth_labels).0 };
        s.attack_homogeneity = homogeneity;
        report.oracle = Some(s);
    }
    Ok(report)
}

/// Share of reconstructions whose members equal the true set of the same
/// `(training, t, h)`. True sets not fully recovered count as mismatches.
fn exactness(recs: &[ReconstructedActivation], truth: &[ReconstructedActivation]) -> f64 {
    if recs.is_empty() {
        return 1.0;
    }
    let index: HashMap<(usize, usize, usize), &Vec<usize>> =
        truth.iter().map(|r| ((r.training, r.round, r.neuron), &r.members)).collect();
    let hits = recs
        .iter()
        .filter(|r| index.get(&(r.training, r.round, r.neuron)) == Some(&&r.members))
        .count();
    hits as f64 / recs.len() as f64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    /// Held-out score per `(lr, seed)`, lr-major.
    pub per_training: Vec<f64>,
    /// Mean over seeds of the best score across learning rates.
    pub best: f64,
}

pub fn summarize_accuracy(scores: &[f64], lrs: usize, seeds: usize) -> AccuracySummary {
    let best = if seeds == 0 || lrs == 0 {
        0.0
    } else {
        (0..seeds)
            .map(|s| (0..lrs).map(|l| scores[l * seeds + s]).fold(f64::NEG_INFINITY, f64::max))
            .sum::<f64>()
            / seeds as f64
    };
    AccuracySummary {
        per_training: scores.to_vec(),
        best,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub name: String,
    pub accuracy: AccuracySummary,
    pub attack: AttackReport,
}

/// Traces are kept in memory below this many bytes of iterates and
/// recomputed for the second attack pass above it.
pub const TRACE_MEMORY_BUDGET: usize = 1 << 30;

fn trace_bytes(cfg: &ExperimentConfig, d: usize) -> usize {
    let t = &cfg.training;
    (t.t_max + 1) * t.hidden * (d + 2) * 8 * cfg.jobs().len()
}

/// Trains every `(lr, seed)` of `cfg` and attacks the whole grid.
pub fn run_experiment(cfg: &ExperimentConfig, oracle: bool) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    run_experiment_on(cfg, &data, oracle)
}

pub fn run_experiment_on(cfg: &ExperimentConfig, data: &PreparedData, oracle: bool) -> Result<ExperimentOutcome> {
    let mut jobs = cfg.jobs();
    if oracle {
        for j in &mut jobs {
            j.oracle_logging = true;
        }
    }
    let keep = trace_bytes(cfg, data.dataset.dim()) <= TRACE_MEMORY_BUDGET;
    let trained: Vec<(f64, Option<TrainingTrace>)> = jobs
        .par_iter()
        .map(|c| {
            let mut trace = run_training(c, &data.dataset, &data.partition)?;
            let score = evaluate(trace.final_params(), &data.heldout)?;
            trace.accuracy = Some(score);
            Ok((score, keep.then_some(trace)))
        })
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = trained.iter().map(|t| t.0).collect();
    let accuracy = summarize_accuracy(&scores, cfg.learning_rates().len(), cfg.seeds.len());

    let opts = AttackOptions {
        prior: cfg.prior()?,
        omp: cfg.omp,
        baseline: cfg.baseline,
        oracle,
        kmeans_seed: cfg.partition_seed,
    };
    let truth = Some(GroundTruth {
        dataset: &data.dataset,
        partition: &data.partition,
    });
    let attack = if keep {
        let traces: Vec<TrainingTrace> = trained.into_iter().filter_map(|t| t.1).collect();
        run_attack(&traces, truth, &opts)?
    } else {
        run_attack(&Retrain { jobs, data }, truth, &opts)?
    };
    Ok(ExperimentOutcome {
        name: cfg.name.clone(),
        accuracy,
        attack,
    })
}

/// Summary CSV columns, in order. Bump [`CSV_VERSION`] on any change.
pub const CSV_COLUMNS: [&str; 17] = [
    "version",
    "experiment",
    "axis",
    "axis_value",
    "repetition",
    "rho_recovered",
    "rho_matched",
    "rho_component",
    "homogeneity",
    "completeness",
    "v_recovered",
    "v_normalized",
    "p_censored",
    "best_accuracy",
    "kmeans_v_normalized",
    "recovered",
    "reconstructions",
];

pub const CSV_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub version: u32,
    pub experiment: String,
    pub axis: String,
    pub axis_value: String,
    pub repetition: usize,
    pub rho_recovered: Option<f64>,
    pub rho_matched: Option<f64>,
    pub rho_component: Option<f64>,
    pub homogeneity: Option<f64>,
    pub completeness: Option<f64>,
    pub v_recovered: Option<f64>,
    pub v_normalized: Option<f64>,
    pub p_censored: f64,
    pub best_accuracy: Option<f64>,
    pub kmeans_v_normalized: Option<f64>,
    pub recovered: usize,
    pub reconstructions: usize,
}

impl CsvRow {
    pub fn new(experiment: &str, axis: &str, axis_value: &str, repetition: usize, attack: &AttackReport, best_accuracy: Option<f64>) -> Self {
        let m = attack.metrics;
        Self {
            version: CSV_VERSION,
            experiment: experiment.into(),
            axis: axis.into(),
            axis_value: axis_value.into(),
            repetition,
            rho_recovered: m.map(|m| m.rho_recovered),
            rho_matched: m.map(|m| m.rho_matched),
            rho_component: m.map(|m| m.rho_component),
            homogeneity: m.map(|m| m.homogeneity),
            completeness: m.map(|m| m.completeness),
            v_recovered: m.map(|m| m.v_recovered),
            v_normalized: m.map(|m| m.v_normalized),
            p_censored: attack.p_censored,
            best_accuracy,
            kmeans_v_normalized: attack.baseline.as_ref().map(|b| b.v_normalized),
            recovered: attack.recovered.len(),
            reconstructions: attack.reconstructions.len(),
        }
    }
}

/// Learning rate for the summed loss that matches `mean_lr` on a
/// batch-averaged loss.
pub fn summed_loss_lr(mean_lr: f64, batch_size: usize) -> f64 {
    mean_lr / batch_size as f64
}

/// DNA-like preset: 180 binary indicator features over 60 positions, three
/// classes, 5 clients of 100 samples, 20 trainings at a batch-mean lr of 1.0.
pub fn dna_like() -> ExperimentConfig {
    let lr = summed_loss_lr(1.0, 8);
    ExperimentConfig {
        name: "dna-like".into(),
        data: DataSource::Synthetic(SyntheticData {
            kind: SyntheticKind::Nucleotide,
            d: 180,
            classes: 3,
            seed: 1,
            task: Task::Classification,
        }),
        split: Split::Iid,
        pool: None,
        partition_seed: 0,
        training: TrainingConfig {
            learning_rate: lr,
            ..TrainingConfig::default()
        },
        learning_rates: vec![lr],
        seeds: (0..20).collect(),
        prior: None,
        omp: OmpOptions::default(),
        baseline: false,
    }
}

/// FashionMNIST-scale preset: 784 pixels on the 256-level grid, mostly dark
/// background, ten classes, 5 clients of 100 samples, 20 trainings.
///
/// The batch-mean lr of 0.5 (0.0625 summed) kills most neurons on this
/// stand-in in about half the seeds; 0.02 trains reliably.
pub fn fmnist_like() -> ExperimentConfig {
    let lr = 0.02;
    ExperimentConfig {
        name: "fmnist-like".into(),
        data: DataSource::Synthetic(SyntheticData {
            kind: SyntheticKind::Grid {
                levels: 256,
                noise: 0.35,
                separation: 0.12,
                background: 0.7,
            },
            d: 784,
            classes: 10,
            seed: 1,
            task: Task::Classification,
        }),
        split: Split::Iid,
        pool: None,
        partition_seed: 0,
        training: TrainingConfig {
            learning_rate: lr,
            ..TrainingConfig::default()
        },
        learning_rates: vec![lr],
        seeds: (0..20).collect(),
        prior: None,
        omp: OmpOptions::default(),
        baseline: false,
    }
}

/// `count` learning rates log-spaced over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp())
            .collect(),
    }
}
