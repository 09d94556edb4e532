//! Federated averaging with full participation and an ideal secure sum.

mod log;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Partition};
use crate::defense::{censor_beta, censor_q, DefenseConfig, RoundLedger};
use crate::error::{Error, Result};
use crate::model::{self, Batch, Label, LabeledExample, LossKind, ModelParams, SampleId};
use crate::rng::{self, tag, Rng};

pub use log::{NeuronSets, OracleLog, RoundLog, StepLog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub clients: usize,
    pub samples_per_client: usize,
    pub batch_size: usize,
    pub n_updates: usize,
    pub t_max: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: usize,
    /// Widths of the ReLU layers between the first layer and the linear
    /// output. Empty means a linear head.
    #[serde(default)]
    pub head_hidden: Vec<usize>,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    /// Output width; inferred from the dataset when absent.
    #[serde(default)]
    pub outputs: Option<usize>,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub oracle_logging: bool,
    /// Aggregation weights, normalized to sum to one. Uniform when absent.
    #[serde(default)]
    pub client_weights: Option<Vec<f64>>,
    /// Round `t` uses `learning_rate * lr_decay^(t - 1)`.
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
}

fn default_loss() -> LossKind {
    LossKind::CrossEntropy
}

fn default_decay() -> f64 {
    1.0
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            clients: 5,
            samples_per_client: 100,
            batch_size: 8,
            n_updates: 5,
            t_max: 20,
            learning_rate: 0.5,
            seed: 0,
            hidden: 1000,
            head_hidden: Vec::new(),
            loss: LossKind::CrossEntropy,
            outputs: None,
            defense: DefenseConfig::None,
            oracle_logging: false,
            client_weights: None,
            lr_decay: 1.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::invalid("clients must be at least 1"));
        }
        if self.n_updates == 0 {
            return Err(Error::invalid("n_updates must be at least 1"));
        }
        if self.batch_size == 0 || self.batch_size > self.samples_per_client {
            return Err(Error::invalid(format!(
                "batch_size {} must be in 1..={}",
                self.batch_size, self.samples_per_client
            )));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || !self.lr_decay.is_finite() {
            return Err(Error::invalid("learning rate must be finite and nonnegative"));
        }
        if let Some(w) = &self.client_weights {
            if w.len() != self.clients || w.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::invalid("client_weights needs one positive weight per client"));
            }
        }
        self.defense.validate()
    }

    pub fn round_learning_rate(&self, t: usize) -> f64 {
        if self.lr_decay == 1.0 {
            self.learning_rate
        } else {
            self.learning_rate * self.lr_decay.powi(t as i32 - 1)
        }
    }

    /// Normalized aggregation weights, or `None` for the plain mean.
    pub fn aggregation_weights(&self) -> Option<Vec<f64>> {
        self.client_weights.as_ref().map(|w| {
            let s: f64 = w.iter().sum();
            w.iter().map(|v| v / s).collect()
        })
    }
}

/// Cycles through shuffled passes over a client dataset.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl BatchSampler {
    fn new(n: usize, rng: Rng) -> Self {
        let mut s = Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.pos = 0;
    }

    fn next(&mut self, b: usize) -> &[usize] {
        if self.pos + b > self.order.len() {
            self.reshuffle();
        }
        self.pos += b;
        &self.order[self.pos - b..self.pos]
    }
}

/// Outcome of one client's round.
#[derive(Clone, Debug)]
pub struct LocalUpdate {
    pub end: ModelParams,
    pub batches: Vec<Vec<SampleId>>,
    /// Batch-level activation sets, one entry per step.
    pub sets: Vec<NeuronSets>,
    /// Pooled `|lambda|` per neuron and sample over the round.
    pub ledger: RoundLedger,
}

/// `n_updates` SGD steps from `start` on batches of `client`. Batches come
/// from a per-round shuffle, re-shuffled when fewer than `b` samples remain.
pub fn local_update(
    start: &ModelParams,
    client: &[&LabeledExample],
    config: &TrainingConfig,
    round: usize,
    client_index: usize,
) -> Result<LocalUpdate> {
    if client.len() < config.batch_size {
        return Err(Error::invalid(format!(
            "client {client_index} holds {} samples, fewer than the batch size {}",
            client.len(),
            config.batch_size
        )));
    }
    let lr = config.round_learning_rate(round);
    let mut sampler = BatchSampler::new(
        client.len(),
        rng::stream(config.seed, &[tag::BATCH, round as u64, client_index as u64]),
    );
    let hidden = start.hidden();
    let mut params = start.clone();
    let mut batches = Vec::with_capacity(config.n_updates);
    let mut sets = Vec::with_capacity(config.n_updates);
    let mut ledger = RoundLedger::new(hidden);
    for _ in 0..config.n_updates {
        let idx = sampler.next(config.batch_size);
        let batch = Batch::from_examples(idx.iter().map(|&i| client[i]))?;
        let grad = model::batch_gradient(&params, &batch, config.loss)?;

        let mut lists = vec![Vec::new(); hidden];
        for (i, row) in grad.lambda.axis_iter(Axis(0)).enumerate() {
            for (h, &l) in row.iter().enumerate() {
                if l != 0.0 {
                    lists[h].push(batch.ids[i]);
                    ledger.record(h, batch.ids[i], l);
                }
            }
        }
        for l in &mut lists {
            l.sort_unstable();
        }
        sets.push(NeuronSets::from_lists(&lists));
        batches.push(batch.ids.clone());
        params.apply(-lr, &grad);
    }
    Ok(LocalUpdate {
        end: params,
        batches,
        sets,
        ledger: ledger.finish(),
    })
}

/// Elementwise mean of the client models, accumulated as offsets from the
/// first model so that entries all clients agree on come out unchanged.
pub fn secure_aggregate(params: &[ModelParams]) -> Result<ModelParams> {
    let first = params.first().ok_or_else(|| Error::invalid("nothing to aggregate"))?;
    let mut dw = ndarray::Array2::zeros(first.w.dim());
    let mut db = ndarray::Array1::zeros(first.b.len());
    let mut dphi = ndarray::Array1::zeros(first.phi.len());
    for p in &params[1..] {
        if !p.same_shape(first) {
            return Err(Error::invalid("client models differ in shape"));
        }
        dw += &(&p.w - &first.w);
        db += &(&p.b - &first.b);
        dphi += &(&p.phi - &first.phi);
    }
    let k = params.len() as f64;
    let mut out = first.clone();
    out.w.scaled_add(1.0 / k, &dw);
    out.b.scaled_add(1.0 / k, &db);
    out.phi.scaled_add(1.0 / k, &dphi);
    Ok(out)
}

/// `sum_k weights[k] * params[k]` with weights already normalized.
pub fn weighted_aggregate(params: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = params.first().ok_or_else(|| Error::invalid("nothing to aggregate"))?;
    if weights.len() != params.len() {
        return Err(Error::invalid("one weight per client model required"));
    }
    let mut out = ModelParams::zeros(first.input_dim(), first.hidden(), first.head.clone());
    for (p, &w) in params.iter().zip(weights) {
        if !p.same_shape(first) {
            return Err(Error::invalid("client models differ in shape"));
        }
        out.w.scaled_add(w, &p.w);
        out.b.scaled_add(w, &p.b);
        out.phi.scaled_add(w, &p.phi);
    }
    Ok(out)
}

/// The attacker's view of a training: aggregated iterates and the public
/// dimensions, nothing else.
#[derive(Clone, Copy, Debug)]
pub struct PublicTrace<'a> {
    pub iterates: &'a [ModelParams],
    pub input_dim: usize,
    pub hidden: usize,
    pub t_max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub config: TrainingConfig,
    /// `theta_0 .. theta_{t_max}`.
    pub iterates: Vec<ModelParams>,
    /// Censored neurons per round and client.
    pub censored: Vec<Vec<u32>>,
    /// Held-out score of the final model, when evaluated.
    #[serde(default)]
    pub accuracy: Option<f64>,
    pub oracle: Option<OracleLog>,
}

impl TrainingTrace {
    pub fn public(&self) -> PublicTrace<'_> {
        let first = &self.iterates[0];
        PublicTrace {
            iterates: &self.iterates,
            input_dim: first.input_dim(),
            hidden: first.hidden(),
            t_max: self.iterates.len() - 1,
        }
    }

    pub fn final_params(&self) -> &ModelParams {
        self.iterates.last().expect("trace holds theta_0")
    }

    pub fn censored_events(&self) -> u64 {
        self.censored.iter().flatten().map(|&c| u64::from(c)).sum()
    }

    /// Censored events over `H * t_max * K`.
    pub fn p_censored(&self) -> f64 {
        let denom = self.config.hidden * self.config.t_max * self.config.clients;
        if denom == 0 {
            0.0
        } else {
            self.censored_events() as f64 / denom as f64
        }
    }
}

fn client_examples<'a>(dataset: &'a Dataset, partition: &Partition) -> Result<Vec<Vec<&'a LabeledExample>>> {
    partition
        .members
        .iter()
        .map(|m| {
            m.iter()
                .map(|id| {
                    dataset
                        .get(*id)
                        .ok_or_else(|| Error::invalid(format!("partition references unknown sample {}", id.0)))
                })
                .collect()
        })
        .collect()
}

pub fn output_dim(config: &TrainingConfig, dataset: &Dataset) -> usize {
    match (config.outputs, config.loss) {
        (Some(c), _) => c,
        (None, LossKind::Cox) => 1,
        (None, LossKind::CrossEntropy) => dataset.classes().max(2),
    }
}

/// Runs `t_max` rounds of FedAvg where every client participates.
pub fn run_training(config: &TrainingConfig, dataset: &Dataset, partition: &Partition) -> Result<TrainingTrace> {
    config.validate()?;
    if partition.clients != config.clients {
        return Err(Error::invalid(format!(
            "partition has {} clients, config expects {}",
            partition.clients, config.clients
        )));
    }
    let clients = client_examples(dataset, partition)?;
    let theta0 = ModelParams::init(
        dataset.dim(),
        config.hidden,
        &config.head_hidden,
        output_dim(config, dataset),
        &mut rng::stream(config.seed, &[tag::INIT]),
    );
    let weights = config.aggregation_weights();
    let mut iterates = vec![theta0];
    let mut censored = Vec::with_capacity(config.t_max);
    let mut oracle = config.oracle_logging.then(OracleLog::default);

    for t in 1..=config.t_max {
        let start = iterates.last().expect("theta_0 present");
        let mut ends = Vec::with_capacity(config.clients);
        let mut round_censored = Vec::with_capacity(config.clients);
        for (k, client) in clients.iter().enumerate() {
            let upd = local_update(start, client, config, t, k)?;
            let mut end = upd.end;
            let cut = match config.defense {
                DefenseConfig::None => Vec::new(),
                DefenseConfig::Q { q } => {
                    let sizes: Vec<usize> = (0..config.hidden).map(|h| upd.ledger.neuron(h).len()).collect();
                    censor_q(start, &mut end, &sizes, q)
                }
                DefenseConfig::Beta { beta } => censor_beta(start, &mut end, &upd.ledger, beta),
            };
            round_censored.push(cut.len() as u32);
            if let Some(log) = oracle.as_mut() {
                for (i, (batch, sets)) in upd.batches.into_iter().zip(upd.sets).enumerate() {
                    log.steps.push(StepLog {
                        round: t,
                        client: k,
                        step: i,
                        batch,
                        sets,
                    });
                }
            }
            ends.push(end);
        }
        let next = match &weights {
            Some(w) => weighted_aggregate(&ends, w)?,
            None => secure_aggregate(&ends)?,
        };
        if let Some(log) = oracle.as_mut() {
            let round = round_log(log, t, start, dataset, config.hidden);
            log.rounds.push(round);
        }
        censored.push(round_censored);
        iterates.push(next);
    }
    Ok(TrainingTrace {
        config: config.clone(),
        iterates,
        censored,
        accuracy: None,
        oracle,
    })
}

fn round_log(log: &OracleLog, t: usize, start: &ModelParams, dataset: &Dataset, hidden: usize) -> RoundLog {
    let mut activation = vec![Vec::new(); hidden];
    for s in log.steps.iter().rev().take_while(|s| s.round == t) {
        for (h, set) in activation.iter_mut().enumerate() {
            set.extend_from_slice(s.sets.neuron(h));
        }
    }
    for set in &mut activation {
        set.sort_unstable();
        set.dedup();
    }
    let first_activation = activation
        .iter()
        .enumerate()
        .map(|(h, set)| {
            let w = start.w.row(h);
            set.iter()
                .copied()
                .filter(|id| {
                    let x = &dataset.get(*id).expect("logged sample exists").x;
                    w.dot(x) + start.b[h] > 0.0
                })
                .collect()
        })
        .collect::<Vec<Vec<SampleId>>>();
    RoundLog {
        activation: NeuronSets::from_lists(&activation),
        first_activation: NeuronSets::from_lists(&first_activation),
    }
}

/// One training per `(learning rate, seed)` over the same data and split,
/// learning-rate major. Runs on the current rayon pool.
pub fn run_grid(
    base: &TrainingConfig,
    learning_rates: &[f64],
    seeds: &[u64],
    dataset: &Dataset,
    partition: &Partition,
) -> Result<Vec<TrainingTrace>> {
    run_grid_with(base, learning_rates, seeds, dataset, partition, Ok)
}

/// Like [`run_grid`], reducing each trace with `f` as soon as it finishes.
pub fn run_grid_with<T, F>(
    base: &TrainingConfig,
    learning_rates: &[f64],
    seeds: &[u64],
    dataset: &Dataset,
    partition: &Partition,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(TrainingTrace) -> Result<T> + Sync,
{
    if learning_rates.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("learning-rate and seed grids must be nonempty"));
    }
    let jobs: Vec<TrainingConfig> = learning_rates
        .iter()
        .flat_map(|&lr| {
            seeds.iter().map(move |&seed| TrainingConfig {
                learning_rate: lr,
                seed,
                ..base.clone()
            })
        })
        .collect();
    jobs.par_iter()
        .map(|c| run_training(c, dataset, partition).and_then(&f))
        .collect()
}

/// Classification accuracy, or the concordance index for survival labels.
pub fn evaluate(params: &ModelParams, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let out = model::forward_batch(params, dataset.matrix().view())?;
    match dataset.examples()[0].y {
        Label::Class(_) => {
            let hits = dataset
                .examples()
                .iter()
                .zip(out.axis_iter(Axis(0)))
                .filter(|(e, row)| {
                    let pred = row
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                        .0;
                    e.y == Label::Class(pred)
                })
                .count();
            Ok(hits as f64 / dataset.len() as f64)
        }
        Label::Survival { .. } => Ok(concordance(dataset, &out.column(0).to_vec())),
    }
}

/// Harrell's C: among pairs where the earlier time is an event, the share
/// ranked riskier; ties count half.
fn concordance(dataset: &Dataset, risk: &[f64]) -> f64 {
    let labels: Vec<(f64, bool)> = dataset
        .examples()
        .iter()
        .map(|e| match e.y {
            Label::Survival { time, event } => (time, event),
            Label::Class(_) => (0.0, false),
        })
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &(ti, ei)) in labels.iter().enumerate() {
        if !ei {
            continue;
        }
        for (j, &(tj, _)) in labels.iter().enumerate() {
            if tj > ti {
                den += 1.0;
                if risk[i] > risk[j] {
                    num += 1.0;
                } else if risk[i] == risk[j] {
                    num += 0.5;
                }
            }
        }
    }
    if den == 0.0 {
        0.5
    } else {
        num / den
    }
}
