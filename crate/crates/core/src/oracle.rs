//! Ground-truth checks over oracle logs. Nothing here is reachable from
//! the attack, and gradients are recomputed with separate naive loops.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{ratio, ReconstructedActivation, RecoveredSet};
use crate::data::{bits_key, DataPrior, Dataset};
use crate::error::{Error, Result};
use crate::model::{self, Batch, Label, LabeledExample, LossKind, ModelParams, SampleId, LAMBDA_EPS};
use crate::sim::{secure_aggregate, weighted_aggregate, OracleLog, TrainingTrace};

fn log_of(trace: &TrainingTrace) -> Result<&OracleLog> {
    trace
        .oracle
        .as_ref()
        .ok_or_else(|| Error::invalid("trace was recorded without oracle logging"))
}

/// Per-sample `lambda` for every neuron by explicit loops, each with the
/// sum of the absolute terms it was accumulated from.
fn naive_lambda(params: &ModelParams, xs: &[&LabeledExample], kind: LossKind) -> Vec<Vec<(f64, f64)>> {
    let (hdim, d) = (params.hidden(), params.input_dim());
    let layers = params.head.layers();
    let phi = params.phi.as_slice().expect("contiguous head parameters");
    let mut offsets = Vec::new();
    let mut off = 0;
    for &(fi, fo) in &layers {
        offsets.push(off);
        off += fi * fo + fo;
    }

    // Forward, keeping every layer's pre-activation.
    let mut pres: Vec<Vec<Vec<f64>>> = Vec::with_capacity(xs.len());
    for e in xs {
        let mut first = vec![0.0; hdim];
        for (h, v) in first.iter_mut().enumerate() {
            let mut s = params.b[h];
            for j in 0..d {
                s += params.w[[h, j]] * e.x[j];
            }
            *v = s;
        }
        let mut chain = vec![first];
        for (l, &(fi, fo)) in layers.iter().enumerate() {
            let prev = chain.last().expect("nonempty chain");
            let input: Vec<f64> = prev.iter().map(|&v| v.max(0.0)).collect();
            let mut out = vec![0.0; fo];
            for (o, v) in out.iter_mut().enumerate() {
                let mut s = phi[offsets[l] + fi * fo + o];
                for a in 0..fi {
                    s += phi[offsets[l] + o * fi + a] * input[a];
                }
                *v = s;
            }
            chain.push(out);
        }
        pres.push(chain);
    }

    let outputs: Vec<&Vec<f64>> = pres.iter().map(|c| c.last().expect("output layer")).collect();
    let g_out: Vec<Vec<f64>> = match kind {
        LossKind::CrossEntropy => xs
            .iter()
            .zip(&outputs)
            .map(|(e, o)| {
                let m = o.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let z: f64 = o.iter().map(|v| (v - m).exp()).sum();
                let y = match e.y {
                    Label::Class(c) => c,
                    Label::Survival { .. } => usize::MAX,
                };
                let mut g: Vec<f64> = o.iter().map(|v| (v - m).exp() / z).collect();
                if y < g.len() {
                    g[y] = -g.iter().enumerate().filter(|&(c, _)| c != y).map(|(_, p)| p).sum::<f64>();
                }
                g
            })
            .collect(),
        LossKind::Cox => {
            let tv: Vec<(f64, bool)> = xs
                .iter()
                .map(|e| match e.y {
                    Label::Survival { time, event } => (time, event),
                    Label::Class(_) => (0.0, false),
                })
                .collect();
            let mut g = vec![vec![0.0]; xs.len()];
            let mut any_pair = false;
            for i in 0..xs.len() {
                if !tv[i].1 {
                    continue;
                }
                let at_risk: Vec<usize> = (0..xs.len()).filter(|&j| tv[j].0 >= tv[i].0).collect();
                any_pair |= at_risk.len() > 1;
                let denom: f64 = at_risk.iter().map(|&j| outputs[j][0].exp()).sum();
                for &j in &at_risk {
                    g[j][0] += outputs[j][0].exp() / denom;
                }
                g[i][0] -= 1.0;
            }
            if !any_pair {
                for v in &mut g {
                    v[0] = 0.0;
                }
            }
            g
        }
    };

    // Backward to the first-layer activations, carrying the sum of absolute
    // terms alongside each derivative.
    pres.iter()
        .zip(g_out)
        .map(|(chain, mut g)| {
            let mut bound: Vec<f64> = g.iter().map(|v| v.abs()).collect();
            for l in (0..layers.len()).rev() {
                let (fi, fo) = layers[l];
                let mut g_in = vec![0.0; fi];
                let mut b_in = vec![0.0; fi];
                for a in 0..fi {
                    for o in 0..fo {
                        let w = phi[offsets[l] + o * fi + a];
                        g_in[a] += w * g[o];
                        b_in[a] += w.abs() * bound[o];
                    }
                }
                if l > 0 {
                    for ((gi, bi), &p) in g_in.iter_mut().zip(&mut b_in).zip(&chain[l]) {
                        if p <= 0.0 {
                            *gi = 0.0;
                            *bi = 0.0;
                        }
                    }
                }
                g = g_in;
                bound = b_in;
            }
            (0..hdim)
                .map(|h| {
                    if chain[0][h] > 0.0 && g[h].abs() > LAMBDA_EPS {
                        (g[h], bound[h])
                    } else {
                        (0.0, 0.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// `||a - b||_inf` relative to `||scale||_inf`, where `scale` bounds the
/// magnitude of the summed terms, so cancellation does not inflate it.
fn rel_dev(a: &[f64], b: &[f64], scale: &[f64]) -> f64 {
    let scale = a.iter().chain(b).chain(scale).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub steps: usize,
    /// Max over steps and neurons of `|| grad_h - sum lambda x ||_inf`
    /// relative to the larger of the two, bias included.
    pub batch_max_deviation: f64,
    /// Logged batch-level sets that differ from the naive nonzero-lambda sets.
    pub set_mismatches: usize,
    pub round_rows: usize,
    /// Same for `theta_t - theta_{t-1}` against `-sum_k w_k eta sum lambda x`,
    /// after discounting the rounding of the iterates themselves; `None` when
    /// a defense edited the updates.
    pub round_max_deviation: Option<f64>,
    /// Replaying the logged batches reproduced every iterate bit for bit.
    pub replay_exact: bool,
    /// Neurons that moved inside a round before any batch activated them.
    pub freeze_violations: usize,
}

struct ClientReplay {
    end: ModelParams,
    /// Sum over steps of `lambda * (x, 1)`, one row per neuron.
    sum: Vec<Vec<f64>>,
    /// Same with `|lambda * (x, 1)|`.
    magnitude: Vec<Vec<f64>>,
    steps: usize,
    batch_dev: f64,
    set_mismatches: usize,
    freeze_violations: usize,
}

fn replay_client(trace: &TrainingTrace, dataset: &Dataset, t: usize, k: usize) -> Result<ClientReplay> {
    let log = log_of(trace)?;
    let cfg = &trace.config;
    let start = &trace.iterates[t - 1];
    let (hdim, d) = (start.hidden(), start.input_dim());
    let lr = cfg.round_learning_rate(t);
    let mut params = start.clone();
    let mut sum = vec![vec![0.0; d + 1]; hdim];
    let mut magnitude = vec![vec![0.0; d + 1]; hdim];
    let mut touched = vec![false; hdim];
    let mut out = ClientReplay {
        end: start.clone(),
        sum: Vec::new(),
        magnitude: Vec::new(),
        steps: 0,
        batch_dev: 0.0,
        set_mismatches: 0,
        freeze_violations: 0,
    };
    for step in log.steps_of(t, k) {
        for h in 0..hdim {
            if !touched[h] && (params.w.row(h) != start.w.row(h) || params.b[h].to_bits() != start.b[h].to_bits()) {
                out.freeze_violations += 1;
            }
        }
        let examples: Vec<&LabeledExample> = step
            .batch
            .iter()
            .map(|id| {
                dataset
                    .get(*id)
                    .ok_or_else(|| Error::invalid(format!("logged sample {} missing from dataset", id.0)))
            })
            .collect::<Result<_>>()?;
        let batch = Batch::from_examples(examples.iter().copied())?;
        let grad = model::batch_gradient(&params, &batch, cfg.loss)?;
        let lambda = naive_lambda(&params, &examples, cfg.loss);

        for h in 0..hdim {
            let mut acc = vec![0.0; d + 1];
            let mut mag = vec![0.0; d + 1];
            let mut set: Vec<SampleId> = Vec::new();
            for (i, e) in examples.iter().enumerate() {
                let (l, bound) = lambda[i][h];
                if l == 0.0 {
                    continue;
                }
                set.push(e.sample_id);
                for j in 0..d {
                    acc[j] += l * e.x[j];
                    mag[j] += bound * e.x[j].abs();
                }
                acc[d] += l;
                mag[d] += bound;
            }
            let mut analytic: Vec<f64> = grad.w.row(h).to_vec();
            analytic.push(grad.b[h]);
            out.batch_dev = out.batch_dev.max(rel_dev(&analytic, &acc, &mag));
            set.sort_unstable();
            set.dedup();
            if set.as_slice() != step.sets.neuron(h) {
                out.set_mismatches += 1;
            }
            if !set.is_empty() {
                touched[h] = true;
            }
            for (s, a) in sum[h].iter_mut().zip(&acc) {
                *s += a;
            }
            for (s, a) in magnitude[h].iter_mut().zip(&mag) {
                *s += a;
            }
        }
        params.apply(-lr, &grad);
        out.steps += 1;
    }
    out.end = params;
    out.sum = sum;
    out.magnitude = magnitude;
    Ok(out)
}

/// Replays every logged local step, comparing the analytic first-layer
/// gradient with `sum lambda x` from an independent naive computation, then
/// checks the aggregated round update against the same decomposition.
pub fn verify_decomposition(trace: &TrainingTrace, dataset: &Dataset) -> Result<DecompositionReport> {
    let log = log_of(trace)?;
    let cfg = &trace.config;
    let rounds = trace.iterates.len() - 1;
    if log.rounds.len() != rounds {
        return Err(Error::invalid("oracle log does not cover every round"));
    }
    let defended = cfg.defense.is_active();
    let per_round: Vec<Result<(Vec<ClientReplay>, ModelParams)>> = (1..=rounds)
        .into_par_iter()
        .map(|t| {
            let clients = (0..cfg.clients)
                .map(|k| replay_client(trace, dataset, t, k))
                .collect::<Result<Vec<_>>>()?;
            let ends: Vec<ModelParams> = clients.iter().map(|c| c.end.clone()).collect();
            let agg = match cfg.aggregation_weights() {
                Some(w) => weighted_aggregate(&ends, &w)?,
                None => secure_aggregate(&ends)?,
            };
            Ok((clients, agg))
        })
        .collect();

    let mut report = DecompositionReport {
        replay_exact: true,
        round_max_deviation: (!defended).then_some(0.0),
        ..Default::default()
    };
    let weights = cfg
        .aggregation_weights()
        .unwrap_or_else(|| vec![1.0 / cfg.clients as f64; cfg.clients]);
    for (t, res) in (1..=rounds).zip(per_round) {
        let (clients, agg) = res?;
        for c in &clients {
            report.steps += c.steps;
            report.batch_max_deviation = report.batch_max_deviation.max(c.batch_dev);
            report.set_mismatches += c.set_mismatches;
            report.freeze_violations += c.freeze_violations;
        }
        if !defended && agg != trace.iterates[t] {
            report.replay_exact = false;
        }
        if let Some(dev) = report.round_max_deviation.as_mut() {
            let (prev, cur) = (&trace.iterates[t - 1], &trace.iterates[t]);
            let lr = cfg.round_learning_rate(t);
            let d = prev.input_dim();
            for h in 0..prev.hidden() {
                let mut actual: Vec<f64> = (0..d).map(|j| cur.w[[h, j]] - prev.w[[h, j]]).collect();
                actual.push(cur.b[h] - prev.b[h]);
                let mut predicted = vec![0.0; d + 1];
                let mut scale = vec![0.0; d + 1];
                // Each local step and the aggregation round the iterate once.
                let steps = clients.iter().map(|c| c.steps).max().unwrap_or(0);
                let unit = (steps + 3) as f64 * f64::EPSILON;
                let mut floor: Vec<f64> = (0..d)
                    .map(|j| prev.w[[h, j]].abs().max(cur.w[[h, j]].abs()))
                    .collect();
                floor.push(prev.b[h].abs().max(cur.b[h].abs()));
                for c in &clients {
                    for (f, v) in floor.iter_mut().zip(c.end.w.row(h).iter().chain([&c.end.b[h]])) {
                        *f = f.max(v.abs());
                    }
                }
                for (c, &w) in clients.iter().zip(&weights) {
                    for (p, s) in predicted.iter_mut().zip(&c.sum[h]) {
                        *p -= w * lr * s;
                    }
                    for (p, s) in scale.iter_mut().zip(&c.magnitude[h]) {
                        *p += (w * lr * s).abs();
                    }
                }
                let excess: Vec<f64> = actual
                    .iter()
                    .zip(&predicted)
                    .zip(&floor)
                    .map(|((a, p), f)| ((a - p).abs() - unit * f).max(0.0))
                    .collect();
                *dev = dev.max(rel_dev(&excess, &vec![0.0; d + 1], &scale));
                report.round_rows += 1;
            }
        }
    }
    Ok(report)
}

/// Maps each sample to its client using the logged batches.
fn client_of_samples(log: &OracleLog) -> HashMap<SampleId, usize> {
    let mut map = HashMap::new();
    for s in &log.steps {
        for id in &s.batch {
            map.insert(*id, s.client);
        }
    }
    map
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FirstActivationReport {
    /// `(t, h, k)` triples where client `k` touched neuron `h`.
    pub checks: usize,
    /// Triples where none of client `k`'s samples is in `Ã^h_{t,0}`.
    pub violations: Vec<(usize, usize, usize)>,
    /// `(t, h)` pairs where `Ã^h_{t,0} != A^h_t`.
    pub differing_sets: usize,
}

/// For every round, neuron and client: if the client contributed to
/// `A^h_t`, one of its samples is in `Ã^h_{t,0}`.
pub fn verify_first_activation(trace: &TrainingTrace) -> Result<FirstActivationReport> {
    let log = log_of(trace)?;
    let owner = client_of_samples(log);
    let hidden = trace.iterates[0].hidden();
    let mut report = FirstActivationReport::default();
    for t in 1..=log.rounds.len() {
        let round = log.round(t);
        for h in 0..hidden {
            let full = round.activation.neuron(h);
            let first = round.first_activation.neuron(h);
            if full != first {
                report.differing_sets += 1;
            }
            let mut contributors: Vec<usize> = full.iter().map(|id| owner[id]).collect();
            contributors.sort_unstable();
            contributors.dedup();
            for k in contributors {
                report.checks += 1;
                if !first.iter().any(|id| owner[id] == k) {
                    report.violations.push((t, h, k));
                }
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IsolatedReport {
    /// `(t, h)` with a singleton `A^h_t` and a bias update above threshold.
    pub isolated: usize,
    /// Those whose ratio is within `1e-9` of the sample and in the prior.
    pub hits: usize,
    /// Those whose ratio passes the prior and snaps onto the sample exactly.
    pub recovered: usize,
    pub max_error: f64,
    /// Isolated sets not recovered.
    pub misses: Vec<(usize, usize)>,
}

/// Checks that every isolated sample is returned exactly by the ratio.
pub fn verify_isolated_recovery(trace: &TrainingTrace, dataset: &Dataset, prior: &DataPrior) -> Result<IsolatedReport> {
    let log = log_of(trace)?;
    let view = trace.public();
    let mut report = IsolatedReport::default();
    for t in 1..=log.rounds.len() {
        for h in 0..view.hidden {
            let set = log.round(t).activation.neuron(h);
            if set.len() != 1 {
                continue;
            }
            let Some(r) = ratio(&view, t, h) else { continue };
            report.isolated += 1;
            let x = &dataset
                .get(set[0])
                .ok_or_else(|| Error::invalid("logged sample missing from dataset"))?
                .x;
            let err = (&r - x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            report.max_error = report.max_error.max(err);
            let member = prior.contains(r.view());
            if err < 1e-9 && member {
                report.hits += 1;
            }
            if member && prior.snap(r.view()) == x {
                report.recovered += 1;
            } else {
                report.misses.push((t, h));
            }
        }
    }
    Ok(report)
}

/// Dataset id of each recovered sample, if it is an exact copy of one.
pub fn match_recovered(recovered: &RecoveredSet, dataset: &Dataset) -> Vec<Option<SampleId>> {
    let index: HashMap<Vec<u64>, SampleId> = dataset
        .examples()
        .iter()
        .map(|e| (bits_key(e.x.iter()), e.sample_id))
        .collect();
    recovered
        .samples
        .iter()
        .map(|x| index.get(&bits_key(x.iter())).copied())
        .collect()
}

/// True round-level sets expressed over the recovered set, for every
/// `(t, h)` whose whole set was recovered.
pub fn true_reconstructions(
    trace: &TrainingTrace,
    training: usize,
    matches: &[Option<SampleId>],
) -> Result<Vec<ReconstructedActivation>> {
    let log = log_of(trace)?;
    let position: HashMap<SampleId, usize> = matches
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|id| (id, i)))
        .collect();
    let mut out = Vec::new();
    for t in 1..=log.rounds.len() {
        let round = log.round(t);
        for h in 0..round.activation.neurons() {
            let set = round.activation.neuron(h);
            if set.is_empty() {
                continue;
            }
            let Some(mut members) = set.iter().map(|id| position.get(id).copied()).collect::<Option<Vec<usize>>>() else {
                continue;
            };
            let mut first: Vec<usize> = round
                .first_activation
                .neuron(h)
                .iter()
                .map(|id| position[id])
                .collect();
            members.sort_unstable();
            first.sort_unstable();
            out.push(ReconstructedActivation {
                training,
                round: t,
                neuron: h,
                coefficients: vec![0.0; members.len()],
                members,
                residual: 0.0,
                first_activation: first,
            });
        }
    }
    Ok(out)
}
