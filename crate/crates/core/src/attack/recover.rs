use std::collections::HashMap;

use ndarray::{s, Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PublicTrace;
use crate::data::{bits_key, DataPrior};
use crate::error::{Error, Result};

/// Bias updates at or below this magnitude are skipped.
pub const BIAS_EPS: f64 = 1e-12;

/// Where a recovered sample was first seen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub training: usize,
    pub round: usize,
    pub neuron: usize,
}

/// Deduplicated, prior-snapped recovered samples.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveredSet {
    pub samples: Vec<Array1<f64>>,
    pub provenance: Vec<Provenance>,
}

impl RecoveredSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, Array1::len)
    }

    /// Samples as rows.
    pub fn matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len(), self.dim()));
        for (i, x) in self.samples.iter().enumerate() {
            m.row_mut(i).assign(x);
        }
        m
    }

    /// Rows `(x, 1)`.
    pub fn extended(&self) -> Array2<f64> {
        let d = self.dim();
        let mut m = Array2::ones((self.len(), d + 1));
        for (i, x) in self.samples.iter().enumerate() {
            m.slice_mut(s![i, ..d]).assign(x);
        }
        m
    }
}

/// `(W_t^h - W_{t-1}^h) / (b_t^h - b_{t-1}^h)`, or `None` when the bias did
/// not move by more than [`BIAS_EPS`].
pub fn ratio(trace: &PublicTrace<'_>, t: usize, h: usize) -> Option<Array1<f64>> {
    let (prev, cur) = (&trace.iterates[t - 1], &trace.iterates[t]);
    let db = cur.b[h] - prev.b[h];
    if db.abs() <= BIAS_EPS {
        return None;
    }
    Some((&cur.w.row(h) - &prev.w.row(h)) / db)
}

fn candidates(trace: &PublicTrace<'_>, training: usize, prior: &DataPrior) -> Vec<(Provenance, Array1<f64>)> {
    let mut out = Vec::new();
    for t in 1..trace.iterates.len() {
        let (prev, cur) = (&trace.iterates[t - 1], &trace.iterates[t]);
        let mut buf = Array1::zeros(trace.input_dim);
        for h in 0..trace.hidden {
            let db = cur.b[h] - prev.b[h];
            if db.abs() <= BIAS_EPS {
                continue;
            }
            buf.assign(&cur.w.row(h));
            buf -= &prev.w.row(h);
            buf /= db;
            if prior.contains(buf.view()) {
                out.push((
                    Provenance {
                        training,
                        round: t,
                        neuron: h,
                    },
                    prior.snap(buf.view()),
                ));
            }
        }
    }
    out
}

/// Ratios of every `(training, t, h)` that pass the prior, snapped and
/// deduplicated in `(training, t, h)` order.
pub fn recover_samples(traces: &[PublicTrace<'_>], prior: &DataPrior) -> Result<RecoveredSet> {
    let Some(first) = traces.first() else {
        return Ok(RecoveredSet::default());
    };
    if let Some(bad) = traces.iter().find(|t| t.input_dim != first.input_dim) {
        return Err(Error::DimensionMismatch {
            expected: first.input_dim,
            actual: bad.input_dim,
            context: "trace input dimension",
        });
    }
    let found: Vec<Vec<(Provenance, Array1<f64>)>> = traces
        .par_iter()
        .enumerate()
        .map(|(i, t)| candidates(t, i, prior))
        .collect();
    let mut acc = Recovery::new(first.input_dim, prior.clone());
    for (prov, x) in found.into_iter().flatten() {
        acc.insert(prov, x);
    }
    Ok(acc.finish())
}

/// Incremental [`recover_samples`], one trace at a time, for grids whose
/// traces do not fit in memory together. Feeding traces in training order
/// gives the same set.
#[derive(Clone, Debug)]
pub struct Recovery {
    d: usize,
    prior: DataPrior,
    exact: Vec<bool>,
    buckets: HashMap<Vec<u64>, Vec<usize>>,
    set: RecoveredSet,
}

impl Recovery {
    pub fn new(d: usize, prior: DataPrior) -> Self {
        Self {
            d,
            exact: prior.exact_coordinates(d),
            prior,
            buckets: HashMap::new(),
            set: RecoveredSet::default(),
        }
    }

    pub fn add(&mut self, trace: &PublicTrace<'_>, training: usize) -> Result<()> {
        if trace.input_dim != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: trace.input_dim,
                context: "trace input dimension",
            });
        }
        for (prov, x) in candidates(trace, training, &self.prior) {
            self.insert(prov, x);
        }
        Ok(())
    }

    fn insert(&mut self, prov: Provenance, x: Array1<f64>) {
        let key = bits_key(x.iter().zip(&self.exact).filter(|(_, &e)| e).map(|(v, _)| v));
        let bucket = self.buckets.entry(key).or_default();
        if bucket
            .iter()
            .any(|&j| same_continuous(self.set.samples[j].view(), x.view(), &self.exact, self.prior.tolerance))
        {
            return;
        }
        bucket.push(self.set.samples.len());
        self.set.samples.push(x);
        self.set.provenance.push(prov);
    }

    /// Adds an already recovered set, keeping its provenance.
    pub fn merge(&mut self, part: RecoveredSet) -> Result<()> {
        if !part.is_empty() && part.dim() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: part.dim(),
                context: "recovered sample dimension",
            });
        }
        for (x, prov) in part.samples.into_iter().zip(part.provenance) {
            self.insert(prov, x);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn finish(self) -> RecoveredSet {
        self.set
    }
}

fn same_continuous(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>, exact: &[bool], tol: f64) -> bool {
    a.iter()
        .zip(b.iter())
        .zip(exact)
        .all(|((x, y), &e)| e || (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0))
}
