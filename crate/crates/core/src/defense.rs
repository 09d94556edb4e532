//! Client-side censoring of first-layer neurons before transmission.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::{ModelParams, SampleId};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DefenseConfig {
    #[default]
    None,
    /// Reset a neuron when `1 <= |A^h_{t,k}| <= q`.
    Q { q: usize },
    /// Reset a neuron when one sample holds at least a `beta` share of its
    /// summed `|lambda|`.
    Beta { beta: f64 },
}

impl DefenseConfig {
    pub fn is_active(&self) -> bool {
        match *self {
            DefenseConfig::None => false,
            DefenseConfig::Q { q } => q > 0,
            DefenseConfig::Beta { .. } => true,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        match *self {
            DefenseConfig::Beta { beta } if !(beta > 0.0 && beta <= 1.0) => {
                Err(Error::invalid(format!("beta must lie in (0, 1], got {beta}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DefenseConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DefenseConfig::None => write!(f, "none"),
            DefenseConfig::Q { q } => write!(f, "q:{q}"),
            DefenseConfig::Beta { beta } => write!(f, "beta:{beta}"),
        }
    }
}

/// `none`, `q:<int>` or `beta:<float>`.
impl FromStr for DefenseConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::invalid(format!("bad defense {s:?}, expected none, q:<int> or beta:<float>"));
        let d = match s.split_once(':') {
            None if s == "none" => DefenseConfig::None,
            Some(("q", v)) => DefenseConfig::Q {
                q: v.parse().map_err(|_| bad())?,
            },
            Some(("beta", v)) => DefenseConfig::Beta {
                beta: v.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Per-neuron `(sample, sum |lambda|)` over one client's round, sorted by
/// sample. A sample seen in several batches appears once.
#[derive(Clone, Debug, Default)]
pub struct RoundLedger {
    entries: Vec<Vec<(SampleId, f64)>>,
}

impl RoundLedger {
    pub fn new(hidden: usize) -> Self {
        Self {
            entries: vec![Vec::new(); hidden],
        }
    }

    pub fn record(&mut self, h: usize, id: SampleId, lambda: f64) {
        self.entries[h].push((id, lambda.abs()));
    }

    /// Merge repeated samples.
    pub fn finish(mut self) -> Self {
        for list in &mut self.entries {
            list.sort_by_key(|&(id, _)| id);
            let mut merged: Vec<(SampleId, f64)> = Vec::with_capacity(list.len());
            for &(id, v) in list.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == id => last.1 += v,
                    _ => merged.push((id, v)),
                }
            }
            *list = merged;
        }
        self
    }

    pub fn neuron(&self, h: usize) -> &[(SampleId, f64)] {
        &self.entries[h]
    }

    pub fn hidden(&self) -> usize {
        self.entries.len()
    }
}

/// Resets every neuron whose client-level activation set has between 1 and
/// `q` members. Returns the censored neurons.
pub fn censor_q(round_start: &ModelParams, end: &mut ModelParams, set_sizes: &[usize], q: usize) -> Vec<usize> {
    let censored: Vec<usize> = set_sizes
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n >= 1 && n <= q)
        .map(|(h, _)| h)
        .collect();
    for &h in &censored {
        end.reset_neuron(h, round_start);
    }
    censored
}

/// Share of the dominant sample in `sum |lambda|`, or 0 for an idle neuron.
pub fn max_share(entries: &[(SampleId, f64)]) -> f64 {
    let total: f64 = entries.iter().map(|e| e.1).sum();
    if total <= 0.0 {
        return 0.0;
    }
    entries.iter().map(|e| e.1).fold(0.0, f64::max) / total
}

/// Resets every neuron where one sample's pooled `|lambda|` share reaches
/// `beta`. Returns the censored neurons.
pub fn censor_beta(round_start: &ModelParams, end: &mut ModelParams, ledger: &RoundLedger, beta: f64) -> Vec<usize> {
    let censored: Vec<usize> = (0..ledger.hidden())
        .filter(|&h| !ledger.neuron(h).is_empty() && max_share(ledger.neuron(h)) >= beta)
        .collect();
    for &h in &censored {
        end.reset_neuron(h, round_start);
    }
    censored
}
