use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::{Label, SampleId};
use crate::rng::{self, tag};

/// Assignment of samples to clients. Client datasets keep the listed order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub clients: usize,
    pub members: Vec<Vec<SampleId>>,
}

impl Partition {
    pub fn new(members: Vec<Vec<SampleId>>) -> Result<Self> {
        let p = Self {
            clients: members.len(),
            members,
        };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if self.members.iter().any(|m| m.is_empty()) {
            return Err(Error::invalid("every client needs at least one sample"));
        }
        let mut seen = std::collections::HashSet::new();
        for id in self.members.iter().flatten() {
            if !seen.insert(*id) {
                return Err(Error::invalid(format!("sample {} assigned twice", id.0)));
            }
        }
        Ok(())
    }

    /// Every partition sample exists in `dataset` and every dataset sample is
    /// assigned.
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        self.check()?;
        let assigned: usize = self.members.iter().map(Vec::len).sum();
        if let Some(id) = self.members.iter().flatten().find(|id| dataset.get(**id).is_none()) {
            return Err(Error::invalid(format!("partition references unknown sample {}", id.0)));
        }
        if assigned != dataset.len() {
            return Err(Error::invalid(format!(
                "partition covers {assigned} of {} samples",
                dataset.len()
            )));
        }
        Ok(())
    }

    pub fn client_of(&self, id: SampleId) -> Option<usize> {
        self.members.iter().position(|m| m.contains(&id))
    }

    /// `sample -> client` lookup table.
    pub fn lookup(&self) -> HashMap<SampleId, usize> {
        self.members
            .iter()
            .enumerate()
            .flat_map(|(k, m)| m.iter().map(move |&id| (id, k)))
            .collect()
    }

    pub fn all_ids(&self) -> Vec<SampleId> {
        self.members.iter().flatten().copied().collect()
    }

    pub fn mean_client_size(&self) -> f64 {
        self.members.iter().map(Vec::len).sum::<usize>() as f64 / self.clients.max(1) as f64
    }
}

/// Shuffle and deal `per_client` samples to each of `clients`. The pooled
/// dataset must hold at least `clients * per_client` samples.
pub fn partition_iid(dataset: &Dataset, clients: usize, per_client: usize, seed: u64) -> Result<Partition> {
    if clients == 0 || per_client == 0 {
        return Err(Error::invalid("clients and per_client must be positive"));
    }
    if dataset.len() < clients * per_client {
        return Err(Error::invalid(format!(
            "{} samples cannot fill {clients} clients of {per_client}",
            dataset.len()
        )));
    }
    let mut ids: Vec<SampleId> = dataset.examples().iter().map(|e| e.sample_id).collect();
    ids.shuffle(&mut rng::stream(seed, &[tag::PARTITION]));
    Partition::new(ids.chunks(per_client).take(clients).map(<[SampleId]>::to_vec).collect())
}

/// Label-skewed split: each client draws label proportions
/// `q ~ Dirichlet(alpha * 1_L)` and receives `floor(q_l * per_client)`
/// samples of label `l`, with the remainder going to its most probable
/// labels. Samples are drawn without replacement from shared label pools.
pub fn partition_dirichlet(dataset: &Dataset, clients: usize, alpha: f64, per_client: usize, seed: u64) -> Result<Partition> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if clients == 0 || per_client == 0 {
        return Err(Error::invalid("clients and per_client must be positive"));
    }
    let mut rng = rng::stream(seed, &[tag::PARTITION]);
    let mut pools: BTreeMap<usize, Vec<SampleId>> = BTreeMap::new();
    for e in dataset.examples() {
        match e.y {
            Label::Class(c) => pools.entry(c).or_default().push(e.sample_id),
            Label::Survival { .. } => return Err(Error::invalid("dirichlet split needs class labels")),
        }
    }
    let labels = pools.keys().next_back().map_or(0, |&c| c + 1);
    let mut pools: Vec<Vec<SampleId>> = (0..labels).map(|c| pools.remove(&c).unwrap_or_default()).collect();
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    let mut members = Vec::with_capacity(clients);
    for _ in 0..clients {
        let q = dirichlet(alpha, labels, &mut rng);
        let counts = label_counts(&q, per_client);
        let mut client = Vec::with_capacity(per_client);
        for (label, &count) in counts.iter().enumerate() {
            let pool = &mut pools[label];
            if pool.len() < count {
                return Err(Error::Partition {
                    label,
                    alpha,
                    clients,
                    requested: count,
                    available: pool.len(),
                });
            }
            client.extend(pool.drain(pool.len() - count..));
        }
        client.shuffle(&mut rng);
        members.push(client);
    }
    Partition::new(members)
}

/// Floors plus remainder to the most probable labels.
fn label_counts(q: &[f64], n: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = q.iter().map(|&p| (p * n as f64).floor() as usize).collect();
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    let mut missing = n.saturating_sub(counts.iter().sum());
    for &l in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        counts[l] += 1;
        missing -= 1;
    }
    counts
}

/// Symmetric Dirichlet draw computed in log space, so tiny `alpha` does not
/// underflow every component to zero.
fn dirichlet<R: Rng>(alpha: f64, dims: usize, rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = (0..dims)
        .map(|_| {
            if alpha < 1.0 {
                // Gamma(a) = Gamma(a + 1) * U^(1/a)
                let g = Gamma::new(alpha + 1.0, 1.0).expect("positive shape").sample(rng);
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                g.ln() + u.ln() / alpha
            } else {
                Gamma::new(alpha, 1.0).expect("positive shape").sample(rng).ln()
            }
        })
        .collect();
    let m = logs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let w: Vec<f64> = logs.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}
