use serde::{Deserialize, Serialize};

use crate::model::SampleId;

/// One sorted sample list per neuron, stored as offsets into a flat array.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronSets {
    offsets: Vec<u32>,
    ids: Vec<SampleId>,
}

impl NeuronSets {
    pub fn from_lists(lists: &[Vec<SampleId>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut ids = Vec::new();
        offsets.push(0);
        for l in lists {
            ids.extend_from_slice(l);
            offsets.push(ids.len() as u32);
        }
        Self { offsets, ids }
    }

    pub(crate) fn from_raw(offsets: Vec<u32>, ids: Vec<SampleId>) -> Option<Self> {
        let ok = offsets.first() == Some(&0)
            && offsets.windows(2).all(|w| w[0] <= w[1])
            && offsets.last().map(|&o| o as usize) == Some(ids.len());
        ok.then_some(Self { offsets, ids })
    }

    pub(crate) fn raw(&self) -> (&[u32], &[SampleId]) {
        (&self.offsets, &self.ids)
    }

    pub fn neurons(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn neuron(&self, h: usize) -> &[SampleId] {
        &self.ids[self.offsets[h] as usize..self.offsets[h + 1] as usize]
    }

    pub fn total(&self) -> usize {
        self.ids.len()
    }
}

/// One local SGD step of one client.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepLog {
    pub round: usize,
    pub client: usize,
    pub step: usize,
    pub batch: Vec<SampleId>,
    /// Batch-level activation set of every neuron.
    pub sets: NeuronSets,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundLog {
    /// `A^h_t`: union of the round's batch-level sets.
    pub activation: NeuronSets,
    /// `Ã^h_{t,0}`: members of `A^h_t` active under the round-start model.
    pub first_activation: NeuronSets,
}

/// Ground truth recorded during training. Client parameters inside a round
/// are not stored; they are reproduced by replaying the logged batches from
/// the round-start iterate.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLog {
    /// Ordered by (round, client, step).
    pub steps: Vec<StepLog>,
    /// `rounds[t - 1]` describes round `t`.
    pub rounds: Vec<RoundLog>,
}

impl OracleLog {
    pub fn round(&self, t: usize) -> &RoundLog {
        &self.rounds[t - 1]
    }

    pub fn steps_of(&self, t: usize, k: usize) -> impl Iterator<Item = &StepLog> {
        self.steps.iter().filter(move |s| s.round == t && s.client == k)
    }

    /// `A^h_{t,k}` for every neuron.
    pub fn client_sets(&self, t: usize, k: usize, hidden: usize) -> Vec<Vec<SampleId>> {
        let mut out = vec![Vec::new(); hidden];
        for s in self.steps_of(t, k) {
            for (h, set) in out.iter_mut().enumerate() {
                set.extend_from_slice(s.sets.neuron(h));
            }
        }
        for set in &mut out {
            set.sort_unstable();
            set.dedup();
        }
        out
    }
}
