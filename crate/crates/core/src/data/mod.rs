//! Datasets, client partitions and data priors.

mod idx;
mod partition;
mod prior;
mod synthetic;

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabeledExample, SampleId};

pub use idx::{load_idx, parse_idx_images, parse_idx_labels};
pub use partition::{partition_dirichlet, partition_iid, Partition};
pub use prior::{Affine, DataPrior, PriorKind, DEFAULT_TOLERANCE};
pub use synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec, Task};

/// A pooled dataset with unique sample ids.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(from = "Vec<LabeledExample>", into = "Vec<LabeledExample>")]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    index: HashMap<SampleId, usize>,
}

impl From<Vec<LabeledExample>> for Dataset {
    fn from(examples: Vec<LabeledExample>) -> Self {
        let index = examples.iter().enumerate().map(|(i, e)| (e.sample_id, i)).collect();
        Self { examples, index }
    }
}

impl From<Dataset> for Vec<LabeledExample> {
    fn from(d: Dataset) -> Self {
        d.examples
    }
}

impl Dataset {
    /// Fails on duplicate ids or inconsistent dimensions.
    pub fn new(examples: Vec<LabeledExample>) -> Result<Self> {
        let ds = Dataset::from(examples);
        if ds.index.len() != ds.examples.len() {
            return Err(Error::invalid("duplicate sample ids"));
        }
        if let Some(first) = ds.examples.first() {
            let d = first.x.len();
            if let Some(bad) = ds.examples.iter().find(|e| e.x.len() != d) {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: bad.x.len(),
                    context: "dataset sample dimension",
                });
            }
        }
        Ok(ds)
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.x.len())
    }

    pub fn get(&self, id: SampleId) -> Option<&LabeledExample> {
        self.index.get(&id).map(|&i| &self.examples[i])
    }

    /// Number of classes (largest class label + 1); 1 for survival data.
    pub fn classes(&self) -> usize {
        self.examples
            .iter()
            .map(|e| match e.y {
                crate::model::Label::Class(c) => c + 1,
                crate::model::Label::Survival { .. } => 1,
            })
            .max()
            .unwrap_or(0)
    }

    /// Sub-dataset restricted to `ids`, keeping their order.
    pub fn subset(&self, ids: &[SampleId]) -> Result<Dataset> {
        let examples = ids
            .iter()
            .map(|id| {
                self.get(*id)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("unknown sample id {}", id.0)))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(examples)
    }

    /// Stamp ground-truth client ids from `partition`.
    pub fn assign_clients(&mut self, partition: &Partition) {
        for e in &mut self.examples {
            e.client_id = partition.client_of(e.sample_id);
        }
    }

    /// Samples as rows.
    pub fn matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.len(), self.dim()));
        for (i, e) in self.examples.iter().enumerate() {
            m.row_mut(i).assign(&e.x);
        }
        m
    }

    /// Number of pairs of samples with identical features.
    pub fn duplicate_pairs(&self) -> usize {
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
        for e in &self.examples {
            *seen.entry(bits_key(e.x.iter())).or_default() += 1;
        }
        seen.values().map(|&c| c * (c - 1) / 2).sum()
    }
}

/// Exact hashing key for a float vector; `-0.0` and `0.0` collide.
pub(crate) fn bits_key<'a>(xs: impl IntoIterator<Item = &'a f64>) -> Vec<u64> {
    xs.into_iter()
        .map(|&v| if v == 0.0 { 0 } else { v.to_bits() })
        .collect()
}
