use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const DEFAULT_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriorKind {
    /// Every coordinate in `{k / (levels - 1)}`.
    Grid { levels: u32 },
    /// Every coordinate in `{0, 1}`.
    Binary,
    /// Only the listed coordinates are checked against `{0, 1}`.
    BinarySubset { features: Vec<usize> },
    /// `||x|| = 1`.
    UnitNorm,
}

/// Standardization applied to raw data before training: stored values are
/// `(raw - shift) / scale`. Membership is tested on the raw values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub shift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPrior {
    #[serde(flatten)]
    pub kind: PriorKind,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<Affine>,
}

impl DataPrior {
    pub fn new(kind: PriorKind) -> Self {
        Self {
            kind,
            tolerance: DEFAULT_TOLERANCE,
            affine: None,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_affine(mut self, affine: Affine) -> Self {
        self.affine = Some(affine);
        self
    }

    fn raw(&self, v: f64) -> f64 {
        match self.affine {
            Some(a) => v * a.scale + a.shift,
            None => v,
        }
    }

    fn stored(&self, raw: f64) -> f64 {
        match self.affine {
            Some(a) => (raw - a.shift) / a.scale,
            None => raw,
        }
    }

    fn lattice_levels(&self) -> Option<u32> {
        match self.kind {
            PriorKind::Grid { levels } => Some(levels),
            PriorKind::Binary | PriorKind::BinarySubset { .. } => Some(2),
            PriorKind::UnitNorm => None,
        }
    }

    fn on_lattice(&self, raw: f64, levels: u32) -> bool {
        if !raw.is_finite() {
            return false;
        }
        let top = f64::from(levels - 1);
        let k = (raw * top).round();
        (0.0..=top).contains(&k) && (raw - k / top).abs() < self.tolerance
    }

    fn snap_value(raw: f64, levels: u32) -> f64 {
        let top = f64::from(levels - 1);
        (raw * top).round().clamp(0.0, top) / top
    }

    pub fn contains(&self, x: ArrayView1<'_, f64>) -> bool {
        match &self.kind {
            PriorKind::Grid { .. } | PriorKind::Binary => {
                let levels = self.lattice_levels().unwrap_or(2);
                x.iter().all(|&v| self.on_lattice(self.raw(v), levels))
            }
            PriorKind::BinarySubset { features } => {
                x.iter().all(|v| v.is_finite())
                    && features
                        .iter()
                        .all(|&f| f < x.len() && self.on_lattice(self.raw(x[f]), 2))
            }
            PriorKind::UnitNorm => {
                let norm = x.iter().map(|&v| self.raw(v).powi(2)).sum::<f64>().sqrt();
                norm.is_finite() && (norm - 1.0).abs() < self.tolerance
            }
        }
    }

    /// Project a member onto the exact prior set (lattice rounding, or
    /// normalization for the unit sphere).
    pub fn snap(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        match &self.kind {
            PriorKind::Grid { levels } => x.mapv(|v| self.stored(Self::snap_value(self.raw(v), *levels))),
            PriorKind::Binary => x.mapv(|v| self.stored(Self::snap_value(self.raw(v), 2))),
            PriorKind::BinarySubset { features } => {
                let mut out = x.to_owned();
                for &f in features.iter().filter(|&&f| f < x.len()) {
                    out[f] = self.stored(Self::snap_value(self.raw(x[f]), 2));
                }
                out
            }
            PriorKind::UnitNorm => {
                let raw = x.mapv(|v| self.raw(v));
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                raw.mapv(|v| self.stored(v / norm))
            }
        }
    }

    /// Coordinates that are exact after snapping; the others are compared
    /// with tolerance when deduplicating.
    pub fn exact_coordinates(&self, d: usize) -> Vec<bool> {
        match &self.kind {
            PriorKind::Grid { .. } | PriorKind::Binary => vec![true; d],
            PriorKind::BinarySubset { features } => {
                let mut mask = vec![false; d];
                for &f in features.iter().filter(|&&f| f < d) {
                    mask[f] = true;
                }
                mask
            }
            PriorKind::UnitNorm => vec![false; d],
        }
    }
}

impl fmt::Display for DataPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            PriorKind::Grid { levels } => write!(f, "grid:{levels}")?,
            PriorKind::Binary => write!(f, "binary")?,
            PriorKind::BinarySubset { features } => {
                let list: Vec<String> = features.iter().map(|x| x.to_string()).collect();
                write!(f, "binary-subset:{}", list.join(","))?
            }
            PriorKind::UnitNorm => write!(f, "unit-norm")?,
        }
        if self.tolerance != DEFAULT_TOLERANCE {
            write!(f, "@{}", self.tolerance)?;
        }
        Ok(())
    }
}

/// Parses `grid:256`, `binary`, `binary-subset:0-38,40`, `unit-norm`, each
/// optionally followed by `@<tolerance>`.
impl FromStr for DataPrior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (body, tol) = match s.split_once('@') {
            Some((b, t)) => (
                b,
                t.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad prior tolerance {t:?}")))?,
            ),
            None => (s, DEFAULT_TOLERANCE),
        };
        let (name, arg) = match body.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (body, None),
        };
        let kind = match (name, arg) {
            ("grid", Some(a)) => {
                let levels: u32 = a
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad grid levels {a:?}")))?;
                if levels < 2 {
                    return Err(Error::invalid("grid prior needs at least 2 levels"));
                }
                PriorKind::Grid { levels }
            }
            ("binary", None) => PriorKind::Binary,
            ("binary-subset", Some(a)) => PriorKind::BinarySubset {
                features: parse_index_list(a)?,
            },
            ("unit-norm", None) => PriorKind::UnitNorm,
            _ => return Err(Error::invalid(format!("unknown prior {s:?}"))),
        };
        Ok(DataPrior::new(kind).with_tolerance(tol))
    }
}

fn parse_index_list(s: &str) -> Result<Vec<usize>, Error> {
    let bad = || Error::invalid(format!("bad feature list {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.parse().map_err(|_| bad())?;
                let b: usize = b.parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}
