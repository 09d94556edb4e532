use std::fs;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use fedlab::experiment::{
    prepare_data, run_experiment_on, AccuracySummary, BaselineReport, CsvRow, ExperimentConfig, OracleSummary, Split,
};
use fedlab::metrics::AttackReportMetrics;
use serde::{Deserialize, Serialize};

use crate::files::{read_json, write_json};
use crate::SweepArgs;

fn one() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    base: ExperimentConfig,
    axis: String,
    values: Vec<f64>,
    #[serde(default = "one")]
    repetitions: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    BatchSize,
    Hidden,
    LearningRate,
    TMax,
    Trainings,
    NUpdates,
    Clients,
    SamplesPerClient,
    Alpha,
}

impl Axis {
    const NAMES: [(&'static str, Axis); 9] = [
        ("batch_size", Axis::BatchSize),
        ("hidden", Axis::Hidden),
        ("learning_rate", Axis::LearningRate),
        ("t_max", Axis::TMax),
        ("trainings", Axis::Trainings),
        ("n_updates", Axis::NUpdates),
        ("clients", Axis::Clients),
        ("samples_per_client", Axis::SamplesPerClient),
        ("alpha", Axis::Alpha),
    ];

    fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(_, a)| *a == self).expect("every axis is named").0
    }

    /// Sets the axis to `v` in `cfg`.
    pub fn apply(self, cfg: &mut ExperimentConfig, v: f64) -> Result<()> {
        let count = || -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                bail!("axis {} needs positive integers, got {v}", self.name())
            }
        };
        let t = &mut cfg.training;
        match self {
            Axis::BatchSize => t.batch_size = count()?,
            Axis::Hidden => t.hidden = count()?,
            Axis::TMax => t.t_max = count()?,
            Axis::NUpdates => t.n_updates = count()?,
            Axis::Clients => t.clients = count()?,
            Axis::SamplesPerClient => t.samples_per_client = count()?,
            Axis::Trainings => cfg.seeds = (0..count()? as u64).collect(),
            Axis::LearningRate => {
                t.learning_rate = v;
                cfg.learning_rates = vec![v];
            }
            Axis::Alpha => cfg.split = Split::Dirichlet { alpha: v },
        }
        Ok(())
    }
}

impl FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match Self::NAMES.iter().find(|(n, _)| *n == s) {
            Some((_, a)) => Ok(*a),
            None => {
                let known: Vec<&str> = Self::NAMES.iter().map(|(n, _)| *n).collect();
                bail!("unknown axis {s:?}; expected one of {}", known.join(", "))
            }
        }
    }
}

/// Repetition `r` shifts every training seed by `r` times their count and
/// the partition seed by `r`.
fn repeat(cfg: &mut ExperimentConfig, r: usize) {
    let shift = (r * cfg.seeds.len()) as u64;
    for s in &mut cfg.seeds {
        *s += shift;
    }
    cfg.partition_seed += r as u64;
}

#[derive(Serialize)]
struct Point {
    axis_value: f64,
    repetition: usize,
    accuracy: AccuracySummary,
    metrics: Option<AttackReportMetrics>,
    baseline: Option<BaselineReport>,
    oracle: Option<OracleSummary>,
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let file: SweepFile = read_json(&args.config)?;
    let axis: Axis = file.axis.parse()?;
    if file.values.is_empty() {
        bail!("sweep needs at least one value");
    }
    if file.repetitions == 0 {
        bail!("repetitions must be at least 1");
    }
    let mut base = file.base;
    args.train.apply(&mut base);
    args.attack.apply(&mut base);

    let mut configs = Vec::new();
    for &v in &file.values {
        for r in 0..file.repetitions {
            let mut cfg = base.clone();
            axis.apply(&mut cfg, v)?;
            repeat(&mut cfg, r);
            cfg.validate().with_context(|| format!("{} = {v}", axis.name()))?;
            configs.push((v, r, cfg));
        }
    }

    let out = &args.out.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let csv_path = out.join("summary.csv");
    let mut csv = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    let mut points = Vec::new();
    for (v, r, cfg) in configs {
        let data = prepare_data(&cfg)?;
        let outcome = run_experiment_on(&cfg, &data, args.attack.oracle)?;
        let row = CsvRow::new(&cfg.name, axis.name(), &v.to_string(), r, &outcome.attack, Some(outcome.accuracy.best));
        csv.serialize(&row)?;
        csv.flush()?;
        eprintln!(
            "{} = {v} rep {r}: rho_recovered {:.4} v_normalized {:.4}",
            axis.name(),
            row.rho_recovered.unwrap_or(0.0),
            row.v_normalized.unwrap_or(0.0)
        );
        points.push(Point {
            axis_value: v,
            repetition: r,
            accuracy: outcome.accuracy,
            metrics: outcome.attack.metrics,
            baseline: outcome.attack.baseline,
            oracle: outcome.attack.oracle,
        });
    }
    write_json(&out.join("points.json"), &points)
}
