//! Desk-scale stand-ins for the binary and image datasets.

use std::collections::HashSet;

use ndarray::Array1;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Label, LabeledExample, SampleId};
use crate::rng::{self, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Independent class-conditional Bernoulli features with mean density
    /// around `density`.
    Binary {
        #[serde(default = "default_density")]
        density: f64,
    },
    /// DNA-like: `d / 3` positions, each one of four symbols encoded as the
    /// indicator triples 100, 010, 001, 000. Class-conditional symbol
    /// frequencies at a fraction of the positions.
    Nucleotide,
    /// Class-conditional Gaussian blobs quantized onto `{k / (levels - 1)}`.
    Grid {
        #[serde(default = "default_levels")]
        levels: u32,
        /// Per-pixel noise standard deviation.
        #[serde(default = "default_noise")]
        noise: f64,
        /// Scale of class-specific prototype offsets.
        #[serde(default = "default_separation")]
        separation: f64,
        /// Share of pixels that are dark background in the shared prototype.
        #[serde(default = "default_background")]
        background: f64,
    },
}

fn default_density() -> f64 {
    0.25
}
fn default_levels() -> u32 {
    256
}
fn default_noise() -> f64 {
    0.35
}
fn default_background() -> f64 {
    0.7
}
fn default_separation() -> f64 {
    0.12
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    #[default]
    Classification,
    /// Right-censored survival times drawn from a proportional-hazards model
    /// on the features.
    Survival,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub d: usize,
    pub n: usize,
    pub classes: usize,
    pub seed: u64,
    #[serde(default)]
    pub task: Task,
}

/// Draws `n` pairwise-distinct samples with ids `0..n`, each a member of the
/// matching data prior by construction.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<LabeledExample>> {
    if spec.n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if spec.classes == 0 || spec.d == 0 {
        return Err(Error::invalid("d and classes must be positive"));
    }
    let mut rng = rng::stream(spec.seed, &[tag::DATA]);
    let sampler = Sampler::new(spec, &mut rng)?;

    let budget = 100 * spec.n + 1000;
    let mut attempts = 0;
    let mut seen: HashSet<Vec<u16>> = HashSet::with_capacity(spec.n);
    let mut out = Vec::with_capacity(spec.n);
    while out.len() < spec.n {
        if attempts == budget {
            return Err(Error::Generation(format!(
                "only {} distinct samples after {budget} draws (d={}, n={})",
                out.len(),
                spec.d,
                spec.n
            )));
        }
        attempts += 1;
        let class = out.len() % spec.classes;
        let codes = sampler.draw(class, &mut rng);
        if !seen.insert(codes.clone()) {
            continue;
        }
        let x = Array1::from_iter(codes.iter().map(|&c| sampler.decode(c)));
        out.push(LabeledExample {
            x,
            y: Label::Class(class),
            sample_id: SampleId(out.len() as u32),
            client_id: None,
        });
    }

    if spec.task == Task::Survival {
        attach_survival(&mut out, &mut rng);
    }
    Ok(out)
}

enum Sampler {
    Binary { probs: Vec<Vec<f64>> },
    Nucleotide { freqs: Vec<Vec<[f64; 4]>> },
    Grid { levels: u32, noise: f64, means: Vec<Vec<f64>> },
}

impl Sampler {
    fn new<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Result<Self> {
        let d = spec.d;
        match spec.kind {
            SyntheticKind::Binary { density } => {
                if !(0.0..1.0).contains(&density) || density == 0.0 {
                    return Err(Error::invalid("binary density must be in (0, 1)"));
                }
                let base: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..1.8) * density).collect();
                let probs = (0..spec.classes)
                    .map(|_| {
                        base.iter()
                            .map(|&p| {
                                let p = if rng.random_bool(0.3) { rng.random_range(0.05..0.95) } else { p };
                                p.clamp(0.01, 0.99)
                            })
                            .collect()
                    })
                    .collect();
                Ok(Sampler::Binary { probs })
            }
            SyntheticKind::Nucleotide => {
                if d % 3 != 0 {
                    return Err(Error::invalid("nucleotide data needs d divisible by 3"));
                }
                let positions = d / 3;
                let shared: Vec<[f64; 4]> = (0..positions).map(|_| random_simplex(rng, 4.0)).collect();
                let freqs = (0..spec.classes)
                    .map(|_| {
                        shared
                            .iter()
                            .map(|&f| if rng.random_bool(0.3) { random_simplex(rng, 0.7) } else { f })
                            .collect()
                    })
                    .collect();
                Ok(Sampler::Nucleotide { freqs })
            }
            SyntheticKind::Grid {
                levels,
                noise,
                separation,
                background,
            } => {
                if levels < 2 {
                    return Err(Error::invalid("grid needs at least 2 levels"));
                }
                if !(0.0..=1.0).contains(&background) {
                    return Err(Error::invalid("grid background share must be in [0, 1]"));
                }
                let base: Vec<f64> = (0..d)
                    .map(|_| {
                        if rng.random_bool(background) {
                            -0.5
                        } else {
                            rng.random_range(0.1..0.9)
                        }
                    })
                    .collect();
                let means = (0..spec.classes)
                    .map(|_| {
                        base.iter()
                            .map(|&m| {
                                let z: f64 = StandardNormal.sample(rng);
                                m + separation * z
                            })
                            .collect()
                    })
                    .collect();
                Ok(Sampler::Grid { levels, noise, means })
            }
        }
    }

    /// Integer lattice codes of one sample.
    fn draw<R: Rng>(&self, class: usize, rng: &mut R) -> Vec<u16> {
        match self {
            Sampler::Binary { probs } => probs[class].iter().map(|&p| u16::from(rng.random_bool(p))).collect(),
            Sampler::Nucleotide { freqs } => {
                let mut codes = Vec::with_capacity(freqs[class].len() * 3);
                for f in &freqs[class] {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut symbol = 3;
                    for (s, p) in f.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            symbol = s;
                            break;
                        }
                    }
                    codes.extend((0..3).map(|j| u16::from(j == symbol)));
                }
                codes
            }
            Sampler::Grid { levels, noise, means } => {
                let top = f64::from(levels - 1);
                let normal = Normal::new(0.0, *noise).expect("finite noise");
                // Per-sample brightness shifts the whole image.
                let shift = normal.sample(rng) * 0.5;
                means[class]
                    .iter()
                    .map(|&m| {
                        let v: f64 = (m + shift + normal.sample(rng)).clamp(0.0, 1.0);
                        (v * top).round() as u16
                    })
                    .collect()
            }
        }
    }

    fn decode(&self, code: u16) -> f64 {
        match self {
            Sampler::Binary { .. } | Sampler::Nucleotide { .. } => f64::from(code),
            Sampler::Grid { levels, .. } => f64::from(code) / f64::from(levels - 1),
        }
    }
}

fn random_simplex<R: Rng>(rng: &mut R, concentration: f64) -> [f64; 4] {
    let gamma = rand_distr::Gamma::new(concentration, 1.0).expect("positive concentration");
    let mut v = [0.0; 4];
    for x in &mut v {
        *x = gamma.sample(rng).max(1e-12);
    }
    let s: f64 = v.iter().sum();
    v.map(|x| x / s)
}

fn attach_survival<R: Rng>(examples: &mut [LabeledExample], rng: &mut R) {
    let d = examples[0].x.len();
    let beta: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let raw: Vec<f64> = examples
        .iter()
        .map(|e| e.x.iter().zip(&beta).map(|(a, b)| a * b).sum())
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let sd = (raw.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / raw.len() as f64)
        .sqrt()
        .max(1e-12);
    for (e, r) in examples.iter_mut().zip(raw) {
        let risk = (r - mean) / sd;
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let c: f64 = rng.random_range(f64::EPSILON..1.0);
        let event_time = -u.ln() / risk.exp();
        let censor_time = -c.ln() / 0.7;
        e.y = Label::Survival {
            time: event_time.min(censor_time),
            event: event_time <= censor_time,
        };
    }
}
