//! Acceptance suite. Prints one line per criterion and exits non-zero if a
//! gating criterion fails. Pass criterion numbers to run a subset:
//! `cargo test -p fedlab --test acceptance -- 1 9`.

use std::time::Instant;

use fedlab::data::{SyntheticKind, Task};
use fedlab::defense::DefenseConfig;
use fedlab::experiment::{
    dna_like, fmnist_like, log_grid, prepare_data, run_experiment, run_experiment_on, CsvRow, DataSource,
    ExperimentConfig, ExperimentOutcome, Split, SyntheticData,
};
use fedlab::metrics::v_measure;
use fedlab::model::LossKind;
use fedlab::oracle::{verify_decomposition, verify_first_activation, verify_isolated_recovery};
use fedlab::rng;
use fedlab::sim::{evaluate, run_training, TrainingConfig, TrainingTrace};
use fedlab::trace::encode_trace;
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn dna_traces(cfg: &ExperimentConfig, seeds: &[u64]) -> (fedlab::experiment::PreparedData, Vec<TrainingTrace>) {
    let data = prepare_data(cfg).unwrap();
    let traces = seeds
        .iter()
        .map(|&s| {
            let job = TrainingConfig {
                seed: s,
                oracle_logging: true,
                ..cfg.training.clone()
            };
            run_training(&job, &data.dataset, &data.partition).unwrap()
        })
        .collect();
    (data, traces)
}

fn exact_recovery() -> Outcome {
    // Small binary run: a handful of samples per client makes singleton
    // activation sets common in the first rounds.
    let cfg = ExperimentConfig {
        name: "isolated".into(),
        data: DataSource::Synthetic(SyntheticData {
            kind: SyntheticKind::Binary { density: 0.3 },
            d: 40,
            classes: 2,
            seed: 5,
            task: Task::Classification,
        }),
        split: Split::Iid,
        pool: None,
        partition_seed: 0,
        training: TrainingConfig {
            clients: 2,
            samples_per_client: 10,
            batch_size: 2,
            n_updates: 2,
            t_max: 3,
            learning_rate: 0.05,
            hidden: 300,
            ..TrainingConfig::default()
        },
        learning_rates: Vec::new(),
        seeds: vec![0],
        prior: None,
        omp: Default::default(),
        baseline: false,
    };
    let (data, traces) = dna_traces(&cfg, &[0]);
    let r = verify_isolated_recovery(&traces[0], &data.dataset, &cfg.prior().unwrap()).unwrap();
    outcome(
        r.isolated > 0 && r.max_error < 1e-9 && r.hits == r.isolated,
        format!("{} isolated samples, max l_inf error {:.2e}", r.isolated, r.max_error),
    )
}

fn dna_ce_traces() -> (fedlab::experiment::PreparedData, Vec<TrainingTrace>) {
    dna_traces(&dna_like(), &[0, 1, 2])
}

fn decomposition(ce: &(fedlab::experiment::PreparedData, Vec<TrainingTrace>)) -> Outcome {
    let mut cox_cfg = dna_like();
    if let DataSource::Synthetic(s) = &mut cox_cfg.data {
        s.task = Task::Survival;
    }
    cox_cfg.training.loss = LossKind::Cox;
    let cox = dna_traces(&cox_cfg, &[0]);

    let mut worst = (0.0f64, 0.0f64);
    let mut exact = true;
    let mut parts = Vec::new();
    for (name, (data, traces)) in [("ce", (&ce.0, &ce.1[..1])), ("cox", (&cox.0, &cox.1[..]))] {
        for t in traces {
            let r = verify_decomposition(t, &data.dataset).unwrap();
            let round = r.round_max_deviation.unwrap();
            worst = (worst.0.max(r.batch_max_deviation), worst.1.max(round));
            exact &= r.replay_exact && r.set_mismatches == 0 && r.freeze_violations == 0;
            parts.push(format!("{name}: batch {:.1e} round {:.1e}", r.batch_max_deviation, round));
        }
    }
    outcome(worst.0 < 1e-9 && worst.1 < 1e-9 && exact, parts.join(", "))
}

fn first_activation(ce: &(fedlab::experiment::PreparedData, Vec<TrainingTrace>)) -> Outcome {
    let (mut checks, mut violations) = (0, 0);
    for t in &ce.1 {
        let r = verify_first_activation(t).unwrap();
        checks += r.checks;
        violations += r.violations.len();
    }
    outcome(
        violations == 0 && checks > 0,
        format!("{violations} violations over {checks} (t, h, k) checks, 3 seeds"),
    )
}

fn dna_reproduction(run: &ExperimentOutcome) -> Outcome {
    let m = run.attack.metrics.unwrap();
    outcome(
        (0.35..=0.70).contains(&m.rho_recovered) && (0.15..=0.35).contains(&m.v_normalized),
        format!(
            "rho_recovered {:.3} (band 0.35..0.70), v_normalized {:.3} (band 0.15..0.35), accuracy {:.3}",
            m.rho_recovered, m.v_normalized, run.accuracy.best
        ),
    )
}

fn defense_kill() -> Outcome {
    let run = |defense| {
        let mut cfg = dna_like();
        cfg.training.defense = defense;
        run_experiment(&cfg, false).unwrap()
    };
    let q = run(DefenseConfig::Q { q: 4 });
    let b = run(DefenseConfig::Beta { beta: 0.9 });
    let (rq, rb) = (q.attack.metrics.unwrap().rho_recovered, b.attack.metrics.unwrap().rho_recovered);
    outcome(
        rq == 0.0 && rb == 0.0 && b.attack.p_censored < q.attack.p_censored,
        format!(
            "rho q=4 {rq}, beta=0.9 {rb}; p_censored q=4 {:.4}, beta=0.9 {:.4}",
            q.attack.p_censored, b.attack.p_censored
        ),
    )
}

fn best_accuracy(cfg: &ExperimentConfig) -> f64 {
    let data = prepare_data(cfg).unwrap();
    let lrs = cfg.learning_rates();
    let mut best = vec![f64::NEG_INFINITY; cfg.seeds.len()];
    for (i, job) in cfg.jobs().iter().enumerate() {
        let trace = run_training(job, &data.dataset, &data.partition).unwrap();
        let score = evaluate(trace.final_params(), &data.heldout).unwrap();
        let s = i % cfg.seeds.len();
        best[s] = best[s].max(score);
    }
    assert_eq!(cfg.jobs().len(), lrs.len() * cfg.seeds.len());
    best.iter().sum::<f64>() / best.len() as f64
}

fn accuracy_preserved() -> Outcome {
    let mut cfg = fmnist_like();
    cfg.learning_rates = log_grid(1e-3, 0.1, 20);
    cfg.seeds = (0..10).collect();
    let open = best_accuracy(&cfg);
    cfg.training.defense = DefenseConfig::Q { q: 4 };
    let defended = best_accuracy(&cfg);
    outcome(
        (open - defended).abs() <= 0.02,
        format!("best accuracy undefended {open:.4}, q=4 {defended:.4}"),
    )
}

fn heterogeneity_shape() -> Outcome {
    let alphas = [1e-3, 1e-1, 1.0, 10.0, 1e3];
    let mut attack = Vec::new();
    let mut kmeans = Vec::new();
    for alpha in alphas {
        let mut cfg = fmnist_like();
        cfg.split = Split::Dirichlet { alpha };
        cfg.baseline = true;
        let run = run_experiment(&cfg, false).unwrap();
        attack.push(run.attack.metrics.unwrap().v_normalized);
        kmeans.push(run.attack.baseline.unwrap().v_normalized);
    }
    let (a0, a4, k0, k4) = (attack[0], attack[4], kmeans[0], kmeans[4]);
    outcome(
        k4 < 0.5 * k0 && a4 >= 0.7 * a0,
        format!("v_normalized by alpha: attack {attack:.3?}, k-means {kmeans:.3?}"),
    )
}

fn grouping_safety(dna: &ExperimentOutcome) -> Outcome {
    let mut worst: f64 = 1.0;
    for run in 0..10u64 {
        let mut cfg = dna_like();
        cfg.partition_seed = run;
        cfg.seeds = vec![100 + run];
        let out = run_experiment(&cfg, true).unwrap();
        worst = worst.min(out.attack.oracle.unwrap().true_set_homogeneity);
    }
    let omp = dna.attack.metrics.unwrap().homogeneity;
    outcome(
        worst == 1.0 && omp >= 0.95,
        format!("true-set homogeneity min {worst} over 10 runs, reconstructed-set homogeneity {omp:.4}"),
    )
}

fn contingency(pred: &[usize], truth: &[usize]) -> (f64, f64, f64) {
    let k = pred.iter().max().map_or(0, |m| m + 1);
    let c = truth.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; c]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        table[p][t] += 1;
    }
    let n = pred.len() as f64;
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..c).map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let ent = |m: &[f64]| -> f64 { m.iter().filter(|&&v| v > 0.0).map(|&v| -(v / n) * (v / n).log2()).sum() };
    let (h_k, h_c) = (ent(&rows), ent(&cols));
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > 0 {
                let v = v as f64;
                mi += v / n * (v * n / (rows[i] * cols[j])).log2();
            }
        }
    }
    let h = if h_c == 0.0 { 1.0 } else { mi / h_c };
    let comp = if h_k == 0.0 { 1.0 } else { mi / h_k };
    let v = if h + comp == 0.0 { 0.0 } else { 2.0 * h * comp / (h + comp) };
    (h, comp, v)
}

fn v_measure_oracle() -> Outcome {
    let mut r = rng::stream(2024, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..400);
        let (k, c) = (r.random_range(1..15), r.random_range(1..8));
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
        let a = v_measure(&pred, &truth);
        let b = contingency(&pred, &truth);
        worst = worst.max((a.0 - b.0).abs()).max((a.1 - b.1).abs()).max((a.2 - b.2).abs());
    }
    outcome(worst < 1e-12, format!("max deviation {worst:.1e} over 100 partitions"))
}

fn csv_bytes(out: &ExperimentOutcome) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.serialize(CsvRow::new(&out.name, "none", "", 0, &out.attack, Some(out.accuracy.best)))
        .unwrap();
    w.into_inner().unwrap()
}

fn determinism() -> Outcome {
    let mut cfg = dna_like();
    cfg.seeds = vec![0, 1, 2];
    cfg.training.t_max = 8;
    cfg.baseline = true;
    let data = prepare_data(&cfg).unwrap();
    let traces = |cfg: &ExperimentConfig| -> Vec<Vec<u8>> {
        cfg.jobs()
            .iter()
            .map(|j| encode_trace(&run_training(j, &data.dataset, &data.partition).unwrap()).unwrap())
            .collect()
    };
    let same_traces = traces(&cfg) == traces(&cfg);
    let a = csv_bytes(&run_experiment(&cfg, false).unwrap());
    let b = csv_bytes(&run_experiment_on(&cfg, &prepare_data(&cfg).unwrap(), false).unwrap());
    outcome(
        same_traces && a == b,
        format!("traces identical: {same_traces}, csv identical: {}", a == b),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |i: usize| wanted.is_empty() || wanted.contains(&i);
    let needs_ce = on(2) || on(3);
    let needs_dna = on(4) || on(8);

    let ce = needs_ce.then(dna_ce_traces);
    let dna = needs_dna.then(|| run_experiment(&dna_like(), false).unwrap());

    // Criterion 4 is reported but does not gate: the synthetic nucleotide
    // stand-in is far easier to attack than the real sequences.
    let gating = |i: usize| i != 4;
    let mut failed = Vec::new();
    for i in 1..=10 {
        if !on(i) {
            continue;
        }
        let start = Instant::now();
        let o = match i {
            1 => exact_recovery(),
            2 => decomposition(ce.as_ref().unwrap()),
            3 => first_activation(ce.as_ref().unwrap()),
            4 => dna_reproduction(dna.as_ref().unwrap()),
            5 => defense_kill(),
            6 => accuracy_preserved(),
            7 => heterogeneity_shape(),
            8 => grouping_safety(dna.as_ref().unwrap()),
            9 => v_measure_oracle(),
            _ => determinism(),
        };
        let verdict = match (o.pass, gating(i)) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (reported, not gating)",
        };
        println!("criterion {i:>2}: {verdict} [{:.0}s] {}", start.elapsed().as_secs_f64(), o.detail);
        if !o.pass && gating(i) {
            failed.push(i);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
