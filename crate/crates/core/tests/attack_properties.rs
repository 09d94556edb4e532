use fedlab::attack::{build_grouping_graph, recover_samples, OmpOptions, ReconstructedActivation};
use fedlab::data::{SyntheticKind, Task};
use fedlab::defense::DefenseConfig;
use fedlab::experiment::{
    prepare_data, run_attack, AttackOptions, DataSource, ExperimentConfig, GroundTruth, PreparedData, Split,
    SyntheticData,
};
use fedlab::sim::{run_training, TrainingConfig, TrainingTrace};
use proptest::prelude::*;

fn small_config(defense: DefenseConfig, seeds: u64) -> ExperimentConfig {
    ExperimentConfig {
        name: "small".into(),
        data: DataSource::Synthetic(SyntheticData {
            kind: SyntheticKind::Nucleotide,
            d: 60,
            classes: 3,
            seed: 2,
            task: Task::Classification,
        }),
        split: Split::Iid,
        pool: None,
        partition_seed: 0,
        training: TrainingConfig {
            clients: 3,
            samples_per_client: 30,
            batch_size: 4,
            n_updates: 3,
            t_max: 6,
            learning_rate: 0.1,
            hidden: 200,
            defense,
            oracle_logging: true,
            ..TrainingConfig::default()
        },
        learning_rates: Vec::new(),
        seeds: (0..seeds).collect(),
        prior: None,
        omp: OmpOptions::default(),
        baseline: false,
    }
}

fn train(cfg: &ExperimentConfig) -> (PreparedData, Vec<TrainingTrace>) {
    let data = prepare_data(cfg).unwrap();
    let traces = cfg
        .jobs()
        .iter()
        .map(|j| run_training(j, &data.dataset, &data.partition).unwrap())
        .collect();
    (data, traces)
}

fn truth(data: &PreparedData) -> Option<GroundTruth<'_>> {
    Some(GroundTruth {
        dataset: &data.dataset,
        partition: &data.partition,
    })
}

#[test]
fn undefended_run_satisfies_every_oracle_check() {
    let cfg = small_config(DefenseConfig::None, 3);
    let (data, traces) = train(&cfg);
    let mut opts = AttackOptions::new(cfg.prior().unwrap());
    opts.oracle = true;
    let report = run_attack(&traces, truth(&data), &opts).unwrap();
    let o = report.oracle.as_ref().unwrap();

    assert!(!report.recovered.is_empty());
    assert_eq!(o.false_recoveries, 0);
    assert!(o.isolated > 0);
    assert_eq!(o.isolated_recovered, o.isolated);
    assert!(o.isolated_max_error < 1e-9, "{}", o.isolated_max_error);
    assert!(o.first_activation_checks > 0);
    assert!(o.first_activation_violations.is_empty());
    assert_eq!(o.true_set_homogeneity, 1.0);
    let dec = &o.decomposition;
    assert!(dec.batch_max_deviation < 1e-9);
    assert!(dec.round_max_deviation.unwrap() < 1e-9);
    assert!(dec.replay_exact);
    assert_eq!((dec.set_mismatches, dec.freeze_violations), (0, 0));

    for rec in &report.reconstructions {
        assert!((1..=opts.omp.n_max).contains(&rec.members.len()));
        assert!(rec.residual < opts.omp.residual_tol);
        let prev = &traces[rec.training].iterates[rec.round - 1];
        for i in &rec.first_activation {
            assert!(rec.members.contains(i));
            let x = &report.recovered[*i];
            let pre: f64 = prev.w.row(rec.neuron).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + prev.b[rec.neuron];
            assert!(pre > 0.0);
        }
    }
    let mut covered: Vec<usize> = report.components.iter().flatten().copied().collect();
    covered.sort_unstable();
    assert_eq!(covered, (0..report.recovered.len()).collect::<Vec<_>>());
}

#[test]
fn attack_never_reads_the_oracle_log() {
    let cfg = small_config(DefenseConfig::None, 2);
    let (data, traces) = train(&cfg);
    let stripped: Vec<TrainingTrace> = traces
        .iter()
        .cloned()
        .map(|mut t| {
            t.oracle = None;
            t
        })
        .collect();
    let opts = AttackOptions::new(cfg.prior().unwrap());
    let a = run_attack(&traces, truth(&data), &opts).unwrap();
    let b = run_attack(&stripped, truth(&data), &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn q_and_beta_defenses_leave_nothing_to_recover() {
    for defense in [DefenseConfig::Q { q: 4 }, DefenseConfig::Beta { beta: 0.9 }] {
        let cfg = small_config(defense, 2);
        let (_, traces) = train(&cfg);
        let views: Vec<_> = traces.iter().map(TrainingTrace::public).collect();
        let recovered = recover_samples(&views, &cfg.prior().unwrap()).unwrap();
        assert!(recovered.is_empty(), "{defense}: {} recovered", recovered.len());
        assert!(traces.iter().all(|t| t.p_censored() > 0.0));
    }
}

#[test]
fn q_defense_censors_exactly_the_small_client_sets() {
    let q = 4;
    let cfg = small_config(DefenseConfig::Q { q }, 1);
    let (data, defended) = train(&cfg);
    let trace = &defended[0];
    let log = trace.oracle.as_ref().unwrap();
    let (hidden, k, t_max) = (cfg.training.hidden, cfg.training.clients, cfg.training.t_max);
    let mut expected = 0u64;
    for t in 1..=t_max {
        for client in 0..k {
            let small = log
                .client_sets(t, client, hidden)
                .iter()
                .filter(|s| (1..=q).contains(&s.len()))
                .count() as u64;
            assert_eq!(u64::from(trace.censored[t - 1][client]), small);
            expected += small;
        }
    }
    assert_eq!(trace.censored_events(), expected);
    assert_eq!(trace.p_censored(), expected as f64 / (hidden * t_max * k) as f64);

    // Round 1 starts from the same model with the same batches, so only the
    // first-layer rows of censored neurons may differ.
    let open = TrainingConfig {
        defense: DefenseConfig::None,
        ..cfg.jobs()[0].clone()
    };
    let plain = run_training(&open, &data.dataset, &data.partition).unwrap();
    let (a, b) = (&trace.iterates[1], &plain.iterates[1]);
    assert_eq!(a.phi, b.phi);
    let mut differing = 0;
    for h in 0..hidden {
        let censored = (0..k).any(|c| (1..=q).contains(&log.client_sets(1, c, hidden)[h].len()));
        let same = a.w.row(h) == b.w.row(h) && a.b[h] == b.b[h];
        if !same {
            differing += 1;
            assert!(censored, "neuron {h} changed without censoring");
        }
    }
    assert!(differing > 0);
}

fn rec(members: Vec<usize>, first: Vec<usize>) -> ReconstructedActivation {
    ReconstructedActivation {
        training: 0,
        round: 1,
        neuron: 0,
        coefficients: vec![1.0; members.len()],
        members,
        residual: 0.0,
        first_activation: first,
    }
}

fn arb_recs(nodes: usize) -> impl Strategy<Value = Vec<ReconstructedActivation>> {
    prop::collection::vec(
        (prop::collection::btree_set(0..nodes, 1..5), any::<prop::sample::Index>(), 1usize..3),
        0..25,
    )
    .prop_map(|raw| {
        raw.into_iter()
            .map(|(members, pick, n_first)| {
                let members: Vec<usize> = members.into_iter().collect();
                let start = pick.index(members.len());
                let first = members.iter().cycle().skip(start).take(n_first.min(members.len())).copied();
                let mut first: Vec<usize> = first.collect();
                first.sort_unstable();
                rec(members, first)
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn grouping_terminates_and_ignores_order(recs in arb_recs(12), rotate in 0usize..25) {
        let g = build_grouping_graph(&recs, 12);
        prop_assert!(g.sweeps <= 12 * 12);
        let mut nodes: Vec<usize> = g.components.iter().flatten().copied().collect();
        nodes.sort_unstable();
        prop_assert_eq!(nodes, (0..12).collect::<Vec<_>>());

        let mut shuffled = recs.clone();
        if !shuffled.is_empty() {
            let r = rotate % shuffled.len();
            shuffled.rotate_left(r);
            shuffled.reverse();
        }
        prop_assert_eq!(build_grouping_graph(&shuffled, 12).components, g.components);
    }

    #[test]
    fn grouping_of_single_client_sets_never_mixes_clients(
        recs in arb_recs(12),
    ) {
        // Keep only reconstructions that stay inside one client of 4.
        let client = |i: usize| i % 4;
        let pure: Vec<ReconstructedActivation> =
            recs.into_iter().filter(|r| r.members.iter().all(|&m| client(m) == client(r.members[0]))).collect();
        let g = build_grouping_graph(&pure, 12);
        for comp in &g.components {
            prop_assert!(comp.iter().all(|&m| client(m) == client(comp[0])));
        }
    }
}
