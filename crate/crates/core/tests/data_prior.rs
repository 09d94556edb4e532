use std::io::Write;

use fedlab::data::{
    generate_synthetic, load_idx, partition_dirichlet, partition_iid, DataPrior, Dataset, PriorKind, SyntheticKind,
    SyntheticSpec, Task,
};
use fedlab::model::Label;
use fedlab::rng;
use ndarray::Array1;
use proptest::prelude::*;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn spec(kind: SyntheticKind, d: usize, n: usize, classes: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        kind,
        d,
        n,
        classes,
        seed,
        task: Task::Classification,
    }
}

fn grid() -> SyntheticKind {
    SyntheticKind::Grid {
        levels: 256,
        noise: 0.35,
        separation: 0.12,
        background: 0.7,
    }
}

fn cases() -> Vec<(SyntheticKind, usize, DataPrior)> {
    vec![
        (SyntheticKind::Nucleotide, 180, DataPrior::new(PriorKind::Binary)),
        (SyntheticKind::Binary { density: 0.25 }, 120, DataPrior::new(PriorKind::Binary)),
        (grid(), 784, DataPrior::new(PriorKind::Grid { levels: 256 })),
    ]
}

#[test]
fn generated_samples_are_prior_members_and_distinct() {
    for (kind, d, prior) in cases() {
        for seed in 0..10 {
            let ds = Dataset::new(generate_synthetic(&spec(kind.clone(), d, 500, 3, seed)).unwrap()).unwrap();
            assert_eq!(ds.len(), 500);
            assert!(ds.examples().iter().all(|e| prior.contains(e.x.view())), "{kind:?}");
            assert_eq!(ds.duplicate_pairs(), 0, "{kind:?} seed {seed}");
        }
    }
}

#[test]
fn gaussian_vectors_are_never_members() {
    let mut r = rng::stream(3, &[]);
    let priors = [
        DataPrior::new(PriorKind::Binary),
        DataPrior::new(PriorKind::Grid { levels: 256 }),
        DataPrior::new(PriorKind::UnitNorm),
    ];
    for _ in 0..10_000 {
        let x = Array1::from_shape_fn(100, |_| StandardNormal.sample(&mut r));
        for p in &priors {
            assert!(!p.contains(x.view()));
        }
    }
}

#[test]
fn unit_norm_members_after_normalisation() {
    let mut r = rng::stream(4, &[]);
    let prior = DataPrior::new(PriorKind::UnitNorm);
    for _ in 0..1000 {
        let x: Array1<f64> = Array1::from_shape_fn(100, |_| StandardNormal.sample(&mut r));
        let n = x.dot(&x).sqrt();
        assert!(prior.contains((&x / n).view()));
    }
}

fn idx_files(dir: &std::path::Path, n: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut r = rng::stream(8, &[]);
    let mut images = Vec::new();
    for word in [0x0803u32, n as u32, 28, 28] {
        images.extend_from_slice(&word.to_be_bytes());
    }
    images.extend((0..n * 784).map(|_| r.random::<u8>()));
    let mut labels = Vec::new();
    for word in [0x0801u32, n as u32] {
        labels.extend_from_slice(&word.to_be_bytes());
    }
    labels.extend((0..n).map(|_| r.random_range(0..10u8)));
    let (ip, lp) = (dir.join("images"), dir.join("labels"));
    std::fs::File::create(&ip).unwrap().write_all(&images).unwrap();
    std::fs::File::create(&lp).unwrap().write_all(&labels).unwrap();
    (ip, lp)
}

#[test]
fn loaded_idx_images_sit_on_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let (images, labels) = idx_files(tmp.path(), 600);
    let selection: Vec<usize> = (0..500).collect();
    let loaded = load_idx(&images, &labels, Some(&selection)).unwrap();
    assert_eq!(loaded.len(), 500);
    let prior = DataPrior::new(PriorKind::Grid { levels: 256 });
    assert!(loaded.iter().all(|e| prior.contains(e.x.view())));
    assert!(load_idx(&images, &labels, Some(&[])).unwrap().is_empty());
}

fn labelled_pool(n: usize, classes: usize, seed: u64) -> Dataset {
    Dataset::new(generate_synthetic(&spec(SyntheticKind::Binary { density: 0.3 }, 60, n, classes, seed)).unwrap()).unwrap()
}

fn class_of(ds: &Dataset, id: fedlab::model::SampleId) -> usize {
    match ds.get(id).unwrap().y {
        Label::Class(c) => c,
        _ => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dirichlet_partitions_are_exact_and_deterministic(
        log_alpha in -3.0f64..3.0,
        seed in any::<u64>(),
        clients in 2usize..6,
    ) {
        let alpha = 10f64.powf(log_alpha);
        let per_client = 20;
        let ds = labelled_pool(clients * per_client * 4, 4, 11);
        let a = partition_dirichlet(&ds, clients, alpha, per_client, seed);
        let b = partition_dirichlet(&ds, clients, alpha, per_client, seed);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(a.members.len(), clients);
                prop_assert!(a.members.iter().all(|m| m.len() == per_client));
                let mut all = a.all_ids();
                let n = all.len();
                all.sort_unstable();
                all.dedup();
                prop_assert_eq!(all.len(), n);
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "nondeterministic failure"),
        }
    }

    #[test]
    fn iid_partitions_cover_requested_counts(seed in any::<u64>(), clients in 2usize..6) {
        let ds = labelled_pool(clients * 10, 3, 2);
        let p = partition_iid(&ds, clients, 10, seed).unwrap();
        p.validate(&ds).unwrap();
        prop_assert!(p.members.iter().all(|m| m.len() == 10));
    }
}

#[test]
fn extreme_alphas() {
    let ds = labelled_pool(4 * 50 * 4, 4, 12);
    let p = partition_dirichlet(&ds, 4, 1e-3, 50, 1).unwrap();
    for m in &p.members {
        let mut counts = [0usize; 4];
        for id in m {
            counts[class_of(&ds, *id)] += 1;
        }
        assert!(*counts.iter().max().unwrap() as f64 >= 0.95 * m.len() as f64);
    }
    let p = partition_dirichlet(&ds, 4, 1e6, 48, 1).unwrap();
    for m in &p.members {
        let mut counts = [0usize; 4];
        for id in m {
            counts[class_of(&ds, *id)] += 1;
        }
        assert!(counts.iter().all(|&c| c.abs_diff(12) <= 1), "{counts:?}");
    }
}
