//! Recovery ratios and V-measure scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackReportMetrics {
    pub rho_recovered: f64,
    pub rho_matched: f64,
    /// Not clamped; values above 1 mean components larger than a client.
    pub rho_component: f64,
    pub homogeneity: f64,
    pub completeness: f64,
    pub v_recovered: f64,
    pub v_normalized: f64,
    pub p_censored: f64,
}

/// `(rho_recovered, rho_matched, rho_component)`.
///
/// `rho_component` averages the sizes of the `k` largest components (absent
/// components count as empty) and divides by the mean client size.
pub fn compute_ratios(components: &[Vec<usize>], pooled_size: usize, client_size: f64, k: usize) -> (f64, f64, f64) {
    if pooled_size == 0 {
        return (0.0, 0.0, 0.0);
    }
    let recovered: usize = components.iter().map(Vec::len).sum();
    let matched: usize = components.iter().filter(|c| c.len() > 1).map(Vec::len).sum();
    let mut sizes: Vec<usize> = components.iter().map(Vec::len).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let top: usize = sizes.iter().take(k).sum();
    let rho_component = if k == 0 || client_size <= 0.0 {
        0.0
    } else {
        top as f64 / k as f64 / client_size
    };
    let n = pooled_size as f64;
    (recovered as f64 / n, matched as f64 / n, rho_component)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `(homogeneity, completeness, V)` of `predicted` clusters against `truth`
/// classes, with natural-log entropies.
pub fn v_measure(predicted: &[usize], truth: &[usize]) -> (f64, f64, f64) {
    assert_eq!(predicted.len(), truth.len(), "one label per sample");
    if predicted.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let n = predicted.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut clusters: BTreeMap<usize, usize> = BTreeMap::new();
    let mut classes: BTreeMap<usize, usize> = BTreeMap::new();
    for (&k, &c) in predicted.iter().zip(truth) {
        *joint.entry((k, c)).or_default() += 1;
        *clusters.entry(k).or_default() += 1;
        *classes.entry(c).or_default() += 1;
    }
    let h_class = entropy(classes.values().copied(), n);
    let h_cluster = entropy(clusters.values().copied(), n);
    // Summed per cell so that pure clusters contribute exactly zero.
    let (mut h_class_given_cluster, mut h_cluster_given_class) = (0.0, 0.0);
    for (&(k, c), &m) in &joint {
        let m = m as f64;
        h_class_given_cluster -= m / n * (m / clusters[&k] as f64).ln();
        h_cluster_given_class -= m / n * (m / classes[&c] as f64).ln();
    }
    let h_class_given_cluster = h_class_given_cluster.max(0.0);
    let h_cluster_given_class = h_cluster_given_class.max(0.0);
    let homogeneity = if h_class == 0.0 {
        1.0
    } else {
        (1.0 - h_class_given_cluster / h_class).clamp(0.0, 1.0)
    };
    let completeness = if h_cluster == 0.0 {
        1.0
    } else {
        (1.0 - h_cluster_given_class / h_cluster).clamp(0.0, 1.0)
    };
    let v = if homogeneity + completeness == 0.0 {
        0.0
    } else {
        2.0 * homogeneity * completeness / (homogeneity + completeness)
    };
    (homogeneity, completeness, v)
}

/// Metrics of a grouping of recovered samples whose true clients are
/// `true_clients[i]` for node `i`.
pub fn attack_metrics(
    components: &[Vec<usize>],
    true_clients: &[usize],
    pooled_size: usize,
    client_size: f64,
    k: usize,
    p_censored: f64,
) -> AttackReportMetrics {
    let (rho_recovered, rho_matched, rho_component) = compute_ratios(components, pooled_size, client_size, k);
    let mut predicted = vec![0; true_clients.len()];
    for (c, comp) in components.iter().enumerate() {
        for &i in comp {
            predicted[i] = c;
        }
    }
    let (homogeneity, completeness, v_recovered) = if true_clients.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        v_measure(&predicted, true_clients)
    };
    AttackReportMetrics {
        rho_recovered,
        rho_matched,
        rho_component,
        homogeneity,
        completeness,
        v_recovered,
        v_normalized: rho_recovered * v_recovered,
        p_censored,
    }
}
