use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::{self, tag, Rng};

const RESTARTS: usize = 20;
const MAX_ITER: usize = 300;

fn dist2(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus(points: ArrayView2<'_, f64>, k: usize, rng: &mut Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centers = Array2::zeros((k, points.ncols()));
    centers.row_mut(0).assign(&points.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = points.axis_iter(Axis(0)).map(|p| dist2(p, centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            d2.iter()
                .position(|&v| {
                    u -= v;
                    u < 0.0
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.axis_iter(Axis(0)).enumerate() {
            d2[i] = d2[i].min(dist2(p, centers.row(c)));
        }
    }
    centers
}

fn lloyd(points: ArrayView2<'_, f64>, mut centers: Array2<f64>) -> (Vec<usize>, f64) {
    let (n, k) = (points.nrows(), centers.nrows());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_ITER {
        let mut changed = false;
        for (i, p) in points.axis_iter(Axis(0)).enumerate() {
            let best = (0..k)
                .map(|c| (c, dist2(p, centers.row(c))))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
                .0;
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = Array2::<f64>::zeros(centers.dim());
        let mut counts = vec![0usize; k];
        for (i, p) in points.axis_iter(Axis(0)).enumerate() {
            sums.row_mut(labels[i]).scaled_add(1.0, &p);
            counts[labels[i]] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its centre.
                let far = (0..n)
                    .map(|i| (i, dist2(points.row(i), centers.row(labels[i]))))
                    .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a })
                    .0;
                centers.row_mut(c).assign(&points.row(far));
                labels[far] = c;
                changed = true;
            } else {
                centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .axis_iter(Axis(0))
        .zip(&labels)
        .map(|(p, &l)| dist2(p, centers.row(l)))
        .sum();
    (labels, inertia)
}

/// Lloyd's algorithm with k-means++ seeding, best of 20 restarts by inertia.
pub fn kmeans_baseline(points: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || points.nrows() < k {
        return Err(Error::invalid(format!(
            "k-means needs at least k = {k} >= 1 points, got {}",
            points.nrows()
        )));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for r in 0..RESTARTS {
        let mut rng = rng::stream(seed, &[tag::KMEANS, r as u64]);
        let (labels, inertia) = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((labels, inertia));
        }
    }
    Ok(best.expect("at least one restart").0)
}
