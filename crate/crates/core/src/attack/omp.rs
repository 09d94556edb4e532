use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PublicTrace, RecoveredSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmpOptions {
    pub n_max: usize,
    /// Relative residual `||X^T lambda - y|| / ||y||` required to accept.
    pub residual_tol: f64,
}

impl Default for OmpOptions {
    fn default() -> Self {
        Self {
            n_max: 20,
            residual_tol: 1e-6,
        }
    }
}

/// Sparse combination of dictionary atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode {
    /// Atom indices in ascending order.
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    /// Relative residual of the final least-squares fit.
    pub residual: f64,
}

/// A reconstructed round-level activation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedActivation {
    pub training: usize,
    pub round: usize,
    pub neuron: usize,
    /// Indices into the recovered set, ascending.
    pub members: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub residual: f64,
    /// Members already active under the round-start model.
    pub first_activation: Vec<usize>,
}

/// Atoms as rows, with their Gram matrix precomputed so each pursuit step
/// costs `O(n |S|)` instead of a full residual update.
#[derive(Clone, Debug)]
pub struct Dictionary {
    atoms: Array2<f64>,
    gram: Array2<f64>,
    norms: Vec<f64>,
}

impl Dictionary {
    pub fn new(atoms: Array2<f64>) -> Self {
        let gram = atoms.dot(&atoms.t());
        let norms = gram.diag().iter().map(|v| v.sqrt()).collect();
        Self { atoms, gram, norms }
    }

    pub fn len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.nrows() == 0
    }

    pub fn atoms(&self) -> &Array2<f64> {
        &self.atoms
    }

    /// Greedy pursuit for `target` from scratch.
    pub fn sparse_code(&self, target: ArrayView1<'_, f64>, opts: &OmpOptions) -> Option<SparseCode> {
        let corr = self.atoms.dot(&target);
        self.solve(target, corr.view(), opts)
    }

    /// Greedy pursuit given the precomputed correlations `atoms . target`.
    /// Returns `None` for a zero target or when no atom correlates.
    pub fn solve(&self, target: ArrayView1<'_, f64>, corr: ArrayView1<'_, f64>, opts: &OmpOptions) -> Option<SparseCode> {
        let yy = target.dot(&target);
        if yy == 0.0 || self.is_empty() {
            return None;
        }
        let ynorm = yy.sqrt();
        let n = self.len();
        let mut support: Vec<usize> = Vec::with_capacity(opts.n_max);
        let mut chol: Vec<Vec<f64>> = Vec::with_capacity(opts.n_max);
        let mut blocked = vec![false; n];
        let corr = corr.as_standard_layout();
        let mut alpha = corr.to_vec();
        let mut lam: Vec<f64> = Vec::new();
        let mut estimate = yy;

        while support.len() < opts.n_max {
            let mut best = None;
            let mut best_score = 1e-14 * ynorm;
            for j in 0..n {
                if blocked[j] || self.norms[j] == 0.0 {
                    continue;
                }
                let score = alpha[j].abs() / self.norms[j];
                if score > best_score {
                    best_score = score;
                    best = Some(j);
                }
            }
            let Some(j) = best else { break };
            blocked[j] = true;

            let g: Vec<f64> = support.iter().map(|&s| self.gram[[s, j]]).collect();
            let w = forward_solve(&chol, &g);
            let diag = self.gram[[j, j]] - w.iter().map(|v| v * v).sum::<f64>();
            if diag <= 1e-10 * self.gram[[j, j]] {
                // Numerically inside the span of the current support.
                continue;
            }
            let mut row = w;
            row.push(diag.sqrt());
            chol.push(row);
            support.push(j);

            let c_s: Vec<f64> = support.iter().map(|&s| corr[s]).collect();
            lam = backward_solve(&chol, &forward_solve(&chol, &c_s));
            // The Gram matrix is symmetric, so rows serve as columns.
            alpha.copy_from_slice(corr.as_slice().expect("contiguous correlations"));
            for (&s, &l) in support.iter().zip(&lam) {
                let row = self.gram.row(s);
                for (a, g) in alpha.iter_mut().zip(row.as_slice().expect("contiguous gram")) {
                    *a -= g * l;
                }
            }
            estimate = yy - lam.iter().zip(&c_s).map(|(l, c)| l * c).sum::<f64>();
            if estimate <= 100.0 * (opts.residual_tol * ynorm).powi(2)
                && self.residual(target, &support, &lam) < 0.5 * opts.residual_tol * ynorm
            {
                break;
            }
        }
        if support.is_empty() {
            return None;
        }
        if estimate > 1e4 * (opts.residual_tol * ynorm).powi(2) {
            // Far from acceptable; a refit would not change the verdict.
            let residual = self.residual(target, &support, &lam) / ynorm;
            let mut pairs: Vec<(usize, f64)> = support.into_iter().zip(lam).collect();
            pairs.sort_by_key(|p| p.0);
            return Some(SparseCode {
                support: pairs.iter().map(|p| p.0).collect(),
                coefficients: pairs.iter().map(|p| p.1).collect(),
                residual,
            });
        }
        let mut lam = self.refit(target, &support).unwrap_or(lam);
        // Atoms whose whole contribution is within tolerance only fit noise.
        loop {
            let keep: Vec<usize> = (0..support.len())
                .filter(|&i| lam[i].abs() * self.norms[support[i]] > opts.residual_tol * ynorm)
                .collect();
            if keep.len() == support.len() {
                break;
            }
            if keep.is_empty() {
                return None;
            }
            let pruned: Vec<usize> = keep.iter().map(|&i| support[i]).collect();
            let kept_lam: Vec<f64> = keep.iter().map(|&i| lam[i]).collect();
            lam = self.refit(target, &pruned).unwrap_or(kept_lam);
            support = pruned;
        }
        let residual = self.residual(target, &support, &lam) / ynorm;
        let mut pairs: Vec<(usize, f64)> = support.into_iter().zip(lam).collect();
        pairs.sort_by_key(|p| p.0);
        Some(SparseCode {
            support: pairs.iter().map(|p| p.0).collect(),
            coefficients: pairs.iter().map(|p| p.1).collect(),
            residual,
        })
    }

    fn residual(&self, target: ArrayView1<'_, f64>, support: &[usize], lam: &[f64]) -> f64 {
        let mut r = target.to_owned();
        for (&s, &l) in support.iter().zip(lam) {
            r.scaled_add(-l, &self.atoms.row(s));
        }
        r.dot(&r).sqrt()
    }

    /// Least squares on the support through a QR factorization.
    fn refit(&self, target: ArrayView1<'_, f64>, support: &[usize]) -> Option<Vec<f64>> {
        let m = self.atoms.ncols();
        let a = DMatrix::from_fn(m, support.len(), |i, j| self.atoms[[support[j], i]]);
        let y = DVector::from_iterator(m, target.iter().copied());
        let qr = a.qr();
        let rhs = qr.q().transpose() * y;
        let lam = qr.r().solve_upper_triangular(&rhs)?;
        lam.iter().all(|v| v.is_finite()).then(|| lam.iter().copied().collect())
    }
}

fn forward_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(b.len());
    for (i, row) in l.iter().enumerate() {
        let s: f64 = row[..i].iter().zip(&x).map(|(a, v)| a * v).sum();
        x.push((b[i] - s) / row[i]);
    }
    x
}

fn backward_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

/// Reconstructs `A^h_t` for every round and neuron whose extended update is
/// nonzero, keeping solutions that fit within tolerance and satisfy the
/// bias identity `db = sum lambda`.
pub fn omp_reconstruct(
    trace: &PublicTrace<'_>,
    training: usize,
    recovered: &RecoveredSet,
    dictionary: &Dictionary,
    opts: &OmpOptions,
) -> Vec<ReconstructedActivation> {
    if recovered.is_empty() || opts.n_max == 0 {
        return Vec::new();
    }
    let d = trace.input_dim;
    let rounds: Vec<Vec<ReconstructedActivation>> = (1..trace.iterates.len())
        .into_par_iter()
        .map(|t| {
            let (prev, cur) = (&trace.iterates[t - 1], &trace.iterates[t]);
            let mut delta = Array2::zeros((trace.hidden, d + 1));
            delta.slice_mut(s![.., ..d]).assign(&(&cur.w - &prev.w));
            delta.column_mut(d).assign(&(&cur.b - &prev.b));
            let corr = dictionary.atoms().dot(&delta.t());
            let mut out = Vec::new();
            for (h, y) in delta.axis_iter(Axis(0)).enumerate() {
                if y.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let c: Array1<f64> = corr.column(h).to_owned();
                let Some(code) = dictionary.solve(y, c.view(), opts) else { continue };
                let ynorm = y.dot(&y).sqrt();
                let bias_gap = (code.coefficients.iter().sum::<f64>() - y[d]).abs();
                if code.residual >= opts.residual_tol || bias_gap > opts.residual_tol * ynorm {
                    continue;
                }
                let w = prev.w.row(h);
                let first_activation = code
                    .support
                    .iter()
                    .copied()
                    .filter(|&r| w.dot(&recovered.samples[r]) + prev.b[h] > 0.0)
                    .collect();
                out.push(ReconstructedActivation {
                    training,
                    round: t,
                    neuron: h,
                    members: code.support,
                    coefficients: code.coefficients,
                    residual: code.residual,
                    first_activation,
                });
            }
            out
        })
        .collect();
    rounds.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn binary_atoms(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::stream(seed, &[]);
        let mut m = Array2::ones((n, d + 1));
        for i in 0..n {
            for j in 0..d {
                m[[i, j]] = f64::from(u8::from(r.random_bool(0.4)));
            }
        }
        m
    }

    #[test]
    fn single_atom_exact() {
        let dict = Dictionary::new(binary_atoms(30, 50, 1));
        let y = dict.atoms().row(7).mapv(|v| v * -0.25);
        let code = dict.sparse_code(y.view(), &OmpOptions::default()).unwrap();
        assert_eq!(code.support, vec![7]);
        assert!((code.coefficients[0] + 0.25).abs() < 1e-12);
        assert!(code.residual < 1e-12);
    }

    #[test]
    fn three_atom_combination() {
        let dict = Dictionary::new(binary_atoms(40, 60, 2));
        let a = dict.atoms();
        let y = &a.row(1) * 3.0 - &a.row(5) * 2.0 + &a.row(9) * 0.7;
        let code = dict.sparse_code(y.view(), &OmpOptions::default()).unwrap();
        assert_eq!(code.support, vec![1, 5, 9]);
        for (c, e) in code.coefficients.iter().zip([3.0, -2.0, 0.7]) {
            assert!((c - e).abs() < 1e-8, "{c} vs {e}");
        }
    }

    #[test]
    fn zero_target_has_no_code() {
        let dict = Dictionary::new(binary_atoms(5, 8, 3));
        assert!(dict.sparse_code(Array1::zeros(9).view(), &OmpOptions::default()).is_none());
    }

    #[test]
    fn duplicate_atoms_are_skipped() {
        let mut atoms = binary_atoms(6, 10, 4);
        let dup = atoms.row(2).to_owned();
        atoms.row_mut(3).assign(&dup);
        let dict = Dictionary::new(atoms);
        let y = &dict.atoms().row(2) * 1.5 + &dict.atoms().row(0) * 0.5;
        let code = dict.sparse_code(y.view(), &OmpOptions::default()).unwrap();
        assert_eq!(code.support.len(), 2);
        assert!(code.residual < 1e-10);
    }

    #[test]
    fn n_max_caps_support() {
        let dict = Dictionary::new(binary_atoms(40, 60, 5));
        let y: Array1<f64> = (0..10).map(|i| dict.atoms().row(i).to_owned()).fold(Array1::zeros(61), |a, r| a + r);
        let opts = OmpOptions {
            n_max: 3,
            residual_tol: 1e-6,
        };
        let code = dict.sparse_code(y.view(), &opts).unwrap();
        assert_eq!(code.support.len(), 3);
        assert!(code.residual > 1e-6);
    }
}
