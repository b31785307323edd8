//! Shared test support: an independent oracle for chi-square calibration.
//!
//! The oracle solves the equality-constrained quadratic program
//!
//! ```text
//! minimize   sum_k (w_k - d_k)^2 / d_k
//! subject to B^T w = t
//! ```
//!
//! by assembling the full KKT system
//!
//! ```text
//! [ 2 D^-1   B ] [ w  ]   [ 2·1 ]
//! [ B^T      0 ] [ mu ] = [ t   ]
//! ```
//!
//! and solving it with a from-scratch dense LU factorization with partial
//! pivoting over plain `Vec`s. Nothing here shares code with the library's
//! reduced-system Cholesky path, so agreement between the two is evidence,
//! not tautology.

#![allow(dead_code)]

/// Solves `a x = b` by LU with partial pivoting; `None` when a pivot
/// vanishes (singular system).
pub fn lu_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = a.len();
    assert!(a.iter().all(|row| row.len() == n), "matrix must be square");
    assert_eq!(b.len(), n, "right-hand side must match");
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|i, j| a[*i][col].abs().total_cmp(&a[*j][col].abs()))
            .expect("non-empty pivot search");
        if a[pivot_row][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let pivot = a[col][col];
        for row in (col + 1)..n {
            let factor = a[row][col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut value = b[row];
        for k in (row + 1)..n {
            value -= a[row][k] * x[k];
        }
        x[row] = value / a[row][row];
    }
    Some(x)
}

/// Calibration weights from the full KKT system. `basis` is row-major,
/// one row per sampled unit; `totals` has one entry per basis column.
/// Returns `None` when the KKT system is singular.
pub fn kkt_calibration_weights(
    design_weights: &[f64],
    basis: &[Vec<f64>],
    totals: &[f64],
) -> Option<Vec<f64>> {
    let n = design_weights.len();
    let m = totals.len();
    assert_eq!(basis.len(), n, "one basis row per unit");
    assert!(basis.iter().all(|row| row.len() == m), "one coefficient per constraint");
    let dim = n + m;
    let mut a = vec![vec![0.0; dim]; dim];
    let mut b = vec![0.0; dim];
    for k in 0..n {
        a[k][k] = 2.0 / design_weights[k];
        for j in 0..m {
            a[k][n + j] = basis[k][j];
            a[n + j][k] = basis[k][j];
        }
        b[k] = 2.0;
    }
    for j in 0..m {
        b[n + j] = totals[j];
    }
    let solution = lu_solve(a, b)?;
    Some(solution[..n].to_vec())
}

/// The chi-square distance `sum_k (w_k - d_k)^2 / d_k`.
pub fn chi_square_distance(weights: &[f64], design_weights: &[f64]) -> f64 {
    weights
        .iter()
        .zip(design_weights)
        .map(|(w, d)| (w - d) * (w - d) / d)
        .sum()
}

/// Projects `direction` onto the null space of `B^T` (the feasible
/// directions of the constraint set), using the oracle's own LU solver on
/// the small `B^T B` system. Returns `None` when `B^T B` is singular.
pub fn project_feasible(basis: &[Vec<f64>], direction: &[f64]) -> Option<Vec<f64>> {
    let n = basis.len();
    let m = if n == 0 { 0 } else { basis[0].len() };
    assert_eq!(direction.len(), n, "one component per unit");
    if m == 0 {
        return Some(direction.to_vec());
    }
    let mut btb = vec![vec![0.0; m]; m];
    let mut btv = vec![0.0; m];
    for j in 0..m {
        for l in 0..m {
            btb[j][l] = (0..n).map(|k| basis[k][j] * basis[k][l]).sum();
        }
        btv[j] = (0..n).map(|k| basis[k][j] * direction[k]).sum();
    }
    let coef = lu_solve(btb, btv)?;
    let mut projected = direction.to_vec();
    for k in 0..n {
        for j in 0..m {
            projected[k] -= basis[k][j] * coef[j];
        }
    }
    Some(projected)
}

/// Deterministic fixture generator for oracle-vs-library comparisons,
/// independent of the library's RNG (xorshift-based).
pub struct FixtureRng(u64);

impl FixtureRng {
    pub fn new(seed: u64) -> Self {
        Self(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform in `(0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Roughly standard normal (sum of uniforms; tails are irrelevant for
    /// fixture generation).
    pub fn normal(&mut self) -> f64 {
        let s: f64 = (0..12).map(|_| self.uniform()).sum();
        s - 6.0
    }

    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }
}

use ndarray::{Array1, Array2};
use surveycalib::model::{PopulationFrame, SampleData};

/// Random population with outcomes that carry auxiliary signal plus noise.
pub fn random_frame(rng: &mut FixtureRng, units: usize, p: usize, q: usize) -> PopulationFrame {
    let aux = Array2::from_shape_fn((units, p), |_| 1.5 * rng.normal() + 0.4);
    let slopes: Vec<f64> = (0..p * q).map(|_| rng.normal()).collect();
    let outcomes = Array2::from_shape_fn((units, q), |(k, j)| {
        let signal: f64 = (0..p).map(|c| aux[[k, c]] * slopes[j * p + c]).sum();
        signal + 0.5 * rng.normal()
    });
    PopulationFrame::new(aux, outcomes).expect("generated frame is well-formed")
}

/// Equal-probability sample of `n` distinct units.
pub fn random_sample(frame: &PopulationFrame, rng: &mut FixtureRng, n: usize) -> SampleData {
    let units = frame.unit_count();
    let mut pool: Vec<usize> = (0..units).collect();
    for i in 0..n {
        let j = i + rng.below(units - i);
        pool.swap(i, j);
    }
    let mut indices = pool[..n].to_vec();
    indices.sort_unstable();
    let weights = Array1::from_elem(n, units as f64 / n as f64);
    SampleData::from_frame(frame, indices, weights).expect("indices are valid")
}

#[cfg(test)]
mod oracle_self_checks {
    use super::*;

    #[test]
    fn lu_solves_known_system() {
        let a = vec![vec![4.0, 1.0], vec![1.0, 3.0]];
        let x = lu_solve(a, vec![1.0, 2.0]).unwrap();
        // Inverse of [[4,1],[1,3]] is [[3,-1],[-1,4]]/11.
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn lu_reports_singular() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(lu_solve(a, vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn kkt_weights_satisfy_constraints() {
        let d = vec![2.0, 2.0, 2.0];
        let basis = vec![vec![1.0, 0.5], vec![1.0, -0.5], vec![1.0, 1.5]];
        let totals = vec![6.5, 3.0];
        let w = kkt_calibration_weights(&d, &basis, &totals).unwrap();
        for j in 0..2 {
            let achieved: f64 = (0..3).map(|k| w[k] * basis[k][j]).sum();
            assert!((achieved - totals[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_is_feasible_direction() {
        let basis = vec![vec![1.0, 0.5], vec![1.0, -0.5], vec![1.0, 1.5]];
        let eta = project_feasible(&basis, &[0.3, -0.9, 0.4]).unwrap();
        for j in 0..2 {
            let along: f64 = (0..3).map(|k| eta[k] * basis[k][j]).sum();
            assert!(along.abs() < 1e-10, "projection leaks into constraint {j}");
        }
    }
}
