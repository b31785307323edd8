//! Internal dense linear algebra: symmetric Gram accumulation and a Cholesky
//! factorization with a condition-number estimate.
//!
//! Calibration repeatedly solves small symmetric positive-definite systems
//! built from design-weighted Gram matrices. The solver must (a) fail loudly
//! with a condition estimate instead of returning garbage, and (b) be
//! bit-for-bit deterministic, so everything here is hand-rolled dense code
//! with fixed iteration counts and no threading.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Condition numbers above this are reported as numerically singular.
pub(crate) const CONDITION_LIMIT: f64 = 1e12;

/// Fixed iteration count for the extreme-eigenvalue estimates. Power
/// iteration converges geometrically; 48 steps give a reliable order of
/// magnitude, which is all the singularity gate needs.
const POWER_ITERATIONS: usize = 48;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SpdError {
    /// A Cholesky pivot was non-positive or non-finite.
    NotPositiveDefinite,
    /// Factorization succeeded but the estimated condition number exceeds
    /// [`CONDITION_LIMIT`].
    IllConditioned { condition: f64 },
}

impl SpdError {
    /// Condition estimate to report with the failure.
    pub(crate) fn condition(&self) -> f64 {
        match self {
            SpdError::NotPositiveDefinite => f64::INFINITY,
            SpdError::IllConditioned { condition } => *condition,
        }
    }
}

/// Cholesky factor of a symmetric positive-definite matrix together with a
/// condition-number estimate.
#[derive(Debug, Clone)]
pub(crate) struct SpdFactor {
    /// Lower-triangular factor, row-major; entries above the diagonal are 0.
    lower: Array2<f64>,
    /// Estimated 2-norm condition number of the factored matrix. Consulted
    /// by the ill-conditioning guard and the unit tests.
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) condition: f64,
}

/// Accumulates `sum_k w_k * b_k b_k^T` over the rows `b_k` of `basis`.
///
/// Only the upper triangle is summed and then mirrored, so the result is
/// exactly symmetric, which the eigensolver and Cholesky rely on.
pub(crate) fn weighted_gram(basis: ArrayView2<'_, f64>, weights: ArrayView1<'_, f64>) -> Array2<f64> {
    let (n, m) = basis.dim();
    assert_eq!(weights.len(), n, "one weight per basis row");
    let mut gram = Array2::<f64>::zeros((m, m));
    for k in 0..n {
        let w = weights[k];
        let row = basis.row(k);
        for i in 0..m {
            let wi = w * row[i];
            for j in i..m {
                gram[[i, j]] += wi * row[j];
            }
        }
    }
    for i in 0..m {
        for j in (i + 1)..m {
            gram[[j, i]] = gram[[i, j]];
        }
    }
    gram
}

/// `scale * X^T X` with an exactly symmetric result.
pub(crate) fn scaled_gram(x: ArrayView2<'_, f64>, scale: f64) -> Array2<f64> {
    let ones = Array1::<f64>::ones(x.nrows());
    let mut gram = weighted_gram(x, ones.view());
    gram.mapv_inplace(|v| v * scale);
    gram
}

/// Factors a symmetric positive-definite matrix and gates on its estimated
/// condition number.
pub(crate) fn spd_factor(a: &Array2<f64>) -> Result<SpdFactor, SpdError> {
    let m = a.nrows();
    assert_eq!(a.ncols(), m, "matrix must be square");
    let mut lower = Array2::<f64>::zeros((m, m));
    for j in 0..m {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= lower[[j, k]] * lower[[j, k]];
        }
        if !(diag.is_finite() && diag > 0.0) {
            return Err(SpdError::NotPositiveDefinite);
        }
        let piv = diag.sqrt();
        lower[[j, j]] = piv;
        for i in (j + 1)..m {
            let mut v = a[[i, j]];
            for k in 0..j {
                v -= lower[[i, k]] * lower[[j, k]];
            }
            lower[[i, j]] = v / piv;
        }
    }
    let factor = SpdFactor {
        lower,
        condition: 1.0,
    };
    let condition = estimate_condition(a, &factor);
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(SpdError::IllConditioned { condition });
    }
    Ok(SpdFactor { condition, ..factor })
}

/// Ratio of Rayleigh-quotient estimates of the largest eigenvalues of `A`
/// and `A^-1`, each from a fixed number of power-iteration steps.
fn estimate_condition(a: &Array2<f64>, factor: &SpdFactor) -> f64 {
    let m = a.nrows();
    if m == 0 {
        return 1.0;
    }
    // Fixed full-support start vector keeps the estimate deterministic.
    let start = Array1::from_shape_fn(m, |i| 1.0 + 0.01 * i as f64);

    let mut v = normalized(start.clone());
    let mut lambda_max = 0.0f64;
    for _ in 0..POWER_ITERATIONS {
        let av = a.dot(&v);
        lambda_max = v.dot(&av);
        let norm = av.dot(&av).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            break;
        }
        v = av / norm;
    }

    let mut u = normalized(start);
    let mut inv_lambda_max = 0.0f64;
    for _ in 0..POWER_ITERATIONS {
        let au = factor.solve_vec(u.view());
        inv_lambda_max = u.dot(&au);
        let norm = au.dot(&au).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            break;
        }
        u = au / norm;
    }

    if inv_lambda_max <= 0.0 || lambda_max <= 0.0 {
        return f64::INFINITY;
    }
    lambda_max * inv_lambda_max
}

fn normalized(v: Array1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v / norm
    } else {
        v
    }
}

impl SpdFactor {
    /// Solves `A x = b` by forward and back substitution.
    pub(crate) fn solve_vec(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let m = self.lower.nrows();
        assert_eq!(b.len(), m, "right-hand side length must match");
        let mut y = b.to_owned();
        for i in 0..m {
            let mut v = y[i];
            for k in 0..i {
                v -= self.lower[[i, k]] * y[k];
            }
            y[i] = v / self.lower[[i, i]];
        }
        for i in (0..m).rev() {
            let mut v = y[i];
            for k in (i + 1)..m {
                v -= self.lower[[k, i]] * y[k];
            }
            y[i] = v / self.lower[[i, i]];
        }
        y
    }

    /// Solves `A X = B` column by column.
    pub(crate) fn solve_mat(&self, b: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(b.dim());
        for (j, col) in b.columns().into_iter().enumerate() {
            out.column_mut(j).assign(&self.solve_vec(col));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn factor_solves_small_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let f = spd_factor(&a).unwrap();
        let b = array![1.0, -2.0, 0.5];
        let x = f.solve_vec(b.view());
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn condition_estimate_tracks_true_ratio() {
        // Diagonal matrix: condition number is known exactly.
        let a = Array2::from_diag(&array![1e4, 1.0, 1e-2]);
        let f = spd_factor(&a).unwrap();
        let true_cond = 1e6;
        assert!(f.condition > 0.1 * true_cond && f.condition < 10.0 * true_cond);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert_eq!(spd_factor(&a).unwrap_err(), SpdError::NotPositiveDefinite);
    }

    #[test]
    fn near_singular_matrix_is_gated() {
        let a = array![[1.0, 1.0], [1.0, 1.0 + 1e-15]];
        match spd_factor(&a) {
            Err(SpdError::IllConditioned { condition }) => assert!(condition > CONDITION_LIMIT),
            Err(SpdError::NotPositiveDefinite) => {}
            Ok(f) => panic!("expected failure, got condition {}", f.condition),
        }
    }

    #[test]
    fn weighted_gram_is_exactly_symmetric() {
        let basis = array![[1.0, 2.0, 3.0], [0.5, -1.0, 2.0], [3.0, 0.25, -0.5]];
        let w = array![2.0, 0.5, 1.5];
        let g = weighted_gram(basis.view(), w.view());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g[[i, j]].to_bits(), g[[j, i]].to_bits());
            }
        }
        // Spot-check one entry against the definition.
        let expect: f64 = 2.0 * 1.0 * 2.0 + 0.5 * 0.5 * (-1.0) + 1.5 * 3.0 * 0.25;
        assert!((g[[0, 1]] - expect).abs() < 1e-12);
    }

    #[test]
    fn solve_mat_matches_columnwise_solves() {
        let a = array![[3.0, 1.0], [1.0, 2.0]];
        let f = spd_factor(&a).unwrap();
        let b = array![[1.0, 0.0], [0.0, 1.0]];
        let x = f.solve_mat(b.view());
        let id = a.dot(&x);
        assert!((id[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((id[[1, 1]] - 1.0).abs() < 1e-12);
        assert!(id[[0, 1]].abs() < 1e-12);
    }
}
