//! Deterministic symmetric eigendecomposition and principal components.
//!
//! The solver is a cyclic Jacobi iteration: it is a few dozen lines, needs no
//! external backend, and is bitwise reproducible, which the simulation
//! harness depends on. Principal components come in two flavors:
//!
//! * population components from the exact covariance `N^-1 X^T X` of a
//!   centered frame, and
//! * estimated components from the design-weighted covariance of a sample,
//!   used when auxiliary values are only observed on sampled units.
//!
//! Sample scores for estimated components are formed directly as
//! `x_k^T v_hat_j` on the population-centered rows; they are deliberately not
//! re-centered with sample means, so their implied population totals are the
//! exact linear functionals `t_x^T v_hat_j` of the known totals.

use ndarray::{s, Array1, Array2, ArrayView2};
use thiserror::Error;

use crate::linalg::{scaled_gram, weighted_gram};
use crate::model::{PopulationFrame, SampleData, TotalsVector};

/// Convergence threshold for Jacobi sweeps, relative to the Frobenius norm.
const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Hard sweep limit; cyclic Jacobi converges quadratically, so hitting this
/// means the input was not numerically symmetric.
const MAX_SWEEPS: usize = 100;

/// Eigenvalues of covariance inputs in `[-NEGATIVE_CLAMP, 0)` are round-off
/// negatives and are clamped to exactly 0.
const NEGATIVE_CLAMP: f64 = 1e-10;

/// Gap threshold (relative to the leading eigenvalue) below which adjacent
/// eigenvalues are reported as near-degenerate: their eigenvectors are then
/// individually arbitrary within the shared subspace.
const DEGENERATE_GAP: f64 = 1e-10;

/// Estimated eigenvalues at or below this are treated as numerically zero;
/// components past that point cannot be retained.
pub const ZERO_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("Jacobi iteration did not converge in {MAX_SWEEPS} sweeps; residual off-diagonal norm {off_diagonal:.3e}")]
    NotConverged { off_diagonal: f64 },
    #[error("component count {r} is out of range for {p} variables")]
    ComponentOutOfRange { r: usize, p: usize },
    #[error("retained eigenvalue numerically zero: eigenvalue {index} is {value:.3e}")]
    ZeroEigenvalue { index: usize, value: f64 },
    #[error("design weight sum must be positive, got {0}")]
    ZeroWeightSum(f64),
}

/// Eigendecomposition of a symmetric matrix.
///
/// Eigenvalues are sorted in descending order (ties keep solver order) and
/// each eigenvector's largest-magnitude entry is made positive, lowest index
/// winning ties, so the decomposition of a given matrix is unique and
/// bitwise repeatable.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricSpectrum {
    eigenvalues: Array1<f64>,
    eigenvectors: Array2<f64>,
}

impl SymmetricSpectrum {
    /// Identity spectrum of the given dimension, a placeholder for code
    /// paths that provably never read the components.
    pub(crate) fn identity(p: usize) -> Self {
        Self { eigenvalues: Array1::ones(p), eigenvectors: Array2::eye(p) }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    /// Eigenvectors as columns, in eigenvalue order.
    pub fn eigenvectors(&self) -> &Array2<f64> {
        &self.eigenvectors
    }

    /// First `r` eigenvectors as a `p x r` view.
    pub fn retained_vectors(&self, r: usize) -> ArrayView2<'_, f64> {
        self.eigenvectors.slice(s![.., ..r])
    }

    /// Share of total eigenvalue mass carried by the first `r` eigenvalues.
    /// NaN when the total is not positive.
    pub fn explained_share(&self, r: usize) -> f64 {
        let total: f64 = self.eigenvalues.sum();
        if total <= 0.0 {
            return f64::NAN;
        }
        self.eigenvalues.iter().take(r).sum::<f64>() / total
    }

    /// Indices `j` where the gap to the next eigenvalue is below
    /// `DEGENERATE_GAP` times the leading eigenvalue. Eigenvectors within
    /// such a cluster are only determined up to rotation.
    pub fn near_degenerate_pairs(&self) -> Vec<usize> {
        let p = self.dim();
        if p < 2 {
            return Vec::new();
        }
        let scale = self.eigenvalues[0].abs();
        (0..p - 1)
            .filter(|&j| (self.eigenvalues[j] - self.eigenvalues[j + 1]).abs() < DEGENERATE_GAP * scale)
            .collect()
    }
}

/// Population principal components retained to some order `r`: scores,
/// eigenvalues, and the loading vectors that map auxiliary space onto them.
#[derive(Debug, Clone)]
pub struct PrincipalComponents {
    /// Component scores, one row per unit, one column per component.
    scores: Array2<f64>,
    /// Retained eigenvalues, descending.
    eigenvalues: Array1<f64>,
    /// Retained eigenvectors as a `p x r` matrix.
    vectors: Array2<f64>,
}

impl PrincipalComponents {
    pub fn r(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }
}

/// Exact population covariance `N^-1 X^T X` of a centered frame.
pub fn population_covariance(frame: &PopulationFrame) -> Array2<f64> {
    assert!(frame.is_centered(), "population covariance requires a centered frame");
    scaled_gram(frame.aux().view(), 1.0 / frame.unit_count() as f64)
}

/// Design-weighted covariance estimated from a single sample:
/// `Nhat^-1 sum_s d_k x_k x_k^T - xbar xbar^T` with `Nhat = sum_s d_k` and
/// `xbar = Nhat^-1 sum_s d_k x_k`.
pub fn weighted_covariance(sample: &SampleData) -> Result<Array2<f64>, EigenError> {
    assert!(sample.len() >= 2, "weighted covariance needs at least 2 sampled units");
    weighted_covariance_rows(sample.aux_rows().view(), sample.design_weights())
}

/// Same estimator applied to an arbitrary matrix of sampled rows, used when
/// the rows are derived variables rather than the auxiliary matrix itself.
pub(crate) fn weighted_covariance_rows(
    rows: ArrayView2<'_, f64>,
    weights: &Array1<f64>,
) -> Result<Array2<f64>, EigenError> {
    let nhat: f64 = weights.sum();
    if !(nhat.is_finite() && nhat > 0.0) {
        return Err(EigenError::ZeroWeightSum(nhat));
    }
    let inv = 1.0 / nhat;
    let mut gamma = weighted_gram(rows, weights.view());
    gamma.mapv_inplace(|v| v * inv);
    let mean = rows.t().dot(weights) * inv;
    let p = mean.len();
    for i in 0..p {
        for j in 0..p {
            gamma[[i, j]] -= mean[i] * mean[j];
        }
    }
    Ok(gamma)
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Convergence requires every off-diagonal magnitude to drop below
/// `OFF_DIAGONAL_TOL` times the Frobenius norm of the input. Round-off
/// negatives of covariance inputs (in `[-1e-10, 0)`) are clamped to zero;
/// genuinely negative eigenvalues of general symmetric inputs pass through.
pub fn symmetric_eig(matrix: &Array2<f64>) -> Result<SymmetricSpectrum, EigenError> {
    let p = matrix.nrows();
    assert!(p >= 1, "matrix must be non-empty");
    assert_eq!(matrix.ncols(), p, "matrix must be square");
    let frob = matrix.iter().map(|v| v * v).sum::<f64>().sqrt();
    let max_asym = (0..p)
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .map(|(i, j)| (matrix[[i, j]] - matrix[[j, i]]).abs())
        .fold(0.0f64, f64::max);
    assert!(
        max_asym <= 1e-9 * (1.0 + frob),
        "matrix must be symmetric within 1e-9, worst asymmetry {max_asym:.3e}"
    );

    if frob == 0.0 {
        // The zero matrix: all eigenvalues 0, identity eigenvectors.
        return Ok(SymmetricSpectrum {
            eigenvalues: Array1::zeros(p),
            eigenvectors: Array2::eye(p),
        });
    }

    let mut a = matrix.clone();
    // Work on an exactly symmetric copy so both triangles stay in lockstep.
    for i in 0..p {
        for j in 0..i {
            a[[i, j]] = a[[j, i]];
        }
    }
    let mut v = Array2::<f64>::eye(p);
    let tol = OFF_DIAGONAL_TOL * frob;

    let mut converged = p == 1;
    for _ in 0..MAX_SWEEPS {
        if max_off_diagonal(&a) < tol {
            converged = true;
            break;
        }
        for i in 0..p - 1 {
            for j in (i + 1)..p {
                if a[[i, j]].abs() >= tol {
                    rotate(&mut a, &mut v, i, j);
                }
            }
        }
    }
    if !converged && max_off_diagonal(&a) >= tol {
        return Err(EigenError::NotConverged { off_diagonal: off_diagonal_norm(&a) });
    }

    let raw: Vec<f64> = (0..p).map(|i| a[[i, i]]).collect();
    let mut order: Vec<usize> = (0..p).collect();
    // Stable sort: equal eigenvalues keep the solver's order.
    order.sort_by(|&i, &j| raw[j].partial_cmp(&raw[i]).expect("eigenvalues are finite"));

    let mut eigenvalues = Array1::<f64>::zeros(p);
    let mut eigenvectors = Array2::<f64>::zeros((p, p));
    for (dst, &src) in order.iter().enumerate() {
        let mut lambda = raw[src];
        if (-NEGATIVE_CLAMP..0.0).contains(&lambda) {
            lambda = 0.0;
        }
        eigenvalues[dst] = lambda;
        eigenvectors.column_mut(dst).assign(&v.column(src));
    }
    for mut column in eigenvectors.columns_mut() {
        let mut lead = 0usize;
        let mut best = f64::NEG_INFINITY;
        for (i, value) in column.iter().enumerate() {
            if value.abs() > best {
                best = value.abs();
                lead = i;
            }
        }
        if column[lead] < 0.0 {
            column.mapv_inplace(|x| -x);
        }
    }
    Ok(SymmetricSpectrum { eigenvalues, eigenvectors })
}

fn max_off_diagonal(a: &Array2<f64>) -> f64 {
    let p = a.nrows();
    let mut max = 0.0f64;
    for i in 0..p - 1 {
        for j in (i + 1)..p {
            max = max.max(a[[i, j]].abs());
        }
    }
    max
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let p = a.nrows();
    let mut sum = 0.0f64;
    for i in 0..p - 1 {
        for j in (i + 1)..p {
            sum += 2.0 * a[[i, j]] * a[[i, j]];
        }
    }
    sum.sqrt()
}

/// One Jacobi rotation in the `(i, j)` plane, annihilating `a[i, j]`.
fn rotate(a: &mut Array2<f64>, v: &mut Array2<f64>, i: usize, j: usize) {
    let p = a.nrows();
    let aij = a[[i, j]];
    let theta = (a[[j, j]] - a[[i, i]]) / (2.0 * aij);
    let t = if theta.abs() > 1e12 {
        0.5 / theta
    } else if theta >= 0.0 {
        1.0 / (theta + (theta * theta + 1.0).sqrt())
    } else {
        1.0 / (theta - (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    let h = t * aij;
    a[[i, i]] -= h;
    a[[j, j]] += h;
    a[[i, j]] = 0.0;
    a[[j, i]] = 0.0;
    for k in 0..p {
        if k != i && k != j {
            let aki = a[[k, i]];
            let akj = a[[k, j]];
            let new_ki = c * aki - s * akj;
            let new_kj = s * aki + c * akj;
            a[[k, i]] = new_ki;
            a[[i, k]] = new_ki;
            a[[k, j]] = new_kj;
            a[[j, k]] = new_kj;
        }
    }
    for k in 0..p {
        let vki = v[[k, i]];
        let vkj = v[[k, j]];
        v[[k, i]] = c * vki - s * vkj;
        v[[k, j]] = s * vki + c * vkj;
    }
}

/// Population principal component scores `Z = X G_r` for a centered frame.
pub fn principal_components(
    frame: &PopulationFrame,
    spectrum: &SymmetricSpectrum,
    r: usize,
) -> Result<PrincipalComponents, EigenError> {
    assert!(frame.is_centered(), "principal components require a centered frame");
    let p = frame.aux_count();
    assert_eq!(spectrum.dim(), p, "spectrum dimension must match the frame");
    if r == 0 || r > p {
        return Err(EigenError::ComponentOutOfRange { r, p });
    }
    let vectors = spectrum.retained_vectors(r).to_owned();
    let scores = frame.aux().dot(&vectors);
    let eigenvalues = spectrum.eigenvalues().slice(s![..r]).to_owned();
    Ok(PrincipalComponents { scores, eigenvalues, vectors })
}

/// Estimated principal components from a sample: scores `x_k^T v_hat_j` on
/// the sampled rows, and the implied population totals `t_x^T v_hat_j`.
///
/// `spectrum` must come from the design-weighted covariance of the same
/// sample. Retaining a component whose estimated eigenvalue is numerically
/// zero (at or below `ZERO_EIGENVALUE`) is an error.
pub fn estimated_principal_components(
    sample: &SampleData,
    aux_totals: &TotalsVector,
    spectrum: &SymmetricSpectrum,
    r: usize,
) -> Result<(PrincipalComponents, TotalsVector), EigenError> {
    let p = sample.aux_rows().ncols();
    assert_eq!(spectrum.dim(), p, "spectrum dimension must match the sample");
    assert_eq!(aux_totals.len(), p, "totals length must match the sample");
    if r == 0 || r > p {
        return Err(EigenError::ComponentOutOfRange { r, p });
    }
    let lambda_r = spectrum.eigenvalues()[r - 1];
    if lambda_r <= ZERO_EIGENVALUE {
        return Err(EigenError::ZeroEigenvalue { index: r, value: lambda_r });
    }
    let vectors = spectrum.retained_vectors(r).to_owned();
    let scores = sample.aux_rows().dot(&vectors);
    let totals = TotalsVector(vectors.t().dot(aux_totals.values()));
    let eigenvalues = spectrum.eigenvalues().slice(s![..r]).to_owned();
    Ok((PrincipalComponents { scores, eigenvalues, vectors }, totals))
}
