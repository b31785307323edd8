//! Calibration weighting: chi-square calibration and its principal-component,
//! second-moment, partial, and ridge variants.
//!
//! Every estimator here reweights a design-weighted sample so that weighted
//! sample sums of chosen auxiliary variables hit known population totals,
//! minimizing the chi-square distance `sum_s (w_k - d_k)^2 / d_k` to the
//! design weights. The closed-form solution is
//!
//! ```text
//! w_k = d_k - d_k b_k^T T^-1 (t_bd_hat - t_b),   T = sum_s d_k b_k b_k^T,
//! ```
//!
//! and the calibrated total of an outcome equals the regression (difference)
//! form `t_yd_hat - (t_bd_hat - t_b)^T beta_hat` with
//! `beta_hat = T^-1 sum_s d_k b_k y_k`. Both forms are computed and agree to
//! floating-point accuracy; results carry the basis-level coefficient so
//! callers can re-derive either form.
//!
//! The variants differ only in the basis `b_k`:
//!
//! * full calibration uses the original auxiliary variables;
//! * `pc_calibration` uses the leading population principal-component
//!   scores, whose population totals are exactly zero on a centered frame;
//! * `pc2_calibration` adds the squared scores with totals `N lambda_j`,
//!   calibrating the second moment as well;
//! * `epc_calibration` replaces population components by components of the
//!   design-weighted covariance when auxiliaries are only observed on the
//!   sample;
//! * `partial_pc_calibration` keeps a block of variables calibrated exactly
//!   and compresses only the remainder, via principal components of the
//!   projection residual;
//! * `ridge_weights` relaxes constraints through per-coordinate costs, with
//!   infinite-cost coordinates kept exact.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use thiserror::Error;

use crate::design::{ht_outcome_totals, ht_variance_estimator, DesignError, InclusionProbs};
use crate::eigen::{
    estimated_principal_components, population_covariance, principal_components, symmetric_eig,
    weighted_covariance, weighted_covariance_rows, EigenError, PrincipalComponents,
    SymmetricSpectrum, ZERO_EIGENVALUE,
};
use crate::linalg::{spd_factor, weighted_gram, SpdFactor};
use crate::model::{PopulationFrame, SampleData, TotalsVector};

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("calibration Gram matrix is numerically singular (condition estimate {condition:.3e})")]
    SingularGram { condition: f64 },
    #[error("exactly calibrated block is rank deficient (condition estimate {condition:.3e})")]
    RankDeficientBlock { condition: f64 },
    #[error("component count {r} is out of range (maximum {max})")]
    ComponentOutOfRange { r: usize, max: usize },
    #[error("second-moment calibration needs 2r < n, got r = {r} with n = {n}")]
    TooManyMoments { r: usize, n: usize },
    #[error("invalid column partition: {0}")]
    BadPartition(String),
    #[error("ridge penalty must be nonnegative and finite, got {0}")]
    BadPenalty(f64),
    #[error("ridge cost at coordinate {index} must be positive and finite")]
    BadCost { index: usize },
    #[error("ridge costs cover {got} coordinates but the basis has {expected}")]
    CostLengthMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// A calibration basis evaluated on the sampled units: the matrix of basis
/// rows, the target population totals, and a label for reporting.
#[derive(Debug, Clone)]
pub struct AuxBasis {
    sample_matrix: Array2<f64>,
    totals: Array1<f64>,
    label: String,
}

impl AuxBasis {
    pub fn new(sample_matrix: Array2<f64>, totals: Array1<f64>, label: impl Into<String>) -> Self {
        assert_eq!(
            sample_matrix.ncols(),
            totals.len(),
            "one total per basis column"
        );
        Self { sample_matrix, totals, label: label.into() }
    }

    pub fn sample_matrix(&self) -> &Array2<f64> {
        &self.sample_matrix
    }

    pub fn totals(&self) -> &Array1<f64> {
        &self.totals
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.totals.len()
    }

    /// Appends a constant-1 column whose population total is the population
    /// size, turning the weight sum into an exact constraint.
    pub fn with_intercept(self, population_size: f64) -> AuxBasis {
        let n = self.sample_matrix.nrows();
        let m = self.sample_matrix.ncols();
        let mut matrix = Array2::<f64>::zeros((n, m + 1));
        matrix.slice_mut(s![.., ..m]).assign(&self.sample_matrix);
        matrix.column_mut(m).fill(1.0);
        let mut totals = Array1::<f64>::zeros(m + 1);
        totals.slice_mut(s![..m]).assign(&self.totals);
        totals[m] = population_size;
        AuxBasis { sample_matrix: matrix, totals, label: format!("{}+int", self.label) }
    }
}

/// Whether calibration bases carry an appended intercept constraint. The
/// constant column is only ever added to the calibration basis, never to the
/// matrices entering a principal-component analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intercept {
    Omit,
    Include { population_size: f64 },
}

impl Intercept {
    /// Intercept constraint for a population of `n` units.
    pub fn include(n: usize) -> Self {
        Intercept::Include { population_size: n as f64 }
    }

    fn apply(self, basis: AuxBasis) -> AuxBasis {
        match self {
            Intercept::Omit => basis,
            Intercept::Include { population_size } => basis.with_intercept(population_size),
        }
    }

    fn is_included(self) -> bool {
        matches!(self, Intercept::Include { .. })
    }
}

/// Weight-level diagnostics of one calibration fit.
#[derive(Debug, Clone)]
pub struct CalibrationDiagnostics {
    pub min_weight: f64,
    /// Coefficient of variation of the weights, population convention
    /// (divisor `n`). NaN when the mean weight is zero.
    pub cv_weight: f64,
    pub negative_count: usize,
    /// Euclidean norm of `sum_s w_k b_k - t_b` on the calibration basis.
    /// For ridge weights this includes the intentional slack of penalized
    /// coordinates.
    pub constraint_residual_norm: f64,
    /// Squared error `|sum_s w_k x_k - t_x|^2` measured on the original
    /// auxiliary variables, when their totals are available to the caller.
    pub sq_calibration_error_on_originals: Option<f64>,
}

/// Output of one calibration fit: weights, calibrated totals for every
/// outcome, the basis-level regression coefficient, and diagnostics.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    /// Label of the basis that produced the fit.
    pub basis_label: String,
    /// Calibrated weights, one per sampled unit. Negative weights are
    /// reported as-is, never truncated.
    pub weights: Array1<f64>,
    /// Calibrated total per outcome (weighted-sum form `sum_s w_k y_k`).
    pub estimate: Array1<f64>,
    /// Basis-level regression coefficient, `m x q`: the difference form
    /// `t_yd_hat - (t_bd_hat - t_b)^T coefficient` reproduces `estimate`.
    pub coefficient: Array2<f64>,
    /// Coefficient mapped back to the original auxiliary variables
    /// (`p x q`), available when the basis is a linear image of the
    /// originals and carries no intercept. Feeds the residual variance
    /// estimator.
    pub original_coefficient: Option<Array2<f64>>,
    pub diagnostics: CalibrationDiagnostics,
}

/// Coefficient of variation `sd / mean` with population divisor `n`; NaN
/// when the mean is exactly zero.
pub(crate) fn weight_cv(weights: &Array1<f64>) -> f64 {
    let n = weights.len() as f64;
    let mean = weights.sum() / n;
    if mean == 0.0 {
        return f64::NAN;
    }
    let var = weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

struct Solved {
    weights: Array1<f64>,
    coefficient: Array2<f64>,
}

/// Shared closed-form solver: `K = sum_s d_k b_k b_k^T + penalty`, weights
/// `w_k = d_k (1 - b_k^T K^-1 delta)` with `delta = t_bd_hat - t_b`, and the
/// regression coefficient `K^-1 sum_s d_k b_k y_k^T`.
fn solve_weighted(
    sample: &SampleData,
    basis: &AuxBasis,
    penalty_diag: Option<&Array1<f64>>,
) -> Result<Solved, CalibrateError> {
    let n = sample.len();
    assert_eq!(basis.sample_matrix.nrows(), n, "basis must cover every sampled unit");
    let d = sample.design_weights();
    let mut gram = weighted_gram(basis.sample_matrix.view(), d.view());
    if let Some(penalty) = penalty_diag {
        for (j, add) in penalty.iter().enumerate() {
            gram[[j, j]] += add;
        }
    }
    let factor: SpdFactor = spd_factor(&gram)
        .map_err(|e| CalibrateError::SingularGram { condition: e.condition() })?;

    let ht_basis = basis.sample_matrix.t().dot(d);
    let delta = &ht_basis - &basis.totals;
    let u = factor.solve_vec(delta.view());
    let adjust = basis.sample_matrix.dot(&u);
    let weights = Array1::from_shape_fn(n, |k| d[k] * (1.0 - adjust[k]));

    let weighted_outcomes = sample.outcome_rows() * &d.view().insert_axis(Axis(1));
    let rhs = basis.sample_matrix.t().dot(&weighted_outcomes);
    let coefficient = factor.solve_mat(rhs.view());
    Ok(Solved { weights, coefficient })
}

fn build_result(
    sample: &SampleData,
    basis: &AuxBasis,
    solved: Solved,
    original_coefficient: Option<Array2<f64>>,
    original_totals: Option<&TotalsVector>,
) -> CalibrationResult {
    let estimate = sample.outcome_rows().t().dot(&solved.weights);
    let achieved = basis.sample_matrix.t().dot(&solved.weights);
    let residual = &achieved - &basis.totals;
    let constraint_residual_norm = residual.dot(&residual).sqrt();
    let sq_calibration_error_on_originals = original_totals.map(|totals| {
        let on_originals = sample.aux_rows().t().dot(&solved.weights);
        let err = &on_originals - totals.values();
        err.dot(&err)
    });
    let min_weight = solved.weights.iter().copied().fold(f64::INFINITY, f64::min);
    let negative_count = solved.weights.iter().filter(|w| **w < 0.0).count();
    CalibrationResult {
        basis_label: basis.label.clone(),
        diagnostics: CalibrationDiagnostics {
            min_weight,
            cv_weight: weight_cv(&solved.weights),
            negative_count,
            constraint_residual_norm,
            sq_calibration_error_on_originals,
        },
        estimate,
        coefficient: solved.coefficient,
        original_coefficient,
        weights: solved.weights,
    }
}

/// Chi-square calibration weights for an arbitrary basis.
pub fn chi_square_weights(
    sample: &SampleData,
    basis: &AuxBasis,
) -> Result<Array1<f64>, CalibrateError> {
    Ok(solve_weighted(sample, basis, None)?.weights)
}

/// Full calibration fit on an arbitrary basis.
///
/// `original_totals`, when given, adds the squared calibration error on the
/// original auxiliary variables to the diagnostics; it does not change the
/// fit.
pub fn greg_estimate(
    sample: &SampleData,
    basis: &AuxBasis,
    original_totals: Option<&TotalsVector>,
) -> Result<CalibrationResult, CalibrateError> {
    let solved = solve_weighted(sample, basis, None)?;
    Ok(build_result(sample, basis, solved, None, original_totals))
}

/// Calibration on the original auxiliary variables.
pub fn full_calibration(
    sample: &SampleData,
    aux_totals: &TotalsVector,
    intercept: Intercept,
) -> Result<CalibrationResult, CalibrateError> {
    assert_eq!(aux_totals.len(), sample.aux_rows().ncols(), "one total per auxiliary column");
    let basis = intercept.apply(AuxBasis::new(
        sample.aux_rows().clone(),
        aux_totals.values().clone(),
        "full",
    ));
    let solved = solve_weighted(sample, &basis, None)?;
    let original_coefficient =
        if intercept.is_included() { None } else { Some(solved.coefficient.clone()) };
    Ok(build_result(sample, &basis, solved, original_coefficient, Some(aux_totals)))
}

/// Population-level generalized difference estimate, the infeasible oracle
/// that calibration estimators approximate.
///
/// With `r = p` the coefficient is the population least-squares fit; with
/// `r < p` it is the principal-component regression coefficient
/// `sum_(j<=r) lambda_j^-1 v_j (v_j^T N^-1 X^T y)`. Requires every retained
/// eigenvalue to be numerically positive. `r = 0` reduces to the
/// Horvitz-Thompson estimator.
pub fn generalized_difference_estimate(
    sample: &SampleData,
    frame: &PopulationFrame,
    r: usize,
) -> Result<Array1<f64>, CalibrateError> {
    assert!(frame.is_centered(), "generalized difference estimate requires a centered frame");
    let p = frame.aux_count();
    if r > p {
        return Err(CalibrateError::ComponentOutOfRange { r, max: p });
    }
    let spectrum = symmetric_eig(&population_covariance(frame))?;
    let n = frame.unit_count() as f64;
    let cross = frame.aux().t().dot(frame.outcomes()) / n;
    let q = frame.outcome_count();
    let mut coefficient = Array2::<f64>::zeros((p, q));
    for j in 0..r {
        let lambda = spectrum.eigenvalues()[j];
        if lambda <= ZERO_EIGENVALUE {
            return Err(CalibrateError::Eigen(EigenError::ZeroEigenvalue {
                index: j + 1,
                value: lambda,
            }));
        }
        let v = spectrum.eigenvectors().column(j);
        let loadings = v.dot(&cross);
        for l in 0..q {
            let scale = loadings[l] / lambda;
            for i in 0..p {
                coefficient[[i, l]] += scale * v[i];
            }
        }
    }
    let ht_y = ht_outcome_totals(sample);
    let ht_aux = sample.aux_rows().t().dot(sample.design_weights());
    let t_x = crate::model::population_totals(frame);
    let delta = &ht_aux - t_x.values();
    Ok(&ht_y - &delta.dot(&coefficient))
}

/// Calibration on the first `r` population principal components.
///
/// `r = 0` is the Horvitz-Thompson endpoint: with no intercept the weights
/// are exactly the design weights; with an intercept the weight sum alone is
/// calibrated. The component totals are exactly zero on a centered frame, so
/// the basis totals are stored as zero.
pub fn pc_calibration(
    sample: &SampleData,
    frame: &PopulationFrame,
    spectrum: &SymmetricSpectrum,
    r: usize,
    intercept: Intercept,
) -> Result<CalibrationResult, CalibrateError> {
    let p = frame.aux_count();
    if r > p {
        return Err(CalibrateError::ComponentOutOfRange { r, max: p });
    }
    if r == 0 {
        return pc_zero(sample, frame, intercept, "pc(0)");
    }
    let pcs = principal_components(frame, spectrum, r)?;
    pc_calibration_prepared(sample, &pcs, r, intercept, Some(&crate::model::population_totals(frame)))
}

/// Principal-component calibration from precomputed population scores.
///
/// `pcs` holds scores for every population unit; rows are picked out by the
/// sample's indices. `r` may retain a prefix of the available components.
/// `original_totals`, when given, feeds the squared-calibration-error
/// diagnostic.
pub fn pc_calibration_prepared(
    sample: &SampleData,
    pcs: &PrincipalComponents,
    r: usize,
    intercept: Intercept,
    original_totals: Option<&TotalsVector>,
) -> Result<CalibrationResult, CalibrateError> {
    if r > pcs.r() {
        return Err(CalibrateError::ComponentOutOfRange { r, max: pcs.r() });
    }
    let scores = sample_rows(&pcs.scores().slice(s![.., ..r]), sample.indices());
    let basis = intercept.apply(AuxBasis::new(
        scores,
        Array1::zeros(r),
        format!("pc({r})"),
    ));
    let solved = solve_weighted(sample, &basis, None)?;
    let original_coefficient = if intercept.is_included() {
        None
    } else {
        Some(pcs.vectors().slice(s![.., ..r]).dot(&solved.coefficient))
    };
    Ok(build_result(sample, &basis, solved, original_coefficient, original_totals))
}

/// The `r = 0` endpoint shared by the component-based calibrations.
fn pc_zero(
    sample: &SampleData,
    frame: &PopulationFrame,
    intercept: Intercept,
    label: &str,
) -> Result<CalibrationResult, CalibrateError> {
    let totals = crate::model::population_totals(frame);
    pc_zero_with_totals(sample, &totals, frame.aux_count(), intercept, label)
}

fn pc_zero_with_totals(
    sample: &SampleData,
    aux_totals: &TotalsVector,
    p: usize,
    intercept: Intercept,
    label: &str,
) -> Result<CalibrationResult, CalibrateError> {
    let n = sample.len();
    let basis = intercept.apply(AuxBasis::new(
        Array2::zeros((n, 0)),
        Array1::zeros(0),
        label.to_string(),
    ));
    let solved = solve_weighted(sample, &basis, None)?;
    let q = sample.outcome_rows().ncols();
    let original_coefficient =
        if intercept.is_included() { None } else { Some(Array2::zeros((p, q))) };
    Ok(build_result(sample, &basis, solved, original_coefficient, Some(aux_totals)))
}

/// Calibration on the first `r` components and their squares, matching the
/// component totals (zero) and second moments (`N lambda_j`) at once.
pub fn pc2_calibration(
    sample: &SampleData,
    frame: &PopulationFrame,
    spectrum: &SymmetricSpectrum,
    r: usize,
    intercept: Intercept,
) -> Result<CalibrationResult, CalibrateError> {
    let p = frame.aux_count();
    if r == 0 || r > p {
        return Err(CalibrateError::ComponentOutOfRange { r, max: p });
    }
    let n = sample.len();
    if 2 * r >= n {
        return Err(CalibrateError::TooManyMoments { r, n });
    }
    let pcs = principal_components(frame, spectrum, r)?;
    let scores = sample_rows(&pcs.scores().view(), sample.indices());
    let population = frame.unit_count() as f64;
    let mut matrix = Array2::<f64>::zeros((n, 2 * r));
    matrix.slice_mut(s![.., ..r]).assign(&scores);
    matrix.slice_mut(s![.., r..]).assign(&scores.mapv(|z| z * z));
    let mut totals = Array1::<f64>::zeros(2 * r);
    for j in 0..r {
        totals[r + j] = population * pcs.eigenvalues()[j];
    }
    let basis = intercept.apply(AuxBasis::new(matrix, totals, format!("pc2({r})")));
    let solved = solve_weighted(sample, &basis, None)?;
    let original_totals = crate::model::population_totals(frame);
    Ok(build_result(sample, &basis, solved, None, Some(&original_totals)))
}

/// Calibration on estimated principal components when auxiliary values are
/// only observed on the sample.
///
/// Components come from the design-weighted covariance of the sampled rows;
/// their implied population totals are the linear functionals
/// `t_x^T v_hat_j` of the known totals.
pub fn epc_calibration(
    sample: &SampleData,
    aux_totals: &TotalsVector,
    r: usize,
    intercept: Intercept,
) -> Result<CalibrationResult, CalibrateError> {
    let spectrum = symmetric_eig(&weighted_covariance(sample)?)?;
    epc_calibration_with_spectrum(sample, aux_totals, &spectrum, r, intercept)
}

/// Estimated-component calibration with a precomputed spectrum of the
/// design-weighted covariance, so selection rules can scan `r` without
/// re-decomposing.
pub fn epc_calibration_with_spectrum(
    sample: &SampleData,
    aux_totals: &TotalsVector,
    spectrum: &SymmetricSpectrum,
    r: usize,
    intercept: Intercept,
) -> Result<CalibrationResult, CalibrateError> {
    let p = sample.aux_rows().ncols();
    if r > p {
        return Err(CalibrateError::ComponentOutOfRange { r, max: p });
    }
    if r == 0 {
        return pc_zero_with_totals(sample, aux_totals, p, intercept, "epc(0)");
    }
    let (pcs, implied_totals) = estimated_principal_components(sample, aux_totals, spectrum, r)?;
    let basis = intercept.apply(AuxBasis::new(
        pcs.scores().clone(),
        implied_totals.values().clone(),
        format!("epc({r})"),
    ));
    let solved = solve_weighted(sample, &basis, None)?;
    let original_coefficient = if intercept.is_included() {
        None
    } else {
        Some(pcs.vectors().dot(&solved.coefficient))
    };
    Ok(build_result(sample, &basis, solved, original_coefficient, Some(aux_totals)))
}

/// Source of the residual principal components for partial calibration.
#[derive(Debug, Clone, Copy)]
pub enum PartialSource<'a> {
    /// Residual components of the full population frame (auxiliaries known
    /// for every unit). The sample must be drawn from this frame.
    Population(&'a PopulationFrame),
    /// Residual components estimated from the sample alone; only the
    /// population totals of all auxiliary variables are known.
    Estimated(&'a TotalsVector),
}

/// Partial calibration: the columns in `p1_columns` stay exactly
/// calibrated, the remaining columns are compressed to `r` principal
/// components of their projection residual.
///
/// In the population variant the residual is `A = (I - P_1) X_2` with `P_1`
/// the orthogonal projection onto the first block, and the component totals
/// are the exact column sums of `A v_j`. In the estimated variant the
/// projection uses the design-weighted sample inner product, the residual
/// PCA uses the design-weighted covariance, and the component totals are
/// derived from the known totals: `v_hat_j^T (t_x2 - M_hat^T t_x1)` where
/// `M_hat` is the estimated projection coefficient.
pub fn partial_pc_calibration(
    sample: &SampleData,
    source: PartialSource<'_>,
    p1_columns: &[usize],
    r: usize,
    intercept: Intercept,
) -> Result<CalibrationResult, CalibrateError> {
    let p = sample.aux_rows().ncols();
    let partition = Partition::new(p1_columns, p)?;
    match source {
        PartialSource::Population(frame) => {
            partial_population(sample, frame, &partition, r, intercept)
        }
        PartialSource::Estimated(totals) => {
            partial_estimated(sample, totals, &partition, r, intercept)
        }
    }
}

struct Partition {
    block1: Vec<usize>,
    block2: Vec<usize>,
}

impl Partition {
    fn new(p1_columns: &[usize], p: usize) -> Result<Self, CalibrateError> {
        let mut seen = vec![false; p];
        for &c in p1_columns {
            if c >= p {
                return Err(CalibrateError::BadPartition(format!(
                    "column {c} is out of range for {p} auxiliary variables"
                )));
            }
            if seen[c] {
                return Err(CalibrateError::BadPartition(format!("column {c} appears twice")));
            }
            seen[c] = true;
        }
        let block1 = p1_columns.to_vec();
        let block2: Vec<usize> = (0..p).filter(|c| !seen[*c]).collect();
        Ok(Self { block1, block2 })
    }
}

fn select_columns(m: &ArrayView2<'_, f64>, columns: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((m.nrows(), columns.len()));
    for (pos, &c) in columns.iter().enumerate() {
        out.column_mut(pos).assign(&m.column(c));
    }
    out
}

fn partial_population(
    sample: &SampleData,
    frame: &PopulationFrame,
    partition: &Partition,
    r: usize,
    intercept: Intercept,
) -> Result<CalibrationResult, CalibrateError> {
    let p2 = partition.block2.len();
    if r > p2 {
        return Err(CalibrateError::ComponentOutOfRange { r, max: p2 });
    }
    let x1 = select_columns(&frame.aux().view(), &partition.block1);
    let x2 = select_columns(&frame.aux().view(), &partition.block2);
    let n_units = frame.unit_count();

    // Residual of the second block after projecting out the first:
    // A = X2 - X1 (X1^T X1)^-1 X1^T X2.
    let residual = if partition.block1.is_empty() {
        x2
    } else {
        let g11 = weighted_gram(x1.view(), Array1::ones(n_units).view());
        let factor = spd_factor(&g11)
            .map_err(|e| CalibrateError::RankDeficientBlock { condition: e.condition() })?;
        let cross = x1.t().dot(&x2);
        let m = factor.solve_mat(cross.view());
        &x2 - &x1.dot(&m)
    };

    let cov = crate::linalg::scaled_gram(residual.view(), 1.0 / n_units as f64);
    let spectrum = symmetric_eig(&cov)?;
    let scores_full = residual.dot(&spectrum.retained_vectors(r));
    let component_totals = scores_full.sum_axis(Axis(0));

    let totals = crate::model::population_totals(frame);
    let t1 = Array1::from_iter(partition.block1.iter().map(|&c| totals.values()[c]));

    let n = sample.len();
    let p1 = partition.block1.len();
    let mut matrix = Array2::<f64>::zeros((n, p1 + r));
    matrix
        .slice_mut(s![.., ..p1])
        .assign(&select_columns(&sample.aux_rows().view(), &partition.block1));
    matrix
        .slice_mut(s![.., p1..])
        .assign(&sample_rows(&scores_full.view(), sample.indices()));
    let mut basis_totals = Array1::<f64>::zeros(p1 + r);
    basis_totals.slice_mut(s![..p1]).assign(&t1);
    basis_totals.slice_mut(s![p1..]).assign(&component_totals);

    let basis =
        intercept.apply(AuxBasis::new(matrix, basis_totals, format!("ppc(p1={p1};r={r})")));
    let solved = solve_weighted(sample, &basis, None)?;
    Ok(build_result(sample, &basis, solved, None, Some(&totals)))
}

fn partial_estimated(
    sample: &SampleData,
    aux_totals: &TotalsVector,
    partition: &Partition,
    r: usize,
    intercept: Intercept,
) -> Result<CalibrationResult, CalibrateError> {
    let p2 = partition.block2.len();
    if r > p2 {
        return Err(CalibrateError::ComponentOutOfRange { r, max: p2 });
    }
    assert_eq!(aux_totals.len(), sample.aux_rows().ncols(), "one total per auxiliary column");
    let d = sample.design_weights();
    let x1 = select_columns(&sample.aux_rows().view(), &partition.block1);
    let x2 = select_columns(&sample.aux_rows().view(), &partition.block2);
    let t1 = Array1::from_iter(partition.block1.iter().map(|&c| aux_totals.values()[c]));
    let t2 = Array1::from_iter(partition.block2.iter().map(|&c| aux_totals.values()[c]));

    // Design-weighted projection coefficient M_hat and residual rows
    // A_hat = X2 - X1 M_hat on the sample.
    let (residual, implied_t2) = if partition.block1.is_empty() {
        (x2.clone(), t2.clone())
    } else {
        let g11 = weighted_gram(x1.view(), d.view());
        let factor = spd_factor(&g11)
            .map_err(|e| CalibrateError::RankDeficientBlock { condition: e.condition() })?;
        let weighted_x2 = &x2 * &d.view().insert_axis(Axis(1));
        let cross = x1.t().dot(&weighted_x2);
        let m = factor.solve_mat(cross.view());
        let residual = &x2 - &x1.dot(&m);
        // Population total of the residual functional x2 - M_hat^T x1.
        let implied_t2 = &t2 - &m.t().dot(&t1);
        (residual, implied_t2)
    };

    let cov = weighted_covariance_rows(residual.view(), d)?;
    let spectrum = symmetric_eig(&cov)?;
    if r > 0 {
        let lambda_r = spectrum.eigenvalues()[r - 1];
        if lambda_r <= ZERO_EIGENVALUE {
            return Err(CalibrateError::Eigen(EigenError::ZeroEigenvalue {
                index: r,
                value: lambda_r,
            }));
        }
    }
    let vectors = spectrum.retained_vectors(r).to_owned();
    let scores = residual.dot(&vectors);
    let component_totals = vectors.t().dot(&implied_t2);

    let n = sample.len();
    let p1 = partition.block1.len();
    let mut matrix = Array2::<f64>::zeros((n, p1 + r));
    matrix.slice_mut(s![.., ..p1]).assign(&x1);
    matrix.slice_mut(s![.., p1..]).assign(&scores);
    let mut basis_totals = Array1::<f64>::zeros(p1 + r);
    basis_totals.slice_mut(s![..p1]).assign(&t1);
    basis_totals.slice_mut(s![p1..]).assign(&component_totals);

    let basis =
        intercept.apply(AuxBasis::new(matrix, basis_totals, format!("ppc_est(p1={p1};r={r})")));
    let solved = solve_weighted(sample, &basis, None)?;
    Ok(build_result(sample, &basis, solved, None, Some(aux_totals)))
}

/// Per-coordinate calibration cost. `Exact` marks an infinite-cost
/// coordinate whose constraint is enforced exactly; finite costs relax the
/// coordinate with penalty `lambda / cost`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost {
    Penalized(f64),
    Exact,
}

/// Ridge (penalized) calibration specification.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSpec {
    pub lambda: f64,
    /// One cost per basis coordinate; empty means unit cost everywhere.
    pub costs: Vec<Cost>,
}

impl RidgeSpec {
    /// Unit costs on every coordinate.
    pub fn uniform(lambda: f64) -> Self {
        Self { lambda, costs: Vec::new() }
    }

    /// Penalty diagonal `lambda / c_j`, with exact coordinates contributing
    /// zero so their constraints bind exactly in the mixed system.
    fn penalty_diagonal(&self, dim: usize) -> Result<Array1<f64>, CalibrateError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(CalibrateError::BadPenalty(self.lambda));
        }
        if !self.costs.is_empty() && self.costs.len() != dim {
            return Err(CalibrateError::CostLengthMismatch { got: self.costs.len(), expected: dim });
        }
        let mut diag = Array1::<f64>::zeros(dim);
        for j in 0..dim {
            let cost = self.costs.get(j).copied().unwrap_or(Cost::Penalized(1.0));
            diag[j] = match cost {
                Cost::Exact => 0.0,
                Cost::Penalized(c) if c.is_finite() && c > 0.0 => self.lambda / c,
                Cost::Penalized(_) => return Err(CalibrateError::BadCost { index: j }),
            };
        }
        Ok(diag)
    }
}

/// Ridge calibration weights
/// `w_k = d_k - d_k b_k^T (T + lambda C^-1)^-1 (t_bd_hat - t_b)`.
///
/// As `lambda -> 0` the weights approach exact calibration; as
/// `lambda -> infinity` they return to the design weights. Coordinates with
/// `Cost::Exact` contribute zero to the penalty diagonal, so their
/// constraints stay exact at every `lambda`.
pub fn ridge_weights(
    sample: &SampleData,
    basis: &AuxBasis,
    ridge: &RidgeSpec,
) -> Result<Array1<f64>, CalibrateError> {
    let penalty = ridge.penalty_diagonal(basis.dim())?;
    Ok(solve_weighted(sample, basis, Some(&penalty))?.weights)
}

/// Full ridge fit with estimates and diagnostics; see [`ridge_weights`].
pub fn ridge_estimate(
    sample: &SampleData,
    basis: &AuxBasis,
    ridge: &RidgeSpec,
    original_totals: Option<&TotalsVector>,
) -> Result<CalibrationResult, CalibrateError> {
    let penalty = ridge.penalty_diagonal(basis.dim())?;
    let solved = solve_weighted(sample, basis, Some(&penalty))?;
    Ok(build_result(sample, basis, solved, None, original_totals))
}

/// Variance estimate for a calibration estimator: Horvitz-Thompson variance
/// of the regression residuals `e_k = y_k - x_k^T coefficient`, one value
/// per outcome.
pub fn residual_variance_estimate(
    sample: &SampleData,
    probs: &InclusionProbs,
    coefficient: &Array2<f64>,
) -> Result<Array1<f64>, CalibrateError> {
    assert_eq!(coefficient.nrows(), sample.aux_rows().ncols(), "coefficient rows must match p");
    assert_eq!(coefficient.ncols(), sample.outcome_rows().ncols(), "coefficient cols must match q");
    let fitted = sample.aux_rows().dot(coefficient);
    let residuals = sample.outcome_rows() - &fitted;
    let q = residuals.ncols();
    let mut out = Array1::<f64>::zeros(q);
    for l in 0..q {
        out[l] = ht_variance_estimator(sample, probs, residuals.column(l))?;
    }
    Ok(out)
}

fn sample_rows(m: &ArrayView2<'_, f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((indices.len(), m.ncols()));
    for (pos, &i) in indices.iter().enumerate() {
        out.row_mut(pos).assign(&m.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{ht_outcome_totals, inclusion_probs, DesignSpec};
    use crate::model::{center_columns, population_totals, PopulationFrame};
    use ndarray::array;

    /// The worked fixture used throughout: N = 4, one centered auxiliary
    /// variable, outcomes 1..4, sample = first two units with weight 2.
    fn hand_fixture() -> (PopulationFrame, SampleData) {
        let aux = array![[-1.5], [-0.5], [0.5], [1.5]];
        let y = array![[1.0], [2.0], [3.0], [4.0]];
        let frame = PopulationFrame::new(aux, y).unwrap();
        let sample = SampleData::from_frame(&frame, vec![0, 1], array![2.0, 2.0]).unwrap();
        (frame, sample)
    }

    #[test]
    fn hand_fixture_weights_and_estimate() {
        let (frame, sample) = hand_fixture();
        let totals = population_totals(&frame);
        let result = full_calibration(&sample, &totals, Intercept::Omit).unwrap();
        assert!((result.weights[0] - (-0.4)).abs() < 1e-12);
        assert!((result.weights[1] - 1.2).abs() < 1e-12);
        assert!((result.estimate[0] - 2.0).abs() < 1e-12);
        assert_eq!(result.diagnostics.negative_count, 1);
        assert!((result.diagnostics.min_weight - (-0.4)).abs() < 1e-12);
        assert!(result.diagnostics.constraint_residual_norm < 1e-10);
        // Difference form: t_yd_hat - delta^T beta = 6 - (-4)(-1) = 2.
        let beta = result.coefficient[[0, 0]];
        assert!((beta - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn two_forms_agree_on_random_fixture() {
        let aux = array![
            [1.0, 0.3],
            [2.0, -0.5],
            [0.5, 1.5],
            [3.0, 0.1],
            [1.5, -1.0],
            [2.5, 0.7]
        ];
        let y = array![[2.0], [3.5], [1.0], [5.0], [2.2], [4.1]];
        let frame = PopulationFrame::new(aux, y).unwrap();
        let sample =
            SampleData::from_frame(&frame, vec![0, 2, 3, 5], array![1.5, 1.5, 1.5, 1.5]).unwrap();
        let totals = population_totals(&frame);
        let result = full_calibration(&sample, &totals, Intercept::Omit).unwrap();

        let weighted_form = result.estimate[0];
        let ht_y = ht_outcome_totals(&sample)[0];
        let ht_aux = sample.aux_rows().t().dot(sample.design_weights());
        let delta = &ht_aux - totals.values();
        let difference_form = ht_y - delta.dot(&result.coefficient.column(0));
        assert!(
            (weighted_form - difference_form).abs() <= 1e-9 * (1.0 + weighted_form.abs()),
            "weighted {weighted_form} vs difference {difference_form}"
        );
    }

    #[test]
    fn perfect_fit_recovers_exact_total() {
        // y is exactly linear in the auxiliaries: calibration reproduces the
        // true total.
        let aux = array![[1.0, 2.0], [2.0, 1.0], [3.0, 3.0], [4.0, 0.5], [0.5, 4.0]];
        let y = aux.dot(&array![[2.0], [-1.0]]);
        let frame = PopulationFrame::new(aux, y).unwrap();
        let true_total = frame.outcome_totals()[0];
        let sample =
            SampleData::from_frame(&frame, vec![1, 3, 4], Array1::from_elem(3, 5.0 / 3.0)).unwrap();
        let totals = population_totals(&frame);
        let result = full_calibration(&sample, &totals, Intercept::Omit).unwrap();
        assert!((result.estimate[0] - true_total).abs() <= 1e-9 * true_total.abs());
    }

    #[test]
    fn singular_gram_reports_condition() {
        // Duplicated auxiliary column: Gram is exactly singular.
        let aux = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]];
        let y = array![[1.0], [2.0], [3.0], [4.0]];
        let frame = PopulationFrame::new(aux, y).unwrap();
        let sample = SampleData::from_frame(&frame, vec![0, 2], array![2.0, 2.0]).unwrap();
        let totals = population_totals(&frame);
        match full_calibration(&sample, &totals, Intercept::Omit) {
            Err(CalibrateError::SingularGram { condition }) => {
                assert!(condition > 1e12 || condition.is_infinite());
            }
            other => panic!("expected singular Gram, got {other:?}"),
        }
    }

    #[test]
    fn pc_zero_reproduces_design_weights_and_ht() {
        let (frame, _) = hand_fixture();
        let centered = center_columns(&frame);
        let spectrum = symmetric_eig(&population_covariance(&centered)).unwrap();
        let sample_c = SampleData::from_frame(&centered, vec![0, 1], array![2.0, 2.0]).unwrap();
        let result = pc_calibration(&sample_c, &centered, &spectrum, 0, Intercept::Omit).unwrap();
        assert_eq!(result.weights, array![2.0, 2.0]);
        assert_eq!(result.estimate[0], 6.0);
        // HT squared calibration error: |t_xd_hat - t_x|^2 = (-4)^2 = 16.
        assert!(
            (result.diagnostics.sq_calibration_error_on_originals.unwrap() - 16.0).abs() < 1e-12
        );
    }

    #[test]
    fn pc_one_component_matches_hand_weights() {
        // p = 1: the single principal component is the variable itself, so
        // pc(1) equals full calibration.
        let (frame, _) = hand_fixture();
        let centered = center_columns(&frame);
        let spectrum = symmetric_eig(&population_covariance(&centered)).unwrap();
        assert!((spectrum.eigenvalues()[0] - 1.25).abs() < 1e-12);
        let sample = SampleData::from_frame(&centered, vec![0, 1], array![2.0, 2.0]).unwrap();
        let result = pc_calibration(&sample, &centered, &spectrum, 1, Intercept::Omit).unwrap();
        assert!((result.weights[0] - (-0.4)).abs() < 1e-12);
        assert!((result.weights[1] - 1.2).abs() < 1e-12);
        assert!((result.estimate[0] - 2.0).abs() < 1e-12);
        // Coefficient mapped back to the original variable is the GREG slope.
        let beta = result.original_coefficient.as_ref().unwrap()[[0, 0]];
        assert!((beta - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn pc_full_rank_equals_full_calibration() {
        let aux = array![
            [1.0, 0.3, 2.0],
            [2.0, -0.5, 1.0],
            [0.5, 1.5, 0.0],
            [3.0, 0.1, 1.2],
            [1.5, -1.0, 0.4],
            [2.5, 0.7, 2.2],
            [0.2, 0.9, 1.8]
        ];
        let y = array![[2.0], [3.5], [1.0], [5.0], [2.2], [4.1], [0.7]];
        let frame = center_columns(&PopulationFrame::new(aux, y).unwrap());
        let spectrum = symmetric_eig(&population_covariance(&frame)).unwrap();
        let sample = SampleData::from_frame(
            &frame,
            vec![0, 1, 3, 4, 6],
            array![1.4, 1.4, 1.4, 1.4, 1.4],
        )
        .unwrap();
        let totals = population_totals(&frame);
        let full = full_calibration(&sample, &totals, Intercept::Omit).unwrap();
        let pc = pc_calibration(&sample, &frame, &spectrum, 3, Intercept::Omit).unwrap();
        for (a, b) in full.weights.iter().zip(pc.weights.iter()) {
            assert!((a - b).abs() < 1e-9, "weights differ: {a} vs {b}");
        }
        assert!((full.estimate[0] - pc.estimate[0]).abs() < 1e-9);
    }

    #[test]
    fn hajek_weights_from_intercept_only() {
        let (frame, sample) = hand_fixture();
        let centered = center_columns(&frame);
        let spectrum = symmetric_eig(&population_covariance(&centered)).unwrap();
        let sample_c =
            SampleData::from_frame(&centered, sample.indices().to_vec(), array![2.0, 2.0]).unwrap();
        let result = pc_calibration(&sample_c, &centered, &spectrum, 0, Intercept::include(4))
            .unwrap();
        // Weight sum is calibrated to N = 4; uniform design weights give
        // w_k = d_k N / Nhat = 2 * 4/4 = 2.
        assert!((result.weights.sum() - 4.0).abs() < 1e-12);
        assert!((result.weights[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pc2_perfect_fit_on_squared_component() {
        // Outcome equal to the squared first component: second-moment
        // calibration reproduces its total N lambda_1.
        let aux = array![[-2.0], [-1.0], [0.0], [1.0], [2.0]];
        let z2 = aux.mapv(|v| v * v);
        let frame = PopulationFrame::new(aux, z2).unwrap();
        let centered = center_columns(&frame);
        let spectrum = symmetric_eig(&population_covariance(&centered)).unwrap();
        let sample = SampleData::from_frame(
            &centered,
            vec![0, 1, 3],
            array![5.0 / 3.0, 5.0 / 3.0, 5.0 / 3.0],
        )
        .unwrap();
        let result = pc2_calibration(&sample, &centered, &spectrum, 1, Intercept::Omit).unwrap();
        let n_lambda = 5.0 * spectrum.eigenvalues()[0];
        assert!((result.estimate[0] - n_lambda).abs() <= 1e-9 * n_lambda);
        assert!((n_lambda - 10.0).abs() < 1e-12);
    }

    #[test]
    fn pc2_requires_enough_sample() {
        let (frame, _) = hand_fixture();
        let centered = center_columns(&frame);
        let spectrum = symmetric_eig(&population_covariance(&centered)).unwrap();
        let sample = SampleData::from_frame(&centered, vec![0, 1], array![2.0, 2.0]).unwrap();
        assert!(matches!(
            pc2_calibration(&sample, &centered, &spectrum, 1, Intercept::Omit),
            Err(CalibrateError::TooManyMoments { r: 1, n: 2 })
        ));
    }

    #[test]
    fn epc_census_equals_pc() {
        let aux = array![
            [1.0, 0.3],
            [2.0, -0.5],
            [0.5, 1.5],
            [3.0, 0.1],
            [1.5, -1.0],
            [2.5, 0.7]
        ];
        let y = array![[2.0], [3.5], [1.0], [5.0], [2.2], [4.1]];
        let frame = center_columns(&PopulationFrame::new(aux, y).unwrap());
        let census = SampleData::from_frame(
            &frame,
            (0..6).collect(),
            Array1::ones(6),
        )
        .unwrap();
        let totals = population_totals(&frame);
        let spectrum = symmetric_eig(&population_covariance(&frame)).unwrap();
        for r in 1..=2usize {
            let pc = pc_calibration(&census, &frame, &spectrum, r, Intercept::Omit).unwrap();
            let epc = epc_calibration(&census, &totals, r, Intercept::Omit).unwrap();
            for (a, b) in pc.weights.iter().zip(epc.weights.iter()) {
                assert!((a - b).abs() < 1e-9, "census weights differ at r={r}: {a} vs {b}");
            }
            assert!((pc.estimate[0] - epc.estimate[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn partial_population_keeps_block_one_exact_and_orthogonal() {
        let aux = array![
            [1.0, 0.3, 2.0, 0.4],
            [2.0, -0.5, 1.0, 1.1],
            [0.5, 1.5, 0.0, -0.2],
            [3.0, 0.1, 1.2, 0.8],
            [1.5, -1.0, 0.4, 2.0],
            [2.5, 0.7, 2.2, -1.0],
            [0.2, 0.9, 1.8, 0.5],
            [1.8, 1.2, 0.3, 1.4]
        ];
        let y = array![[2.0], [3.5], [1.0], [5.0], [2.2], [4.1], [0.7], [3.0]];
        let frame = center_columns(&PopulationFrame::new(aux, y).unwrap());
        let sample = SampleData::from_frame(
            &frame,
            vec![0, 2, 3, 5, 6, 7],
            Array1::from_elem(6, 8.0 / 6.0),
        )
        .unwrap();
        let result = partial_pc_calibration(
            &sample,
            PartialSource::Population(&frame),
            &[0, 1],
            1,
            Intercept::Omit,
        )
        .unwrap();
        // Exact constraints on the first block.
        let totals = population_totals(&frame);
        for (pos, &c) in [0usize, 1].iter().enumerate() {
            let achieved: f64 = sample
                .aux_rows()
                .column(c)
                .iter()
                .zip(result.weights.iter())
                .map(|(x, w)| x * w)
                .sum();
            let _ = pos;
            assert!(
                (achieved - totals.values()[c]).abs() <= 1e-8 * (1.0 + totals.values()[c].abs()),
                "block-one constraint on column {c} violated"
            );
        }
        assert!(result.diagnostics.constraint_residual_norm < 1e-8);
    }

    #[test]
    fn partial_estimated_projection_is_weighted_orthogonal() {
        let aux = array![
            [1.0, 0.3, 2.0],
            [2.0, -0.5, 1.0],
            [0.5, 1.5, 0.0],
            [3.0, 0.1, 1.2],
            [1.5, -1.0, 0.4],
            [2.5, 0.7, 2.2],
            [0.2, 0.9, 1.8]
        ];
        let y = array![[2.0], [3.5], [1.0], [5.0], [2.2], [4.1], [0.7]];
        let frame = PopulationFrame::new(aux, y).unwrap();
        let totals = population_totals(&frame);
        let sample = SampleData::from_frame(
            &frame,
            vec![0, 1, 3, 4, 6],
            Array1::from_elem(5, 7.0 / 5.0),
        )
        .unwrap();
        let result = partial_pc_calibration(
            &sample,
            PartialSource::Estimated(&totals),
            &[0],
            1,
            Intercept::Omit,
        )
        .unwrap();
        // Constraint on the exactly calibrated column holds.
        let achieved: f64 = sample
            .aux_rows()
            .column(0)
            .iter()
            .zip(result.weights.iter())
            .map(|(x, w)| x * w)
            .sum();
        assert!((achieved - totals.values()[0]).abs() <= 1e-8 * (1.0 + totals.values()[0].abs()));
    }

    #[test]
    fn partial_rejects_bad_partitions() {
        let (frame, sample) = hand_fixture();
        assert!(matches!(
            partial_pc_calibration(
                &sample,
                PartialSource::Population(&frame),
                &[0, 0],
                0,
                Intercept::Omit
            ),
            Err(CalibrateError::BadPartition(_))
        ));
        assert!(matches!(
            partial_pc_calibration(
                &sample,
                PartialSource::Population(&frame),
                &[7],
                0,
                Intercept::Omit
            ),
            Err(CalibrateError::BadPartition(_))
        ));
    }

    #[test]
    fn ridge_hand_fixture_and_limits() {
        let (frame, sample) = hand_fixture();
        let totals = population_totals(&frame);
        let basis = AuxBasis::new(sample.aux_rows().clone(), totals.values().clone(), "ridge");

        // lambda = 5 with unit cost: K = 5 + 5 = 10, w = (0.8, 1.6).
        let w5 = ridge_weights(&sample, &basis, &RidgeSpec::uniform(5.0)).unwrap();
        assert!((w5[0] - 0.8).abs() < 1e-12);
        assert!((w5[1] - 1.6).abs() < 1e-12);

        // lambda -> 0 recovers exact calibration.
        let w0 = ridge_weights(&sample, &basis, &RidgeSpec::uniform(5e-12)).unwrap();
        assert!((w0[0] - (-0.4)).abs() < 1e-6);
        assert!((w0[1] - 1.2).abs() < 1e-6);

        // lambda -> infinity returns the design weights.
        let winf = ridge_weights(&sample, &basis, &RidgeSpec::uniform(5e12)).unwrap();
        assert!((winf[0] - 2.0).abs() < 1e-6);
        assert!((winf[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn ridge_exact_cost_keeps_coordinate_calibrated() {
        let aux = array![
            [1.0, 0.3],
            [2.0, -0.5],
            [0.5, 1.5],
            [3.0, 0.1],
            [1.5, -1.0],
            [2.5, 0.7]
        ];
        let y = array![[2.0], [3.5], [1.0], [5.0], [2.2], [4.1]];
        let frame = PopulationFrame::new(aux, y).unwrap();
        let totals = population_totals(&frame);
        let sample =
            SampleData::from_frame(&frame, vec![0, 2, 3, 5], array![1.5, 1.5, 1.5, 1.5]).unwrap();
        let basis = AuxBasis::new(sample.aux_rows().clone(), totals.values().clone(), "ridge");
        let ridge = RidgeSpec { lambda: 3.0, costs: vec![Cost::Exact, Cost::Penalized(1.0)] };
        let w = ridge_weights(&sample, &basis, &ridge).unwrap();
        let achieved: f64 =
            sample.aux_rows().column(0).iter().zip(w.iter()).map(|(x, wk)| x * wk).sum();
        assert!(
            (achieved - totals.values()[0]).abs() <= 1e-8 * (1.0 + totals.values()[0].abs()),
            "exact-cost coordinate drifted: {achieved} vs {}",
            totals.values()[0]
        );
        // The penalized coordinate is allowed slack.
        let relaxed: f64 =
            sample.aux_rows().column(1).iter().zip(w.iter()).map(|(x, wk)| x * wk).sum();
        assert!((relaxed - totals.values()[1]).abs() > 1e-6);
    }

    #[test]
    fn ridge_distance_is_monotone_in_lambda() {
        let (frame, sample) = hand_fixture();
        let totals = population_totals(&frame);
        let basis = AuxBasis::new(sample.aux_rows().clone(), totals.values().clone(), "ridge");
        let phi = |w: &Array1<f64>| -> f64 {
            w.iter()
                .zip(sample.design_weights().iter())
                .map(|(wk, dk)| (wk - dk) * (wk - dk) / dk)
                .sum()
        };
        let mut last = f64::INFINITY;
        for lambda in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let w = ridge_weights(&sample, &basis, &RidgeSpec::uniform(lambda)).unwrap();
            let value = phi(&w);
            assert!(value <= last + 1e-12, "phi increased at lambda={lambda}");
            last = value;
        }
    }

    #[test]
    fn ridge_validates_spec() {
        let (frame, sample) = hand_fixture();
        let totals = population_totals(&frame);
        let basis = AuxBasis::new(sample.aux_rows().clone(), totals.values().clone(), "ridge");
        assert!(matches!(
            ridge_weights(&sample, &basis, &RidgeSpec::uniform(-1.0)),
            Err(CalibrateError::BadPenalty(_))
        ));
        let bad_cost = RidgeSpec { lambda: 1.0, costs: vec![Cost::Penalized(0.0)] };
        assert!(matches!(
            ridge_weights(&sample, &basis, &bad_cost),
            Err(CalibrateError::BadCost { index: 0 })
        ));
        let bad_len = RidgeSpec { lambda: 1.0, costs: vec![Cost::Exact, Cost::Exact] };
        assert!(matches!(
            ridge_weights(&sample, &basis, &bad_len),
            Err(CalibrateError::CostLengthMismatch { got: 2, expected: 1 })
        ));
    }

    #[test]
    fn generalized_difference_matches_population_regression() {
        // y exactly linear in x: the oracle hits the true total exactly for
        // r = p.
        let aux = array![[1.0, 2.0], [2.0, 1.0], [3.0, 3.0], [4.0, 0.5], [0.5, 4.0]];
        let y = aux.dot(&array![[2.0], [-1.0]]);
        let frame = center_columns(&PopulationFrame::new(aux, y).unwrap());
        let true_total = frame.outcome_totals()[0];
        let sample =
            SampleData::from_frame(&frame, vec![1, 3, 4], Array1::from_elem(3, 5.0 / 3.0)).unwrap();
        let oracle = generalized_difference_estimate(&sample, &frame, 2).unwrap();
        assert!((oracle[0] - true_total).abs() <= 1e-9 * (1.0 + true_total.abs()));
        // r = 0 reduces to Horvitz-Thompson.
        let ht = generalized_difference_estimate(&sample, &frame, 0).unwrap();
        assert!((ht[0] - ht_outcome_totals(&sample)[0]).abs() < 1e-12);
    }

    #[test]
    fn residual_variance_matches_classical_form() {
        let aux = array![[1.0], [2.0], [3.0], [4.0], [5.0], [6.0]];
        let y = array![[2.1], [3.9], [6.2], [7.8], [10.1], [12.2]];
        let frame = PopulationFrame::new(aux, y).unwrap();
        let spec = DesignSpec::srswor(3, 6, 1).unwrap();
        let probs = inclusion_probs(&spec);
        let sample = SampleData::from_frame(&frame, vec![1, 2, 5], Array1::from_elem(3, 2.0))
            .unwrap();
        let coefficient = array![[2.0]];
        let variance = residual_variance_estimate(&sample, &probs, &coefficient).unwrap();

        let residuals: Vec<f64> = sample
            .outcome_rows()
            .column(0)
            .iter()
            .zip(sample.aux_rows().column(0).iter())
            .map(|(yv, xv)| yv - 2.0 * xv)
            .collect();
        let n = 3.0;
        let population = 6.0;
        let mean = residuals.iter().sum::<f64>() / n;
        let s2 = residuals.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
        let classical = population * population * (1.0 - n / population) * s2 / n;
        assert!((variance[0] - classical).abs() <= 1e-9 * classical.abs().max(1.0));
    }
}
