//! Data-driven choice of the component count `r` and the ridge penalty
//! `lambda` by the positive-weights rule: keep as much auxiliary information
//! as the sample supports without driving any calibrated weight to zero or
//! below.
//!
//! Neither selector consults outcome values: both are functions of the
//! design weights and the auxiliary data alone, so the selected tuning
//! applies to every outcome at once.

use crate::calibrate::{
    epc_calibration_with_spectrum, pc_calibration_prepared, ridge_weights, AuxBasis,
    CalibrationResult, Intercept, RidgeSpec,
};
use crate::eigen::{
    principal_components, symmetric_eig, weighted_covariance, SymmetricSpectrum,
};
use crate::linalg::weighted_gram;
use crate::model::{PopulationFrame, SampleData, TotalsVector};

/// Record of one selection scan: every candidate tried, the smallest weight
/// it produced (NaN when the solve failed), whether all weights were
/// strictly positive, and the chosen value. Re-running the candidates
/// reproduces `chosen`.
#[derive(Debug, Clone)]
pub struct SelectionTrace {
    pub candidate_values: Vec<f64>,
    pub min_weight_per_candidate: Vec<f64>,
    pub all_positive_mask: Vec<bool>,
    pub chosen: f64,
}

/// Result of the component-count scan.
#[derive(Debug, Clone)]
pub struct RSelection {
    pub r: usize,
    /// True when the scan chose the last candidate, i.e. a larger `r_max`
    /// might have been chosen too.
    pub at_max: bool,
    pub trace: SelectionTrace,
}

/// Result of the penalty scan.
#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// True when no grid value produced strictly positive weights; `lambda`
    /// is then the largest grid value.
    pub saturated: bool,
    pub trace: SelectionTrace,
}

/// Where the principal components for the scan come from.
#[derive(Debug, Clone, Copy)]
pub enum ComponentSource<'a> {
    /// Population components of a centered frame with a precomputed
    /// spectrum; candidate `r` uses `pc` calibration.
    Population { frame: &'a PopulationFrame, spectrum: &'a SymmetricSpectrum },
    /// Components estimated from the sample's design-weighted covariance;
    /// candidate `r` uses `epc` calibration against the known totals.
    Estimated { aux_totals: &'a TotalsVector },
}

/// Default cap on the component scan: never more components than auxiliary
/// variables, than `n - 1`, or than 200.
pub fn default_r_max(p: usize, n: usize) -> usize {
    p.min(n.saturating_sub(1)).min(200)
}

/// Geometric penalty grid, expressed as multiples of the Frobenius norm of
/// the weighted basis Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    pub min_factor: f64,
    pub max_factor: f64,
    pub points: usize,
    pub bisection_steps: usize,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        Self { min_factor: 1e-6, max_factor: 1e6, points: 61, bisection_steps: 40 }
    }
}

fn min_weight(result: Result<CalibrationResult, crate::calibrate::CalibrateError>) -> f64 {
    match result {
        Ok(res) => res.diagnostics.min_weight,
        Err(_) => f64::NAN,
    }
}

/// Largest component count whose calibrated weights are all strictly
/// positive.
///
/// Scans every `r` in `0..=r_max` (default [`default_r_max`]); a candidate
/// whose Gram solve fails counts as non-positive. `r = 0` keeps the design
/// weights (or the positive weight-sum calibration when an intercept is
/// requested), so the scan always has a floor and the function cannot fail.
pub fn select_r_positive(
    sample: &SampleData,
    source: ComponentSource<'_>,
    r_max: Option<usize>,
    intercept: Intercept,
) -> RSelection {
    let p = sample.aux_rows().ncols();
    let n = sample.len();
    let r_max = r_max.unwrap_or_else(|| default_r_max(p, n));
    assert!(r_max <= p, "r_max {r_max} exceeds the {p} auxiliary variables");
    assert!(r_max < n, "r_max {r_max} must stay below the sample size {n}");

    let min_weights: Vec<f64> = match source {
        ComponentSource::Population { frame, spectrum } => {
            let pcs = if r_max >= 1 {
                Some(
                    principal_components(frame, spectrum, r_max)
                        .expect("r_max is within the spectrum"),
                )
            } else {
                None
            };
            (0..=r_max)
                .map(|r| {
                    if r == 0 {
                        min_weight(crate::calibrate::pc_calibration(
                            sample, frame, spectrum, 0, intercept,
                        ))
                    } else {
                        min_weight(pc_calibration_prepared(
                            sample,
                            pcs.as_ref().expect("components exist for r >= 1"),
                            r,
                            intercept,
                            None,
                        ))
                    }
                })
                .collect()
        }
        ComponentSource::Estimated { aux_totals } => {
            // One covariance spectrum serves every candidate. If it cannot
            // be computed at all, every r >= 1 counts as a failed
            // candidate and the scan falls back to r = 0.
            let spectrum = weighted_covariance(sample).ok().and_then(|c| symmetric_eig(&c).ok());
            (0..=r_max)
                .map(|r| match (&spectrum, r) {
                    (_, 0) => min_weight(epc_calibration_with_spectrum(
                        sample,
                        aux_totals,
                        // The r = 0 path never touches the spectrum; any
                        // correctly sized one will do.
                        &SymmetricSpectrum::identity(p),
                        0,
                        intercept,
                    )),
                    (Some(sp), r) => min_weight(epc_calibration_with_spectrum(
                        sample, aux_totals, sp, r, intercept,
                    )),
                    (None, _) => f64::NAN,
                })
                .collect()
        }
    };

    let mask: Vec<bool> = min_weights.iter().map(|m| *m > 0.0).collect();
    let chosen = mask.iter().rposition(|ok| *ok).unwrap_or(0);
    RSelection {
        r: chosen,
        at_max: chosen == r_max,
        trace: SelectionTrace {
            candidate_values: (0..=r_max).map(|r| r as f64).collect(),
            min_weight_per_candidate: min_weights,
            all_positive_mask: mask,
            chosen: chosen as f64,
        },
    }
}

/// Smallest penalty on a geometric grid whose ridge weights are all
/// strictly positive, sharpened by log-space bisection between the
/// bracketing grid points.
///
/// The grid spans `min_factor * g ..= max_factor * g` with `g` the
/// Frobenius norm of the weighted basis Gram matrix. When even the largest
/// grid value leaves some weight at or below zero, that value is returned
/// with `saturated` set; when the smallest grid value already works it is
/// returned unrefined.
pub fn select_lambda_positive(
    sample: &SampleData,
    basis: &AuxBasis,
    grid: &LambdaGrid,
) -> LambdaSelection {
    assert!(grid.points >= 2, "penalty grid needs at least two points");
    assert!(
        grid.min_factor > 0.0 && grid.max_factor > grid.min_factor,
        "penalty grid bounds must be positive and increasing"
    );
    let gram = weighted_gram(basis.sample_matrix().view(), sample.design_weights().view());
    let mut frob = gram.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(frob.is_finite() && frob > 0.0) {
        frob = 1.0;
    }

    let lo = (grid.min_factor * frob).ln();
    let hi = (grid.max_factor * frob).ln();
    let step = (hi - lo) / (grid.points - 1) as f64;
    let candidates: Vec<f64> = (0..grid.points).map(|i| (lo + step * i as f64).exp()).collect();

    let eval = |lambda: f64| -> f64 {
        match ridge_weights(sample, basis, &RidgeSpec::uniform(lambda)) {
            Ok(w) => w.iter().copied().fold(f64::INFINITY, f64::min),
            Err(_) => f64::NAN,
        }
    };

    let min_weights: Vec<f64> = candidates.iter().map(|l| eval(*l)).collect();
    let mask: Vec<bool> = min_weights.iter().map(|m| *m > 0.0).collect();

    let (lambda, saturated) = match mask.iter().position(|ok| *ok) {
        None => (candidates[grid.points - 1], true),
        Some(0) => (candidates[0], false),
        Some(i) => {
            // Bisect in log space between the failing and succeeding grid
            // neighbours, keeping the upper end strictly positive.
            let mut lo_ln = candidates[i - 1].ln();
            let mut hi_ln = candidates[i].ln();
            for _ in 0..grid.bisection_steps {
                let mid_ln = 0.5 * (lo_ln + hi_ln);
                if eval(mid_ln.exp()) > 0.0 {
                    hi_ln = mid_ln;
                } else {
                    lo_ln = mid_ln;
                }
            }
            (hi_ln.exp(), false)
        }
    };

    LambdaSelection {
        lambda,
        saturated,
        trace: SelectionTrace {
            candidate_values: candidates,
            min_weight_per_candidate: min_weights,
            all_positive_mask: mask,
            chosen: lambda,
        },
    }
}
