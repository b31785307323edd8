//! Monte Carlo harness: synthetic populations with a daily-curve structure,
//! repeated sampling under a fixed design, a configurable estimator bank
//! evaluated on shared samples, and report aggregation.
//!
//! Every replicate draws one sample and evaluates every estimator on it, so
//! comparisons are paired. Replicates run in parallel, each on its own
//! counter-based RNG stream, and are aggregated in replicate order, so a run
//! is bitwise reproducible regardless of thread count.

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use thiserror::Error;

use crate::calibrate::{
    epc_calibration, full_calibration, partial_pc_calibration, pc2_calibration, pc_calibration,
    pc_calibration_prepared, ridge_estimate, AuxBasis, CalibrateError, CalibrationResult,
    Intercept, PartialSource, RidgeSpec,
};
use crate::design::{draw_sample, DesignError, DesignSpec, ReplicateRng};
use crate::eigen::{
    population_covariance, principal_components, symmetric_eig, EigenError, PrincipalComponents,
    SymmetricSpectrum,
};
use crate::model::{
    center_columns, population_totals, ModelError, PopulationFrame, SampleData, TotalsVector,
};
use crate::select::{
    default_r_max, select_lambda_positive, select_r_positive, ComponentSource, LambdaGrid,
};

#[derive(Debug, Error)]
pub enum SimulateError {
    /// One or more configuration problems, one per line.
    #[error("invalid configuration:\n{0}")]
    BadConfig(String),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Calibrate(#[from] CalibrateError),
}

/// Parameters of the synthetic population generator.
///
/// Each unit carries a daily load curve: a unit-specific level, a few
/// unit-specific daily harmonics, and slot-level noise. The auxiliary
/// variables are the `past_days * slots_per_day` observed past values; the
/// outcomes are the `future_days` future daily sums. Future noise is
/// correlated with the matching past slot (coefficient
/// `cross_week_correlation`), so the past curve genuinely predicts the
/// future totals. All values are rectified at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPopSpec {
    pub population_size: usize,
    pub slots_per_day: usize,
    pub past_days: usize,
    pub future_days: usize,
    /// Number of unit-specific daily sinusoid components.
    pub harmonics: usize,
    /// Mean of the unit level; keeps the curves comfortably positive.
    pub level_mean: f64,
    /// Standard deviation of the unit level, the dominant source of
    /// cross-unit variance.
    pub unit_level_sd: f64,
    /// Amplitude standard deviation of harmonic `h` is `harmonic_sd / h`.
    pub harmonic_sd: f64,
    /// Standard deviation of slot-level noise.
    pub noise_sd: f64,
    /// Correlation between a future slot's noise and the matching past
    /// slot's noise, in `[0, 1]`.
    pub cross_week_correlation: f64,
    pub seed: u64,
}

impl Default for SyntheticPopSpec {
    fn default() -> Self {
        Self {
            population_size: 2000,
            slots_per_day: 48,
            past_days: 7,
            future_days: 7,
            harmonics: 3,
            level_mean: 5.0,
            unit_level_sd: 1.0,
            harmonic_sd: 0.6,
            noise_sd: 0.25,
            cross_week_correlation: 0.7,
            seed: 1,
        }
    }
}

impl SyntheticPopSpec {
    /// Auxiliary dimension `past_days * slots_per_day` of the generated
    /// frame.
    pub fn aux_dim(&self) -> usize {
        self.past_days * self.slots_per_day
    }

    /// All constraint violations in this specification, empty when it is
    /// valid. Front ends can report the full list before generating.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.population_size < 2 {
            v.push("population_size must be at least 2".to_string());
        }
        if self.slots_per_day == 0 {
            v.push("slots_per_day must be positive".to_string());
        }
        if self.past_days == 0 {
            v.push("past_days must be positive".to_string());
        }
        if self.future_days == 0 {
            v.push("future_days must be positive".to_string());
        }
        for (name, value) in [
            ("level_mean", self.level_mean),
            ("unit_level_sd", self.unit_level_sd),
            ("harmonic_sd", self.harmonic_sd),
            ("noise_sd", self.noise_sd),
        ] {
            if !value.is_finite() || value < 0.0 {
                v.push(format!("{name} must be finite and nonnegative, got {value}"));
            }
        }
        let rho = self.cross_week_correlation;
        if !(0.0..=1.0).contains(&rho) {
            v.push(format!("cross_week_correlation must lie in [0, 1], got {rho}"));
        }
        v
    }
}

/// Generates the synthetic population. Deterministic in `spec` (each unit
/// has its own RNG stream keyed by `(seed, unit index)`); the frame is not
/// centered.
pub fn synthetic_load_population(spec: &SyntheticPopSpec) -> Result<PopulationFrame, SimulateError> {
    let violations = spec.violations();
    if !violations.is_empty() {
        return Err(SimulateError::BadConfig(violations.join("\n")));
    }
    let n = spec.population_size;
    let slots = spec.slots_per_day;
    let p = spec.aux_dim();
    let q = spec.future_days;
    let rho = spec.cross_week_correlation;
    let fresh_scale = (1.0 - rho * rho).sqrt();
    let two_pi = std::f64::consts::TAU;

    let mut aux = Array2::<f64>::zeros((n, p));
    let mut outcomes = Array2::<f64>::zeros((n, q));
    // Daily base pattern of one unit at slot `t`, shared by all days.
    let mut base = vec![0.0f64; slots];
    let mut past_noise = vec![0.0f64; p];
    for k in 0..n {
        let mut rng = ReplicateRng::new(spec.seed, k as u64);
        // Fixed draw order: level, harmonic pairs, past noise, future noise.
        let level = spec.level_mean + spec.unit_level_sd * rng.standard_normal();
        base.iter_mut().for_each(|b| *b = level);
        for h in 1..=spec.harmonics {
            let scale = spec.harmonic_sd / h as f64;
            let a = scale * rng.standard_normal();
            let b = scale * rng.standard_normal();
            for (t, value) in base.iter_mut().enumerate() {
                let angle = two_pi * h as f64 * t as f64 / slots as f64;
                *value += a * angle.sin() + b * angle.cos();
            }
        }
        for (j, noise) in past_noise.iter_mut().enumerate() {
            *noise = spec.noise_sd * rng.standard_normal();
            aux[[k, j]] = (base[j % slots] + *noise).max(0.0);
        }
        for day in 0..q {
            let mut day_sum = 0.0;
            for t in 0..slots {
                let past_slot = (day % spec.past_days) * slots + t;
                let noise = rho * past_noise[past_slot]
                    + fresh_scale * spec.noise_sd * rng.standard_normal();
                day_sum += (base[t] + noise).max(0.0);
            }
            outcomes[[k, day]] = day_sum;
        }
    }
    Ok(PopulationFrame::new(aux, outcomes)?)
}

/// One estimator in the Monte Carlo bank.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind {
    /// Horvitz-Thompson, the design-weighted baseline.
    Ht,
    /// Calibration on all auxiliary variables.
    Full,
    /// Calibration on the first `r` population principal components.
    Pc { r: usize },
    /// Calibration on the first `r` estimated principal components.
    Epc { r: usize },
    /// Calibration on `r` components and their squares.
    Pc2 { r: usize },
    /// Partial calibration: listed columns exact, the rest compressed to
    /// `r` residual components.
    Ppc { p1_columns: Vec<usize>, r: usize },
    /// Ridge calibration with unit costs; `None` selects the penalty by
    /// the positive-weights rule on each replicate.
    Ridge { lambda: Option<f64> },
    /// Component calibration with `r` selected by the positive-weights
    /// rule on each replicate; `r_max` caps the scan.
    PcAuto { r_max: Option<usize> },
    /// As [`EstimatorKind::PcAuto`], with estimated components.
    EpcAuto { r_max: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub include_intercept: bool,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind) -> Self {
        Self { kind, include_intercept: false }
    }

    pub fn with_intercept(kind: EstimatorKind) -> Self {
        Self { kind, include_intercept: true }
    }

    /// Stable identifier used in reports and for naming the reference
    /// estimator. Contains no commas.
    pub fn label(&self) -> String {
        let base = match &self.kind {
            EstimatorKind::Ht => "ht".to_string(),
            EstimatorKind::Full => "full".to_string(),
            EstimatorKind::Pc { r } => format!("pc({r})"),
            EstimatorKind::Epc { r } => format!("epc({r})"),
            EstimatorKind::Pc2 { r } => format!("pc2({r})"),
            EstimatorKind::Ppc { p1_columns, r } => {
                let cols =
                    p1_columns.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("+");
                format!("ppc({cols};r={r})")
            }
            EstimatorKind::Ridge { lambda: Some(l) } => format!("ridge({l})"),
            EstimatorKind::Ridge { lambda: None } => "ridge(auto)".to_string(),
            EstimatorKind::PcAuto { r_max: Some(m) } => format!("pc(auto:{m})"),
            EstimatorKind::PcAuto { r_max: None } => "pc(auto)".to_string(),
            EstimatorKind::EpcAuto { r_max: Some(m) } => format!("epc(auto:{m})"),
            EstimatorKind::EpcAuto { r_max: None } => "epc(auto)".to_string(),
        };
        if self.include_intercept {
            format!("{base}+int")
        } else {
            base
        }
    }

    /// Largest component count this estimator can ask for, used to size the
    /// shared score matrix.
    fn pc_components_needed(&self, p: usize, n: usize) -> usize {
        match &self.kind {
            EstimatorKind::Pc { r } => *r,
            EstimatorKind::PcAuto { r_max } => r_max.unwrap_or_else(|| default_r_max(p, n)),
            _ => 0,
        }
    }

    fn has_selection(&self) -> bool {
        matches!(
            self.kind,
            EstimatorKind::Ridge { lambda: None }
                | EstimatorKind::PcAuto { .. }
                | EstimatorKind::EpcAuto { .. }
        )
    }

    /// Appends every way this estimator is incompatible with a population
    /// of `p` auxiliary variables sampled `n` at a time. Front ends can
    /// collect violations across a whole bank before running anything.
    pub fn violations(&self, p: usize, n: usize, out: &mut Vec<String>) {
        let label = self.label();
        match &self.kind {
            EstimatorKind::Ht => {
                if self.include_intercept {
                    out.push(format!(
                        "{label}: the design-weighted baseline takes no intercept; \
                         use pc(0) with an intercept for the ratio form"
                    ));
                }
            }
            EstimatorKind::Full => {}
            EstimatorKind::Pc { r } | EstimatorKind::Epc { r } => {
                if *r > p {
                    out.push(format!("{label}: r = {r} exceeds the {p} auxiliary variables"));
                }
            }
            EstimatorKind::Pc2 { r } => {
                if *r == 0 || *r > p {
                    out.push(format!("{label}: r must lie in 1..={p}"));
                } else if 2 * r >= n {
                    out.push(format!(
                        "{label}: second-moment calibration needs 2r < n, got r = {r}, n = {n}"
                    ));
                }
            }
            EstimatorKind::Ppc { p1_columns, r } => {
                let mut seen = vec![false; p];
                for &c in p1_columns {
                    if c >= p {
                        out.push(format!("{label}: column {c} is out of range"));
                    } else if seen[c] {
                        out.push(format!("{label}: column {c} appears twice"));
                    } else {
                        seen[c] = true;
                    }
                }
                let p2 = p - p1_columns.len().min(p);
                if *r > p2 {
                    out.push(format!(
                        "{label}: r = {r} exceeds the {p2} columns outside the exact block"
                    ));
                }
            }
            EstimatorKind::Ridge { lambda: Some(l) } => {
                if !(l.is_finite() && *l >= 0.0) {
                    out.push(format!("{label}: penalty must be finite and nonnegative"));
                }
            }
            EstimatorKind::Ridge { lambda: None } => {}
            EstimatorKind::PcAuto { r_max } | EstimatorKind::EpcAuto { r_max } => {
                if let Some(m) = r_max {
                    if *m > p {
                        out.push(format!("{label}: r_max = {m} exceeds the {p} auxiliary variables"));
                    }
                    if *m >= n {
                        out.push(format!("{label}: r_max = {m} must stay below the sample size {n}"));
                    }
                }
            }
        }
    }
}

/// Monte Carlo run configuration.
#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub design: DesignSpec,
    pub estimators: Vec<EstimatorSpec>,
    pub replicates: usize,
    /// Label of the estimator whose error normalizes the relative MSE.
    pub reference: String,
    /// Keep per-replicate records in the report.
    pub retain_replicates: bool,
}

/// Weight-vector summary: coefficient of variation (divisor `n`; NaN when
/// the mean weight is exactly zero), fraction of strictly positive weights,
/// and the extremes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightDiagnostics {
    pub cv: f64,
    pub positive_fraction: f64,
    pub min: f64,
    pub max: f64,
}

pub fn weight_diagnostics(weights: &Array1<f64>) -> WeightDiagnostics {
    let n = weights.len();
    assert!(n >= 2, "weight diagnostics need at least 2 weights");
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    WeightDiagnostics {
        cv: crate::calibrate::weight_cv(weights),
        positive_fraction: positive as f64 / n as f64,
        min: weights.iter().copied().fold(f64::INFINITY, f64::min),
        max: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Squared Euclidean distance between the weighted sample sums of the
/// auxiliary variables and their population totals.
pub fn calibration_error_sq(
    weights: &Array1<f64>,
    aux_rows: &Array2<f64>,
    totals: &TotalsVector,
) -> f64 {
    assert_eq!(aux_rows.nrows(), weights.len(), "one weight per sampled row");
    assert_eq!(aux_rows.ncols(), totals.len(), "one total per auxiliary column");
    let achieved = aux_rows.t().dot(weights);
    let residual = &achieved - totals.values();
    residual.dot(&residual)
}

/// Ratio of summed squared errors around the true total:
/// `sum_i (estimate_i - t)^2 / sum_i (reference_i - t)^2`. NaN when the
/// denominator is zero (including the census case where both are zero).
pub fn relative_mse(
    estimates: ArrayView1<'_, f64>,
    reference_estimates: ArrayView1<'_, f64>,
    true_total: f64,
) -> f64 {
    assert_eq!(estimates.len(), reference_estimates.len(), "one reference per estimate");
    let num: f64 = estimates.iter().map(|e| (e - true_total) * (e - true_total)).sum();
    let den: f64 =
        reference_estimates.iter().map(|e| (e - true_total) * (e - true_total)).sum();
    if den == 0.0 {
        return f64::NAN;
    }
    num / den
}

/// Everything recorded about one estimator on one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimator: String,
    /// One estimate per outcome; `None` when the fit failed.
    pub estimates: Option<Vec<f64>>,
    pub weight_cv: f64,
    pub positive_fraction: f64,
    pub min_weight: f64,
    pub max_weight: f64,
    pub sq_calibration_error: f64,
    /// Selected `r` or `lambda` for the self-tuning variants.
    pub selected: Option<f64>,
}

/// One report row: an estimator evaluated on one outcome.
#[derive(Debug, Clone)]
pub struct EstimatorOutcomeRow {
    pub estimator: String,
    pub outcome: usize,
    pub relative_mse: f64,
    /// True when the ratio is not the plain sum-over-all-replicates form:
    /// failures forced a per-mean normalization, or the denominator was
    /// zero.
    pub flagged: bool,
    pub mean_estimate: f64,
    pub true_total: f64,
}

/// Per-estimator aggregate over replicates.
#[derive(Debug, Clone)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub failures: usize,
    pub cv_mean: f64,
    pub cv_q1: f64,
    pub cv_median: f64,
    pub cv_q3: f64,
    pub positive_fraction_mean: f64,
    pub min_weight_mean: f64,
    pub sq_calibration_error_mean: f64,
    /// Mean selected `r` or `lambda`; `None` for fixed-tuning estimators.
    pub selected_mean: Option<f64>,
}

/// Full result of a Monte Carlo run.
#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub design: DesignSpec,
    pub replicates: usize,
    pub population_units: usize,
    pub aux_count: usize,
    pub outcome_count: usize,
    pub reference: String,
    pub estimator_labels: Vec<String>,
    pub true_totals: Array1<f64>,
    pub rows: Vec<EstimatorOutcomeRow>,
    pub summaries: Vec<EstimatorSummary>,
    /// Per-replicate records, kept when the config asked for them.
    pub records: Option<Vec<ReplicateRecord>>,
}

/// Interpolating (type-7) quantile of an already sorted slice.
fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

struct Prepared {
    frame: PopulationFrame,
    totals: TotalsVector,
    spectrum: SymmetricSpectrum,
    pcs: Option<PrincipalComponents>,
}

fn validate_config(
    frame: &PopulationFrame,
    config: &MonteCarloConfig,
) -> Result<(), SimulateError> {
    let mut v = Vec::new();
    let p = frame.aux_count();
    let n = config.design.sample_size;
    if config.replicates < 2 {
        v.push(format!("replicates must be at least 2, got {}", config.replicates));
    }
    if config.design.population_size != frame.unit_count() {
        v.push(format!(
            "design population size {} does not match the frame's {} units",
            config.design.population_size,
            frame.unit_count()
        ));
    }
    if config.estimators.is_empty() {
        v.push("the estimator bank is empty".to_string());
    }
    let mut labels = Vec::new();
    for spec in &config.estimators {
        spec.violations(p, n, &mut v);
        let label = spec.label();
        if labels.contains(&label) {
            v.push(format!("estimator {label} appears twice in the bank"));
        }
        labels.push(label);
    }
    if !labels.iter().any(|l| *l == config.reference) {
        v.push(format!("reference estimator {:?} is not in the bank", config.reference));
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(SimulateError::BadConfig(v.join("\n")))
    }
}

fn evaluate_estimator(
    spec: &EstimatorSpec,
    sample: &SampleData,
    prepared: &Prepared,
) -> (Result<CalibrationResult, CalibrateError>, Option<f64>) {
    let intercept = if spec.include_intercept {
        Intercept::include(prepared.frame.unit_count())
    } else {
        Intercept::Omit
    };
    match &spec.kind {
        EstimatorKind::Ht => (
            pc_calibration(sample, &prepared.frame, &prepared.spectrum, 0, Intercept::Omit),
            None,
        ),
        EstimatorKind::Full => {
            (full_calibration(sample, &prepared.totals, intercept), None)
        }
        EstimatorKind::Pc { r: 0 } => (
            pc_calibration(sample, &prepared.frame, &prepared.spectrum, 0, intercept),
            None,
        ),
        EstimatorKind::Pc { r } => (
            pc_calibration_prepared(
                sample,
                prepared.pcs.as_ref().expect("scores prepared for every fixed pc estimator"),
                *r,
                intercept,
                Some(&prepared.totals),
            ),
            None,
        ),
        EstimatorKind::Epc { r } => {
            (epc_calibration(sample, &prepared.totals, *r, intercept), None)
        }
        EstimatorKind::Pc2 { r } => (
            pc2_calibration(sample, &prepared.frame, &prepared.spectrum, *r, intercept),
            None,
        ),
        EstimatorKind::Ppc { p1_columns, r } => (
            partial_pc_calibration(
                sample,
                PartialSource::Population(&prepared.frame),
                p1_columns,
                *r,
                intercept,
            ),
            None,
        ),
        EstimatorKind::Ridge { lambda } => {
            let mut basis = AuxBasis::new(
                sample.aux_rows().clone(),
                prepared.totals.values().clone(),
                "ridge",
            );
            if spec.include_intercept {
                basis = basis.with_intercept(prepared.frame.unit_count() as f64);
            }
            let (value, selected) = match lambda {
                Some(l) => (*l, None),
                None => {
                    let sel = select_lambda_positive(sample, &basis, &LambdaGrid::default());
                    (sel.lambda, Some(sel.lambda))
                }
            };
            (
                ridge_estimate(
                    sample,
                    &basis,
                    &RidgeSpec::uniform(value),
                    Some(&prepared.totals),
                ),
                selected,
            )
        }
        EstimatorKind::PcAuto { r_max } => {
            let sel = select_r_positive(
                sample,
                ComponentSource::Population {
                    frame: &prepared.frame,
                    spectrum: &prepared.spectrum,
                },
                *r_max,
                intercept,
            );
            let result = if sel.r == 0 {
                pc_calibration(sample, &prepared.frame, &prepared.spectrum, 0, intercept)
            } else {
                pc_calibration_prepared(
                    sample,
                    prepared.pcs.as_ref().expect("scores prepared up to the scan cap"),
                    sel.r,
                    intercept,
                    Some(&prepared.totals),
                )
            };
            (result, Some(sel.r as f64))
        }
        EstimatorKind::EpcAuto { r_max } => {
            let sel = select_r_positive(
                sample,
                ComponentSource::Estimated { aux_totals: &prepared.totals },
                *r_max,
                intercept,
            );
            (epc_calibration(sample, &prepared.totals, sel.r, intercept), Some(sel.r as f64))
        }
    }
}

fn evaluate_replicate(
    replicate: usize,
    config: &MonteCarloConfig,
    prepared: &Prepared,
) -> Result<Vec<ReplicateRecord>, SimulateError> {
    let sample = draw_sample(&prepared.frame, &config.design, replicate as u64)?;
    let mut records = Vec::with_capacity(config.estimators.len());
    for spec in &config.estimators {
        let (result, selected) = evaluate_estimator(spec, &sample, prepared);
        let record = match result {
            Ok(res) => {
                let diag = weight_diagnostics(&res.weights);
                ReplicateRecord {
                    replicate,
                    estimator: spec.label(),
                    estimates: Some(res.estimate.to_vec()),
                    weight_cv: diag.cv,
                    positive_fraction: diag.positive_fraction,
                    min_weight: diag.min,
                    max_weight: diag.max,
                    sq_calibration_error: res
                        .diagnostics
                        .sq_calibration_error_on_originals
                        .unwrap_or(f64::NAN),
                    selected,
                }
            }
            Err(_) => ReplicateRecord {
                replicate,
                estimator: spec.label(),
                estimates: None,
                weight_cv: f64::NAN,
                positive_fraction: f64::NAN,
                min_weight: f64::NAN,
                max_weight: f64::NAN,
                sq_calibration_error: f64::NAN,
                selected: None,
            },
        };
        records.push(record);
    }
    Ok(records)
}

/// Runs the full Monte Carlo experiment.
///
/// The frame is centered internally when it is not already centered;
/// population components and scores are computed once and shared across
/// replicates. Replicates are evaluated in parallel on the current thread
/// pool and aggregated in replicate order, so the report does not depend on
/// scheduling. An estimator that fails on a replicate (singular Gram) is
/// excluded from that replicate and counted, never imputed.
pub fn run_monte_carlo(
    frame: &PopulationFrame,
    config: &MonteCarloConfig,
) -> Result<SimulationReport, SimulateError> {
    validate_config(frame, config)?;
    let centered =
        if frame.is_centered() { frame.clone() } else { center_columns(frame) };
    let totals = population_totals(&centered);
    let spectrum = symmetric_eig(&population_covariance(&centered))?;
    let p = centered.aux_count();
    let n = config.design.sample_size;
    let r_need = config
        .estimators
        .iter()
        .map(|spec| spec.pc_components_needed(p, n))
        .max()
        .unwrap_or(0);
    let pcs = if r_need >= 1 {
        Some(principal_components(&centered, &spectrum, r_need)?)
    } else {
        None
    };
    let prepared = Prepared { frame: centered, totals, spectrum, pcs };

    let per_replicate: Result<Vec<Vec<ReplicateRecord>>, SimulateError> = (0..config.replicates)
        .into_par_iter()
        .map(|i| evaluate_replicate(i, config, &prepared))
        .collect();
    let records: Vec<ReplicateRecord> = per_replicate?.into_iter().flatten().collect();

    let true_totals = prepared.frame.outcome_totals();
    let (rows, summaries) = aggregate(&records, config, &true_totals);

    Ok(SimulationReport {
        design: config.design,
        replicates: config.replicates,
        population_units: prepared.frame.unit_count(),
        aux_count: prepared.frame.aux_count(),
        outcome_count: prepared.frame.outcome_count(),
        reference: config.reference.clone(),
        estimator_labels: config.estimators.iter().map(|e| e.label()).collect(),
        true_totals,
        rows,
        summaries,
        records: config.retain_replicates.then_some(records),
    })
}

/// Collapses per-replicate records into report rows and summaries. Pure and
/// deterministic: feeding a report's retained records back in reproduces
/// its rows exactly.
pub fn aggregate(
    records: &[ReplicateRecord],
    config: &MonteCarloConfig,
    true_totals: &Array1<f64>,
) -> (Vec<EstimatorOutcomeRow>, Vec<EstimatorSummary>) {
    let q = true_totals.len();
    let labels: Vec<String> = config.estimators.iter().map(|e| e.label()).collect();
    let total_replicates = config.replicates;

    let collect_estimates = |label: &str| -> Vec<&ReplicateRecord> {
        records.iter().filter(|r| r.estimator == label).collect()
    };
    let reference_records = collect_estimates(&config.reference);

    let mut rows = Vec::with_capacity(labels.len() * q);
    let mut summaries = Vec::with_capacity(labels.len());
    for (label, spec) in labels.iter().zip(&config.estimators) {
        let mine = collect_estimates(label);
        let successes: Vec<&&ReplicateRecord> =
            mine.iter().filter(|r| r.estimates.is_some()).collect();
        let ref_successes: Vec<&&ReplicateRecord> =
            reference_records.iter().filter(|r| r.estimates.is_some()).collect();
        let failures = total_replicates - successes.len();
        let any_failures =
            successes.len() < total_replicates || ref_successes.len() < total_replicates;

        for outcome in 0..q {
            let t = true_totals[outcome];
            let sq = |rs: &[&&ReplicateRecord]| -> f64 {
                rs.iter()
                    .map(|r| {
                        let e = r.estimates.as_ref().expect("filtered to successes")[outcome];
                        (e - t) * (e - t)
                    })
                    .sum()
            };
            let mut num = sq(&successes);
            let mut den = sq(&ref_successes);
            if any_failures {
                // Different replicate sets: compare mean squared errors
                // instead of raw sums, and flag the row.
                num = if successes.is_empty() { f64::NAN } else { num / successes.len() as f64 };
                den = if ref_successes.is_empty() {
                    f64::NAN
                } else {
                    den / ref_successes.len() as f64
                };
            }
            let ratio = if den == 0.0 { f64::NAN } else { num / den };
            let mean_estimate = if successes.is_empty() {
                f64::NAN
            } else {
                successes
                    .iter()
                    .map(|r| r.estimates.as_ref().expect("filtered to successes")[outcome])
                    .sum::<f64>()
                    / successes.len() as f64
            };
            rows.push(EstimatorOutcomeRow {
                estimator: label.clone(),
                outcome,
                relative_mse: ratio,
                flagged: any_failures || den == 0.0 || !ratio.is_finite(),
                mean_estimate,
                true_total: t,
            });
        }

        let mean_of = |pick: &dyn Fn(&ReplicateRecord) -> f64| -> f64 {
            if successes.is_empty() {
                f64::NAN
            } else {
                successes.iter().map(|r| pick(r)).sum::<f64>() / successes.len() as f64
            }
        };
        let mut cvs: Vec<f64> = successes.iter().map(|r| r.weight_cv).collect();
        cvs.sort_by(f64::total_cmp);
        summaries.push(EstimatorSummary {
            estimator: label.clone(),
            failures,
            cv_mean: mean_of(&|r| r.weight_cv),
            cv_q1: quantile_type7(&cvs, 0.25),
            cv_median: quantile_type7(&cvs, 0.5),
            cv_q3: quantile_type7(&cvs, 0.75),
            positive_fraction_mean: mean_of(&|r| r.positive_fraction),
            min_weight_mean: mean_of(&|r| r.min_weight),
            sq_calibration_error_mean: mean_of(&|r| r.sq_calibration_error),
            selected_mean: spec.has_selection().then(|| mean_of(&|r| r.selected.unwrap_or(f64::NAN))),
        });
    }
    (rows, summaries)
}

fn push_float(out: &mut String, value: f64) {
    if value.is_nan() {
        out.push_str("NaN");
    } else {
        out.push_str(&format!("{value}"));
    }
}

/// Renders the aggregated report as CSV, one row per estimator and outcome,
/// with per-estimator weight summaries repeated across that estimator's
/// rows. The output is byte-stable for a given report.
pub fn render_report_csv(report: &SimulationReport) -> String {
    let mut out = String::new();
    out.push_str(
        "estimator,outcome,relative_mse,flagged,failures,replicates,mean_estimate,true_total,\
         cv_mean,cv_q1,cv_median,cv_q3,positive_fraction_mean,min_weight_mean,\
         sq_calibration_error_mean,selected_mean\n",
    );
    for row in &report.rows {
        let summary = report
            .summaries
            .iter()
            .find(|s| s.estimator == row.estimator)
            .expect("every row has a summary");
        out.push_str(&row.estimator);
        out.push(',');
        out.push_str(&row.outcome.to_string());
        out.push(',');
        push_float(&mut out, row.relative_mse);
        out.push(',');
        out.push_str(if row.flagged { "true" } else { "false" });
        out.push(',');
        out.push_str(&summary.failures.to_string());
        out.push(',');
        out.push_str(&report.replicates.to_string());
        out.push(',');
        push_float(&mut out, row.mean_estimate);
        out.push(',');
        push_float(&mut out, row.true_total);
        out.push(',');
        push_float(&mut out, summary.cv_mean);
        out.push(',');
        push_float(&mut out, summary.cv_q1);
        out.push(',');
        push_float(&mut out, summary.cv_median);
        out.push(',');
        push_float(&mut out, summary.cv_q3);
        out.push(',');
        push_float(&mut out, summary.positive_fraction_mean);
        out.push(',');
        push_float(&mut out, summary.min_weight_mean);
        out.push(',');
        push_float(&mut out, summary.sq_calibration_error_mean);
        out.push(',');
        if let Some(sel) = summary.selected_mean {
            push_float(&mut out, sel);
        }
        out.push('\n');
    }
    out
}

/// Renders retained per-replicate records as long-format CSV (one row per
/// replicate, estimator, and outcome) for external plotting.
pub fn render_replicates_csv(report: &SimulationReport) -> Option<String> {
    let records = report.records.as_ref()?;
    let mut out = String::new();
    out.push_str(
        "replicate,estimator,outcome,estimate,failed,weight_cv,positive_fraction,min_weight,\
         max_weight,sq_calibration_error,selected\n",
    );
    for record in records {
        for outcome in 0..report.outcome_count {
            out.push_str(&record.replicate.to_string());
            out.push(',');
            out.push_str(&record.estimator);
            out.push(',');
            out.push_str(&outcome.to_string());
            out.push(',');
            match &record.estimates {
                Some(est) => push_float(&mut out, est[outcome]),
                None => {}
            }
            out.push(',');
            out.push_str(if record.estimates.is_none() { "true" } else { "false" });
            out.push(',');
            push_float(&mut out, record.weight_cv);
            out.push(',');
            push_float(&mut out, record.positive_fraction);
            out.push(',');
            push_float(&mut out, record.min_weight);
            out.push(',');
            push_float(&mut out, record.max_weight);
            out.push(',');
            push_float(&mut out, record.sq_calibration_error);
            out.push(',');
            if let Some(sel) = record.selected {
                push_float(&mut out, sel);
            }
            out.push('\n');
        }
    }
    Some(out)
}
