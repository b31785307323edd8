//! Population frame and sample containers shared by every estimator.
//!
//! A [`PopulationFrame`] holds the full auxiliary matrix, the outcome matrix,
//! and the auxiliary population totals. A [`SampleData`] holds the rows of a
//! drawn sample together with its design weights. Both are immutable after
//! construction: operations that transform a frame (such as column centering)
//! return a new value, so estimators can never observe a half-updated frame.

use ndarray::{Array1, Array2, Axis};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("population must contain at least 2 units, got {0}")]
    TooFewUnits(usize),
    #[error("auxiliary matrix needs at least one column")]
    NoAuxColumns,
    #[error("outcome matrix needs at least one column")]
    NoOutcomeColumns,
    #[error("auxiliary matrix has {aux_rows} rows but outcome matrix has {outcome_rows}")]
    RowCountMismatch { aux_rows: usize, outcome_rows: usize },
    #[error("non-finite value at row {row}, column {col} of the {matrix} matrix")]
    NonFinite { matrix: &'static str, row: usize, col: usize },
    #[error("sample must contain at least one unit")]
    EmptySample,
    #[error("sample indices must be strictly increasing and distinct (position {0})")]
    UnsortedIndices(usize),
    #[error("sample index {index} is out of range for a population of {unit_count} units")]
    IndexOutOfRange { index: usize, unit_count: usize },
    #[error("design weight at position {0} must be positive and finite")]
    BadWeight(usize),
    #[error("sample has {rows} matrix rows but {indices} indices")]
    SampleShapeMismatch { rows: usize, indices: usize },
}

/// Known population totals of the auxiliary variables, in column order.
///
/// Totals may be exact column sums of a frame or externally supplied control
/// totals; calibration only ever reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalsVector(pub Array1<f64>);

impl TotalsVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }
}

/// A finite population: auxiliary matrix, outcome matrix, and auxiliary
/// totals.
///
/// The stored totals always equal the column sums of `aux`. When the frame is
/// centered the original column means are kept so the pre-centering totals
/// stay recoverable and sample rows from external sources can be centered
/// consistently.
#[derive(Debug, Clone)]
pub struct PopulationFrame {
    aux: Array2<f64>,
    outcomes: Array2<f64>,
    aux_totals: Array1<f64>,
    centered: bool,
    column_means: Option<Array1<f64>>,
}

impl PopulationFrame {
    /// Builds a frame from raw matrices, computing the auxiliary totals.
    pub fn new(aux: Array2<f64>, outcomes: Array2<f64>) -> Result<Self, ModelError> {
        let n = aux.nrows();
        if n < 2 {
            return Err(ModelError::TooFewUnits(n));
        }
        if aux.ncols() == 0 {
            return Err(ModelError::NoAuxColumns);
        }
        if outcomes.ncols() == 0 {
            return Err(ModelError::NoOutcomeColumns);
        }
        if outcomes.nrows() != n {
            return Err(ModelError::RowCountMismatch {
                aux_rows: n,
                outcome_rows: outcomes.nrows(),
            });
        }
        check_finite(&aux, "auxiliary")?;
        check_finite(&outcomes, "outcome")?;
        let aux_totals = aux.sum_axis(Axis(0));
        Ok(Self {
            aux,
            outcomes,
            aux_totals,
            centered: false,
            column_means: None,
        })
    }

    pub fn unit_count(&self) -> usize {
        self.aux.nrows()
    }

    pub fn aux_count(&self) -> usize {
        self.aux.ncols()
    }

    pub fn outcome_count(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn aux(&self) -> &Array2<f64> {
        &self.aux
    }

    pub fn outcomes(&self) -> &Array2<f64> {
        &self.outcomes
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// Column means subtracted during centering, if the frame is centered.
    pub fn column_means(&self) -> Option<&Array1<f64>> {
        self.column_means.as_ref()
    }

    /// True outcome totals `sum_U y_kl`; centering never touches outcomes.
    pub fn outcome_totals(&self) -> Array1<f64> {
        self.outcomes.sum_axis(Axis(0))
    }

    /// Auxiliary totals before any centering. For an uncentered frame this is
    /// the stored totals; for a centered frame it is reconstructed from the
    /// recorded column means.
    pub fn original_totals(&self) -> TotalsVector {
        match &self.column_means {
            Some(means) => TotalsVector(means * self.unit_count() as f64),
            None => TotalsVector(self.aux_totals.clone()),
        }
    }
}

/// Returns a frame whose auxiliary columns are shifted to mean zero over the
/// population; outcome columns are untouched.
///
/// The subtracted means are recorded on the result. Centering an
/// already-centered frame returns it unchanged.
pub fn center_columns(frame: &PopulationFrame) -> PopulationFrame {
    if frame.centered {
        return frame.clone();
    }
    let n = frame.unit_count() as f64;
    let means = &frame.aux_totals / n;
    let mut aux = frame.aux.clone();
    for (j, mean) in means.iter().enumerate() {
        aux.column_mut(j).mapv_inplace(|v| v - mean);
    }
    let aux_totals = aux.sum_axis(Axis(0));
    PopulationFrame {
        aux,
        outcomes: frame.outcomes.clone(),
        aux_totals,
        centered: true,
        column_means: Some(means),
    }
}

/// Stored auxiliary totals of the frame (column sums of `aux`).
pub fn population_totals(frame: &PopulationFrame) -> TotalsVector {
    TotalsVector(frame.aux_totals.clone())
}

fn check_finite(m: &Array2<f64>, name: &'static str) -> Result<(), ModelError> {
    for ((row, col), v) in m.indexed_iter() {
        if !v.is_finite() {
            return Err(ModelError::NonFinite { matrix: name, row, col });
        }
    }
    Ok(())
}

/// Rows of one drawn sample: sorted unit indices, design weights, and the
/// matching auxiliary and outcome rows.
#[derive(Debug, Clone)]
pub struct SampleData {
    indices: Vec<usize>,
    design_weights: Array1<f64>,
    aux_rows: Array2<f64>,
    outcome_rows: Array2<f64>,
}

impl SampleData {
    /// Builds a sample from parts, validating ordering, weights, and shapes.
    pub fn new(
        indices: Vec<usize>,
        design_weights: Array1<f64>,
        aux_rows: Array2<f64>,
        outcome_rows: Array2<f64>,
    ) -> Result<Self, ModelError> {
        let n = indices.len();
        if n == 0 {
            return Err(ModelError::EmptySample);
        }
        for pos in 1..n {
            if indices[pos] <= indices[pos - 1] {
                return Err(ModelError::UnsortedIndices(pos));
            }
        }
        if design_weights.len() != n {
            return Err(ModelError::SampleShapeMismatch {
                rows: design_weights.len(),
                indices: n,
            });
        }
        for (pos, w) in design_weights.iter().enumerate() {
            if !(w.is_finite() && *w > 0.0) {
                return Err(ModelError::BadWeight(pos));
            }
        }
        if aux_rows.nrows() != n {
            return Err(ModelError::SampleShapeMismatch { rows: aux_rows.nrows(), indices: n });
        }
        if outcome_rows.nrows() != n {
            return Err(ModelError::SampleShapeMismatch {
                rows: outcome_rows.nrows(),
                indices: n,
            });
        }
        Ok(Self { indices, design_weights, aux_rows, outcome_rows })
    }

    /// Extracts the rows of `frame` at `indices` (sorted, distinct, in range).
    pub fn from_frame(
        frame: &PopulationFrame,
        indices: Vec<usize>,
        design_weights: Array1<f64>,
    ) -> Result<Self, ModelError> {
        if let Some(&index) = indices.iter().find(|&&i| i >= frame.unit_count()) {
            return Err(ModelError::IndexOutOfRange { index, unit_count: frame.unit_count() });
        }
        let aux_rows = select_rows(frame.aux(), &indices);
        let outcome_rows = select_rows(frame.outcomes(), &indices);
        Self::new(indices, design_weights, aux_rows, outcome_rows)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn design_weights(&self) -> &Array1<f64> {
        &self.design_weights
    }

    pub fn aux_rows(&self) -> &Array2<f64> {
        &self.aux_rows
    }

    pub fn outcome_rows(&self) -> &Array2<f64> {
        &self.outcome_rows
    }
}

fn select_rows(m: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((indices.len(), m.ncols()));
    for (pos, &i) in indices.iter().enumerate() {
        out.row_mut(pos).assign(&m.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small_frame() -> PopulationFrame {
        let aux = array![[1.0, 10.0], [2.0, 20.0], [3.0, 30.0], [6.0, 0.0]];
        let y = array![[1.0], [2.0], [3.0], [4.0]];
        PopulationFrame::new(aux, y).unwrap()
    }

    #[test]
    fn totals_equal_column_sums() {
        let frame = small_frame();
        let t = population_totals(&frame);
        assert_eq!(t.values(), &array![12.0, 60.0]);
    }

    #[test]
    fn centering_zeroes_column_sums_and_keeps_outcomes() {
        let frame = small_frame();
        let centered = center_columns(&frame);
        for &total in centered.aux_totals.iter() {
            assert!(total.abs() < 1e-12, "residual total {total}");
        }
        assert!(centered.is_centered());
        assert_eq!(centered.outcomes(), frame.outcomes());
        assert_eq!(centered.column_means().unwrap(), &array![3.0, 15.0]);
        assert_eq!(centered.original_totals().values(), &array![12.0, 60.0]);
    }

    #[test]
    fn centering_twice_is_identity() {
        let once = center_columns(&small_frame());
        let twice = center_columns(&once);
        assert_eq!(once.aux(), twice.aux());
        assert_eq!(once.column_means(), twice.column_means());
    }

    #[test]
    fn centering_preserves_pairwise_differences() {
        let frame = small_frame();
        let centered = center_columns(&frame);
        for j in 0..frame.aux_count() {
            for k in 0..frame.unit_count() {
                for l in 0..frame.unit_count() {
                    let before = frame.aux()[[k, j]] - frame.aux()[[l, j]];
                    let after = centered.aux()[[k, j]] - centered.aux()[[l, j]];
                    let scale = 1.0 + before.abs();
                    assert!((before - after).abs() <= 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn construction_rejects_bad_shapes() {
        let aux = array![[1.0, 2.0]];
        let y = array![[1.0]];
        assert!(matches!(
            PopulationFrame::new(aux, y),
            Err(ModelError::TooFewUnits(1))
        ));

        let aux = array![[1.0], [2.0]];
        let y = array![[1.0], [2.0], [3.0]];
        assert!(matches!(
            PopulationFrame::new(aux, y),
            Err(ModelError::RowCountMismatch { .. })
        ));

        let aux = array![[1.0], [f64::NAN]];
        let y = array![[1.0], [2.0]];
        assert!(matches!(
            PopulationFrame::new(aux, y),
            Err(ModelError::NonFinite { matrix: "auxiliary", row: 1, col: 0 })
        ));
    }

    #[test]
    fn sample_validation() {
        let frame = small_frame();
        let ok = SampleData::from_frame(&frame, vec![0, 2], array![2.0, 2.0]).unwrap();
        assert_eq!(ok.aux_rows(), &array![[1.0, 10.0], [3.0, 30.0]]);
        assert_eq!(ok.outcome_rows(), &array![[1.0], [3.0]]);

        assert!(matches!(
            SampleData::from_frame(&frame, vec![2, 0], array![2.0, 2.0]),
            Err(ModelError::UnsortedIndices(1))
        ));
        assert!(matches!(
            SampleData::from_frame(&frame, vec![0, 9], array![2.0, 2.0]),
            Err(ModelError::IndexOutOfRange { index: 9, unit_count: 4 })
        ));
        assert!(matches!(
            SampleData::from_frame(&frame, vec![0, 1], array![2.0, -1.0]),
            Err(ModelError::BadWeight(1))
        ));
        assert!(matches!(
            SampleData::from_frame(&frame, Vec::new(), Array1::zeros(0)),
            Err(ModelError::EmptySample)
        ));
    }
}
