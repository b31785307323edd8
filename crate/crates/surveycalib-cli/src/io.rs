//! CSV input and output for population frames and result tables.
//!
//! Numbers are written with Rust's default float formatting, the shortest
//! decimal string that parses back to the identical bit pattern, so a
//! written population reloads exactly and repeated runs produce
//! byte-identical files.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use surveycalib::model::PopulationFrame;

use crate::config::ColumnSpec;

/// Shortest round-trip decimal form of `v`.
pub fn format_float(v: f64) -> String {
    format!("{v}")
}

/// Which CSV columns fed the frame, in frame order.
#[derive(Debug, Clone)]
pub struct ColumnLayout {
    pub aux_names: Vec<String>,
    pub outcome_names: Vec<String>,
}

/// Loads a population from CSV. The header row is mandatory. With no
/// explicit `columns` spec, names starting with `x` or `X` become
/// auxiliary variables and names starting with `y` or `Y` become outcomes,
/// both in header order; other columns are ignored. An explicit spec names
/// the columns directly and fixes their order.
pub fn load_frame(path: &Path, columns: Option<&ColumnSpec>) -> Result<(PopulationFrame, ColumnLayout)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open population file {}", path.display()))?;
    let headers: Vec<String> = reader
        .headers()
        .with_context(|| format!("{}: cannot read the header row", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();

    let position = |name: &str| headers.iter().position(|h| h == name);
    let (aux_idx, outcome_idx, layout) = match columns {
        Some(spec) => {
            let mut missing: Vec<String> = Vec::new();
            let mut resolve = |names: &[String]| -> Vec<usize> {
                names
                    .iter()
                    .filter_map(|n| match position(n) {
                        Some(i) => Some(i),
                        None => {
                            missing.push(n.clone());
                            None
                        }
                    })
                    .collect()
            };
            let aux_idx = resolve(&spec.aux);
            let outcome_idx = resolve(&spec.outcomes);
            if !missing.is_empty() {
                bail!(
                    "{}: listed columns not in the header: {}",
                    path.display(),
                    missing.join(", ")
                );
            }
            let layout = ColumnLayout {
                aux_names: spec.aux.clone(),
                outcome_names: spec.outcomes.clone(),
            };
            (aux_idx, outcome_idx, layout)
        }
        None => {
            let starts = |name: &str, c: char| {
                name.chars().next().is_some_and(|first| first.eq_ignore_ascii_case(&c))
            };
            let aux_idx: Vec<usize> =
                (0..headers.len()).filter(|&i| starts(&headers[i], 'x')).collect();
            let outcome_idx: Vec<usize> =
                (0..headers.len()).filter(|&i| starts(&headers[i], 'y')).collect();
            let layout = ColumnLayout {
                aux_names: aux_idx.iter().map(|&i| headers[i].clone()).collect(),
                outcome_names: outcome_idx.iter().map(|&i| headers[i].clone()).collect(),
            };
            (aux_idx, outcome_idx, layout)
        }
    };
    if aux_idx.is_empty() {
        bail!(
            "{}: no auxiliary columns; prefix their names with x or list them under columns.aux",
            path.display()
        );
    }
    if outcome_idx.is_empty() {
        bail!(
            "{}: no outcome columns; prefix their names with y or list them under columns.outcomes",
            path.display()
        );
    }

    let mut aux_flat: Vec<f64> = Vec::new();
    let mut outcome_flat: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record =
            record.with_context(|| format!("{}: cannot read row {}", path.display(), i + 2))?;
        let parse = |idx: &[usize], into: &mut Vec<f64>| -> Result<()> {
            for &col in idx {
                let cell = record.get(col).unwrap_or("");
                let value: f64 = cell.parse().with_context(|| {
                    format!(
                        "{}: row {}, column {}: not a number: \"{cell}\"",
                        path.display(),
                        i + 2,
                        headers[col]
                    )
                })?;
                into.push(value);
            }
            Ok(())
        };
        parse(&aux_idx, &mut aux_flat)?;
        parse(&outcome_idx, &mut outcome_flat)?;
        rows += 1;
    }

    let aux = Array2::from_shape_vec((rows, aux_idx.len()), aux_flat)
        .expect("row-major fill matches the declared shape");
    let outcomes = Array2::from_shape_vec((rows, outcome_idx.len()), outcome_flat)
        .expect("row-major fill matches the declared shape");
    let frame = PopulationFrame::new(aux, outcomes)
        .with_context(|| format!("{}: not a usable population", path.display()))?;
    Ok((frame, layout))
}

/// Writes a frame as CSV with the conventional headers `x0..` and `y0..`,
/// so the file reloads through [`load_frame`] without a column spec.
pub fn write_frame(path: &Path, frame: &PopulationFrame) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    let header: Vec<String> = (0..frame.aux_count())
        .map(|j| format!("x{j}"))
        .chain((0..frame.outcome_count()).map(|j| format!("y{j}")))
        .collect();
    writer.write_record(&header)?;
    for k in 0..frame.unit_count() {
        let row: Vec<String> = frame
            .aux()
            .row(k)
            .iter()
            .chain(frame.outcomes().row(k).iter())
            .map(|v| format_float(*v))
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush().with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Writes one result table to `path`, or to stdout when `path` is `None`.
pub fn write_table(path: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row)?;
    }
    writer.flush().context("cannot flush the table")?;
    Ok(())
}
