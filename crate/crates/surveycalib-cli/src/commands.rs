//! Implementations of the five subcommands.
//!
//! Single-sample commands (`calibrate`, `select`) prepare the population
//! the same way the Monte Carlo runner does — auxiliaries centered so
//! components are components of the covariance about the mean — and the
//! drawn sample is replicate 0 of the seed's sampling stream, so a
//! simulate run with the same seed contains the calibrate run's sample as
//! its first replicate.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde::Serialize;
use surveycalib::calibrate::{
    epc_calibration, full_calibration, partial_pc_calibration, pc2_calibration, pc_calibration,
    ridge_estimate, AuxBasis, CalibrationResult, Intercept, PartialSource, RidgeSpec,
};
use surveycalib::design::{draw_sample, ht_outcome_totals, DesignSpec};
use surveycalib::eigen::{population_covariance, symmetric_eig};
use surveycalib::model::{
    center_columns, population_totals, PopulationFrame, SampleData, TotalsVector,
};
use surveycalib::select::{
    select_lambda_positive, select_r_positive, ComponentSource, LambdaGrid, SelectionTrace,
};
use surveycalib::simulate::{
    render_replicates_csv, render_report_csv, run_monte_carlo, synthetic_load_population,
    EstimatorKind, EstimatorSpec, MonteCarloConfig, SimulateError, SimulationReport,
    SyntheticPopSpec,
};

use crate::args::{
    CalibrateArgs, Cli, Command, GenerateArgs, PcaArgs, ScanKind, SelectArgs, SimulateArgs,
    SourceKind,
};
use crate::config::{dimension_check, EstimatorConfig, RunConfig};
use crate::fail::{violations_failure, CmdResult, Failure};
use crate::io::{self, format_float};

/// Dispatches a parsed invocation inside the requested thread pool. The
/// `--threads` flag wins over the `SURVEYCALIB_THREADS` environment
/// variable; with neither, rayon's default pool uses every core.
pub fn run(cli: Cli) -> CmdResult {
    let threads = thread_cap(cli.threads)?;
    let body = || match cli.command {
        Command::Pca(args) => pca(&args),
        Command::Calibrate(args) => calibrate(&args),
        Command::Select(args) => select(&args),
        Command::Simulate(args) => simulate(&args),
        Command::Generate(args) => generate(&args),
    };
    match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(Failure::usage)?
            .install(body),
        None => body(),
    }
}

fn thread_cap(flag: Option<usize>) -> CmdResult<Option<usize>> {
    let chosen = match flag {
        Some(t) => Some(t),
        None => match std::env::var("SURVEYCALIB_THREADS") {
            Ok(text) => Some(text.trim().parse::<usize>().map_err(|_| {
                Failure::usage_msg(format!(
                    "SURVEYCALIB_THREADS must be a positive integer, got \"{text}\""
                ))
            })?),
            Err(_) => None,
        },
    };
    if chosen == Some(0) {
        return Err(Failure::usage_msg("the thread cap must be at least 1"));
    }
    Ok(chosen)
}

fn pca(args: &PcaArgs) -> CmdResult {
    let (raw, _) = io::load_frame(&args.input, None).map_err(Failure::usage)?;
    let frame = center_columns(&raw);
    let spectrum = symmetric_eig(&population_covariance(&frame)).map_err(Failure::numerical)?;

    let rows: Vec<Vec<String>> = (0..spectrum.dim())
        .map(|j| {
            vec![
                j.to_string(),
                format_float(spectrum.eigenvalues()[j]),
                format_float(spectrum.explained_share(j + 1)),
            ]
        })
        .collect();
    io::write_table(
        args.output.as_deref(),
        &["component", "eigenvalue", "cumulative_share"],
        &rows,
    )
    .map_err(Failure::usage)?;

    if let Some(scores_path) = &args.scores {
        let scores = frame.aux().dot(spectrum.eigenvectors());
        let header: Vec<String> = (0..scores.ncols()).map(|j| format!("pc{j}")).collect();
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let score_rows: Vec<Vec<String>> = scores
            .rows()
            .into_iter()
            .map(|row| row.iter().map(|v| format_float(*v)).collect())
            .collect();
        io::write_table(Some(scores_path), &header_refs, &score_rows).map_err(Failure::usage)?;
    }

    // The summary goes to stderr so stdout stays a clean CSV stream.
    eprintln!(
        "{} units, {} auxiliary columns; leading eigenvalue {}",
        frame.unit_count(),
        frame.aux_count(),
        format_float(spectrum.eigenvalues()[0])
    );
    Ok(())
}

/// A centered population with one sample drawn from it.
struct DrawnSample {
    frame: PopulationFrame,
    totals: TotalsVector,
    sample: SampleData,
}

fn load_and_draw(input: &Path, sample_size: usize, seed: u64) -> CmdResult<DrawnSample> {
    let (raw, _) = io::load_frame(input, None).map_err(Failure::usage)?;
    let design =
        DesignSpec::srswor(sample_size, raw.unit_count(), seed).map_err(Failure::usage)?;
    let frame = center_columns(&raw);
    let totals = population_totals(&frame);
    let sample = draw_sample(&frame, &design, 0).map_err(Failure::numerical)?;
    Ok(DrawnSample { frame, totals, sample })
}

fn calibrate(args: &CalibrateArgs) -> CmdResult {
    let flag_config = EstimatorConfig {
        kind: args.estimator.clone(),
        r: args.r,
        lambda: args.lambda,
        p1_columns: args.p1_columns.clone(),
        r_max: args.r_max,
        intercept: args.intercept,
    };
    let mut violations = Vec::new();
    let spec = flag_config.build("--estimator", &mut violations);
    if !violations.is_empty() {
        return Err(violations_failure("invalid estimator request", &violations));
    }
    let spec = spec.expect("a silent build produces an estimator");

    let drawn = load_and_draw(&args.input, args.sample_size, args.seed)?;
    spec.violations(drawn.frame.aux_count(), args.sample_size, &mut violations);
    if !violations.is_empty() {
        return Err(violations_failure("invalid estimator request", &violations));
    }

    let (result, selected) = run_estimator(&spec, &drawn)?;
    write_calibration_outputs(args, &spec, &drawn, &result, selected)
}

fn run_estimator(
    spec: &EstimatorSpec,
    drawn: &DrawnSample,
) -> CmdResult<(CalibrationResult, Option<f64>)> {
    let DrawnSample { frame, totals, sample } = drawn;
    let intercept = if spec.include_intercept {
        Intercept::include(frame.unit_count())
    } else {
        Intercept::Omit
    };
    let spectrum = match spec.kind {
        EstimatorKind::Ht
        | EstimatorKind::Pc { .. }
        | EstimatorKind::Pc2 { .. }
        | EstimatorKind::PcAuto { .. } => {
            Some(symmetric_eig(&population_covariance(frame)).map_err(Failure::numerical)?)
        }
        _ => None,
    };
    let spectrum = spectrum.as_ref();

    match &spec.kind {
        EstimatorKind::Ht => Ok((
            pc_calibration(sample, frame, spectrum.expect("computed for ht"), 0, Intercept::Omit)
                .map_err(Failure::numerical)?,
            None,
        )),
        EstimatorKind::Full => {
            Ok((full_calibration(sample, totals, intercept).map_err(Failure::numerical)?, None))
        }
        EstimatorKind::Pc { r } => Ok((
            pc_calibration(sample, frame, spectrum.expect("computed for pc"), *r, intercept)
                .map_err(Failure::numerical)?,
            None,
        )),
        EstimatorKind::Epc { r } => Ok((
            epc_calibration(sample, totals, *r, intercept).map_err(Failure::numerical)?,
            None,
        )),
        EstimatorKind::Pc2 { r } => Ok((
            pc2_calibration(sample, frame, spectrum.expect("computed for pc2"), *r, intercept)
                .map_err(Failure::numerical)?,
            None,
        )),
        EstimatorKind::Ppc { p1_columns, r } => Ok((
            partial_pc_calibration(
                sample,
                PartialSource::Population(frame),
                p1_columns,
                *r,
                intercept,
            )
            .map_err(Failure::numerical)?,
            None,
        )),
        EstimatorKind::Ridge { lambda } => {
            let mut basis =
                AuxBasis::new(sample.aux_rows().clone(), totals.values().clone(), "ridge");
            if spec.include_intercept {
                basis = basis.with_intercept(frame.unit_count() as f64);
            }
            let (value, selected) = match lambda {
                Some(l) => (*l, None),
                None => {
                    let sel = select_lambda_positive(sample, &basis, &LambdaGrid::default());
                    (sel.lambda, Some(sel.lambda))
                }
            };
            Ok((
                ridge_estimate(sample, &basis, &RidgeSpec::uniform(value), Some(totals))
                    .map_err(Failure::numerical)?,
                selected,
            ))
        }
        EstimatorKind::PcAuto { r_max } => {
            let spectrum = spectrum.expect("computed for pc_auto");
            let sel = select_r_positive(
                sample,
                ComponentSource::Population { frame, spectrum },
                *r_max,
                intercept,
            );
            Ok((
                pc_calibration(sample, frame, spectrum, sel.r, intercept)
                    .map_err(Failure::numerical)?,
                Some(sel.r as f64),
            ))
        }
        EstimatorKind::EpcAuto { r_max } => {
            let sel = select_r_positive(
                sample,
                ComponentSource::Estimated { aux_totals: totals },
                *r_max,
                intercept,
            );
            Ok((
                epc_calibration(sample, totals, sel.r, intercept).map_err(Failure::numerical)?,
                Some(sel.r as f64),
            ))
        }
    }
}

fn write_calibration_outputs(
    args: &CalibrateArgs,
    spec: &EstimatorSpec,
    drawn: &DrawnSample,
    result: &CalibrationResult,
    selected: Option<f64>,
) -> CmdResult {
    fs::create_dir_all(&args.out_dir).map_err(|e| {
        Failure::usage(anyhow!(e).context(format!("cannot create {}", args.out_dir.display())))
    })?;
    let sample = &drawn.sample;

    let weight_rows: Vec<Vec<String>> = sample
        .indices()
        .iter()
        .zip(sample.design_weights().iter())
        .zip(result.weights.iter())
        .map(|((unit, d), w)| vec![unit.to_string(), format_float(*d), format_float(*w)])
        .collect();
    io::write_table(
        Some(&args.out_dir.join("weights.csv")),
        &["unit", "design_weight", "weight"],
        &weight_rows,
    )
    .map_err(Failure::usage)?;

    let ht = ht_outcome_totals(sample);
    let truth = drawn.frame.outcome_totals();
    let estimate_rows: Vec<Vec<String>> = (0..result.estimate.len())
        .map(|j| {
            vec![
                j.to_string(),
                format_float(result.estimate[j]),
                format_float(ht[j]),
                format_float(truth[j]),
            ]
        })
        .collect();
    io::write_table(
        Some(&args.out_dir.join("estimates.csv")),
        &["outcome", "estimate", "ht_estimate", "true_total"],
        &estimate_rows,
    )
    .map_err(Failure::usage)?;

    let d = &result.diagnostics;
    let max_weight = result.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut diag_rows: Vec<Vec<String>> = vec![
        vec!["estimator".into(), spec.label()],
        vec!["basis".into(), result.basis_label.clone()],
        vec!["population_units".into(), drawn.frame.unit_count().to_string()],
        vec!["sample_size".into(), sample.len().to_string()],
        vec!["design_seed".into(), args.seed.to_string()],
        vec!["min_weight".into(), format_float(d.min_weight)],
        vec!["max_weight".into(), format_float(max_weight)],
        vec!["cv_weight".into(), format_float(d.cv_weight)],
        vec!["negative_count".into(), d.negative_count.to_string()],
        vec!["constraint_residual_norm".into(), format_float(d.constraint_residual_norm)],
    ];
    if let Some(sq) = d.sq_calibration_error_on_originals {
        diag_rows.push(vec!["sq_calibration_error".into(), format_float(sq)]);
    }
    if let Some(sel) = selected {
        diag_rows.push(vec!["selected".into(), format_float(sel)]);
    }
    io::write_table(Some(&args.out_dir.join("diagnostics.csv")), &["key", "value"], &diag_rows)
        .map_err(Failure::usage)?;

    println!(
        "{}: drew {} of {} units (seed {}); wrote weights.csv, estimates.csv, diagnostics.csv to {}",
        spec.label(),
        sample.len(),
        drawn.frame.unit_count(),
        args.seed,
        args.out_dir.display()
    );
    Ok(())
}

fn select(args: &SelectArgs) -> CmdResult {
    let drawn = load_and_draw(&args.input, args.sample_size, args.seed)?;
    let intercept = if args.intercept {
        Intercept::include(drawn.frame.unit_count())
    } else {
        Intercept::Omit
    };
    match args.scan {
        ScanKind::R => {
            // The bank validation already knows the scan bounds; reuse it.
            let probe = EstimatorSpec::new(match args.source {
                SourceKind::Pc => EstimatorKind::PcAuto { r_max: args.r_max },
                SourceKind::Epc => EstimatorKind::EpcAuto { r_max: args.r_max },
            });
            let mut violations = Vec::new();
            probe.violations(drawn.frame.aux_count(), args.sample_size, &mut violations);
            if !violations.is_empty() {
                return Err(violations_failure("invalid scan request", &violations));
            }
            let sel = match args.source {
                SourceKind::Pc => {
                    let spectrum = symmetric_eig(&population_covariance(&drawn.frame))
                        .map_err(Failure::numerical)?;
                    select_r_positive(
                        &drawn.sample,
                        ComponentSource::Population { frame: &drawn.frame, spectrum: &spectrum },
                        args.r_max,
                        intercept,
                    )
                }
                SourceKind::Epc => select_r_positive(
                    &drawn.sample,
                    ComponentSource::Estimated { aux_totals: &drawn.totals },
                    args.r_max,
                    intercept,
                ),
            };
            write_trace(args.output.as_deref(), &sel.trace).map_err(Failure::usage)?;
            eprintln!(
                "selected r = {}{}",
                sel.r,
                if sel.at_max { " (the scan chose its cap; a larger cap might too)" } else { "" }
            );
        }
        ScanKind::Lambda => {
            if args.r_max.is_some() {
                return Err(Failure::usage_msg("--r-max applies only to the r scan"));
            }
            let mut basis = AuxBasis::new(
                drawn.sample.aux_rows().clone(),
                drawn.totals.values().clone(),
                "ridge",
            );
            if args.intercept {
                basis = basis.with_intercept(drawn.frame.unit_count() as f64);
            }
            let sel = select_lambda_positive(&drawn.sample, &basis, &LambdaGrid::default());
            write_trace(args.output.as_deref(), &sel.trace).map_err(Failure::usage)?;
            eprintln!(
                "selected lambda = {}{}",
                format_float(sel.lambda),
                if sel.saturated {
                    " (no grid penalty kept every weight positive; this is the grid's largest)"
                } else {
                    ""
                }
            );
        }
    }
    Ok(())
}

/// The `chosen` column marks the grid candidate equal to the final choice;
/// after bisection refinement of a penalty the refined value can sit
/// between grid points, leaving no marked row, and the summary line carries
/// the exact value.
fn write_trace(path: Option<&Path>, trace: &SelectionTrace) -> anyhow::Result<()> {
    let rows: Vec<Vec<String>> = trace
        .candidate_values
        .iter()
        .zip(&trace.min_weight_per_candidate)
        .zip(&trace.all_positive_mask)
        .map(|((c, m), pos)| {
            vec![
                format_float(*c),
                format_float(*m),
                if *pos { "true".into() } else { "false".into() },
                if *c == trace.chosen { "true".into() } else { "false".into() },
            ]
        })
        .collect();
    io::write_table(path, &["candidate", "min_weight", "all_positive", "chosen"], &rows)
}

fn simulate(args: &SimulateArgs) -> CmdResult {
    let text = fs::read_to_string(&args.config).map_err(|e| {
        Failure::usage(anyhow!(e).context(format!("cannot read {}", args.config.display())))
    })?;
    let mut config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::usage(anyhow!("{}: {e}", args.config.display())))?;

    // Flags beat config fields, which beat the documented defaults.
    if let Some(replicates) = args.replicates {
        config.replicates = replicates;
    }
    if let Some(seed) = args.seed {
        config.design.seed = seed;
    }
    if let Some(sample_size) = args.sample_size {
        config.design.sample_size = sample_size;
    }
    if let Some(dir) = &args.out_dir {
        config.output.dir = Some(dir.clone());
    }
    if args.per_replicate {
        config.output.per_replicate = true;
    }
    if let Some(reference) = &args.reference {
        config.reference = reference.clone();
    }

    let mut violations = Vec::new();
    let built = config.structural_check(&mut violations);
    if !violations.is_empty() {
        return Err(violations_failure("invalid configuration", &violations));
    }
    let specs: Vec<EstimatorSpec> =
        built.into_iter().map(|s| s.expect("a silent structural pass builds every estimator")).collect();

    let frame = match (&config.population.csv_path, &config.population.synthetic) {
        (Some(path), None) => {
            io::load_frame(path, config.columns.as_ref()).map_err(Failure::usage)?.0
        }
        (None, Some(section)) => {
            synthetic_load_population(&section.to_spec()).map_err(simulate_failure)?
        }
        _ => unreachable!("the structural pass enforces exactly one population source"),
    };

    let design = match DesignSpec::srswor(
        config.design.sample_size,
        frame.unit_count(),
        config.design.seed,
    ) {
        Ok(d) => Some(d),
        Err(e) => {
            violations.push(format!("design: {e}"));
            None
        }
    };
    dimension_check(
        &specs,
        &config.reference,
        frame.aux_count(),
        config.design.sample_size,
        &mut violations,
    );
    if !violations.is_empty() {
        return Err(violations_failure("invalid configuration", &violations));
    }

    let mc = MonteCarloConfig {
        design: design.expect("a clean dimension pass includes the design"),
        estimators: specs,
        replicates: config.replicates,
        reference: config.reference.clone(),
        retain_replicates: config.output.per_replicate,
    };
    let report = run_monte_carlo(&frame, &mc).map_err(simulate_failure)?;

    let dir = config.output.dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| {
        Failure::usage(anyhow!(e).context(format!("cannot create {}", dir.display())))
    })?;
    write_text(&dir.join("report.csv"), &render_report_csv(&report))?;
    let replicates_file = if config.output.per_replicate {
        let text = render_replicates_csv(&report).expect("records retained on request");
        write_text(&dir.join("replicates.csv"), &text)?;
        Some("replicates.csv")
    } else {
        None
    };
    let manifest = Manifest::new(&config, &frame, &report, replicates_file);
    write_text(&dir.join("manifest.json"), &manifest.render().map_err(Failure::usage)?)?;

    println!(
        "{} replicates x {} estimators on {} units ({} auxiliaries, {} outcomes); reference {}",
        report.replicates,
        report.estimator_labels.len(),
        report.population_units,
        report.aux_count,
        report.outcome_count,
        report.reference
    );
    println!(
        "wrote report.csv{} and manifest.json to {}",
        if replicates_file.is_some() { ", replicates.csv," } else { "" },
        dir.display()
    );
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| {
        Failure::usage(anyhow!(e).context(format!("cannot write {}", path.display())))
    })
}

/// Configuration problems exit 1; numerical breakdowns inside the run
/// exit 2.
fn simulate_failure(err: SimulateError) -> Failure {
    match err {
        SimulateError::BadConfig(_) => Failure::usage(err),
        _ => Failure::numerical(err),
    }
}

/// Written next to the report so a run's exact inputs travel with its
/// outputs. Contains nothing time- or machine-dependent: rerunning the
/// same configuration reproduces the file byte for byte.
#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    population: ManifestPopulation,
    design: ManifestDesign,
    estimators: Vec<String>,
    reference: &'a str,
    replicates: usize,
    outputs: ManifestOutputs,
}

#[derive(Serialize)]
struct ManifestPopulation {
    source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    synthetic: Option<ManifestSynthetic>,
    units: usize,
    aux_columns: usize,
    outcome_columns: usize,
}

#[derive(Serialize)]
struct ManifestSynthetic {
    population_size: usize,
    slots_per_day: usize,
    past_days: usize,
    future_days: usize,
    harmonics: usize,
    level_mean: f64,
    unit_level_sd: f64,
    harmonic_sd: f64,
    noise_sd: f64,
    cross_week_correlation: f64,
    seed: u64,
}

impl From<&SyntheticPopSpec> for ManifestSynthetic {
    fn from(s: &SyntheticPopSpec) -> Self {
        Self {
            population_size: s.population_size,
            slots_per_day: s.slots_per_day,
            past_days: s.past_days,
            future_days: s.future_days,
            harmonics: s.harmonics,
            level_mean: s.level_mean,
            unit_level_sd: s.unit_level_sd,
            harmonic_sd: s.harmonic_sd,
            noise_sd: s.noise_sd,
            cross_week_correlation: s.cross_week_correlation,
            seed: s.seed,
        }
    }
}

#[derive(Serialize)]
struct ManifestDesign {
    scheme: &'static str,
    sample_size: usize,
    seed: u64,
}

#[derive(Serialize)]
struct ManifestOutputs {
    report: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    replicates: Option<&'static str>,
}

impl<'a> Manifest<'a> {
    fn new(
        config: &'a RunConfig,
        frame: &PopulationFrame,
        report: &SimulationReport,
        replicates_file: Option<&'static str>,
    ) -> Self {
        let (source, synthetic) = match (&config.population.csv_path, &config.population.synthetic)
        {
            (Some(path), _) => (format!("csv:{}", path.display()), None),
            (None, Some(section)) => {
                ("synthetic".to_string(), Some(ManifestSynthetic::from(&section.to_spec())))
            }
            (None, None) => unreachable!("validated before the run"),
        };
        Self {
            tool: "surveycalib",
            version: env!("CARGO_PKG_VERSION"),
            population: ManifestPopulation {
                source,
                synthetic,
                units: report.population_units,
                aux_columns: frame.aux_count(),
                outcome_columns: frame.outcome_count(),
            },
            design: ManifestDesign {
                scheme: "srswor",
                sample_size: report.design.sample_size,
                seed: report.design.seed,
            },
            estimators: report.estimator_labels.clone(),
            reference: &config.reference,
            replicates: report.replicates,
            outputs: ManifestOutputs { report: "report.csv", replicates: replicates_file },
        }
    }

    fn render(&self) -> anyhow::Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

fn spec_from(args: &GenerateArgs) -> SyntheticPopSpec {
    SyntheticPopSpec {
        population_size: args.units,
        slots_per_day: args.slots_per_day,
        past_days: args.past_days,
        future_days: args.future_days,
        harmonics: args.harmonics,
        level_mean: args.level_mean,
        unit_level_sd: args.unit_level_sd,
        harmonic_sd: args.harmonic_sd,
        noise_sd: args.noise_sd,
        cross_week_correlation: args.cross_week_correlation,
        seed: args.seed,
    }
}

fn generate(args: &GenerateArgs) -> CmdResult {
    let spec = spec_from(args);
    let violations = spec.violations();
    if !violations.is_empty() {
        return Err(violations_failure("invalid population request", &violations));
    }
    let frame = synthetic_load_population(&spec).map_err(simulate_failure)?;
    io::write_frame(&args.output, &frame).map_err(Failure::usage)?;
    println!(
        "wrote {} ({} units, {} auxiliary columns, {} outcome columns, seed {})",
        args.output.display(),
        frame.unit_count(),
        frame.aux_count(),
        frame.outcome_count(),
        args.seed
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[test]
    fn generate_flag_defaults_match_the_generator_defaults() {
        let cli = Cli::try_parse_from(["surveycalib", "generate", "--output", "pop.csv"]).unwrap();
        let args = match cli.command {
            Command::Generate(args) => args,
            other => panic!("parsed into {other:?}"),
        };
        assert_eq!(spec_from(&args), SyntheticPopSpec::default());
    }

    #[test]
    fn thread_cap_rejects_zero() {
        assert!(thread_cap(Some(0)).is_err());
        assert_eq!(thread_cap(Some(3)).unwrap(), Some(3));
    }
}
