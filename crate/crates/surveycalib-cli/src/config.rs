//! Experiment configuration for `surveycalib simulate`.
//!
//! The file is JSON. Parsing is strict — unknown keys are rejected so a
//! typo cannot silently fall back to a default — and validation happens in
//! two passes: structural checks that need no data (exactly one population
//! source, estimator fields consistent with their kind), then dimension
//! checks against the loaded population (component counts versus the
//! auxiliary dimension and sample size, reference label present in the
//! bank). Each pass collects every violation before failing, so one run
//! reports the full list.

use std::path::PathBuf;

use serde::Deserialize;
use surveycalib::simulate::{EstimatorKind, EstimatorSpec, SyntheticPopSpec};

/// Top-level configuration. Field defaults: `reference` "full",
/// `replicates` 100, `output.dir` the current directory,
/// `output.per_replicate` false, `design.seed` 1.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub population: PopulationSection,
    /// Explicit column lists for CSV populations; the x/y prefix
    /// convention applies when absent.
    #[serde(default)]
    pub columns: Option<ColumnSpec>,
    pub design: DesignSection,
    pub estimators: Vec<EstimatorConfig>,
    #[serde(default = "default_reference")]
    pub reference: String,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_reference() -> String {
    "full".to_string()
}

fn default_replicates() -> usize {
    100
}

/// Exactly one of the two sources must be set.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSection {
    #[serde(default)]
    pub csv_path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
}

/// Synthetic-population parameters; fields left out fall back to the
/// generator defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub population_size: Option<usize>,
    pub slots_per_day: Option<usize>,
    pub past_days: Option<usize>,
    pub future_days: Option<usize>,
    pub harmonics: Option<usize>,
    pub level_mean: Option<f64>,
    pub unit_level_sd: Option<f64>,
    pub harmonic_sd: Option<f64>,
    pub noise_sd: Option<f64>,
    pub cross_week_correlation: Option<f64>,
    pub seed: Option<u64>,
}

impl SyntheticSection {
    pub fn to_spec(&self) -> SyntheticPopSpec {
        let d = SyntheticPopSpec::default();
        SyntheticPopSpec {
            population_size: self.population_size.unwrap_or(d.population_size),
            slots_per_day: self.slots_per_day.unwrap_or(d.slots_per_day),
            past_days: self.past_days.unwrap_or(d.past_days),
            future_days: self.future_days.unwrap_or(d.future_days),
            harmonics: self.harmonics.unwrap_or(d.harmonics),
            level_mean: self.level_mean.unwrap_or(d.level_mean),
            unit_level_sd: self.unit_level_sd.unwrap_or(d.unit_level_sd),
            harmonic_sd: self.harmonic_sd.unwrap_or(d.harmonic_sd),
            noise_sd: self.noise_sd.unwrap_or(d.noise_sd),
            cross_week_correlation: self
                .cross_week_correlation
                .unwrap_or(d.cross_week_correlation),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

/// Names of the CSV columns to use, in the order given. Overrides the
/// prefix convention.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub aux: Vec<String>,
    pub outcomes: Vec<String>,
}

impl ColumnSpec {
    /// Structural problems visible without the CSV: empty lists and names
    /// used twice (within a list or across the two lists).
    pub fn violations(&self, out: &mut Vec<String>) {
        if self.aux.is_empty() {
            out.push("columns.aux: list at least one auxiliary column".to_string());
        }
        if self.outcomes.is_empty() {
            out.push("columns.outcomes: list at least one outcome column".to_string());
        }
        let mut seen = std::collections::HashSet::new();
        for name in self.aux.iter().chain(self.outcomes.iter()) {
            if !seen.insert(name.as_str()) {
                out.push(format!("columns: \"{name}\" is listed twice"));
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub sample_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    /// Keep per-replicate records and write replicates.csv.
    pub per_replicate: bool,
}

/// One estimator in the bank. `kind` decides which other fields apply:
/// pc/epc/pc2 need `r`; ppc needs `p1_columns` and `r`; ridge may give
/// `lambda` (omitted means the positive-weights rule picks one per
/// replicate); pc_auto/epc_auto may cap their scan with `r_max`;
/// `intercept` adds the fixed-population-size constraint.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: String,
    #[serde(default)]
    pub r: Option<usize>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub p1_columns: Option<Vec<usize>>,
    #[serde(default)]
    pub r_max: Option<usize>,
    #[serde(default)]
    pub intercept: bool,
}

impl EstimatorConfig {
    /// Builds the estimator, appending one violation per misused field.
    /// `who` names the source in messages ("estimators[3]" or
    /// "--estimator"). Returns `None` when the kind is unusable; field
    /// misuse on a usable kind still returns the estimator so later passes
    /// can report dimension problems too.
    pub fn build(&self, who: &str, out: &mut Vec<String>) -> Option<EstimatorSpec> {
        let kind_key = self.kind.trim().to_ascii_lowercase().replace('-', "_");
        let before = out.len();
        let kind = match kind_key.as_str() {
            "ht" => {
                self.forbid(who, &kind_key, FIELD_R | FIELD_LAMBDA | FIELD_P1 | FIELD_RMAX, out);
                Some(EstimatorKind::Ht)
            }
            "full" => {
                self.forbid(who, &kind_key, FIELD_R | FIELD_LAMBDA | FIELD_P1 | FIELD_RMAX, out);
                Some(EstimatorKind::Full)
            }
            "pc" | "epc" | "pc2" => {
                self.forbid(who, &kind_key, FIELD_LAMBDA | FIELD_P1 | FIELD_RMAX, out);
                match self.r {
                    Some(r) => Some(match kind_key.as_str() {
                        "pc" => EstimatorKind::Pc { r },
                        "epc" => EstimatorKind::Epc { r },
                        _ => EstimatorKind::Pc2 { r },
                    }),
                    None => {
                        out.push(format!("{who}: kind {kind_key} needs the field r"));
                        None
                    }
                }
            }
            "ppc" => {
                self.forbid(who, &kind_key, FIELD_LAMBDA | FIELD_RMAX, out);
                let cols = match &self.p1_columns {
                    Some(c) if !c.is_empty() => Some(c.clone()),
                    _ => {
                        out.push(format!(
                            "{who}: kind ppc needs a non-empty p1_columns list"
                        ));
                        None
                    }
                };
                let r = match self.r {
                    Some(r) => Some(r),
                    None => {
                        out.push(format!("{who}: kind ppc needs the field r"));
                        None
                    }
                };
                match (cols, r) {
                    (Some(p1_columns), Some(r)) => Some(EstimatorKind::Ppc { p1_columns, r }),
                    _ => None,
                }
            }
            "ridge" => {
                self.forbid(who, &kind_key, FIELD_R | FIELD_P1 | FIELD_RMAX, out);
                Some(EstimatorKind::Ridge { lambda: self.lambda })
            }
            "pc_auto" => {
                self.forbid(who, &kind_key, FIELD_R | FIELD_LAMBDA | FIELD_P1, out);
                Some(EstimatorKind::PcAuto { r_max: self.r_max })
            }
            "epc_auto" => {
                self.forbid(who, &kind_key, FIELD_R | FIELD_LAMBDA | FIELD_P1, out);
                Some(EstimatorKind::EpcAuto { r_max: self.r_max })
            }
            other => {
                out.push(format!(
                    "{who}: unknown kind \"{other}\" \
                     (known: ht, full, pc, epc, pc2, ppc, ridge, pc_auto, epc_auto)"
                ));
                None
            }
        };
        if out.len() > before {
            // A misuse message already tells the whole story; do not let a
            // half-built estimator masquerade as valid downstream.
            return None;
        }
        kind.map(|k| {
            if self.intercept {
                EstimatorSpec::with_intercept(k)
            } else {
                EstimatorSpec::new(k)
            }
        })
    }

    fn forbid(&self, who: &str, kind: &str, fields: u8, out: &mut Vec<String>) {
        if fields & FIELD_R != 0 && self.r.is_some() {
            out.push(format!("{who}: kind {kind} does not use the field r"));
        }
        if fields & FIELD_LAMBDA != 0 && self.lambda.is_some() {
            out.push(format!("{who}: kind {kind} does not use the field lambda"));
        }
        if fields & FIELD_P1 != 0 && self.p1_columns.is_some() {
            out.push(format!("{who}: kind {kind} does not use the field p1_columns"));
        }
        if fields & FIELD_RMAX != 0 && self.r_max.is_some() {
            out.push(format!("{who}: kind {kind} does not use the field r_max"));
        }
    }
}

const FIELD_R: u8 = 1;
const FIELD_LAMBDA: u8 = 2;
const FIELD_P1: u8 = 4;
const FIELD_RMAX: u8 = 8;

impl RunConfig {
    /// First validation pass: everything checkable without loading data.
    /// Returns the built estimators (position-aligned with the config
    /// list, `None` where building failed) and appends violations.
    pub fn structural_check(&self, out: &mut Vec<String>) -> Vec<Option<EstimatorSpec>> {
        match (&self.population.csv_path, &self.population.synthetic) {
            (Some(_), Some(_)) => out.push(
                "population: csv_path and synthetic are both set; keep exactly one".to_string(),
            ),
            (None, None) => out
                .push("population: set exactly one of csv_path or synthetic".to_string()),
            (None, Some(s)) => out.extend(
                s.to_spec().violations().into_iter().map(|v| format!("population.synthetic: {v}")),
            ),
            (Some(_), None) => {}
        }
        if let Some(columns) = &self.columns {
            columns.violations(out);
            if self.population.csv_path.is_none() {
                out.push(
                    "columns: explicit column lists apply only to csv_path populations"
                        .to_string(),
                );
            }
        }
        if self.replicates == 0 {
            out.push("replicates: at least one replicate is required".to_string());
        }
        if self.estimators.is_empty() {
            out.push("estimators: list at least one estimator".to_string());
        }
        self.estimators
            .iter()
            .enumerate()
            .map(|(i, e)| e.build(&format!("estimators[{i}]"), out))
            .collect()
    }
}

/// Second validation pass, run once the population dimensions are known.
/// `specs` comes from [`RunConfig::structural_check`]; `p` is the auxiliary
/// dimension and `n` the sample size. Checks estimator dimensions,
/// duplicate labels, and that the reference label names a bank member.
pub fn dimension_check(
    specs: &[EstimatorSpec],
    reference: &str,
    p: usize,
    n: usize,
    out: &mut Vec<String>,
) {
    let mut labels: Vec<String> = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.violations(p, n, out);
        labels.push(spec.label());
    }
    for (i, label) in labels.iter().enumerate() {
        if labels[..i].contains(label) {
            out.push(format!("estimators: label {label} appears twice"));
        }
    }
    if !labels.iter().any(|l| l == reference) {
        out.push(format!(
            "reference: no estimator is labeled \"{reference}\" (available: {})",
            labels.join(", ")
        ));
    }
}
