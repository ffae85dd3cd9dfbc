//! Config-driven experiment pipelines with reproducible output bundles.
//!
//! A run validates its whole config before touching the filesystem, then
//! computes, then writes:
//!
//! * `manifest.json`: resolved config, package version, seeds, file list;
//! * task-specific CSV files;
//! * `summary.json`: the headline numbers in machine-readable form.
//!
//! A numerical failure leaves `manifest.json` (status `"failed"`) and a
//! `diagnostics.json` with the error. See `docs/manifest.md` for the schema.

pub mod config;
mod dynamics;
mod output;
mod tasks;

use std::path::{Path, PathBuf};

use serde::Serialize;

pub use config::{
    parse_config, AnalysisBlock, ClassicalBlock, EvolutionBlock, ExperimentConfig, GeometryConfig,
    MeasurementBlock, Method, ScanConfig, ScanParameter, ShorttimeBlock, ShorttimeOrder, SpectrumBlock, Task,
};
pub use output::{Seeds, MANIFEST_SCHEMA};

use crate::error::{Error, Result};
use crate::lattice::{build_lattice, LatticeGeometry};
use output::{Bundle, Manifest, PackageInfo};

/// Environment variable that sets the worker thread count.
pub const THREADS_ENV: &str = "RYDSIM_THREADS";

const PRESETS: [(&str, &str); 7] = [
    ("scan-detuning", include_str!("../../presets/scan-detuning.toml")),
    ("scan-duration", include_str!("../../presets/scan-duration.toml")),
    ("time-trace", include_str!("../../presets/time-trace.toml")),
    ("spatial-map", include_str!("../../presets/spatial-map.toml")),
    ("classical-diagram", include_str!("../../presets/classical-diagram.toml")),
    ("shorttime-check", include_str!("../../presets/shorttime-check.toml")),
    ("spectrum-2x2", include_str!("../../presets/spectrum-2x2.toml")),
];

/// Names of the built-in pipelines.
pub fn presets() -> Vec<&'static str> {
    PRESETS.iter().map(|(name, _)| *name).collect()
}

/// TOML source of a built-in pipeline.
pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

/// Build a config from a preset, a file, or a preset overlaid with a file.
/// Overlay tables merge key by key; any other overlay value replaces the
/// preset value.
pub fn load_config(preset: Option<&str>, file: Option<&Path>) -> Result<ExperimentConfig> {
    let overlay = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(config::parse_table(&text, Some(path))?)
        }
        None => None,
    };
    let table = match (preset, overlay) {
        (Some(name), overlay) => {
            let text = preset_source(name).ok_or_else(|| {
                Error::invalid("preset", format!("unknown preset `{name}`; known: {}", presets().join(", ")))
            })?;
            let mut base = config::parse_table(text, None)?;
            if let Some(top) = overlay {
                config::merge_tables(&mut base, top);
            }
            base
        }
        (None, Some(table)) => table,
        (None, None) => return Err(Error::invalid("config", "no preset and no config file given")),
    };
    config::from_table(table)
}

/// Result of a successful run.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    /// Files written, relative to `out_dir`, in creation order.
    pub outputs: Vec<String>,
    pub seeds: Seeds,
    pub summary: serde_json::Value,
}

enum Plan {
    Dynamics(dynamics::DynamicsPlan),
    Classical(tasks::ClassicalPlan),
    Shorttime(tasks::ShorttimePlan),
    Spectrum(tasks::SpectrumPlan),
}

impl Plan {
    fn seeds(&self) -> &Seeds {
        match self {
            Plan::Dynamics(p) => &p.seeds,
            Plan::Classical(p) => &p.seeds,
            Plan::Shorttime(p) => &p.seeds,
            Plan::Spectrum(p) => &p.seeds,
        }
    }
}

enum Computed {
    Dynamics(dynamics::DynamicsResult),
    Classical(tasks::ClassicalResult),
    Shorttime(Vec<crate::shorttime::ScalingReport>),
    Spectrum(Vec<tasks::SpectrumRow>),
}

fn plan(config: &ExperimentConfig) -> Result<Plan> {
    let unused = |present: bool, name: &str| -> Result<()> {
        if present {
            Err(Error::invalid(
                name,
                format!("not used by the {:?} task", config.task).to_lowercase(),
            ))
        } else {
            Ok(())
        }
    };
    match config.task {
        config::Task::Dynamics => {
            unused(config.classical.is_some(), "classical")?;
            unused(config.shorttime.is_some(), "shorttime")?;
            unused(config.spectrum.is_some(), "spectrum")?;
            Ok(Plan::Dynamics(dynamics::plan(config)?))
        }
        config::Task::Classical => {
            unused(config.evolution.is_some(), "evolution")?;
            unused(config.scan.is_some(), "scan")?;
            unused(config.measurement.is_some(), "measurement")?;
            Ok(Plan::Classical(tasks::plan_classical(config)?))
        }
        config::Task::Shorttime => {
            unused(config.evolution.is_some(), "evolution")?;
            unused(config.scan.is_some(), "scan")?;
            unused(config.measurement.is_some(), "measurement")?;
            Ok(Plan::Shorttime(tasks::plan_shorttime(config)?))
        }
        config::Task::Spectrum => {
            unused(config.evolution.is_some(), "evolution")?;
            unused(config.scan.is_some(), "scan")?;
            unused(config.measurement.is_some(), "measurement")?;
            Ok(Plan::Spectrum(tasks::plan_spectrum(config)?))
        }
    }
}

/// Check every block of `config` against its preconditions without
/// computing anything.
pub fn validate(config: &ExperimentConfig) -> Result<()> {
    plan(config).map(|_| ())
}

/// Validate, compute and write the output bundle into `out_dir`.
///
/// Validation errors return before anything is written. Numerical errors
/// write `manifest.json` and `diagnostics.json`, then return the error.
pub fn run(config: &ExperimentConfig, out_dir: &Path, preset: Option<&str>) -> Result<RunReport> {
    let plan = plan(config)?;
    let seeds = plan.seeds().clone();
    let computed = match &plan {
        Plan::Dynamics(p) => dynamics::execute(p).map(Computed::Dynamics),
        Plan::Classical(p) => tasks::execute_classical(p).map(Computed::Classical),
        Plan::Shorttime(p) => tasks::execute_shorttime(p).map(Computed::Shorttime),
        Plan::Spectrum(p) => tasks::execute_spectrum(p).map(Computed::Spectrum),
    };
    let computed = match computed {
        Ok(c) => c,
        Err(e) if e.is_validation() => return Err(e),
        Err(e) => {
            let mut bundle = Bundle::create(out_dir)?;
            bundle.json("diagnostics.json", &Diagnostics::of(&e))?;
            write_manifest(&mut bundle, config, preset, &seeds, "failed")?;
            return Err(e);
        }
    };
    let mut bundle = Bundle::create(out_dir)?;
    let summary = match (&plan, &computed) {
        (Plan::Dynamics(p), Computed::Dynamics(r)) => dynamics::write(&mut bundle, p, r)?,
        (Plan::Classical(p), Computed::Classical(r)) => tasks::write_classical(&mut bundle, p, r)?,
        (Plan::Shorttime(p), Computed::Shorttime(r)) => tasks::write_shorttime(&mut bundle, p, r)?,
        (Plan::Spectrum(p), Computed::Spectrum(r)) => tasks::write_spectrum(&mut bundle, p, r)?,
        _ => unreachable!("result matches its plan"),
    };
    bundle.json("summary.json", &summary)?;
    write_manifest(&mut bundle, config, preset, &seeds, "ok")?;
    Ok(RunReport {
        out_dir: out_dir.to_path_buf(),
        outputs: bundle.files().to_vec(),
        seeds,
        summary,
    })
}

fn write_manifest(
    bundle: &mut Bundle,
    config: &ExperimentConfig,
    preset: Option<&str>,
    seeds: &Seeds,
    status: &str,
) -> Result<()> {
    let mut outputs = bundle.files().to_vec();
    outputs.push("manifest.json".to_string());
    outputs.sort();
    // The output directory is where the bundle lives, not part of what it
    // contains.
    let mut config = config.clone();
    config.out_dir = None;
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        package: PackageInfo::current(),
        preset,
        config: &config,
        seeds: seeds.clone(),
        status,
        outputs,
    };
    bundle.json("manifest.json", &manifest)
}

#[derive(Serialize)]
struct Diagnostics {
    kind: &'static str,
    message: String,
}

impl Diagnostics {
    fn of(e: &Error) -> Self {
        let kind = match e {
            Error::KrylovNotConverged { .. } => "krylov_not_converged",
            Error::JumpProbability { .. } => "jump_probability",
            Error::NonFinite { .. } => "non_finite",
            Error::TraceDrift { .. } => "trace_drift",
            Error::Io { .. } => "io",
            _ => "other",
        };
        Diagnostics {
            kind,
            message: e.to_string(),
        }
    }
}

pub(crate) fn build_geometry(g: &GeometryConfig) -> Result<LatticeGeometry> {
    build_lattice(g.kind, &g.dimensions, g.boundary, g.spacing_um, g.distortion).map_err(|e| in_block("geometry", e))
}

/// Prefix the field of a validation error with its config block.
pub(crate) fn in_block(block: &str, e: Error) -> Error {
    match e {
        Error::Invalid { field, reason } if !field.starts_with(block) => Error::Invalid {
            field: format!("{block}.{field}"),
            reason,
        },
        other => other,
    }
}

/// Worker threads requested by the environment, if any.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::invalid(THREADS_ENV, format!("`{v}` is not a positive integer"))),
        Err(_) => Ok(None),
    }
}
