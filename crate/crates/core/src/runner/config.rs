//! Experiment configuration files.
//!
//! A config is a TOML (or JSON) document with one table per block. Unknown
//! keys are rejected so that misspelled options fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Boundary, LatticeKind};
use crate::openquantum::{JumpScheme, Unraveling};
use crate::operator::CouplingParams;
use crate::propagate::{KrylovConfig, TimeGrid};
use crate::schedule::RampParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Ramp dynamics with optional scans over a ramp parameter.
    Dynamics,
    /// `Omega = 0` ground states and the density staircase.
    Classical,
    /// Short-time power laws under the time-averaged Hamiltonian.
    Shorttime,
    /// Low-lying spectrum as a function of the detuning.
    Spectrum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Base seed; block seeds default to values derived from it.
    #[serde(default)]
    pub seed: u64,
    /// Output directory, used when none is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub geometry: GeometryConfig,
    pub couplings: CouplingParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<RampParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolution: Option<EvolutionBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementBlock>,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classical: Option<ClassicalBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shorttime: Option<ShorttimeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub kind: LatticeKind,
    pub dimensions: Vec<usize>,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
    #[serde(default = "one")]
    pub spacing_um: f64,
    #[serde(default = "one")]
    pub distortion: f64,
}

fn default_boundary() -> Boundary {
    Boundary::Open
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanParameter {
    TSweepUs,
    DeltaFinalMhz,
    /// Stop the ramp at each value and measure. All stop times share one
    /// evolution.
    StopTimeUs,
}

/// Values of a scanned ramp parameter: either an explicit list or an
/// evenly spaced range with `count` points including both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub parameter: ScanParameter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// For detuning scans at a fixed sweep rate: the sweep duration becomes
    /// `(delta_final - delta0) / rate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_rate_mhz_per_us: Option<f64>,
}

impl ScanConfig {
    pub fn resolved_values(&self) -> Result<Vec<f64>> {
        let values = match (&self.values, self.start, self.stop, self.count) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(a), Some(b), Some(n)) => linspace("scan", a, b, n)?,
            _ => {
                return Err(Error::invalid(
                    "scan.values",
                    "give either `values` or all of `start`, `stop`, `count`",
                ))
            }
        };
        if values.is_empty() {
            return Err(Error::invalid("scan.values", "no scan points"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("scan.values", "non-finite value"));
        }
        Ok(values)
    }
}

pub(crate) fn linspace(block: &str, a: f64, b: f64, n: usize) -> Result<Vec<f64>> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::invalid(format!("{block}.start"), "non-finite range"));
    }
    match n {
        0 => Err(Error::invalid(format!("{block}.count"), "must be positive")),
        1 => Ok(vec![a]),
        _ => Ok((0..n)
            .map(|i| {
                // Round to 12 digits so that values such as 0.1 print cleanly.
                let v = a + (b - a) * i as f64 / (n - 1) as f64;
                (v * 1e12).round() / 1e12
            })
            .collect()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Unitary,
    Mcwf,
    Master,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionBlock {
    pub method: Method,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub time_grid: TimeGrid,
    #[serde(default = "default_krylov_tol")]
    pub krylov_tol: f64,
    #[serde(default = "default_krylov_dim")]
    pub krylov_max_dim: usize,
    /// Dephasing rate relative to the nearest-neighbour coupling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hbar_gamma_over_u: Option<f64>,
    /// Dephasing rate `gamma / 2pi` in MHz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_mhz: Option<f64>,
    #[serde(default = "default_traj")]
    pub n_traj: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub unraveling: Unraveling,
    #[serde(default)]
    pub scheme: JumpScheme,
    /// Also run the dephasing-free evolution at every point.
    #[serde(default)]
    pub compare_unitary: bool,
}

fn default_steps() -> usize {
    200
}

fn default_krylov_tol() -> f64 {
    KrylovConfig::default().tol
}

fn default_krylov_dim() -> usize {
    KrylovConfig::default().max_dim
}

fn default_traj() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementBlock {
    pub n_shots: usize,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub epsilon_prime: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Write every shot as a bitstring line.
    #[serde(default)]
    pub write_shots: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    #[serde(default = "default_shell")]
    pub max_shell: usize,
    #[serde(default = "default_shell")]
    pub neel_cutoff: usize,
    #[serde(default = "yes")]
    pub correlation_length: bool,
    /// Write one correlation map per point.
    #[serde(default = "yes")]
    pub maps: bool,
    /// Sublattice histograms and their uncorrelated baseline.
    #[serde(default)]
    pub histograms: bool,
    /// Annotate each correlation class with its number of shortest paths.
    #[serde(default)]
    pub paths: bool,
    /// Threshold of the light-cone analysis over stop times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lightcone_threshold: Option<f64>,
    #[serde(default = "default_lightcone_shells")]
    pub lightcone_shells: usize,
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        AnalysisBlock {
            max_shell: default_shell(),
            neel_cutoff: default_shell(),
            correlation_length: true,
            maps: true,
            histograms: false,
            paths: false,
            lightcone_threshold: None,
            lightcone_shells: default_lightcone_shells(),
        }
    }
}

fn default_shell() -> usize {
    4
}

fn default_lightcone_shells() -> usize {
    3
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalBlock {
    /// Range of `x = hbar delta / U` for the sampled density curve.
    pub x_min: f64,
    pub x_max: f64,
    #[serde(default = "default_x_points")]
    pub x_points: usize,
    /// Values of `x` at which the ground manifold is listed.
    #[serde(default)]
    pub ground_at: Vec<f64>,
    #[serde(default = "default_cap")]
    pub listing_cap: usize,
    /// Sample large manifolds uniformly instead of failing.
    #[serde(default)]
    pub sample_large: bool,
}

fn default_x_points() -> usize {
    121
}

fn default_cap() -> usize {
    crate::classical::DEFAULT_LISTING_CAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShorttimeBlock {
    /// Constant Rabi frequency `Omega / 2pi` (MHz). Taken from the schedule
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_mhz: Option<f64>,
    /// Mean detuning `delta_avg / 2pi` (MHz). Taken from the schedule when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_avg_mhz: Option<f64>,
    pub orders: Vec<ShorttimeOrder>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShorttimeOrder {
    pub m: usize,
    /// Durations in us.
    pub t_grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumBlock {
    /// `hbar Omega / U`.
    pub omega_over_u: f64,
    pub delta_over_u_start: f64,
    pub delta_over_u_stop: f64,
    pub count: usize,
    pub n_levels: usize,
    /// Repeat with the sign of every coupling reversed.
    #[serde(default)]
    pub both_signs: bool,
}

/// Parse a config from text, choosing the format from the file extension
/// (`.json` for JSON, TOML otherwise).
pub fn parse_config(text: &str, path: Option<&Path>) -> Result<ExperimentConfig> {
    let value = parse_table(text, path)?;
    from_table(value)
}

pub(crate) fn parse_table(text: &str, path: Option<&Path>) -> Result<toml::Table> {
    let is_json = path.and_then(|p| p.extension()).is_some_and(|e| e == "json");
    if is_json {
        let json: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        toml::Table::try_from(json).map_err(|e| Error::Config(e.to_string()))
    } else {
        text.parse::<toml::Table>().map_err(|e| Error::Config(e.to_string()))
    }
}

pub(crate) fn from_table(table: toml::Table) -> Result<ExperimentConfig> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

/// Recursively overlay `top` onto `base`: tables merge key by key, every
/// other value (arrays included) replaces the base value.
pub(crate) fn merge_tables(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge_tables(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
