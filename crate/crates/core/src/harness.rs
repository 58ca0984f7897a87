//! Seeded Monte-Carlo sweeps over the SINR target, the harvest target or the
//! number of antennas, solving every draw with each requested method.
//!
//! Config files are TOML:
//!
//! ```toml
//! seed = 2024
//! num_draws = 100
//! methods = ["optimal", "zf", "sinr-opt"]
//! time_limit_s = 60.0      # per SDR solve, optional
//! record_timing = false    # wall times in the CSV break byte-identical reruns
//!
//! [axis]
//! kind = "sinr-target"     # or "harvest-target", "num-antennas"
//! values = [0, 5, 10]      # dB, dBm or antenna counts
//!
//! [fixed]
//! sinr_db = 10.0           # used unless the axis is the SINR target
//! harvest_dbm = -10.0      # used unless the axis is the harvest target
//!
//! [channel]                # every field of ChannelConfig except `seed`
//! num_antennas = 4         # used unless the axis is the antenna count
//!
//! [noise]                  # optional, defaults shown
//! antenna_noise_dbm = -70.0
//! id_noise_dbm = -50.0
//! eh_efficiency = 0.5
//! ```
//!
//! Draw `d` of every sweep point uses channel seed `seed` and draw index `d`,
//! so points along a target axis share their channels.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::channel::{generate_instance, ChannelConfig, NoiseParams};
use crate::error::{Error, Result};
use crate::feasibility::{is_feasible, RANK_TOL};
use crate::model::{check_solution, db_to_linear, dbm_to_watts, watts_to_dbm, JbpsSolution, Method, SystemInstance, Targets};
use crate::sdr::{solve_jbps_optimal, SdrSolveOptions};
use crate::sinr::solve_sinr_opt;
use crate::zf::solve_zf;

/// Largest constraint violation a solved record may carry.
pub const RECORD_VIOLATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    SinrTarget,
    HarvestTarget,
    NumAntennas,
}

impl SweepAxis {
    /// Column value used in CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::SinrTarget => "sinr_db",
            SweepAxis::HarvestTarget => "harvest_dbm",
            SweepAxis::NumAntennas => "num_antennas",
        }
    }
}

/// One position on the sweep axis with every parameter resolved to linear
/// units.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    /// Axis coordinate as written in the config (dB, dBm or a count).
    pub axis_value: f64,
    pub num_antennas: usize,
    pub sinr: f64,
    /// Watts.
    pub harvest: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub channel: ChannelConfig,
    pub noise: NoiseParams,
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
    pub num_draws: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub time_limit: Option<Duration>,
    pub record_timing: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    seed: u64,
    #[serde(default = "default_draws")]
    num_draws: usize,
    #[serde(default = "all_methods")]
    methods: Vec<String>,
    time_limit_s: Option<f64>,
    #[serde(default)]
    record_timing: bool,
    axis: AxisFile,
    #[serde(default)]
    fixed: FixedFile,
    channel: ChannelFile,
    #[serde(default)]
    noise: NoiseFile,
}

fn default_draws() -> usize {
    100
}

fn all_methods() -> Vec<String> {
    ["optimal", "zf", "sinr-opt"].map(String::from).to_vec()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisFile {
    kind: SweepAxis,
    values: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixedFile {
    sinr_db: Option<f64>,
    harvest_dbm: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    num_antennas: Option<usize>,
    user_directions_deg: Option<Vec<f64>>,
    rician_factor_db: Option<f64>,
    los_amplitude: Option<f64>,
    nlos_variance: Option<f64>,
    element_spacing_ratio: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseFile {
    #[serde(default = "default_antenna_noise")]
    antenna_noise_dbm: f64,
    #[serde(default = "default_id_noise")]
    id_noise_dbm: f64,
    #[serde(default = "default_efficiency")]
    eh_efficiency: f64,
}

fn default_antenna_noise() -> f64 {
    -70.0
}
fn default_id_noise() -> f64 {
    -50.0
}
fn default_efficiency() -> f64 {
    0.5
}

impl Default for NoiseFile {
    fn default() -> Self {
        Self {
            antenna_noise_dbm: default_antenna_noise(),
            id_noise_dbm: default_id_noise(),
            eh_efficiency: default_efficiency(),
        }
    }
}

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SweepFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let axis = file.axis.kind;
        let need = |v: Option<f64>, what: &str| {
            v.ok_or_else(|| Error::InvalidInput(format!("[fixed] {what} is required for a {} sweep", axis.name())))
        };
        let defaults = ChannelConfig::default();
        let ch = file.channel;
        let fixed_nt = match (axis, ch.num_antennas) {
            (SweepAxis::NumAntennas, _) => defaults.num_antennas,
            (_, Some(n)) => n,
            (_, None) => return Err(Error::InvalidInput("[channel] num_antennas is required".into())),
        };
        let channel = ChannelConfig {
            num_antennas: fixed_nt,
            user_directions_deg: ch.user_directions_deg.unwrap_or(defaults.user_directions_deg),
            rician_factor_db: ch.rician_factor_db.unwrap_or(defaults.rician_factor_db),
            los_amplitude: ch.los_amplitude.unwrap_or(defaults.los_amplitude),
            nlos_variance: ch.nlos_variance.unwrap_or(defaults.nlos_variance),
            element_spacing_ratio: ch.element_spacing_ratio.unwrap_or(defaults.element_spacing_ratio),
            seed: file.seed,
        };
        let fixed_sinr = if axis == SweepAxis::SinrTarget { None } else { Some(need(file.fixed.sinr_db, "sinr_db")?) };
        let fixed_harvest =
            if axis == SweepAxis::HarvestTarget { None } else { Some(need(file.fixed.harvest_dbm, "harvest_dbm")?) };
        let mut points = Vec::with_capacity(file.axis.values.len());
        for &v in &file.axis.values {
            let (nt, sinr_db, harvest_dbm) = match axis {
                SweepAxis::SinrTarget => (fixed_nt, v, fixed_harvest.unwrap_or_default()),
                SweepAxis::HarvestTarget => (fixed_nt, fixed_sinr.unwrap_or_default(), v),
                SweepAxis::NumAntennas => {
                    if !(v >= 1.0 && v.fract() == 0.0) {
                        return Err(Error::InvalidInput(format!("antenna count {v} is not a positive integer")));
                    }
                    (v as usize, fixed_sinr.unwrap_or_default(), fixed_harvest.unwrap_or_default())
                }
            };
            points.push(SweepPoint {
                axis_value: v,
                num_antennas: nt,
                sinr: db_to_linear(sinr_db),
                harvest: dbm_to_watts(harvest_dbm),
            });
        }
        let methods = file.methods.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>>>()?;
        let time_limit = match file.time_limit_s {
            None => None,
            Some(t) if t > 0.0 && t.is_finite() => Some(Duration::from_secs_f64(t)),
            Some(t) => return Err(Error::InvalidInput(format!("time_limit_s must be positive, got {t}"))),
        };
        let config = SweepConfig {
            channel,
            noise: NoiseParams {
                antenna_noise: dbm_to_watts(file.noise.antenna_noise_dbm),
                id_noise: dbm_to_watts(file.noise.id_noise_dbm),
                eh_efficiency: file.noise.eh_efficiency,
            },
            axis,
            points,
            num_draws: file.num_draws,
            methods,
            seed: file.seed,
            time_limit,
            record_timing: file.record_timing,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidInput("sweep has no axis values".into()));
        }
        if self.num_draws == 0 {
            return Err(Error::InvalidInput("num_draws must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods requested".into()));
        }
        let n = self.noise;
        if !(n.antenna_noise > 0.0 && n.id_noise > 0.0 && n.eh_efficiency > 0.0 && n.eh_efficiency <= 1.0) {
            return Err(Error::InvalidInput("noise powers must be positive and 0 < eh_efficiency <= 1".into()));
        }
        for p in &self.points {
            ChannelConfig { num_antennas: p.num_antennas, ..self.channel.clone() }.validate()?;
            Targets::uniform(self.channel.num_users(), p.sinr, p.harvest)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RecordStatus {
    Optimal,
    Infeasible,
    /// The method cannot handle this instance (ZF with `N_t < K`).
    Inapplicable,
    NumericalFailure,
}

impl RecordStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordStatus::Optimal => "Optimal",
            RecordStatus::Infeasible => "Infeasible",
            RecordStatus::Inapplicable => "Inapplicable",
            RecordStatus::NumericalFailure => "NumericalFailure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub axis: SweepAxis,
    pub axis_value: f64,
    pub draw: u64,
    pub method: Method,
    pub status: RecordStatus,
    /// Watts; present when the status is `Optimal`.
    pub total_power: Option<f64>,
    /// Zero unless timing is recorded.
    pub time_s: f64,
    /// Largest relative constraint violation of the returned solution.
    pub max_violation: Option<f64>,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Draws run on the rayon pool; identical to `Sequential` when the crate
    /// is built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRecord>> {
    run_sweep_with(config, Execution::default())
}

/// Records in axis-major, draw-minor, method-minor order for either
/// execution mode.
pub fn run_sweep_with(config: &SweepConfig, execution: Execution) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    let cells: Vec<(usize, u64)> =
        (0..config.points.len()).flat_map(|p| (0..config.num_draws as u64).map(move |d| (p, d))).collect();
    let run = |&(p, d): &(usize, u64)| run_cell(config, &config.points[p], d);
    let nested: Vec<Vec<SweepRecord>> = match execution {
        Execution::Sequential => cells.iter().map(run).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            cells.par_iter().map(run).collect()
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel => cells.iter().map(run).collect(),
    };
    Ok(nested.into_iter().flatten().collect())
}

/// Every requested method on draw `draw` of one sweep point.
pub fn run_cell(config: &SweepConfig, point: &SweepPoint, draw: u64) -> Vec<SweepRecord> {
    let channel = ChannelConfig { num_antennas: point.num_antennas, ..config.channel.clone() };
    let record = |method, status, diagnostic: Option<String>| SweepRecord {
        axis: config.axis,
        axis_value: point.axis_value,
        draw,
        method,
        status,
        total_power: None,
        time_s: 0.0,
        max_violation: None,
        diagnostic,
    };
    let setup = generate_instance(&channel, &config.noise, draw)
        .and_then(|inst| Targets::uniform(inst.num_users(), point.sinr, point.harvest).map(|t| (inst, t)));
    let (instance, targets) = match setup {
        Ok(v) => v,
        Err(e) => {
            return config
                .methods
                .iter()
                .map(|&m| record(m, RecordStatus::NumericalFailure, Some(e.to_string())))
                .collect()
        }
    };
    let verdict = is_feasible(targets.sinr(), instance.channels(), RANK_TOL);
    config
        .methods
        .iter()
        .map(|&method| {
            if !verdict.feasible {
                let msg = format!("SINR load exceeds channel rank by {:.3e}", -verdict.margin);
                return record(method, RecordStatus::Infeasible, Some(msg));
            }
            let start = Instant::now();
            let outcome = solve_with(method, &instance, &targets, config.time_limit);
            let time_s = if config.record_timing { start.elapsed().as_secs_f64() } else { 0.0 };
            let mut rec = match outcome {
                Ok(sol) => solved_record(&instance, &targets, &sol, record(method, RecordStatus::Optimal, None)),
                Err(e) => record(method, error_status(&e), Some(e.to_string())),
            };
            rec.time_s = time_s;
            rec
        })
        .collect()
}

/// Runs one method with the harness defaults.
pub fn solve_with(
    method: Method,
    instance: &SystemInstance,
    targets: &Targets,
    time_limit: Option<Duration>,
) -> Result<JbpsSolution> {
    match method {
        Method::SdrOptimal => {
            let opts = SdrSolveOptions { time_limit, ..SdrSolveOptions::default() };
            solve_jbps_optimal(instance, targets, &opts)
        }
        Method::ZeroForcing => solve_zf(instance, targets),
        Method::SinrOptimal => solve_sinr_opt(instance, targets),
    }
}

fn solved_record(instance: &SystemInstance, targets: &Targets, sol: &JbpsSolution, mut rec: SweepRecord) -> SweepRecord {
    match check_solution(instance, targets, sol, RECORD_VIOLATION_TOL) {
        Ok(report) => {
            let violation = report.max_violation();
            rec.max_violation = Some(violation);
            if violation <= RECORD_VIOLATION_TOL {
                rec.total_power = Some(sol.total_power);
            } else {
                rec.status = RecordStatus::NumericalFailure;
                rec.diagnostic = Some(format!("returned solution violates a constraint by {violation:.3e}"));
            }
        }
        Err(e) => {
            rec.status = RecordStatus::NumericalFailure;
            rec.diagnostic = Some(e.to_string());
        }
    }
    rec
}

fn error_status(e: &Error) -> RecordStatus {
    match e {
        Error::Infeasible(_) => RecordStatus::Infeasible,
        Error::ZfInapplicable(_) | Error::NoNullSpace { .. } => RecordStatus::Inapplicable,
        _ => RecordStatus::NumericalFailure,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub axis: SweepAxis,
    pub axis_value: f64,
    pub method: Method,
    /// Mean of the solved powers in watts; `None` when no draw was solved.
    pub mean_power_watts: Option<f64>,
    /// Population standard deviation of the solved powers, watts.
    pub std_power_watts: Option<f64>,
    pub num_solved: usize,
    pub num_failed: usize,
    pub mean_time_s: f64,
}

impl AggregateRow {
    /// `watts_to_dbm` of the linear mean.
    pub fn mean_power_dbm(&self) -> Option<f64> {
        self.mean_power_watts.map(watts_to_dbm)
    }
}

/// One row per (axis value, method) in order of first appearance.
pub fn aggregate(records: &[SweepRecord]) -> Vec<AggregateRow> {
    let mut keys: Vec<(f64, Method)> = Vec::new();
    for r in records {
        if !keys.iter().any(|&(v, m)| v.to_bits() == r.axis_value.to_bits() && m == r.method) {
            keys.push((r.axis_value, r.method));
        }
    }
    keys.into_iter()
        .map(|(value, method)| {
            let group: Vec<&SweepRecord> = records
                .iter()
                .filter(|r| r.axis_value.to_bits() == value.to_bits() && r.method == method)
                .collect();
            let powers: Vec<f64> = group.iter().filter_map(|r| r.total_power).collect();
            let n = powers.len();
            let mean = (n > 0).then(|| powers.iter().sum::<f64>() / n as f64);
            let std = mean.map(|m| (powers.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / n as f64).sqrt());
            AggregateRow {
                axis: group[0].axis,
                axis_value: value,
                method,
                mean_power_watts: mean,
                std_power_watts: std,
                num_solved: n,
                num_failed: group.len() - n,
                mean_time_s: group.iter().map(|r| r.time_s).sum::<f64>() / group.len() as f64,
            }
        })
        .collect()
}

pub const RECORD_COLUMNS: [&str; 9] =
    ["axis_name", "axis_value", "draw", "method", "status", "power_dbm", "power_watts", "time_s", "max_violation"];

pub const AGGREGATE_COLUMNS: [&str; 9] = [
    "axis_name",
    "axis_value",
    "method",
    "mean_power_dbm",
    "mean_power_watts",
    "std_power_watts",
    "num_solved",
    "num_failed",
    "mean_time_s",
];

/// Twelve significant digits; absent values are empty fields.
fn num(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.11e}"),
        None => String::new(),
    }
}

pub fn records_csv(records: &[SweepRecord]) -> String {
    let mut out = RECORD_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.axis.name(),
            num(Some(r.axis_value)),
            r.draw,
            r.method.as_str(),
            r.status.as_str(),
            num(r.total_power.map(watts_to_dbm)),
            num(r.total_power),
            num(Some(r.time_s)),
            num(r.max_violation),
        );
    }
    out
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = AGGREGATE_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.axis.name(),
            num(Some(r.axis_value)),
            r.method.as_str(),
            num(r.mean_power_dbm()),
            num(r.mean_power_watts),
            num(r.std_power_watts),
            r.num_solved,
            r.num_failed,
            num(Some(r.mean_time_s)),
        );
    }
    out
}

pub fn write_csv(text: &str, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
