//! Problem files: one instance and, optionally, its targets.
//!
//! TOML with the channel matrix as `N_t` rows of `K` `[re, im]` pairs:
//!
//! ```toml
//! num_antennas = 2
//! num_users = 2
//! channels = [
//!   [[1.0e-2, 0.0], [2.0e-3, 1.0e-3]],
//!   [[0.0, -4.0e-3], [8.0e-3, 0.0]],
//! ]
//! antenna_noise_dbm = -70.0     # or antenna_noise_w
//! id_noise_dbm = -50.0          # or id_noise_w
//! eh_efficiency = 0.5
//! sinr_db = [10.0, 10.0]        # or sinr_linear; optional
//! harvest_dbm = -10.0           # or harvest_w; optional
//! ```
//!
//! Every per-user field takes either one number for all users or a list of
//! `K`. Files written by [`problem_to_toml`] use the linear keys with
//! shortest round-trip decimals, so reading them back is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::model::{db_to_linear, dbm_to_watts, SystemInstance, Targets};

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFile {
    pub instance: SystemInstance,
    /// Linear SINR targets, when the file has them.
    pub sinr: Option<Vec<f64>>,
    /// Harvest targets in watts, when the file has them.
    pub harvest: Option<Vec<f64>>,
}

impl ProblemFile {
    /// Targets from the file, with either family replaced when given.
    pub fn targets(&self, sinr: Option<Vec<f64>>, harvest: Option<Vec<f64>>) -> Result<Targets> {
        let k = self.instance.num_users();
        let sinr = sinr.or_else(|| self.sinr.clone()).ok_or_else(|| Error::InvalidInput("no SINR targets given".into()))?;
        let harvest =
            harvest.or_else(|| self.harvest.clone()).ok_or_else(|| Error::InvalidInput("no harvest targets given".into()))?;
        let t = Targets::new(broadcast(sinr, k, "SINR targets")?, broadcast(harvest, k, "harvest targets")?)?;
        t.check_against(&self.instance)?;
        Ok(t)
    }
}

/// A single value is repeated for every user.
pub fn broadcast(values: Vec<f64>, k: usize, what: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; k]),
        n if n == k => Ok(values),
        n => Err(Error::DimensionMismatch(format!("{n} {what} for {k} users"))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PerUser {
    One(f64),
    Many(Vec<f64>),
}

impl PerUser {
    fn into_vec(self) -> Vec<f64> {
        match self {
            PerUser::One(v) => vec![v],
            PerUser::Many(v) => v,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    num_antennas: usize,
    num_users: usize,
    channels: Vec<Vec<[f64; 2]>>,
    antenna_noise_dbm: Option<PerUser>,
    antenna_noise_w: Option<PerUser>,
    id_noise_dbm: Option<PerUser>,
    id_noise_w: Option<PerUser>,
    eh_efficiency: PerUser,
    sinr_db: Option<PerUser>,
    sinr_linear: Option<PerUser>,
    harvest_dbm: Option<PerUser>,
    harvest_w: Option<PerUser>,
}

/// Exactly one of a logarithmic and a linear key, converted to linear.
fn pick(log: Option<PerUser>, lin: Option<PerUser>, names: (&str, &str), to_linear: fn(f64) -> f64) -> Result<Option<Vec<f64>>> {
    match (log, lin) {
        (Some(_), Some(_)) => Err(Error::Parse(format!("give either {} or {}, not both", names.0, names.1))),
        (Some(v), None) => Ok(Some(v.into_vec().into_iter().map(to_linear).collect())),
        (None, Some(v)) => Ok(Some(v.into_vec())),
        (None, None) => Ok(None),
    }
}

pub fn parse_problem(text: &str) -> Result<ProblemFile> {
    let raw: RawProblem = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let (n, k) = (raw.num_antennas, raw.num_users);
    if raw.channels.len() != n {
        return Err(Error::Parse(format!("channels: expected {n} rows, found {}", raw.channels.len())));
    }
    let mut h = CMatrix::zeros(n, k);
    for (r, row) in raw.channels.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Parse(format!("channels row {}: expected {k} entries, found {}", r + 1, row.len())));
        }
        for (c, [re, im]) in row.iter().enumerate() {
            h[(r, c)] = Complex64::new(*re, *im);
        }
    }
    let required = |v: Option<Vec<f64>>, what: &str| v.ok_or_else(|| Error::Parse(format!("missing {what}")));
    let sigma = required(pick(raw.antenna_noise_dbm, raw.antenna_noise_w, ("antenna_noise_dbm", "antenna_noise_w"), dbm_to_watts)?, "antenna_noise_dbm")?;
    let delta = required(pick(raw.id_noise_dbm, raw.id_noise_w, ("id_noise_dbm", "id_noise_w"), dbm_to_watts)?, "id_noise_dbm")?;
    let instance = SystemInstance::new(
        h,
        broadcast(sigma, k, "antenna noise powers")?,
        broadcast(delta, k, "ID noise powers")?,
        broadcast(raw.eh_efficiency.into_vec(), k, "efficiencies")?,
    )?;
    let sinr = pick(raw.sinr_db, raw.sinr_linear, ("sinr_db", "sinr_linear"), db_to_linear)?;
    let harvest = pick(raw.harvest_dbm, raw.harvest_w, ("harvest_dbm", "harvest_w"), dbm_to_watts)?;
    let sinr = sinr.map(|v| broadcast(v, k, "SINR targets")).transpose()?;
    let harvest = harvest.map(|v| broadcast(v, k, "harvest targets")).transpose()?;
    Ok(ProblemFile { instance, sinr, harvest })
}

pub fn read_problem(path: &Path) -> Result<ProblemFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_problem(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Shortest decimal that parses back to the same `f64`.
fn float(x: f64) -> String {
    let s = format!("{x:?}");
    if s.contains(['.', 'e', 'n', 'i']) {
        s
    } else {
        format!("{s}.0")
    }
}

fn list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(|&v| float(v)).collect();
    format!("[{}]", items.join(", "))
}

pub fn problem_to_toml(instance: &SystemInstance, targets: Option<&Targets>) -> String {
    let (n, k) = (instance.num_antennas(), instance.num_users());
    let mut out = String::new();
    let _ = writeln!(out, "num_antennas = {n}");
    let _ = writeln!(out, "num_users = {k}");
    out.push_str("channels = [\n");
    let h = instance.channels();
    for r in 0..n {
        let row: Vec<String> = (0..k).map(|c| format!("[{}, {}]", float(h[(r, c)].re), float(h[(r, c)].im))).collect();
        let _ = writeln!(out, "  [{}],", row.join(", "));
    }
    out.push_str("]\n");
    let _ = writeln!(out, "antenna_noise_w = {}", list(instance.antenna_noise()));
    let _ = writeln!(out, "id_noise_w = {}", list(instance.id_noise()));
    let _ = writeln!(out, "eh_efficiency = {}", list(instance.eh_efficiency()));
    if let Some(t) = targets {
        let _ = writeln!(out, "sinr_linear = {}", list(t.sinr()));
        let _ = writeln!(out, "harvest_w = {}", list(t.harvest()));
    }
    out
}

pub fn write_problem(path: &Path, instance: &SystemInstance, targets: Option<&Targets>) -> Result<()> {
    std::fs::write(path, problem_to_toml(instance, targets)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
