//! `jbps` command line.
//!
//! Exit codes: 0 success, 2 infeasible targets, 3 solver failure, 4 invalid
//! input (unreadable or malformed files, bad arguments).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::channel::{generate_instance, ChannelConfig, NoiseParams};
use crate::error::{Error, Result};
use crate::feasibility::{is_feasible, RANK_TOL};
use crate::harness::{aggregate, aggregate_csv, records_csv, run_sweep_with, solve_with, write_csv, Execution, RecordStatus, SweepConfig};
use crate::io::{read_problem, write_problem, ProblemFile};
use crate::model::{db_to_linear, dbm_to_watts, linear_to_db, watts_to_dbm, JbpsSolution, Method, Targets};
use crate::sdr::{solve_jbps_certified, SdrSolveOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_INPUT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "jbps", version, about = "Joint beamforming and power splitting for MISO SWIPT downlinks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct TargetArgs {
    /// SINR targets in dB, one value or one per user (overrides the file).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    sinr_db: Option<Vec<f64>>,
    /// Harvest targets in dBm, one value or one per user (overrides the file).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    harvest_dbm: Option<Vec<f64>>,
}

impl TargetArgs {
    fn sinr(&self) -> Option<Vec<f64>> {
        self.sinr_db.as_ref().map(|v| v.iter().map(|&x| db_to_linear(x)).collect())
    }

    fn harvest(&self) -> Option<Vec<f64>> {
        self.harvest_dbm.as_ref().map(|v| v.iter().map(|&x| dbm_to_watts(x)).collect())
    }

    fn resolve(&self, problem: &ProblemFile) -> Result<Targets> {
        problem.targets(self.sinr(), self.harvest())
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the SINR targets against the channel rank.
    Feasibility {
        /// Problem file (see the README for the format).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        sinr_db: Option<Vec<f64>>,
        #[arg(long)]
        json: bool,
    },
    /// Solve one instance with one method.
    Solve {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "optimal")]
        method: String,
        /// Relative KKT tolerance of the optimal solver.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[command(flatten)]
        targets: TargetArgs,
        #[arg(long)]
        json: bool,
    },
    /// Solve one instance with all three methods side by side.
    Compare {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        targets: TargetArgs,
        #[arg(long)]
        json: bool,
    },
    /// Run a Monte-Carlo sweep and write records.csv and aggregate.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Run draws one after another instead of on the thread pool.
        #[arg(long)]
        sequential: bool,
    },
    /// Draw one channel realisation and write it as a problem file.
    Generate {
        #[arg(long)]
        antennas: usize,
        /// User directions in degrees; their count sets K.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [-30.0, -60.0, 60.0, 30.0])]
        directions: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        draw: u64,
        #[command(flatten)]
        targets: TargetArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse(_)
        | Error::Io(_)
        | Error::InvalidInput(_)
        | Error::DimensionMismatch(_)
        | Error::IndexOutOfRange { .. }
        | Error::InvalidPsRatio { .. } => EXIT_INPUT,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        _ => EXIT_SOLVER,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Feasibility { input, sinr_db, json } => {
            let problem = read_problem(&input)?;
            let k = problem.instance.num_users();
            let sinr = match sinr_db {
                Some(v) => crate::io::broadcast(v.into_iter().map(db_to_linear).collect(), k, "SINR targets")?,
                None => problem.sinr.clone().ok_or_else(|| Error::InvalidInput("no SINR targets given".into()))?,
            };
            let v = is_feasible(&sinr, problem.instance.channels(), RANK_TOL);
            if json {
                writeln!(out, "{}", serde_json::to_string(&v).map_err(|e| Error::Io(e.to_string()))?).map_err(io_err)?;
            } else {
                writeln!(out, "sinr load      {:.12}", v.load).map_err(io_err)?;
                writeln!(out, "channel rank   {}", v.rank).map_err(io_err)?;
                writeln!(out, "margin         {:.12}", v.margin).map_err(io_err)?;
                writeln!(out, "verdict        {}", if v.feasible { "feasible" } else { "infeasible" }).map_err(io_err)?;
            }
            Ok(if v.feasible { EXIT_OK } else { EXIT_INFEASIBLE })
        }
        Command::Solve { input, method, tol, targets, json } => {
            let problem = read_problem(&input)?;
            let t = targets.resolve(&problem)?;
            let method = Method::parse(&method)?;
            let inst = &problem.instance;
            let (sol, cert) = if method == Method::SdrOptimal {
                let opts = SdrSolveOptions { kkt_tol: tol, ..SdrSolveOptions::default() };
                opts.validate()?;
                let c = solve_jbps_certified(inst, &t, &opts)?;
                (c.solution.clone(), Some(c))
            } else {
                (solve_with(method, inst, &t, None)?, None)
            };
            if json {
                let mut value = solution_json(&sol);
                if let Some(c) = &cert {
                    value["certificate"] = json!({
                        "tolerance": c.report.tolerance,
                        "passed": c.report.all_passed(),
                        "failures": c.report.failures(),
                        "lambda": c.certificate.lambda,
                        "mu": c.certificate.mu,
                        "dual_ranks": c.report.dual_ranks,
                        "residuals": c.report.residuals,
                        "relaxation_objective_watts": c.relaxation.objective,
                        "iterations": c.relaxation.iterations,
                    });
                }
                writeln!(out, "{}", serde_json::to_string_pretty(&value).map_err(|e| Error::Io(e.to_string()))?)
                    .map_err(io_err)?;
            } else {
                write_solution(out, &sol).map_err(io_err)?;
                if let Some(c) = &cert {
                    let r = &c.report;
                    let verdict = if r.all_passed() { "passed".to_string() } else { format!("failed: {}", r.failures().join(", ")) };
                    writeln!(out, "certificate    {verdict} (tol {:e}, {} iterations)", r.tolerance, c.relaxation.iterations)
                        .map_err(io_err)?;
                    writeln!(
                        out,
                        "residuals      stationarity {:.3e}  complementarity {:.3e}  psd {:.3e}  tightness {:.3e}",
                        r.residuals.stationarity, r.residuals.complementarity, r.residuals.psd_violation, r.residuals.tightness
                    )
                    .map_err(io_err)?;
                    for u in 0..c.certificate.lambda.len() {
                        writeln!(
                            out,
                            "user {u:<3}       lambda {:.6e}  mu {:.6e}  rank(A) {}",
                            c.certificate.lambda[u], c.certificate.mu[u], r.dual_ranks[u]
                        )
                        .map_err(io_err)?;
                    }
                }
            }
            Ok(EXIT_OK)
        }
        Command::Compare { input, targets, json } => {
            let problem = read_problem(&input)?;
            let t = targets.resolve(&problem)?;
            let results: Vec<(Method, Result<JbpsSolution>)> = [Method::SdrOptimal, Method::SinrOptimal, Method::ZeroForcing]
                .into_iter()
                .map(|m| (m, solve_with(m, &problem.instance, &t, None)))
                .collect();
            let best = results[0].1.as_ref().ok().map(|s| s.total_power);
            let gap = |p: f64| best.map(|b| p / b - 1.0);
            if json {
                let rows: Vec<_> = results
                    .iter()
                    .map(|(m, r)| match r {
                        Ok(s) => json!({"method": m.as_str(), "status": "ok", "power_watts": s.total_power,
                                        "power_dbm": watts_to_dbm(s.total_power), "gap_to_optimal": gap(s.total_power)}),
                        Err(e) => json!({"method": m.as_str(), "status": "failed", "error": e.to_string()}),
                    })
                    .collect();
                writeln!(out, "{}", serde_json::to_string_pretty(&rows).map_err(|e| Error::Io(e.to_string()))?)
                    .map_err(io_err)?;
            } else {
                writeln!(out, "{:<10} {:>14} {:>16} {:>12}", "method", "power [dBm]", "power [W]", "gap").map_err(io_err)?;
                for (m, r) in &results {
                    match r {
                        Ok(s) => {
                            let g = gap(s.total_power).map_or("-".to_string(), |g| format!("{:.4}%", 100.0 * g));
                            writeln!(out, "{:<10} {:>14.6} {:>16.6e} {:>12}", m.as_str(), watts_to_dbm(s.total_power), s.total_power, g)
                                .map_err(io_err)?
                        }
                        Err(e) => writeln!(out, "{:<10} failed: {e}", m.as_str()).map_err(io_err)?,
                    }
                }
            }
            Ok(if results.iter().all(|(_, r)| r.is_ok()) {
                EXIT_OK
            } else if results.iter().any(|(_, r)| matches!(r, Err(Error::Infeasible(_)))) {
                EXIT_INFEASIBLE
            } else {
                EXIT_SOLVER
            })
        }
        Command::Sweep { config, out: dir, sequential } => {
            let cfg = SweepConfig::load(&config)?;
            let execution = if sequential { Execution::Sequential } else { Execution::Parallel };
            let records = run_sweep_with(&cfg, execution)?;
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
            write_csv(&records_csv(&records), &dir.join("records.csv"))?;
            let rows = aggregate(&records);
            write_csv(&aggregate_csv(&rows), &dir.join("aggregate.csv"))?;
            let failures = records.iter().filter(|r| r.status == RecordStatus::NumericalFailure).count();
            writeln!(out, "{} records, {} numerical failures, written to {}", records.len(), failures, dir.display())
                .map_err(io_err)?;
            Ok(if failures == 0 { EXIT_OK } else { EXIT_SOLVER })
        }
        Command::Generate { antennas, directions, seed, draw, targets, out: path } => {
            let k = directions.len();
            let config = ChannelConfig { num_antennas: antennas, user_directions_deg: directions, seed, ..ChannelConfig::default() };
            let inst = generate_instance(&config, &NoiseParams::default(), draw)?;
            let t = match (targets.sinr(), targets.harvest()) {
                (Some(s), Some(h)) => Some(Targets::new(
                    crate::io::broadcast(s, k, "SINR targets")?,
                    crate::io::broadcast(h, k, "harvest targets")?,
                )?),
                (None, None) => None,
                _ => return Err(Error::InvalidInput("give both --sinr-db and --harvest-dbm, or neither".into())),
            };
            write_problem(&path, &inst, t.as_ref())?;
            writeln!(out, "wrote {}", path.display()).map_err(io_err)?;
            Ok(EXIT_OK)
        }
    }
}

fn solution_json(sol: &JbpsSolution) -> serde_json::Value {
    let beams: Vec<Vec<[f64; 2]>> = (0..sol.beamformers.ncols())
        .map(|k| sol.beamformers.column(k).iter().map(|z| [z.re, z.im]).collect())
        .collect();
    json!({
        "method": sol.method.as_str(),
        "total_power_watts": sol.total_power,
        "total_power_dbm": watts_to_dbm(sol.total_power),
        "ps_ratios": sol.ps_ratios,
        "sinr": sol.per_user_sinr,
        "harvest_watts": sol.per_user_harvest,
        "beamformers": beams,
    })
}

fn write_solution(out: &mut dyn Write, sol: &JbpsSolution) -> std::io::Result<()> {
    writeln!(out, "method         {}", sol.method.as_str())?;
    writeln!(out, "total power    {:.6} dBm ({:.6e} W)", watts_to_dbm(sol.total_power), sol.total_power)?;
    writeln!(out, "{:<6} {:>14} {:>12} {:>14}", "user", "rho", "sinr [dB]", "harvest [dBm]")?;
    for u in 0..sol.ps_ratios.len() {
        writeln!(
            out,
            "{:<6} {:>14.8} {:>12.6} {:>14.6}",
            u,
            sol.ps_ratios[u],
            linear_to_db(sol.per_user_sinr[u]),
            watts_to_dbm(sol.per_user_harvest[u])
        )?;
    }
    Ok(())
}
