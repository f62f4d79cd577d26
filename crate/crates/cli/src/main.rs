//! `xfluid`: fluid solutions, simulation ensembles and reports for the X model.
//!
//! Exit codes: 0 ok, 2 I/O, 3 unsupported feature, 4 bad or mismatched
//! input data, 5 numerical failure.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use serde_json::json;

use xfluid_core::analysis::{activation_threshold_size, compare};
use xfluid_core::fluid::{euler_solve, FluidPoint, FluidTrajectory, RegimeTag};
use xfluid_core::ftsp::ftsp_profile;
use xfluid_core::model::file::{load_scenario, scenario_hash};
use xfluid_core::sim::{ensemble_mean, EnsembleSummary};
use xfluid_core::{validate_scenario, Error, FluidState, Scenario, ViolationKind};

#[derive(Parser, Debug)]
#[command(
    name = "xfluid",
    version,
    about = "Fluid and stochastic models of the X call center under FQR-ART"
)]
#[command(disable_help_flag = true)]
struct Cli {
    #[arg(long, action = ArgAction::Help, global = true, help = "Print help")]
    help: Option<bool>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the fluid model and write fluid.csv
    Fluid {
        scenario: PathBuf,
        #[arg(short = 'h', long = "step", default_value_t = 0.001)]
        step: f64,
        #[arg(short = 'o', long = "out", default_value = ".")]
        out: PathBuf,
    },
    /// Run an ensemble of simulations and write ensemble.csv and ensemble_std.csv
    Simulate {
        scenario: PathBuf,
        #[arg(short = 'R', long = "reps", default_value_t = 100)]
        reps: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Override the scenario's system size n
        #[arg(short = 'n', long = "scale")]
        scale: Option<u64>,
        /// Output grid spacing
        #[arg(long, default_value_t = 0.1)]
        grid: f64,
        #[arg(short = 'o', long = "out", default_value = ".")]
        out: PathBuf,
    },
    /// Compare a fluid trajectory with ensemble means
    Compare {
        scenario: PathBuf,
        #[arg(long)]
        fluid: PathBuf,
        #[arg(long)]
        ensemble: PathBuf,
        /// Window left out after each breakpoint
        #[arg(long, default_value_t = 1.0)]
        excision: f64,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Size the activation threshold k21 from the release threshold tau21
    Thresholds {
        #[arg(long)]
        mu11: f64,
        #[arg(long)]
        mu21: f64,
        #[arg(long)]
        theta1: f64,
        #[arg(long)]
        tau21: f64,
        #[arg(long, default_value_t = 1.0)]
        m1: f64,
        #[arg(long = "q1-bound", default_value_t = 2.0)]
        q1_bound: f64,
        #[arg(long = "z0-bound", default_value_t = 1.0)]
        z0_bound: f64,
    },
    /// Print the FTSP profile at a fluid state
    Inspect {
        scenario: PathBuf,
        #[arg(long = "t", default_value_t = 0.0)]
        t: f64,
        /// q1,q2,z11,z12,z21,z22
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        state: Vec<f64>,
        /// 12 or 21
        #[arg(long, default_value = "12")]
        direction: String,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => 2,
            Error::UnsupportedRatio { .. } => 3,
            Error::Parse(_)
            | Error::InvalidScenario(_)
            | Error::GridMismatch(_)
            | Error::InvalidStep(_) => 4,
            _ => 5,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(2, format!("{}: {e}", path.display()))
}

fn read_scenario(path: &Path) -> CliResult<Scenario> {
    let s = match load_scenario(path) {
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Failure::new(
                2,
                format!("scenario not found: {}", path.display()),
            ))
        }
        Err(Error::Io(e)) => return Err(io_fail(path, e)),
        other => other?,
    };
    let violations = validate_scenario(&s);
    let (warn, fatal): (Vec<_>, Vec<_>) = violations
        .into_iter()
        .partition(|v| v.kind == ViolationKind::ZeroPatience);
    for v in &warn {
        eprintln!("warning: {v} (running without abandonment)");
    }
    if !fatal.is_empty() {
        return Err(Error::InvalidScenario(fatal).into());
    }
    Ok(s)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_fail(path, e))
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> CliResult<()> {
    let mut w = create(path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_fail(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("metadata serializes");
    fs::write(path, text + "\n").map_err(|e| io_fail(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))
}

fn cmd_fluid(scenario: &Path, step: f64, out: &Path) -> CliResult<()> {
    let s = read_scenario(scenario)?;
    let traj = euler_solve(&s, step)?;
    ensure_dir(out)?;
    write_with(&out.join("fluid.csv"), |w| traj.write_csv(w))?;
    write_json(
        &out.join("fluid.meta.json"),
        &json!({
            "scenario": scenario.display().to_string(),
            "scenario_hash": scenario_hash(&s),
            "step": step,
            "points": traj.points.len(),
        }),
    )?;
    println!(
        "wrote {} ({} points)",
        out.join("fluid.csv").display(),
        traj.points.len()
    );
    Ok(())
}

fn cmd_simulate(
    scenario: &Path,
    reps: u64,
    seed: u64,
    scale: Option<u64>,
    grid: f64,
    out: &Path,
) -> CliResult<()> {
    let mut s = read_scenario(scenario)?;
    if let Some(n) = scale {
        if n == 0 {
            return Err(Failure::new(4, "scale must be >= 1"));
        }
        s.n = n;
    }
    if reps == 0 {
        return Err(Failure::new(4, "reps must be >= 1"));
    }
    let ens = ensemble_mean(&s, reps, grid, seed)?;
    ensure_dir(out)?;
    write_with(&out.join("ensemble.csv"), |w| ens.write_mean_csv(w))?;
    write_with(&out.join("ensemble_std.csv"), |w| ens.write_std_csv(w))?;
    write_json(
        &out.join("ensemble.meta.json"),
        &json!({
            "scenario": scenario.display().to_string(),
            "scenario_hash": scenario_hash(&s),
            "seed": seed,
            "rng": "ChaCha8, stream = replication index",
            "reps": reps,
            "n": s.n,
            "grid": grid,
        }),
    )?;
    println!(
        "wrote {} ({reps} replications, n = {})",
        out.join("ensemble.csv").display(),
        s.n
    );
    Ok(())
}

fn open_csv(path: &Path) -> CliResult<csv::Reader<File>> {
    csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => io_fail(path, io),
        other => Failure::new(4, format!("{}: {other:?}", path.display())),
    })
}

fn csv_rows(path: &Path, expect: &[&str]) -> CliResult<Vec<csv::StringRecord>> {
    let mut rdr = open_csv(path)?;
    let header = rdr
        .headers()
        .map_err(|e| Failure::new(4, format!("{}: {e}", path.display())))?
        .clone();
    if header.iter().collect::<Vec<_>>() != expect {
        return Err(Failure::new(
            4,
            format!(
                "{}: unexpected header (want {})",
                path.display(),
                expect.join(",")
            ),
        ));
    }
    rdr.records()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::new(4, format!("{}: {e}", path.display())))
}

fn num(rec: &csv::StringRecord, i: usize, path: &Path) -> CliResult<f64> {
    rec.get(i)
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| {
            Failure::new(
                4,
                format!("{}: bad number in column {}", path.display(), i + 1),
            )
        })
}

fn read_fluid_csv(path: &Path) -> CliResult<FluidTrajectory> {
    let header: Vec<&str> = xfluid_core::fluid::solver::FLUID_CSV_HEADER
        .split(',')
        .collect();
    let mut points = Vec::new();
    for rec in csv_rows(path, &header)? {
        let v: Vec<f64> = [0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11]
            .iter()
            .map(|&i| num(&rec, i, path))
            .collect::<CliResult<_>>()?;
        let regime: RegimeTag = rec.get(9).unwrap_or_default().parse()?;
        points.push(FluidPoint {
            t: v[0],
            x: FluidState::from_array([v[1], v[2], v[3], v[4], v[5], v[6]]),
            pi: [v[7], v[8]],
            regime,
            d: [v[9], v[10]],
        });
    }
    if points.len() < 2 {
        return Err(Failure::new(
            4,
            format!("{}: need at least two rows", path.display()),
        ));
    }
    let h = points[1].t - points[0].t;
    Ok(FluidTrajectory { h, points })
}

fn read_ensemble_csv(path: &Path) -> CliResult<EnsembleSummary> {
    let header: Vec<&str> = xfluid_core::sim::SIM_CSV_HEADER.split(',').collect();
    let mut times = Vec::new();
    let mut mean = Vec::new();
    for rec in csv_rows(path, &header)? {
        times.push(num(&rec, 0, path)?);
        let mut row = [0.0; 8];
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = num(&rec, k + 1, path)?;
        }
        mean.push(row);
    }
    let std = vec![[0.0; 8]; mean.len()];
    Ok(EnsembleSummary {
        reps: 0,
        times,
        mean,
        std,
    })
}

fn cmd_compare(
    scenario: &Path,
    fluid: &Path,
    ensemble: &Path,
    excision: f64,
    out: Option<&Path>,
) -> CliResult<()> {
    let s = read_scenario(scenario)?;
    let traj = read_fluid_csv(fluid)?;
    let ens = read_ensemble_csv(ensemble)?;
    let report = compare(&traj, &ens, &s.breakpoints(), excision)?;
    print!("{}", report.to_text());
    if let Some(dir) = out {
        ensure_dir(dir)?;
        let path = dir.join("compare.csv");
        fs::write(&path, report.to_csv()).map_err(|e| io_fail(&path, e))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_thresholds(
    mu11: f64,
    mu21: f64,
    theta1: f64,
    tau21: f64,
    m1: f64,
    q1_bound: f64,
    z0_bound: f64,
) -> CliResult<()> {
    let r = activation_threshold_size(mu11, mu21, theta1, m1, tau21, q1_bound, z0_bound)?;
    // q1(T) is cut, not rounded, to four places
    let q1 = (r.q1_at_t * 1e4).floor() / 1e4;
    println!(
        "T={:.4}, q1(T)={q1:.4}, recommend k21 > {:.3}",
        r.t_release, r.recommended_k21
    );
    for line in &r.trace {
        println!("  {line}");
    }
    Ok(())
}

fn cmd_inspect(scenario: &Path, t: f64, state: &[f64], direction: &str) -> CliResult<()> {
    let s = read_scenario(scenario)?;
    let from = match direction {
        "12" => 0,
        "21" => 1,
        other => {
            return Err(Failure::new(
                4,
                format!("direction must be 12 or 21, got {other}"),
            ))
        }
    };
    let x = match state {
        [] => s.x0,
        [a, b, c, d, e, f] => FluidState::from_array([*a, *b, *c, *d, *e, *f]),
        _ => {
            return Err(Failure::new(
                4,
                "state needs six values: q1,q2,z11,z12,z21,z22",
            ))
        }
    };
    let p = ftsp_profile(&x, t, &s, from)?;
    let r = &p.rates;
    println!("direction {direction} at t = {t}");
    println!("lambda+ = {:.4}", r.lambda_plus);
    println!("mu+     = {:.4}", r.mu_plus);
    println!("lambda- = {:.4}", r.lambda_minus);
    println!("mu-     = {:.4}", r.mu_minus);
    println!("delta+  = {:.4}", p.delta_plus);
    println!("delta-  = {:.4}", p.delta_minus);
    println!("class   = {:?}", p.klass);
    println!("pi      = {:.4}", p.pi);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fluid {
            scenario,
            step,
            out,
        } => cmd_fluid(&scenario, step, &out),
        Command::Simulate {
            scenario,
            reps,
            seed,
            scale,
            grid,
            out,
        } => cmd_simulate(&scenario, reps, seed, scale, grid, &out),
        Command::Compare {
            scenario,
            fluid,
            ensemble,
            excision,
            out,
        } => cmd_compare(&scenario, &fluid, &ensemble, excision, out.as_deref()),
        Command::Thresholds {
            mu11,
            mu21,
            theta1,
            tau21,
            m1,
            q1_bound,
            z0_bound,
        } => cmd_thresholds(mu11, mu21, theta1, tau21, m1, q1_bound, z0_bound),
        Command::Inspect {
            scenario,
            t,
            state,
            direction,
        } => cmd_inspect(&scenario, t, &state, &direction),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
