//! Command-line front end for the loop simulator.
//!
//! Every command is deterministic in its argv and input files: no wall
//! clock, no ambient randomness. Exit code 0 covers detected divergence
//! (that is a result), 2 covers usage, unreadable or invalid scenario
//! files and out-of-range arguments, 1 covers internal failures.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ncs_core::error::Error;
use ncs_core::matrix::{spectral_radius, Matrix};
use ncs_core::plant::gamma_split;
use ncs_core::scenario::{catalog, from_toml, ScenarioSpec};
use ncs_core::sim::{
    closed_loop_matrix, monte_carlo, run, MonteCarloSummary, SimulationTrace, StepRecord,
};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "ncs",
    version,
    about = "Simulate control loops closed over lossy, delaying network links"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Print the sampled-data matrices of a scenario's plant
    Discretize {
        /// Scenario file (TOML)
        file: PathBuf,
        /// Round-trip delay at which to split the input matrix
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
    },
    /// Run one closed-loop simulation and emit the step trace
    Simulate {
        /// Scenario file (TOML)
        file: PathBuf,
        /// Number of steps to simulate
        #[arg(long)]
        steps: usize,
        /// Random stream seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
        /// Write here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run many seeded trials and emit aggregate statistics
    Montecarlo {
        /// Scenario file (TOML)
        file: PathBuf,
        /// Number of independent trials
        #[arg(long)]
        trials: usize,
        /// Number of steps per trial
        #[arg(long)]
        steps: usize,
        /// Random stream seed; trial i runs stream (seed, i)
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
        /// Write here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-loop spectral radius across a grid of delays
    Stability {
        /// Scenario file (TOML)
        file: PathBuf,
        /// Delay grid as lo:hi:step, bounded by [0, h]
        #[arg(long = "tau-grid")]
        tau_grid: String,
        /// Write here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List every scenario case with its model equations
    Catalog,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::ScenarioFile(_)
            | Error::Validation(_)
            | Error::Domain(_)
            | Error::GainConfig(_)
            | Error::DesignDivergence(_) => 2,
            Error::Dimension(_) | Error::Contract(_) => 1,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Discretize { file, tau } => cmd_discretize(&file, tau),
        Command::Simulate {
            file,
            steps,
            seed,
            format,
            out,
        } => cmd_simulate(&file, steps, seed, format, out.as_deref()),
        Command::Montecarlo {
            file,
            trials,
            steps,
            seed,
            format,
            out,
        } => cmd_montecarlo(&file, trials, steps, seed, format, out.as_deref()),
        Command::Stability {
            file,
            tau_grid,
            out,
        } => cmd_stability(&file, &tau_grid, out.as_deref()),
        Command::Catalog => cmd_catalog(),
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioSpec, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok(from_toml(&text)?)
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure {
            code: 1,
            message: format!("{}: {e}", path.display()),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Shortest decimal text that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v}")
}

/// Twelve significant digits, for the matrix displays.
fn sig12(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v:.11e}")
}

// ---- discretize --------------------------------------------------------

fn cmd_discretize(file: &Path, tau: f64) -> Result<(), Failure> {
    let spec = load_scenario(file)?;
    if !tau.is_finite() || !(0.0..=spec.h).contains(&tau) {
        return Err(Failure::usage(format!(
            "tau must lie in [0, {}], got {tau}",
            spec.h
        )));
    }
    let triple = gamma_split(&spec.plant, spec.h, tau)?;
    let mut text = String::new();
    let _ = writeln!(text, "h = {}", num(spec.h));
    let _ = writeln!(text, "tau = {}", num(tau));
    print_matrix(&mut text, "Phi", &triple.phi);
    print_matrix(&mut text, "Gamma", &(&triple.gamma0 + &triple.gamma1));
    print_matrix(&mut text, "Gamma0", &triple.gamma0);
    print_matrix(&mut text, "Gamma1", &triple.gamma1);
    print!("{text}");
    Ok(())
}

fn print_matrix(text: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(text, "{name} ({}x{})", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|j| sig12(m.get(i, j))).collect();
        let _ = writeln!(text, "  {}", row.join("  "));
    }
}

// ---- simulate ----------------------------------------------------------

#[derive(Serialize)]
struct TraceSummary<'a> {
    diverged_at: Option<usize>,
    x_final: &'a [f64],
}

#[derive(Serialize)]
struct TraceDoc<'a> {
    scenario_id: &'a str,
    seed: u64,
    h: f64,
    records: &'a [StepRecord],
    summary: TraceSummary<'a>,
}

fn cmd_simulate(
    file: &Path,
    steps: usize,
    seed: u64,
    format: OutputFormat,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let spec = load_scenario(file)?;
    let trace = run(&spec, steps, seed)?;
    match format {
        OutputFormat::Csv => {
            emit(&trace_csv(&spec, &trace), out)?;
            // the summary the JSON form embeds; kept off the table stream
            eprintln!("{}", summary_json(&trace));
        }
        OutputFormat::Json => {
            let doc = TraceDoc {
                scenario_id: &trace.scenario_id,
                seed: trace.seed,
                h: trace.h,
                records: &trace.records,
                summary: TraceSummary {
                    diverged_at: trace.diverged_at,
                    x_final: &trace.x_final,
                },
            };
            let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Failure {
                code: 1,
                message: e.to_string(),
            })?;
            text.push('\n');
            emit(&text, out)?;
        }
    }
    Ok(())
}

fn summary_json(trace: &SimulationTrace) -> String {
    serde_json::to_string(&TraceSummary {
        diverged_at: trace.diverged_at,
        x_final: &trace.x_final,
    })
    .expect("summary serialization cannot fail")
}

fn trace_csv(spec: &ScenarioSpec, trace: &SimulationTrace) -> String {
    let n = spec.plant.n();
    let p = spec.plant.c.rows();
    let m = spec.plant.m();
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.extend((0..p).map(|i| format!("y_{i}")));
    header.extend((0..m).map(|i| format!("u_computed_{i}")));
    header.extend((0..m).map(|i| format!("u_applied_{i}")));
    header.extend(
        ["tau_sc", "tau_ca", "tau_k", "gamma_sc", "gamma_ca"]
            .iter()
            .map(ToString::to_string),
    );
    let mut text = header.join(",");
    text.push('\n');
    for rec in &trace.records {
        let mut fields = vec![rec.k.to_string(), num(rec.t)];
        fields.extend(rec.x.iter().map(|v| num(*v)));
        fields.extend(rec.y.iter().map(|v| num(*v)));
        fields.extend(rec.u_computed.iter().map(|v| num(*v)));
        fields.extend(rec.u_applied.iter().map(|v| num(*v)));
        fields.push(num(rec.tau_sc));
        fields.push(num(rec.tau_ca));
        fields.push(num(rec.tau_k));
        fields.push(rec.gamma_sc.to_string());
        fields.push(rec.gamma_ca.to_string());
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    text
}

// ---- montecarlo --------------------------------------------------------

fn cmd_montecarlo(
    file: &Path,
    trials: usize,
    steps: usize,
    seed: u64,
    format: OutputFormat,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let spec = load_scenario(file)?;
    let summary = monte_carlo(&spec, steps, trials, seed)?;
    let text = match format {
        OutputFormat::Csv => montecarlo_csv(&summary),
        OutputFormat::Json => {
            let mut t = serde_json::to_string_pretty(&summary).map_err(|e| Failure {
                code: 1,
                message: e.to_string(),
            })?;
            t.push('\n');
            t
        }
    };
    emit(&text, out)
}

fn montecarlo_csv(summary: &MonteCarloSummary) -> String {
    let mut text = String::from("trial,terminal_norm,diverged_at\n");
    for (i, norm) in summary.terminal_norms.iter().enumerate() {
        let diverged = summary.diverged[i].map_or(String::new(), |k| k.to_string());
        let _ = writeln!(text, "{i},{},{diverged}", num(*norm));
    }
    text.push('\n');
    text.push_str("k,mean_norm,max_norm\n");
    for (k, (mean, max)) in summary
        .mean_norm
        .iter()
        .zip(&summary.max_norm)
        .enumerate()
    {
        let _ = writeln!(text, "{k},{},{}", num(*mean), num(*max));
    }
    text.push('\n');
    text.push_str("stat,value\n");
    let _ = writeln!(text, "trials,{}", summary.trials);
    let _ = writeln!(text, "steps,{}", summary.steps);
    let _ = writeln!(text, "divergent_trials,{}", summary.divergent_trials);
    let _ = writeln!(text, "loss_rate_sc,{}", num(summary.loss_rate_sc));
    let _ = writeln!(text, "loss_rate_ca,{}", num(summary.loss_rate_ca));
    let _ = writeln!(text, "mean_tau_sc,{}", num(summary.mean_tau_sc));
    let _ = writeln!(text, "mean_tau_ca,{}", num(summary.mean_tau_ca));
    let _ = writeln!(text, "mean_tau_k,{}", num(summary.mean_tau_k));
    text
}

// ---- stability ---------------------------------------------------------

fn cmd_stability(file: &Path, grid: &str, out: Option<&Path>) -> Result<(), Failure> {
    let spec = load_scenario(file)?;
    let taus = parse_grid(grid, spec.h)?;
    let resolved = spec.gain.resolve(&spec.plant, spec.h)?;
    let mut text = String::from("tau,spectral_radius,stable\n");
    for tau in taus {
        let triple = gamma_split(&spec.plant, spec.h, tau)?;
        let l = resolved.at(tau)?;
        let rho = spectral_radius(&closed_loop_matrix(&triple, l)?)?;
        let _ = writeln!(text, "{},{},{}", num(tau), num(rho), rho < 1.0);
    }
    emit(&text, out)
}

fn parse_grid(grid: &str, h: f64) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = grid.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(Failure::usage(format!(
            "tau grid must be lo:hi:step, got '{grid}'"
        )));
    };
    let parse = |name: &str, s: &str| {
        s.parse::<f64>()
            .map_err(|_| Failure::usage(format!("tau grid {name} '{s}' is not a number")))
    };
    let lo = parse("lo", lo)?;
    let hi = parse("hi", hi)?;
    let step = parse("step", step)?;
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || step <= 0.0 || lo > hi {
        return Err(Failure::usage(format!(
            "tau grid needs 0 <= lo <= hi and step > 0, got {lo}:{hi}:{step}"
        )));
    }
    if lo < 0.0 || hi > h {
        return Err(Failure::usage(format!(
            "tau grid [{lo}, {hi}] exceeds the sampling interval [0, {h}]"
        )));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| (lo + i as f64 * step).min(hi)).collect())
}

// ---- catalog -----------------------------------------------------------

fn cmd_catalog() -> Result<(), Failure> {
    let mut text = String::from("case  equations   description\n");
    for info in catalog() {
        let id = info.id.to_string();
        let _ = write!(text, "{id:<4}  {:<10}  {}", info.equations, info.description);
        if !info.remark.is_empty() {
            let _ = write!(text, " [{}]", info.remark);
        }
        text.push('\n');
    }
    print!("{text}");
    Ok(())
}
