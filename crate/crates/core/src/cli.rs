//! Command-line front end: `validate`, `run`, `sweep` and `report`.
//!
//! Exit codes: 0 on success, 2 for parse or validation errors (including
//! bad command-line usage), 3 for runtime errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::rva::RvaMode;
use crate::scenario::{load_scenario, Scenario, ScenarioError};
use crate::simkit::{run_simulation, ComparisonTable, RunSummary, SimError, SimulationRun};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hflsim", version, about = "Hierarchical federated learning reconfiguration simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RvaFlag {
    On,
    Off,
    ForceRevert,
}

impl From<RvaFlag> for RvaMode {
    fn from(f: RvaFlag) -> Self {
        match f {
            RvaFlag::On => RvaMode::Enabled,
            RvaFlag::Off => RvaMode::Disabled,
            RvaFlag::ForceRevert => RvaMode::ForceRevert,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    #[value(name = "W", alias = "w")]
    W,
    Budget,
    #[value(name = "local_rounds", alias = "local-rounds")]
    LocalRounds,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate a scenario.
    Validate {
        scenario: PathBuf,
        /// Print the resolved scenario with all defaults filled in.
        #[arg(long)]
        echo: bool,
    },
    /// Run a scenario and write trace, ledger, decisions and summary files.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "on")]
        rva: RvaFlag,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: out/<scenario>-<rva>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run once per parameter value and print a comparison table.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value = "on")]
        rva: RvaFlag,
        #[arg(long)]
        seed: Option<u64>,
        /// Write each run's outputs under this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize one run directory, or compare several.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Runtime(String),
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => CliError::Runtime(e.to_string()),
            ScenarioError::Parse(_) | ScenarioError::Validation(_) => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::ScenarioInvalid(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Validate { scenario, echo } => validate(&scenario, echo, out),
        Command::Run { scenario, rva, seed, out: dir } => run(&scenario, rva.into(), seed, dir, out),
        Command::Sweep {
            scenario,
            param,
            values,
            rva,
            seed,
            out: dir,
        } => sweep(&scenario, param, &values, rva.into(), seed, dir.as_deref(), out),
        Command::Report { dirs } => report(&dirs, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Invalid(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_INVALID
        }
        Err(CliError::Runtime(m)) => {
            let _ = writeln!(err, "error: {m}");
            EXIT_RUNTIME
        }
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn validate(path: &Path, echo: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let s = load_scenario(path)?;
    if echo {
        out.write_all(s.to_toml().as_bytes()).map_err(io_err)?;
    } else {
        writeln!(
            out,
            "ok: {} ({} nodes, {} events, horizon {}, budget {})",
            s.name,
            s.topology.len(),
            s.events.len(),
            s.horizon,
            s.settings.budget
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn load_seeded(path: &Path, seed: Option<u64>) -> Result<Scenario, CliError> {
    let s = load_scenario(path)?;
    Ok(match seed {
        Some(seed) => s.with_seed(seed),
        None => s,
    })
}

fn run(path: &Path, mode: RvaMode, seed: Option<u64>, dir: Option<PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    let scenario = load_seeded(path, seed)?;
    let run = run_simulation(&scenario, mode)?;
    let dir = dir.unwrap_or_else(|| PathBuf::from("out").join(format!("{}-{}-seed{}", scenario.name, mode, scenario.seed)));
    run.write_outputs(&dir)?;
    let s = run.summary();
    writeln!(
        out,
        "{}: rva {} seed {} stopped at round {} ({}), final accuracy {:.6}, total cost {:.3} of {}",
        s.scenario, s.mode, s.seed, s.final_round, s.stop_reason, s.final_accuracy, s.total_cost, s.budget
    )
    .map_err(io_err)?;
    for d in &run.decisions {
        writeln!(
            out,
            "  validation at round {} for {}: {}{}",
            d.round,
            d.event,
            d.decision,
            if d.forced { " (forced)" } else { "" }
        )
        .map_err(io_err)?;
    }
    writeln!(out, "outputs written to {}", dir.display()).map_err(io_err)?;
    Ok(())
}

fn apply_param(base: &Scenario, param: SweepParam, value: f64) -> Result<Scenario, CliError> {
    let mut s = base.clone();
    let whole = |v: f64| -> Result<u32, CliError> {
        if v.fract() == 0.0 && v >= 0.0 && v <= f64::from(u32::MAX) {
            Ok(v as u32)
        } else {
            Err(CliError::Invalid(format!("sweep value {v} must be a non-negative integer")))
        }
    };
    match param {
        SweepParam::W => s.settings.validation_window = whole(value)?,
        SweepParam::Budget => s.settings.budget = value,
        SweepParam::LocalRounds => s.training.local_rounds = whole(value)?,
    }
    let v = s.violations();
    if v.is_empty() {
        Ok(s)
    } else {
        Err(CliError::Invalid(format!("value {value}: {}", v.join("; "))))
    }
}

/// One line of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub psi_ga: f64,
    pub psi_la: f64,
    pub final_round: u32,
    pub final_accuracy: f64,
    pub total_cost: f64,
    pub stop_reason: String,
    pub validation_rounds: Vec<(u32, u32)>,
}

fn sweep_row(value: f64, run: &SimulationRun) -> SweepRow {
    let s = run.summary();
    SweepRow {
        value,
        psi_ga: s.initial_global_cost,
        psi_la: s.initial_local_cost,
        final_round: s.final_round,
        final_accuracy: s.final_accuracy,
        total_cost: s.total_cost,
        stop_reason: s.stop_reason.to_string(),
        validation_rounds: run.decisions.iter().map(|d| (d.reconfig_round, d.round)).collect(),
    }
}

fn sweep(
    path: &Path,
    param: SweepParam,
    values: &[f64],
    mode: RvaMode,
    seed: Option<u64>,
    dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let base = load_seeded(path, seed)?;
    let scenarios = values
        .iter()
        .map(|v| apply_param(&base, param, *v))
        .collect::<Result<Vec<_>, _>>()?;
    let runs: Vec<Result<SimulationRun, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .map(|s| scope.spawn(move || run_simulation(s, mode)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut rows = Vec::new();
    for (value, run) in values.iter().zip(runs) {
        let run = run?;
        if let Some(dir) = dir {
            run.write_outputs(&dir.join(format!("{param:?}-{value}").to_lowercase()))?;
        }
        rows.push(sweep_row(*value, &run));
    }
    out.write_all(format_sweep(param, &rows).as_bytes()).map_err(io_err)?;
    Ok(())
}

fn format_sweep(param: SweepParam, rows: &[SweepRow]) -> String {
    let name = match param {
        SweepParam::W => "W",
        SweepParam::Budget => "budget",
        SweepParam::LocalRounds => "local_rounds",
    };
    let mut s = format!(
        "{:>12} {:>12} {:>12} {:>11} {:>14} {:>14} {:>17}  validations\n",
        name, "psi_ga", "psi_la", "final_round", "final_accuracy", "total_cost", "stop_reason"
    );
    for r in rows {
        let validations = if r.validation_rounds.is_empty() {
            "-".to_owned()
        } else {
            r.validation_rounds
                .iter()
                .map(|(rec, v)| format!("{v} (R_rec {rec} + {})", v - rec))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let _ = writeln!(
            s,
            "{:>12} {:>12.4} {:>12.4} {:>11} {:>14.6} {:>14.3} {:>17}  {}",
            r.value, r.psi_ga, r.psi_la, r.final_round, r.final_accuracy, r.total_cost, r.stop_reason, validations
        );
    }
    s
}

fn read_summary(dir: &Path) -> Result<RunSummary, CliError> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn report(dirs: &[PathBuf], out: &mut dyn Write) -> Result<(), CliError> {
    if let [dir] = dirs {
        let text = fs::read_to_string(dir.join("report.txt"))
            .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", dir.join("report.txt").display())))?;
        out.write_all(text.as_bytes()).map_err(io_err)?;
        return Ok(());
    }
    let summaries = dirs
        .iter()
        .map(|d| {
            let label = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| d.display().to_string());
            read_summary(d).map(|s| (label, s))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let table = ComparisonTable::from_summaries(&summaries)?;
    write!(out, "{table}").map_err(io_err)?;
    Ok(())
}
