//! `mccsim` command-line driver.
//!
//! Exit codes: 0 success, 1 validation/scenario error, 2 degraded run,
//! 3 I/O error. Diagnostics go to stderr; data goes to files only.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use mccsim::engine::{self, EngineError, RunOptions, RunResult, RunStatus};
use mccsim::report::{self, ReportFormat, ScenarioError};
use mccsim::Scenario;

#[derive(Parser)]
#[command(name = "mccsim", version, about = "Distributed mobile-cloud allocation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario document; exit 0 iff it is valid.
    Validate { scenario: PathBuf },
    /// Simulate one scenario, or every scenario in a directory.
    Run(RunArgs),
    /// Re-derive report and chart data from saved run results.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario document.
    #[arg(required_unless_present = "batch", conflicts_with = "batch")]
    scenario: Option<PathBuf>,
    /// Run every `*.scenario` / `*.json` file in this directory.
    #[arg(long, value_name = "DIR")]
    batch: Option<PathBuf>,
    /// Output directory [default: ./out/<scenario-name>, or ./out for --batch].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: ReportFormat,
    /// Seed recorded in the results (overrides the scenario's).
    #[arg(long)]
    seed: Option<u64>,
    /// Resume cloudlets on failover from their last logged checkpoint.
    #[arg(long)]
    lose_progress_since_log: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved `run_result.json` files; rows are emitted in argument order.
    #[arg(long = "from", value_name = "RUNRESULT", required = true, num_args = 1..)]
    from: Vec<PathBuf>,
    /// Also write stacked-bar chart data.
    #[arg(long)]
    chart: bool,
    #[arg(long, value_name = "DIR", default_value = "out/report")]
    out: PathBuf,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: ReportFormat,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse().map_err(|e: report::ReportError| e.to_string())
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Io(m) => m,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    report::parse_scenario(&text).map_err(|e: ScenarioError| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    let mut out = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
    out.push('\n');
    Ok(out)
}

/// Writes report, chart data, central log and the full run result.
fn write_outputs(dir: &Path, results: &[RunResult], format: ReportFormat, with_details: bool) -> Result<(), Failure> {
    let report_text = report::write_results_report(results, format).map_err(|e| Failure::Io(e.to_string()))?;
    write(&dir.join(format!("report.{}", format.extension())), &report_text)?;
    let rows: Vec<_> = results.iter().map(|r| r.metrics.clone()).collect();
    let chart = report::write_chart_data(&rows).map_err(|e| Failure::Io(e.to_string()))?;
    write(&dir.join("chart.json"), &chart.to_json())?;
    if with_details {
        if let [result] = results {
            write(&dir.join("log.json"), &to_json(&result.log)?)?;
            write(&dir.join("run_result.json"), &to_json(result)?)?;
        }
    }
    Ok(())
}

fn simulate(path: &Path, options: &RunOptions) -> Result<RunResult, Failure> {
    let scenario = load_scenario(path)?;
    engine::run(scenario, options.clone())
        .map_err(|e: EngineError| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn report_degraded(result: &RunResult) {
    let unfinished: Vec<_> = result
        .unfinished()
        .map(|c| format!("{} ({} MI left)", c.id, c.remaining_mi))
        .collect();
    eprintln!(
        "{}: degraded run, {} unfinished cloudlet(s): {}",
        result.scenario,
        unfinished.len(),
        unfinished.join(", ")
    );
}

fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(Result::ok)
        .map(|entry| entry.path())
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("scenario" | "json")))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_run(args: RunArgs) -> Result<u8, Failure> {
    let options = RunOptions {
        seed: args.seed,
        lose_progress_since_log: args.lose_progress_since_log,
    };

    if let Some(dir) = args.batch {
        let files = scenario_files(&dir)?;
        if files.is_empty() {
            return Err(Failure::Invalid(format!("{}: no scenario files", dir.display())));
        }
        // Each scenario gets its own engine; output order follows file names.
        let outcomes: Vec<Result<RunResult, Failure>> = files.par_iter().map(|f| simulate(f, &options)).collect();
        let out = args.out.unwrap_or_else(|| PathBuf::from("out"));
        let mut results = Vec::new();
        let mut worst: Option<Failure> = None;
        for outcome in outcomes {
            match outcome {
                Ok(result) => results.push(result),
                Err(failure) => {
                    eprintln!("{}", failure.message());
                    if worst.as_ref().is_none_or(|w| failure.code() > w.code()) {
                        worst = Some(failure);
                    }
                }
            }
        }
        for result in &results {
            write_outputs(
                &out.join(&result.scenario),
                std::slice::from_ref(result),
                args.format,
                true,
            )?;
        }
        if !results.is_empty() {
            write_outputs(&out, &results, args.format, false)?;
        }
        if let Some(failure) = worst {
            return Ok(failure.code());
        }
        let degraded: Vec<_> = results.iter().filter(|r| r.status == RunStatus::Degraded).collect();
        degraded.iter().for_each(|r| report_degraded(r));
        return Ok(if degraded.is_empty() { 0 } else { 2 });
    }

    let path = args
        .scenario
        .ok_or_else(|| Failure::Invalid("no scenario given".into()))?;
    let result = simulate(&path, &options)?;
    let out = args.out.unwrap_or_else(|| Path::new("out").join(&result.scenario));
    write_outputs(&out, std::slice::from_ref(&result), args.format, true)?;
    if result.status == RunStatus::Degraded {
        report_degraded(&result);
        return Ok(2);
    }
    Ok(0)
}

fn cmd_report(args: ReportArgs) -> Result<u8, Failure> {
    let mut results = Vec::with_capacity(args.from.len());
    for path in &args.from {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let result: RunResult =
            serde_json::from_str(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        results.push(result);
    }
    let text = report::write_results_report(&results, args.format).map_err(|e| Failure::Io(e.to_string()))?;
    write(&args.out.join(format!("report.{}", args.format.extension())), &text)?;
    if args.chart {
        let rows: Vec<_> = results.iter().map(|r| r.metrics.clone()).collect();
        let chart = report::write_chart_data(&rows).map_err(|e| Failure::Io(e.to_string()))?;
        write(&args.out.join("chart.json"), &chart.to_json())?;
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { scenario } => load_scenario(&scenario).map(|_| 0),
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
