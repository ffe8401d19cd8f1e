//! Command-line driver: load a scenario, run the simulation (or a sweep of
//! policy variants), and write CSV / event-log / summary artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stockcascade_core::engine::{csv_report, events_report, SimulationReport};
use stockcascade_core::topology::{ChoiceModel, MarginMode, NodeId, SelectionStrategy};
use stockcascade_core::{parse_scenario, Scenario};

#[derive(Parser)]
#[command(
    name = "stockcascade",
    about = "Deterministic simulator of a capacity-trading stock model",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario to a stable state or the stage budget.
    Run(RunArgs),
    /// Run every margin-mode x choice-model variant of a scenario, each
    /// into its own subdirectory.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file.
    scenario: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory for artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Artifacts to write (comma separated).
    #[arg(long, value_delimiter = ',', default_values = ["csv", "summary"])]
    emit: Vec<Emit>,
    /// Print the summary to stdout as well.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Scenario file.
    scenario: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Output directory; one subdirectory per variant.
    #[arg(long, default_value = "sweep-out")]
    out: PathBuf,
    /// Artifacts to write per variant (comma separated).
    #[arg(long, value_delimiter = ',', default_values = ["csv", "summary"])]
    emit: Vec<Emit>,
}

/// CLI overrides for every scenario-level configuration knob.
#[derive(Args, Clone)]
struct Overrides {
    /// Stage budget before giving up on convergence [default: 100].
    #[arg(long)]
    stages_max: Option<usize>,
    /// Consecutive identical stages required for stability [default: 2].
    #[arg(long)]
    stability_window: Option<usize>,
    /// Margin policy [default: fixed].
    #[arg(long)]
    margin_mode: Option<MarginModeArg>,
    /// Customer-selection policy [default: min-fill].
    #[arg(long)]
    selection: Option<SelectionArg>,
    /// Provider-choice model [default: open].
    #[arg(long)]
    choice: Option<ChoiceArg>,
    /// Penalty per released unit per block under the penalty model [default: 0].
    #[arg(long)]
    penalty_rate: Option<u64>,
    /// Hard cap on events per stage [default: 10 * |V|^2].
    #[arg(long)]
    event_cap: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MarginModeArg {
    Fixed,
    Adaptive,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    MinFill,
    BenefitRank,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChoiceArg {
    Open,
    Blocked,
    Penalty,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    Csv,
    Events,
    Summary,
}

fn apply_overrides(scenario: &mut Scenario, o: &Overrides) {
    let config = &mut scenario.config;
    if let Some(v) = o.stages_max {
        config.max_stages = v;
    }
    if let Some(v) = o.stability_window {
        config.stability_window = v;
    }
    if let Some(v) = o.margin_mode {
        config.margin_mode = match v {
            MarginModeArg::Fixed => MarginMode::Fixed,
            MarginModeArg::Adaptive => MarginMode::Adaptive,
        };
    }
    if let Some(v) = o.selection {
        config.selection_strategy = match v {
            SelectionArg::MinFill => SelectionStrategy::MinFill,
            SelectionArg::BenefitRank => SelectionStrategy::BenefitRank,
        };
    }
    if let Some(v) = o.choice {
        config.choice_model = match v {
            ChoiceArg::Open => ChoiceModel::Open,
            ChoiceArg::Blocked => ChoiceModel::Blocked,
            ChoiceArg::Penalty => ChoiceModel::Penalty,
        };
    }
    if let Some(v) = o.penalty_rate {
        config.penalty_rate = v;
    }
    if let Some(v) = o.event_cap {
        config.event_cap = Some(v);
    }
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario file {}", path.display()))?;
    let scenario =
        parse_scenario(&text).with_context(|| format!("cannot parse {}", path.display()))?;
    Ok(scenario)
}

/// Write atomically: to a dot-temporary in the same directory, then rename.
fn write_atomic(dir: &Path, name: &str, content: &str) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let tmp = dir.join(format!(".{name}.tmp"));
    let target = dir.join(name);
    std::fs::write(&tmp, content)
        .with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, &target)
        .with_context(|| format!("cannot rename into {}", target.display()))?;
    Ok(())
}

const SPARK: [char; 8] = ['\u{2581}', '\u{2582}', '\u{2583}', '\u{2584}', '\u{2585}', '\u{2586}', '\u{2587}', '\u{2588}'];

/// Scale a series into eight-level block characters.
fn sparkline(series: &[i64]) -> String {
    let lo = series.iter().copied().min().unwrap_or(0);
    let hi = series.iter().copied().max().unwrap_or(0);
    let span = (hi - lo).max(1) as f64;
    series
        .iter()
        .map(|v| SPARK[(((v - lo) as f64 / span) * 7.0).round() as usize])
        .collect()
}

fn summary_text(report: &SimulationReport) -> String {
    let mut out = String::new();
    let stages = report.records.len();
    match report.stable_at {
        Some(s) => {
            let _ = writeln!(out, "stable at stage {s} ({stages} stages simulated)");
        }
        None => {
            let _ = writeln!(out, "no stable state within {stages} stages");
        }
    }
    let _ = writeln!(out, "satisfaction rate: {:.3}", report.satisfaction);

    for (dest, tree) in &report.route_trees {
        let _ = writeln!(out, "route tree toward {dest}:");
        for (customer, provider) in tree {
            let _ = writeln!(out, "  {customer} -> {provider}");
        }
    }

    // Per-node benefit trajectory across stages.
    let mut series: BTreeMap<(NodeId, NodeId), Vec<i64>> = BTreeMap::new();
    for record in &report.records {
        for (&key, entry) in &record.entries {
            series.entry(key).or_default().push(entry.benefit);
        }
    }
    let _ = writeln!(out, "benefit trajectories (per node, per destination):");
    for ((node, dest), values) in &series {
        let last = values.last().copied().unwrap_or(0);
        let _ = writeln!(out, "  {node}->{dest} {} last={last}", sparkline(values));
    }
    out
}

fn emit_artifacts(report: &SimulationReport, dir: &Path, emit: &[Emit]) -> Result<()> {
    if emit.contains(&Emit::Csv) {
        write_atomic(dir, "stages.csv", &csv_report(report))?;
    }
    if emit.contains(&Emit::Events) {
        write_atomic(dir, "events.log", &events_report(report))?;
    }
    if emit.contains(&Emit::Summary) {
        write_atomic(dir, "summary.txt", &summary_text(report))?;
    }
    Ok(())
}

/// Distinguishes hard failures (exit 1) from a clean non-converged run
/// (exit 2).
fn run_command(args: &RunArgs) -> Result<bool> {
    let mut scenario = load_scenario(&args.scenario)?;
    apply_overrides(&mut scenario, &args.overrides);
    let report = stockcascade_core::run(scenario).context("simulation failed")?;
    emit_artifacts(&report, &args.out, &args.emit)?;
    if args.verbose {
        print!("{}", summary_text(&report));
    }
    Ok(report.converged())
}

fn sweep_command(args: &SweepArgs) -> Result<bool> {
    let base = load_scenario(&args.scenario)?;
    let margin_modes = [MarginModeArg::Fixed, MarginModeArg::Adaptive];
    let choices = [ChoiceArg::Open, ChoiceArg::Blocked, ChoiceArg::Penalty];
    let mut variants: Vec<(String, Scenario)> = Vec::new();
    for margin in margin_modes {
        for choice in choices {
            let mut scenario = base.clone();
            let mut overrides = args.overrides.clone();
            overrides.margin_mode.get_or_insert(margin);
            overrides.choice.get_or_insert(choice);
            apply_overrides(&mut scenario, &overrides);
            let name = format!(
                "{}-{}",
                match overrides.margin_mode.unwrap() {
                    MarginModeArg::Fixed => "fixed",
                    MarginModeArg::Adaptive => "adaptive",
                },
                match overrides.choice.unwrap() {
                    ChoiceArg::Open => "open",
                    ChoiceArg::Blocked => "blocked",
                    ChoiceArg::Penalty => "penalty",
                }
            );
            if variants.iter().all(|(n, _)| n != &name) {
                variants.push((name, scenario));
            }
        }
    }
    let scenarios: Vec<Scenario> = variants.iter().map(|(_, s)| s.clone()).collect();
    let results = stockcascade_core::sweep::run_batch(scenarios);
    let mut all_converged = true;
    for ((name, _), result) in variants.iter().zip(results) {
        let report = result.with_context(|| format!("variant {name} failed"))?;
        emit_artifacts(&report, &args.out.join(name), &args.emit)?;
        all_converged &= report.converged();
    }
    Ok(all_converged)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not errors.
            use clap::error::ErrorKind;
            let kind = err.kind();
            if kind == ErrorKind::DisplayHelp || kind == ErrorKind::DisplayVersion {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            eprint!("{err}");
            return ExitCode::from(1);
        }
    };
    let outcome = match &cli.command {
        Command::Run(args) => run_command(args),
        Command::Sweep(args) => sweep_command(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
