//! Command-line front end for the scenario runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use revlab::lab::{
    export_report, run_scenario, verify_report, CachePolicy, ScenarioConfig, ScenarioKind,
};

#[derive(Parser)]
#[command(
    name = "lab",
    version,
    about = "Numerical laboratory for surfaces of revolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and export its report directory.
    Run(RunArgs),
    /// List the built-in scenarios and their resolved defaults.
    ListScenarios,
    /// Re-hash a report directory and re-derive its stored verdicts.
    Verify {
        /// Report directory (the one containing manifest.json).
        dir: PathBuf,
    },
    /// Print the default config for a scenario as TOML.
    ShowConfig {
        #[arg(value_parser = parse_scenario)]
        scenario: ScenarioKind,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario name (flat-torus, round-sphere, bridge-torus,
    /// perturbed-torus, custom).
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<ScenarioKind>,
    /// Functional-table frequency cutoff.
    #[arg(long)]
    lambda_max: Option<f64>,
    /// Radial grid size for numeric solves.
    #[arg(long)]
    grid: Option<usize>,
    /// Output directory for reports and the table cache.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized ingredients.
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the spectral-table cache for this run.
    #[arg(long)]
    no_cache: bool,
}

fn parse_scenario(name: &str) -> Result<ScenarioKind, String> {
    ScenarioKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| {
            let names: Vec<&str> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
            format!("unknown scenario `{name}` (expected one of: {})", names.join(", "))
        })
}

fn run(args: RunArgs) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let mut config = match &args.config {
        Some(path) => ScenarioConfig::from_path(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(kind) = args.scenario {
        config.scenario = kind;
    }
    if let Some(lambda_max) = args.lambda_max {
        config.lambda_max = Some(lambda_max);
    }
    if let Some(grid) = args.grid {
        config.grid_size = Some(grid);
    }
    if let Some(out) = args.out {
        config.out_dir = out;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.no_cache {
        config.cache = CachePolicy::Off;
    }

    let report = run_scenario(&config)?;
    for line in &report.log {
        eprintln!("{line}");
    }
    for failure in &report.failures {
        println!("FAIL experiment {}: {}", failure.experiment, failure.message);
    }
    for check in &report.checks {
        let verdict = if check.passed { "PASS" } else { "FAIL" };
        match check.value {
            Some(value) => println!(
                "{verdict} {}: {:.6e} {} {:.6e} ({})",
                check.name, value, check.op, check.threshold, check.detail
            ),
            None => println!(
                "{verdict} {}: no value, needed {} {:.6e} ({})",
                check.name, check.op, check.threshold, check.detail
            ),
        }
    }
    let dir = export_report(&report)?;
    println!("report: {}", dir.display());
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 || !report.failures.is_empty() {
        println!(
            "{failed} of {} checks failed, {} experiment failures",
            report.checks.len(),
            report.failures.len()
        );
        Ok(ExitCode::from(1))
    } else {
        println!("all {} checks passed", report.checks.len());
        Ok(ExitCode::SUCCESS)
    }
}

fn list_scenarios() -> ExitCode {
    for kind in ScenarioKind::ALL {
        println!("{kind}");
        println!("    {}", kind.summary());
        let config = ScenarioConfig {
            scenario: kind,
            ..Default::default()
        };
        match config.resolve() {
            Ok(resolved) => println!(
                "    defaults: lambda_max {}, grid {}, numeric lambda_max {}, {} eval points, \
                 {} loopset base points",
                resolved.lambda_max,
                resolved.numeric.grid_size,
                resolved.numeric.lambda_max,
                resolved.eval_points.len(),
                resolved.base_points.len(),
            ),
            Err(e) => println!("    defaults unavailable: {e}"),
        }
    }
    ExitCode::SUCCESS
}

fn verify(dir: &PathBuf) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let outcome = verify_report(dir)?;
    println!("files checked: {}", outcome.files_checked);
    for name in &outcome.missing {
        println!("MISSING {name}");
    }
    for name in &outcome.hash_mismatches {
        println!("HASH MISMATCH {name}");
    }
    for name in &outcome.verdict_mismatches {
        println!("VERDICT MISMATCH {name}");
    }
    if !outcome.failed_checks.is_empty() {
        println!(
            "stored checks that failed when the report was written: {}",
            outcome.failed_checks.join(", ")
        );
    }
    if outcome.clean() {
        println!("report intact");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("report corrupted");
        Ok(ExitCode::from(1))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::ListScenarios => return list_scenarios(),
        Command::Verify { dir } => verify(&dir),
        Command::ShowConfig { scenario } => {
            let config = ScenarioConfig {
                scenario,
                ..Default::default()
            };
            println!("{}", config.to_toml());
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
