use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use ergodic_cli::{parse_config_with, run_scenario, Scenario, EXIT_CONFIG_ERROR};

/// Ergodic HJB verification runs.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// Scenario to run; overrides the configuration's `scenario`.
    #[arg(value_enum)]
    scenario: Scenario,
    /// JSON configuration; defaults apply to everything it leaves out.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path override such as `grid.radius=4`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let text = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return ExitCode::from(EXIT_CONFIG_ERROR as u8);
            }
        },
        None => "{}".to_string(),
    };
    let mut overrides = cli.overrides.clone();
    overrides.push(format!("scenario={}", serde_json::to_string(&cli.scenario).expect("enum serializes")));
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(dir) = &cli.out_dir {
        overrides.push(format!("output.directory={}", serde_json::Value::String(dir.display().to_string())));
    }
    let config = match parse_config_with(&text, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG_ERROR as u8);
        }
    };
    let inst = config.build().expect("validated by parse_config_with");
    let report = run_scenario(&config, &inst, Some(&config.output.directory));
    for c in &report.checks {
        let tag = match (c.passed, c.required) {
            (true, _) => "pass",
            (false, true) => "FAIL",
            (false, false) => "info",
        };
        println!("{tag:>4}  {}  (value {:.6e}, threshold {:.6e})", c.name, c.value, c.threshold);
    }
    for e in &report.errors {
        eprintln!("error: {e}");
    }
    println!("status: {:?}", report.status);
    ExitCode::from(report.status.exit_code() as u8)
}
