use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use nakano_lab::cli::{exit_code_for, run, Command, ExperimentConfig, Overrides};
use nakano_lab::{Error, Result};

/// Curvature experiments for direct images of projectivised split bundles.
#[derive(Parser, Debug)]
#[command(name = "nakano-lab", version)]
struct Args {
    /// Experiment to run.
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Radial quadrature order.
    #[arg(long)]
    quadrature: Option<usize>,
    /// Angular quadrature order.
    #[arg(long)]
    angular: Option<usize>,
    /// Finite-difference step.
    #[arg(long)]
    step: Option<f64>,
    /// Primary tolerance of the chosen command.
    #[arg(long)]
    tol: Option<f64>,
    /// CSV table for scan-k.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Include wall-clock timings in the report.
    #[arg(long)]
    timings: bool,
}

fn execute(args: &Args) -> Result<i32> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    Overrides { quadrature: args.quadrature, angular: args.angular, step: args.step, tol: args.tol }
        .apply(&mut cfg, args.command);
    let mut report = run(args.command, &cfg)?;
    if !args.timings {
        report.elapsed_ms = None;
    }
    let json = report.to_json_string();
    match args.out.as_ref().or(cfg.output.as_ref()) {
        Some(path) => fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    if let (Some(csv), Some(path)) = (&report.csv, args.csv.as_ref().or(cfg.csv.as_ref())) {
        fs::write(path, csv)?;
    }
    for a in &report.assertions {
        eprintln!("{:?} {}", a.status, a.name);
    }
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
