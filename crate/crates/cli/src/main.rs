use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mvgaze::config::parse_config;
use mvgaze::experiments::run_scenario;
use mvgaze::report::{
    comparison_to_string, read_metrics_csv, summarize, write_comparison, write_manifest,
    write_report,
};
use mvgaze::selftest;

/// Multi-camera remote gaze tracking simulator.
#[derive(Parser)]
#[command(name = "mvgaze", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario of a configuration file and write CSV reports.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory; overrides the configured one.
        #[arg(long, env = "MVGAZE_OUT")]
        out: Option<PathBuf>,
    },
    /// Pivot metrics CSVs into a case0 / case1 comparison table.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the randomized geometry, calibration and fusion self-checks.
    Selftest {
        #[arg(long, default_value_t = 1000)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn simulate(
    config: PathBuf,
    seed: Option<u64>,
    jobs: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut config = parse_config(&config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(out) = out {
        config.output_dir = out;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("cannot start worker threads")?;
    let dir = config.output_dir.clone();
    let mut files = Vec::new();
    let mut all_reports = Vec::new();
    let mut failure = None;
    for plan in config.plans() {
        let reports = plan
            .specs
            .iter()
            .map(|spec| pool.install(|| run_scenario(spec)))
            .collect::<Result<Vec<_>, _>>();
        match reports {
            Ok(reports) => {
                let written = write_report(&plan.name, &reports, &dir)?;
                println!("{}", written.metrics.display());
                files.push(written.metrics);
                files.push(written.sensors);
                all_reports.extend(reports);
            }
            Err(e) => {
                failure = Some(format!("scenario `{}`: {e}", plan.name));
                break;
            }
        }
    }
    let manifest = write_manifest(&dir, &config, &files, &all_reports, failure.as_deref())?;
    println!("{}", manifest.display());
    if let Some(f) = failure {
        bail!("{f} (partial results listed in {})", manifest.display());
    }
    Ok(())
}

fn report(csv: Vec<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let mut rows = Vec::new();
    for path in &csv {
        rows.extend(read_metrics_csv(path)?);
    }
    let table = summarize(&rows)?;
    match out {
        Some(path) => write_comparison(&table, &path)?,
        None => print!("{}", comparison_to_string(&table)),
    }
    Ok(())
}

fn run_selftest(cases: usize, seed: u64) -> Result<()> {
    let checks = selftest::run(cases, seed);
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!("{failed} self-check(s) failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            seed,
            jobs,
            out,
        } => simulate(config, seed, jobs, out),
        Command::Report { csv, out } => report(csv, out),
        Command::Selftest { cases, seed } => run_selftest(cases, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
