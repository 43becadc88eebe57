//! `starcamp`: plan, simulate, run and report STAR alignment campaigns.
//!
//! Exit codes: 0 success, 2 usage, 3 config error, 4 precondition failure,
//! 5 runtime failure.

mod output;
mod plan;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use star_campaign::config::ConfigError;
use star_campaign::dispatcher::{self, journal, DispatchError, FileStatus, RunOptions, SimDriver, StubCloudDriver};
use star_campaign::report::{self, Format};
use star_campaign::scenario;
use star_campaign::sim::export;
use star_campaign::sim::summary::summarize;
use star_campaign::{simulate_campaign, SimResult};

#[derive(Debug)]
enum CliError {
    Config(String),
    Precondition(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Precondition(_) => 4,
            CliError::Runtime(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Precondition(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DispatchError> for CliError {
    fn from(e: DispatchError) -> Self {
        match e {
            DispatchError::Config(_) => CliError::Config(e.to_string()),
            _ if e.is_precondition() => CliError::Precondition(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn existing_file(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_file() {
        Ok(p)
    } else {
        Err(format!("no such file: {s}"))
    }
}

#[derive(Parser)]
#[command(name = "starcamp", version, about = "Plan, simulate and run RNA-seq alignment campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DriverKind {
    Sim,
    StubCloud,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Table,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
            FormatArg::Table => Format::Table,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Feasibility per service and cost per scenario.
    Plan {
        #[arg(long, value_parser = existing_file)]
        catalog: PathBuf,
        #[arg(long, value_parser = existing_file)]
        workload: PathBuf,
        #[arg(long, value_parser = existing_file)]
        pricing: PathBuf,
        /// Comma-separated KIND[:INSTANCE][=HOURS], KIND one of serverless,
        /// serverless-spot, vm.
        #[arg(long, default_value = "serverless,serverless-spot,vm")]
        scenarios: String,
    },
    /// Simulate a campaign and write its result JSON and per-file CSV.
    Simulate {
        #[arg(long, value_parser = existing_file)]
        config: PathBuf,
        /// Overrides the seed recorded in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Simulate seeds seed, seed+1, ... in parallel.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        replicas: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a campaign against a backend driver; resumable via --state.
    Run {
        #[arg(long, value_parser = existing_file)]
        config: PathBuf,
        #[arg(long, value_enum)]
        driver: DriverKind,
        #[arg(long)]
        state: PathBuf,
    },
    /// Render a result, summary, journal or per-file CSV.
    Report {
        #[arg(long = "in", value_parser = existing_file)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan {
            catalog,
            workload,
            pricing,
            scenarios,
        } => plan::run(&catalog, &workload, &pricing, &scenarios),
        Command::Simulate {
            config,
            seed,
            replicas,
            out,
        } => simulate(&config, seed, replicas, &out),
        Command::Run { config, driver, state } => run(&config, driver, &state),
        Command::Report { input, format } => report_cmd(&input, format.into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn simulate(config: &Path, seed: Option<u64>, replicas: u32, out: &Path) -> Result<(), CliError> {
    let mut cfg = scenario::load_campaign(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
    let seeds: Vec<u64> = (0..replicas as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
    let results: Vec<SimResult> = seeds
        .par_iter()
        .map(|s| {
            let mut c = cfg.clone();
            c.seed = *s;
            simulate_campaign(&c)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let mut files = Vec::new();
    for r in &results {
        let stem = format!("{}-seed{}", r.name, r.seed);
        files.push((format!("{stem}.json"), export::to_json(r)));
        files.push((format!("{stem}.csv"), export::render_csv(&export::rows(r))));
    }
    output::write_all(out, &files).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;

    for r in &results {
        if results.len() > 1 {
            println!("== seed {} ==", r.seed);
        }
        print!("{}", summarize(r).render_table());
    }
    for (name, _) in &files {
        log::info!("wrote {}", out.join(name).display());
    }
    Ok(())
}

fn run(config: &Path, driver: DriverKind, state: &Path) -> Result<(), CliError> {
    let cfg = scenario::load_campaign(config)?;
    let report = match driver {
        DriverKind::Sim => {
            let mut d = SimDriver::new(&cfg);
            dispatcher::run_campaign(&cfg, &mut d, state, RunOptions::default())?
        }
        DriverKind::StubCloud => {
            let mut calls = state.as_os_str().to_owned();
            calls.push(".calls.jsonl");
            let mut d = StubCloudDriver::create(Path::new(&calls), &cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
            dispatcher::run_campaign(&cfg, &mut d, state, RunOptions::default())?
        }
    };
    if report.resumed {
        println!("resumed from {}", state.display());
    }
    for status in [
        FileStatus::Done,
        FileStatus::FailedOom,
        FileStatus::Abandoned,
        FileStatus::SkippedStorage,
    ] {
        println!("{:<20}{}", status.as_str(), report.state.count(status));
    }
    let parsed = journal::read(state).map_err(|e| CliError::Runtime(e.to_string()))?;
    let summary = dispatcher::summarize_state(&report.state, &parsed.header)?;
    println!();
    print!("{}", summary.render_table());
    Ok(())
}

fn report_cmd(input: &Path, format: Format) -> Result<(), CliError> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::Runtime(format!("{}: {e}", input.display())))?;
    let rendered = report::load(&text)
        .and_then(|r| r.render(format))
        .map_err(|e| CliError::Precondition(format!("{}: {e}", input.display())))?;
    print!("{rendered}");
    Ok(())
}
