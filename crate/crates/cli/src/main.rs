//! `campusflow`: ingest, simulate, compare, optimize and report.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "campusflow", version, about = "Mesoscopic campus traffic simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a network JSON from an OSM extract.
    Ingest {
        #[arg(long)]
        osm: PathBuf,
        /// min_lon,min_lat,max_lon,max_lat
        #[arg(long)]
        bbox: String,
        #[arg(long)]
        out: PathBuf,
        /// JSON map of road class to {speed_kmh, lanes} overriding the defaults.
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long)]
        allow_u_turns: bool,
        /// Keep pass-through junctions.
        #[arg(long)]
        no_simplify: bool,
    },
    /// Simulate and write summary, trip, link and state tables.
    Run {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the full event log.
        #[arg(long)]
        event_log: bool,
    },
    /// Compare two run directories metric by metric.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        variant: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search signal splits and offsets for lower total delay.
    Optimize {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        budget: Option<usize>,
        /// Optimizer config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the links with the largest delay in a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
}

#[derive(Debug, Args)]
struct Inputs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    demand: PathBuf,
    #[arg(long)]
    signals: PathBuf,
    /// Scenario files, composed in the given order.
    #[arg(long = "scenario")]
    scenarios: Vec<PathBuf>,
    /// Alias table for node names used in scenarios.
    #[arg(long)]
    aliases: Option<PathBuf>,
    /// Gap between composed scenarios, seconds.
    #[arg(long, default_value_t = 0.0)]
    gap: f64,
    #[arg(long)]
    horizon: f64,
    /// Poisson arrivals with this seed; deterministic arrivals when absent.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CAMPUSFLOW_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Ingest {
            osm,
            bbox,
            out,
            classes,
            allow_u_turns,
            no_simplify,
        } => commands::ingest(&osm, &bbox, &out, classes.as_deref(), allow_u_turns, !no_simplify),
        Command::Run {
            inputs,
            out,
            event_log,
        } => commands::run(&inputs.into(), &out, event_log),
        Command::Compare {
            baseline,
            variant,
            out,
        } => commands::compare(&baseline, &variant, &out),
        Command::Optimize {
            inputs,
            budget,
            config,
            out,
        } => commands::optimize(&inputs.into(), budget, config.as_deref(), &out),
        Command::Report { run, top } => commands::report(&run, top),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("campusflow: {:#}", f.error);
            ExitCode::from(f.code())
        }
    }
}

impl From<Inputs> for commands::RunConfig {
    fn from(i: Inputs) -> Self {
        commands::RunConfig {
            net: i.net,
            demand: i.demand,
            signals: i.signals,
            scenarios: i.scenarios,
            aliases: i.aliases,
            gap_s: i.gap,
            horizon_s: i.horizon,
            seed: i.seed,
        }
    }
}
