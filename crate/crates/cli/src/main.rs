use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sociodyn::commands::{
    cmd_classify, cmd_fit, cmd_ingest, cmd_report, cmd_simulate, ClassifyArgs, CommandOutcome, FitArgs, IngestArgs, Overrides,
    ReportArgs, SimulateArgs,
};
use sociodyn::gee::CorrelationKind;

#[derive(Parser)]
#[command(name = "sociodyn", version, about = "Social-influence dynamics from contact logs and experience sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a corpus directory (ir.csv, surveys.csv, traits.csv).
    Ingest {
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out/ingest")]
        out: PathBuf,
    },
    /// Generate a synthetic corpus from a scenario file.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out/corpus")]
        out: PathBuf,
    },
    /// Fit and select the transition models of an ingested corpus.
    Fit {
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long, default_value = "out/fit")]
        out: PathBuf,
    },
    /// Label effects, build diagrams and run the contagion test.
    Classify {
        input: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
        #[arg(long, default_value = "out/classify")]
        out: PathBuf,
    },
    /// Write the consolidated tables.
    Report {
        /// state,from,to,count table (defaults to the ingest output's counts).
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        ingest: Option<PathBuf>,
        #[arg(long)]
        fits: Option<PathBuf>,
        #[arg(long)]
        classify: Option<PathBuf>,
        #[arg(long, default_value = "out/report")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    relevance_threshold: Option<f64>,
    #[arg(long, value_parser = ["independence", "exchangeable", "unstructured"])]
    correlation: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
}

impl OverrideArgs {
    fn into_overrides(self) -> Overrides {
        Overrides {
            alpha: self.alpha,
            relevance_threshold: self.relevance_threshold,
            correlation: self.correlation.map(|c| c.parse::<CorrelationKind>().expect("validated by clap")),
            workers: self.workers,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SOCIODYN_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest { input, config, out } => cmd_ingest(&IngestArgs { input, config, out }),
        Command::Simulate { config, seed, out } => cmd_simulate(&SimulateArgs { scenario: config, seed, out }),
        Command::Fit { input, config, overrides, out } => {
            cmd_fit(&FitArgs { input, config, overrides: overrides.into_overrides(), out })
        }
        Command::Classify { input, overrides, out } => {
            cmd_classify(&ClassifyArgs { input, overrides: overrides.into_overrides(), out })
        }
        Command::Report { counts, ingest, fits, classify, out } => {
            cmd_report(&ReportArgs { counts, ingest, fits, classify, out })
        }
    };
    match result {
        Ok(outcome) => report(&outcome),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn report(outcome: &CommandOutcome) -> ExitCode {
    let m = &outcome.manifest;
    println!("{}: wrote {} files (run {})", m.command, m.outputs.len(), &m.run_digest[..12]);
    for f in &outcome.failures {
        eprintln!("fit failure: {f}");
    }
    ExitCode::from(outcome.exit_code() as u8)
}
