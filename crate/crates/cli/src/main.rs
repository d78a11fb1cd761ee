//! `wivloc`: survey, train, localize, evaluate and benchmark the joint
//! WiFi/visual localization pipeline from the command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use wivloc::Error;

#[derive(Parser)]
#[command(
    name = "wivloc",
    version,
    about = "Coarse-to-fine WiFi and visual indoor localization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the WiFi and image databases plus held-out queries.
    Survey {
        #[command(flatten)]
        common: Common,
    },
    /// Train the coarse classifier and fine regressor on surveyed databases.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding wifi_db.jsonl and image_db.jsonl.
        #[arg(long)]
        db: PathBuf,
        /// Skip training samples whose true area the coarse stage missed.
        #[arg(long)]
        drop_missed_areas: bool,
    },
    /// Localize queries with trained models; prints one JSON line per query.
    Localize {
        /// Directory holding coarse_model.jsonl and fine_model.jsonl.
        #[arg(long)]
        models: PathBuf,
        /// Query file in the JSON Lines envelope.
        #[arg(long)]
        queries: PathBuf,
        /// Also write the results (and a manifest) here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the accuracy experiment and the RP-spacing sweep.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Emit SVG plots of the error CDFs.
        #[arg(long)]
        plot: bool,
        #[arg(long)]
        drop_missed_areas: bool,
        /// RP spacings for the sweep, meters. Pass an empty string to skip.
        #[arg(long, value_delimiter = ',', default_value = "1.0,1.5,2.0")]
        spacings: Vec<String>,
    },
    /// Time both methods for several query counts.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        counts: Vec<usize>,
    },
}

#[derive(Serialize)]
struct ErrorReport {
    error: &'static str,
    message: String,
    exit_code: u8,
}

fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Config(_) => ("config", 2),
        Error::Io { .. } => ("io", 3),
        Error::HashMismatch { .. } => ("hash_mismatch", 3),
        Error::VersionMismatch { .. } => ("version_mismatch", 3),
        Error::MalformedLine { .. } => ("malformed_line", 3),
        Error::ChecksumMismatch { .. } => ("checksum_mismatch", 3),
        Error::KindMismatch { .. } => ("kind_mismatch", 3),
        Error::Divergence { .. } => ("divergence", 4),
        _ => ("invalid", 1),
    }
}

fn parse_spacings(raw: &[String]) -> wivloc::Result<Vec<f64>> {
    raw.iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad spacing {s:?}")))
        })
        .collect()
}

fn run(cli: Cli) -> wivloc::Result<()> {
    match cli.command {
        Command::Survey { common } => {
            let cfg = commands::load_config(common.config.as_deref(), common.seed, false)?;
            commands::survey(&cfg, common.config.as_deref(), &common.out)
        }
        Command::Train {
            common,
            db,
            drop_missed_areas,
        } => {
            let cfg = commands::load_config(common.config.as_deref(), common.seed, false)?;
            commands::train(
                &cfg,
                drop_missed_areas,
                common.config.as_deref(),
                &db,
                &common.out,
            )
        }
        Command::Localize {
            models,
            queries,
            out,
        } => commands::localize(&models, &queries, out.as_deref()),
        Command::Evaluate {
            common,
            plot,
            drop_missed_areas,
            spacings,
        } => {
            let cfg =
                commands::load_config(common.config.as_deref(), common.seed, drop_missed_areas)?;
            let spacings = parse_spacings(&spacings)?;
            commands::evaluate(&cfg, common.config.as_deref(), &common.out, &spacings, plot)
        }
        Command::Bench { common, counts } => {
            let cfg = commands::load_config(common.config.as_deref(), common.seed, false)?;
            commands::bench(&cfg, common.config.as_deref(), &common.out, &counts)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            let report = ErrorReport {
                error: kind,
                message: e.to_string(),
                exit_code: code,
            };
            eprintln!(
                "{}",
                serde_json::to_string(&report).expect("error report serializes")
            );
            ExitCode::from(code)
        }
    }
}
