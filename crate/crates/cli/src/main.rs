//! `scarl` command-line driver: campaign simulation, the classical and
//! autoencoder/RL attacks, rank-vs-trace-count sweeps, NDF analysis, and
//! report rendering.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numerical failure.

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod config;

use scarl_core::pipeline::AttackKind;

#[derive(Parser)]
#[command(name = "scarl", version, about = "Power side-channel analysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Dpa,
    Cpa,
    Ks,
    Scarl,
}

impl From<KindArg> for AttackKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Dpa => AttackKind::Dpa,
            KindArg::Cpa => AttackKind::Cpa,
            KindArg::Ks => AttackKind::Ks,
            KindArg::Scarl => AttackKind::Scarl,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a trace campaign and write it as an SCTR container.
    Simulate {
        /// TOML config with a [sim] section.
        #[arg(long)]
        config: PathBuf,
        /// Output container path.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured number of encryptions.
        #[arg(long)]
        traces: Option<u32>,
    },
    /// Rank the 16 pair candidates with one attack over one S-box pair.
    Attack {
        /// Input SCTR container.
        traceset: PathBuf,
        #[arg(long)]
        kind: KindArg,
        /// Output directory for report artifacts.
        #[arg(long)]
        out: PathBuf,
        /// TOML config with an [attack] section.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Attacked S-box pair (overrides config).
        #[arg(long)]
        pair: Option<usize>,
        /// Attack seed (overrides config).
        #[arg(long)]
        seed: Option<u64>,
        /// Use only the first N traces.
        #[arg(long)]
        traces: Option<usize>,
        /// Also dump autoencoder features (scarl only).
        #[arg(long)]
        dump_features: Option<PathBuf>,
    },
    /// Repeat an attack on campaign prefixes, emitting a rank-vs-N curve.
    Sweep {
        traceset: PathBuf,
        #[arg(long)]
        kind: KindArg,
        /// Comma-separated trace counts.
        #[arg(long, value_delimiter = ',', required = true)]
        counts: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        pair: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-sample NDF curves for several window lengths.
    Ndf {
        traceset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated spectral window lengths.
        #[arg(long, value_delimiter = ',', default_value = "45,50,55")]
        window_lengths: Vec<usize>,
    },
    /// Render the report of a finished attack directory.
    Report {
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config, out, seed, traces } => {
            commands::simulate(&config, &out, seed, traces)
        }
        Command::Attack {
            traceset,
            kind,
            out,
            config,
            pair,
            seed,
            traces,
            dump_features,
        } => commands::attack(
            &traceset,
            kind.into(),
            &out,
            config.as_deref(),
            pair,
            seed,
            traces,
            dump_features.as_deref(),
        ),
        Command::Sweep { traceset, kind, counts, out, config, pair, seed } => {
            commands::sweep(&traceset, kind.into(), &counts, &out, config.as_deref(), pair, seed)
        }
        Command::Ndf { traceset, out, window_lengths } => {
            commands::ndf(&traceset, &out, &window_lengths)
        }
        Command::Report { dir } => commands::report(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
