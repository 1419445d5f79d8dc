use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use probekit::cli::analyze::cmd_analyze;
use probekit::cli::config::RunConfig;
use probekit::cli::fixtures::{cmd_fixtures, FixtureConfig};
use probekit::cli::paradigms::cmd_psycholing;
use probekit::cli::report::cmd_report;
use probekit::cli::{cmd_build_comps, cmd_probe, cmd_validate, CliError, Summary};

#[derive(Parser)]
#[command(name = "probekit", version, about = "Layer-wise minimal-pair probing and psycholinguistic paradigms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check datasets, stores and score dumps named by a run config.
    Validate { config: PathBuf },
    /// Build conceptual minimal pairs from a concept/property table.
    BuildComps {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(long, default_value = "en")]
        language: String,
        /// Output file; `.csv` selects CSV, anything else JSONL.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic world with a planted signal and a run config.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with fixture settings; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_pairs: Option<usize>,
    },
    /// Probe every task at every layer.
    Probe { config: PathBuf },
    /// Curves, saturation, differences, tests, scatter and plots.
    Analyze { config: PathBuf },
    /// Direct and metalinguistic accuracy tables.
    Psycholing {
        config: PathBuf,
        /// Also write prompt batches for the extractor.
        #[arg(long)]
        emit_prompts: bool,
    },
    /// Assemble report.json and report.md from earlier outputs.
    Report { config: PathBuf },
}

fn fixture_config(path: Option<&PathBuf>, seed: Option<u64>, n_pairs: Option<usize>) -> Result<FixtureConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?
        }
        None => FixtureConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = n_pairs {
        cfg.n_pairs = n;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Summary, CliError> {
    match cli.command {
        Command::Validate { config } => cmd_validate(&RunConfig::load(&config)?),
        Command::BuildComps { table, overlay, language, out } => {
            cmd_build_comps(&table, overlay.as_deref(), &language, &out)
        }
        Command::Fixtures { out, config, seed, n_pairs } => {
            cmd_fixtures(&fixture_config(config.as_ref(), seed, n_pairs)?, &out)
        }
        Command::Probe { config } => cmd_probe(&RunConfig::load(&config)?),
        Command::Analyze { config } => cmd_analyze(&RunConfig::load(&config)?).map(|(_, s)| s),
        Command::Psycholing { config, emit_prompts } => cmd_psycholing(&RunConfig::load(&config)?, emit_prompts),
        Command::Report { config } => cmd_report(&RunConfig::load(&config)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            for p in &summary.outputs {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
