use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use driftcast_cli::config::{Format, Preset, RunConfig};
use driftcast_cli::{cmd_report, cmd_run, cmd_simulate, CliError, EXIT_OK, EXIT_VALIDATION};

#[derive(Parser)]
#[command(name = "driftcast", version, about = "Concept-drift simulation and adaptive forecast-combination benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Source {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(preset)) => RunConfig::preset(preset),
            (None, None) => return Err(CliError::Config("give --config or --preset".into())),
        };
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        cfg.apply_env()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured datasets.
    Simulate {
        #[command(flatten)]
        source: Source,
    },
    /// Simulate, evaluate every method, and write traces, reports and the manifest.
    Run {
        #[command(flatten)]
        source: Source,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Report format (default: the config's `output.formats`).
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Re-render reports of an existing run directory from its traces.
    Report {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        /// Report format (default: csv and md).
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
}

fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Simulate { source } => {
            let cfg = source.resolve()?;
            for path in cmd_simulate(&cfg, &cfg.output.dir)? {
                println!("{}", path.display());
            }
            Ok(EXIT_OK)
        }
        Command::Run { source, threads, format } => {
            let mut cfg = source.resolve()?;
            if let Some(f) = format {
                cfg.output.formats = vec![f];
            }
            let outcome = cmd_run(&cfg, threads)?;
            for f in &outcome.manifest.failures {
                eprintln!("{}: {} failed on {}/{} series", f.dataset, f.method, f.failed, f.n_series);
            }
            println!("{}", outcome.out_dir.display());
            Ok(outcome.exit_code())
        }
        Command::Report { out, format } => {
            let formats = format.map_or_else(|| vec![Format::Csv, Format::Md], |f| vec![f]);
            for path in cmd_report(&out, &formats)? {
                println!("{}", path.display());
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
