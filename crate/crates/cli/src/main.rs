use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use retrainbench::config::RunConfig;
use retrainbench::run::{self, RunOptions};
use retrainbench::{report, synth, CliError};
use retrainbench_core::panel::{Frequency, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "retrainbench", version, about = "Benchmark forecast retraining frequencies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FrequencyArg {
    Daily,
    Weekly,
}

impl From<FrequencyArg> for Frequency {
    fn from(f: FrequencyArg) -> Self {
        match f {
            FrequencyArg::Daily => Frequency::Daily,
            FrequencyArg::Weekly => Frequency::Weekly,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a config without running anything.
    Validate { config: PathBuf },
    /// Run the backtest grid and write all artifacts.
    Run {
        config: PathBuf,
        /// Artifact directory; overrides `output.dir`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Grid cells run concurrently. Timings are serialised regardless.
        #[arg(long, env = "RETRAINBENCH_JOBS", default_value_t = 1)]
        jobs: usize,
        /// Also write the first origin's training matrix.
        #[arg(long)]
        dump_features: bool,
    },
    /// Render SVG charts and a summary from an artifact directory.
    Report {
        dir: PathBuf,
        /// Defaults to `<dir>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic panel as demand.csv and statics.csv.
    Synth {
        /// TOML generator spec; the flags below are ignored when given.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        n_series: usize,
        #[arg(long, default_value_t = 260)]
        length: usize,
        #[arg(long, value_enum, default_value_t = FrequencyArg::Weekly)]
        frequency: FrequencyArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Validate { config } => {
            let cfg = RunConfig::load(&config)?.resolve()?;
            for w in &cfg.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}: ok ({} families x {} retrain scenarios)",
                config.display(),
                cfg.families.len(),
                cfg.backtest.retrain_set.len()
            );
        }
        Command::Run {
            config,
            output,
            jobs,
            dump_features,
        } => {
            if jobs == 0 {
                return Err(CliError::Validation("--jobs must be at least 1".into()));
            }
            let opts = RunOptions {
                output,
                jobs,
                dump_features,
            };
            let summary = run::run(&config, &opts)?;
            println!(
                "{} cells ok; artifacts in {}",
                summary.cells_ok,
                summary.output_dir.display()
            );
        }
        Command::Report { dir, out } => {
            for path in report::report(&dir, out.as_deref())? {
                println!("{}", path.display());
            }
        }
        Command::Synth {
            spec,
            n_series,
            length,
            frequency,
            seed,
            out,
        } => {
            let spec = match spec {
                Some(path) => synth::load_spec(&path)?,
                None => SyntheticSpec::new(n_series, length, frequency.into(), seed),
            };
            for path in synth::write_synthetic(&spec, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command).context("retrainbench") {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = err.downcast_ref::<CliError>().map_or(2, CliError::exit_code);
            eprintln!("error: {}", err.root_cause());
            ExitCode::from(code as u8)
        }
    }
}
