use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use lorafwd_core::mobility::write_traces;
use lorafwd_core::scenario::{build_traces, run_scenario};
use lorafwd_core::sweep::{run_sweep, SweepSpec, TableFormat};
use lorafwd_core::{Error, ScenarioConfig, Scheme};

#[derive(Parser)]
#[command(name = "lorafwd", version, about = "Mobile LoRaWAN forwarding simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Delimited,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Table => TableFormat::Table,
            Format::Delimited => TableFormat::Delimited,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its metrics.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        scheme: Option<Scheme>,
        /// Output root; each run writes into its own subdirectory.
        #[arg(long, env = "LORAFWD_OUT")]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep and print the result table.
    Sweep {
        spec: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long, env = "LORAFWD_OUT")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Also write the delimited table to this file.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Write the synthetic route traces of a scenario as a trace file.
    GenTraces {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a scenario file without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path, seed: Option<u64>, scheme: Option<Scheme>) -> Result<ScenarioConfig, Error> {
    let mut cfg = ScenarioConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = scheme {
        cfg.scheme = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run {
            config,
            seed,
            scheme,
            out,
        } => {
            let cfg = load(&config, seed, scheme)?;
            let root = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("results"));
            let res = run_scenario(&cfg, Some(&root))?;
            print!("run_id = \"{}\"\n{}", res.run_id, res.report().summary_text());
            if let Some(dir) = &res.run_dir {
                info!("results written to {}", dir.display());
            }
            Ok(())
        }
        Command::Sweep {
            spec,
            parallel,
            out,
            format,
            table,
        } => {
            let spec = SweepSpec::load(&spec)?;
            let result = run_sweep(&spec, parallel, out.as_deref())?;
            print!("{}", result.render(format.into()));
            if let Some(path) = table {
                fs::write(path, result.render(TableFormat::Delimited))?;
            }
            if result.has_invariant_breach() {
                return Err(Error::Invariant("at least one sweep run breached an invariant".into()));
            }
            if result.has_failure() {
                return Err(Error::Validation(vec!["at least one sweep run failed".into()]));
            }
            Ok(())
        }
        Command::GenTraces { config, output, seed } => {
            let cfg = load(&config, seed, None)?;
            let traces = build_traces(&cfg)?;
            write_traces(&traces, fs::File::create(&output)?)?;
            info!("{} traces written to {}", traces.len(), output.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = load(&config, None, None)?;
            build_traces(&cfg)?;
            println!("{}: ok", config.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
