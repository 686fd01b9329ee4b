//! `mmloc` batch front-end.

mod jobs;
mod manifest;
mod repro;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use manifest::{OutputSet, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "mmloc", version, about = "Geometric mmWave localization toolbox")]
struct Cli {
    /// Job file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random draw; each job has its own default.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "MMLOC_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the channel tensor of a scenario, optionally with noisy observations.
    Synth,
    /// Array response map of a beam over angle, distance and subcarrier.
    ResponseMap,
    /// Fisher information, position/orientation bounds and identifiability.
    Fim,
    /// Identifiability sweep over the deployment table.
    Table1,
    /// Optimize an OFDM power allocation for ranging.
    Design,
    /// Range profile and main-lobe metrics of an allocation.
    Profile,
    /// Extract path delays and angles from simulated observations.
    Estimate,
    /// Position fix from a path-measurement file.
    Fix,
    /// Monte-Carlo EKF tracking of a moving user.
    Track,
    /// Regenerate a pinned preset.
    Repro {
        #[arg(value_enum)]
        preset: Preset,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Fig3,
    Fig4,
    Table1,
}

/// Failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<mmloc::Error> for Failure {
    fn from(e: mmloc::Error) -> Self {
        use mmloc::design::DesignError;
        use mmloc::estimation::EstimationError;
        let code = match &e {
            mmloc::Error::Scenario(_) => 1,
            mmloc::Error::Design(DesignError::Infeasible { .. }) => 3,
            mmloc::Error::Estimation(EstimationError::Design(DesignError::Infeasible { .. })) => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

/// Converts any module error through the umbrella error.
pub fn fail<E: Into<mmloc::Error>>(e: E) -> Failure {
    Failure::from(e.into())
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Synth => "synth".into(),
            Command::ResponseMap => "response-map".into(),
            Command::Fim => "fim".into(),
            Command::Table1 => "table1".into(),
            Command::Design => "design".into(),
            Command::Profile => "profile".into(),
            Command::Estimate => "estimate".into(),
            Command::Fix => "fix".into(),
            Command::Track => "track".into(),
            Command::Repro { preset } => format!("repro {}", preset.to_possible_value().expect("named").get_name()),
        }
    }
}

fn read_config(path: Option<&Path>, required: bool) -> Result<Option<(PathBuf, Vec<u8>)>, Failure> {
    match path {
        Some(p) => std::fs::read(p)
            .map(|b| Some((p.to_path_buf(), b)))
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", p.display()))),
        None if required => Err(Failure::config("this subcommand needs --config <path>")),
        None => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
    }
    let needs_config = !matches!(cli.command, Command::Repro { .. } | Command::Table1);
    let config = read_config(cli.config.as_deref(), needs_config)?;
    let text = match &config {
        Some((p, bytes)) => Some(String::from_utf8(bytes.clone()).map_err(|_| Failure::config(format!("{} is not UTF-8", p.display())))?),
        None => None,
    };
    let base = config
        .as_ref()
        .and_then(|(p, _)| p.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let mut out = OutputSet::default();
    let seed = match &cli.command {
        Command::Synth => jobs::synth(text.as_deref().unwrap_or_default(), cli.seed, &mut out)?,
        Command::ResponseMap => jobs::response_map_job(text.as_deref().unwrap_or_default(), &mut out)?,
        Command::Fim => jobs::fim(text.as_deref().unwrap_or_default(), cli.seed, &mut out)?,
        Command::Table1 => jobs::table1(text.as_deref(), cli.seed, &mut out)?,
        Command::Design => jobs::design(text.as_deref().unwrap_or_default(), &mut out)?,
        Command::Profile => jobs::profile(text.as_deref().unwrap_or_default(), &mut out)?,
        Command::Estimate => jobs::estimate(text.as_deref().unwrap_or_default(), cli.seed, &mut out)?,
        Command::Fix => jobs::fix(text.as_deref().unwrap_or_default(), &base, cli.seed, &mut out)?,
        Command::Track => jobs::track(text.as_deref().unwrap_or_default(), cli.seed, &mut out)?,
        Command::Repro { preset } => match preset {
            Preset::Fig3 => repro::fig3(&mut out)?,
            Preset::Fig4 => repro::fig4(&mut out)?,
            Preset::Table1 => repro::table1(cli.seed, &mut out)?,
        },
    };
    let manifest = RunManifest::new(cli.command.name(), config.as_ref().map(|(p, b)| (p.as_path(), b.as_slice())), seed, &cli.out, &out);
    out.commit(&cli.out, &manifest)?;
    if let Some(warning) = out.verdict_failure.take() {
        return Err(Failure::numerical(warning));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
