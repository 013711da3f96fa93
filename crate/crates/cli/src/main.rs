mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_norm, ConfigError, Ini, Settings};

/// Certify, attack and verify composed classifiers built from resilient
/// feature extractors.
#[derive(Parser, Debug)]
#[command(name = "resfeat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify PPM images against the distortion budget.
    Certify {
        #[command(flatten)]
        common: Common,
        /// PPM (P6) images.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Search for distortions that change the candidate vector of PPM images.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Run the serial and parallel composition campaigns.
    VerifyTheorems {
        #[command(flatten)]
        common: Common,
    },
    /// Render the nine road signs, run the pipeline and write a report.
    DemoSigns {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report file; a directory for `demo-signs`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for exhaustive search (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_parser = ["l1", "l2", "linf"])]
    norm: Option<String>,
    /// Record wall-clock times in the report (makes it non-reproducible).
    #[arg(long)]
    timings: bool,
}

/// A failure that is the caller's fault: bad config, input or path.
#[derive(Debug)]
pub struct UsageError(pub String);

impl From<ConfigError> for UsageError {
    fn from(e: ConfigError) -> Self {
        UsageError(e.to_string())
    }
}

impl From<resfeat::Error> for UsageError {
    fn from(e: resfeat::Error) -> Self {
        UsageError(e.to_string())
    }
}

/// Everything a command needs, with command-line overrides applied.
pub struct Context {
    pub settings: Settings,
    pub digest: String,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub timings: bool,
}

fn context(common: &Common) -> Result<Context, UsageError> {
    let mut ini = match &common.config {
        Some(path) => Ini::load(path)?,
        None => Ini::default(),
    };
    if let Some(seed) = common.seed {
        ini.set("verifier", "seed", seed.to_string());
    }
    if let Some(lambda) = common.lambda {
        ini.set("budget", "lambda", lambda.to_string());
    }
    if let Some(norm) = &common.norm {
        ini.set("budget", "norm", norm.clone());
    }
    let base = common
        .config
        .as_ref()
        .and_then(|p| p.parent())
        .map(PathBuf::from)
        .unwrap_or_default();
    let mut settings = Settings::from_ini(&ini, &base)?;
    if let Some(norm) = common.norm.as_deref().and_then(parse_norm) {
        settings.norm = norm;
    }
    if common.workers == Some(0) {
        return Err(UsageError("--workers must be at least 1".into()));
    }
    Ok(Context {
        settings,
        digest: ini.digest(),
        workers: common.workers,
        out: common.out.clone(),
        timings: common.timings,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Certify { common, inputs } => context(common).and_then(|c| commands::certify(&c, inputs)),
        Command::Attack { common, inputs } => context(common).and_then(|c| commands::attack(&c, inputs)),
        Command::VerifyTheorems { common } => context(common).and_then(|c| commands::verify_theorems(&c)),
        Command::DemoSigns { common } => context(common).and_then(|c| commands::demo_signs(&c)),
    };
    match result {
        Ok(code) => code,
        Err(UsageError(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
