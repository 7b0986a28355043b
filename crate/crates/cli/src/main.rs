//! `gvf`: simulate, pretrain, sweep, deploy, eval and plotdata from one
//! TOML configuration plus flag overrides.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 non-finite parameters.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::Config;

/// A malformed invocation or configuration.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Frozen,
    Onlinetd,
    Tdreplay,
    Nstep,
}

#[derive(Debug, Parser)]
#[command(name = "gvf", version, about = "Streaming GVF and n-step prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Deployment learner (default follows the pretrained learner).
    #[arg(long, global = true, value_enum)]
    algo: Option<Algo>,
    /// Discount, for learning and for evaluation returns.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// n-step horizon.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Online step size.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Offline step size.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Input dataset, overriding `data.path`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Deployment log for `eval` and `plotdata` (default `<out>/deploy.csv`).
    #[arg(long, global = true)]
    log: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic plant log.
    Simulate,
    /// Offline training; writes a checkpoint and the encoder description.
    Pretrain,
    /// Joint or two-stage step-size selection on the validation segment.
    Sweep,
    /// Run a pretrained predictor over the deployment segment.
    Deploy,
    /// NMSE series and summary of a deployment log.
    Eval,
    /// Aligned cumulant, prediction and target columns for plotting.
    Plotdata,
}

impl Cli {
    fn resolve(&self) -> anyhow::Result<Config> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(g) = self.gamma {
            cfg.td.gamma = g;
            cfg.eval.gamma = g;
        }
        if let Some(n) = self.n {
            cfg.nstep.n = n;
        }
        if let Some(a) = self.alpha {
            cfg.td.alpha = a;
            cfg.nstep.alpha = a;
        }
        if let Some(e) = self.eta {
            cfg.td.eta = e;
            cfg.nstep.eta = e;
        }
        if let Some(d) = &self.data {
            cfg.data.path = Some(d.clone());
        }
        cfg.td.validate().map_err(|e| UsageError(e.to_string()))?;
        cfg.nstep.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<gvf_core::Error>() {
            return match e {
                gvf_core::Error::NonFinite(_) => 3,
                gvf_core::Error::Config(_) => 1,
                _ => 2,
            };
        }
    }
    2
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
    let result = cli.resolve().and_then(|cfg| {
        let ctx = commands::Context {
            cfg,
            out: cli.out.clone(),
            algo: cli.algo,
            log: cli.log.clone(),
        };
        match cli.command {
            Command::Simulate => commands::simulate(&ctx),
            Command::Pretrain => commands::pretrain(&ctx),
            Command::Sweep => commands::sweep(&ctx),
            Command::Deploy => commands::deploy(&ctx),
            Command::Eval => commands::eval(&ctx),
            Command::Plotdata => commands::plotdata(&ctx),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
