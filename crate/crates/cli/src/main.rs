//! `paneldp` — analyst command line for the verification service.
//!
//! Remote commands (`verify-coef`, `verify-trend`, `budget`) talk JSON/HTTP
//! to a server; local commands (`synth`, `calibrate-m`, `fit`, `frame`) run
//! the sandbox on files without touching the network or any budget.
//!
//! Exit codes: 0 success, 2 validation error, 3 budget refusal, 4 transport
//! error.

mod client;
mod local;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use paneldp_core::verify::Interval;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("budget refused: {0}")]
    Budget(String),
    #[error("transport: {0}")]
    Transport(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Budget(_) => 3,
            CliError::Transport(_) => 4,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "paneldp",
    version,
    about = "Verification client and synthesis sandbox"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GlobalArgs {
    /// Client configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Server base URL, e.g. http://127.0.0.1:8631 (overrides config).
    #[arg(long, global = true)]
    server: Option<String>,
    /// Bearer token (overrides config).
    #[arg(long, global = true)]
    token: Option<String>,
    /// Analysis id the budget is charged to (overrides config).
    #[arg(long, global = true)]
    analysis: Option<String>,
    /// Emit raw JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Clone, Deserialize, Default)]
struct FileConfig {
    server: Option<String>,
    token: Option<String>,
    analysis: Option<String>,
    #[serde(default)]
    format: Option<String>,
    default_epsilon: Option<f64>,
    default_m: Option<u32>,
}

/// Resolved client configuration: flags override the config file.
#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub server: Option<String>,
    pub token: Option<String>,
    pub analysis: Option<String>,
    pub json: bool,
    pub default_epsilon: f64,
    pub default_m: u32,
}

impl ClientConfig {
    fn resolve(global: &GlobalArgs) -> Result<ClientConfig, CliError> {
        let file: FileConfig = match &global.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Validation(format!("cannot read config {}: {e}", path.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Validation(format!("bad config: {e}")))?
            }
            None => FileConfig::default(),
        };
        Ok(ClientConfig {
            server: global.server.clone().or(file.server),
            token: global.token.clone().or(file.token),
            analysis: global.analysis.clone().or(file.analysis),
            json: global.json || file.format.as_deref() == Some("json"),
            default_epsilon: file.default_epsilon.unwrap_or(1.0),
            default_m: file.default_m.unwrap_or(50),
        })
    }

    pub fn server(&self) -> Result<&str, CliError> {
        self.server
            .as_deref()
            .ok_or_else(|| CliError::Validation("no server URL (use --server or config)".into()))
    }

    pub fn token(&self) -> Result<&str, CliError> {
        match self.token.as_deref() {
            Some(t) if !t.is_empty() => Ok(t),
            _ => Err(CliError::Validation(
                "no bearer token (use --token or config)".into(),
            )),
        }
    }

    pub fn analysis(&self) -> Result<&str, CliError> {
        self.analysis
            .as_deref()
            .ok_or_else(|| CliError::Validation("no analysis id (use --analysis or config)".into()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Verify whether a model coefficient lies in an interval.
    VerifyCoef(VerifyCoefArgs),
    /// Verify the slope of a coefficient's year-by-year path over periods.
    VerifyTrend(VerifyTrendArgs),
    /// Show the privacy-budget status of an analysis.
    Budget,
    /// Fit a synthesis model on a panel and write a synthetic panel.
    Synth(local::SynthArgs),
    /// Sweep candidate partition counts M on a local (synthetic) panel.
    CalibrateM(local::CalibrateArgs),
    /// Fit a model locally and print the coefficient table.
    Fit(local::FitArgs),
    /// Build an analysis frame locally and export it as CSV (debugging).
    Frame(local::FrameArgs),
}

#[derive(Args)]
pub struct VerifyCoefArgs {
    /// Model formula file.
    #[arg(long)]
    model: PathBuf,
    /// Design column, e.g. race=black.
    #[arg(long)]
    coefficient: String,
    /// One-sided threshold: verifies coefficient in (-inf, gamma0].
    #[arg(long, allow_hyphen_values = true)]
    gamma0: Option<f64>,
    /// Explicit interval, e.g. "(-0.031,-0.010)", "[0,inf)", "neg", "pos".
    #[arg(long, allow_hyphen_values = true, conflicts_with = "gamma0")]
    interval: Option<String>,
    /// Partition count M (default from config).
    #[arg(long)]
    m: Option<u32>,
    /// Privacy budget for this release (default from config).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Client-side decision threshold in (0,1); applied to the returned
    /// posterior, never sent for server-side decisions.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Request the full posterior density array.
    #[arg(long)]
    density: bool,
}

#[derive(Args)]
pub struct VerifyTrendArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    coefficient: String,
    /// Comma-separated year ranges, e.g. 1988-2003,2003-2011.
    #[arg(long)]
    periods: String,
    /// Comma-separated intervals per period: neg, pos, or explicit forms.
    #[arg(long)]
    intervals: String,
    /// separate (one release per period, K·epsilon) or composite (single
    /// release, epsilon).
    #[arg(long, default_value = "separate")]
    mode: String,
    #[arg(long)]
    m: Option<u32>,
    /// Epsilon per released count (default from config).
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    density: bool,
}

pub fn parse_interval(s: &str) -> Result<Interval, CliError> {
    s.parse::<Interval>()
        .map_err(|e| CliError::Validation(e.to_string()))
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe (head, less) closes early.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let config = match ClientConfig::resolve(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let result = match cli.command {
        Command::VerifyCoef(args) => client::verify_coef(&config, args),
        Command::VerifyTrend(args) => client::verify_trend(&config, args),
        Command::Budget => client::budget(&config),
        Command::Synth(args) => local::synth(&config, args),
        Command::CalibrateM(args) => local::calibrate_m(&config, args),
        Command::Fit(args) => local::fit(&config, args),
        Command::Frame(args) => local::frame(&config, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
