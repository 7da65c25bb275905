//! `sdclf`: design, simulate, sweep and consistency workflows for sampled-data
//! CLF controllers.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sdclf::prelude::ControllerKind;

use config::{parse_list, parse_matrix, MatrixSpec, PartialConfig, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "sdclf", version)]
#[command(about = "Sampled-data CLF controller design and closed-loop simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the output Lyapunov design and the composite certificate
    Design(Flags),
    /// Run one zero-order-hold closed loop and export its trajectory
    Simulate(Flags),
    /// Run one closed loop per sample period
    Sweep(Flags),
    /// Estimate the one-step consistency order on a state lattice
    Consistency(Flags),
}

/// Every flag overrides the matching key of `--config`.
#[derive(Args, Debug, Default)]
struct Flags {
    /// Flat JSON file with run parameters
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    system: Option<String>,

    /// fbl, clf-qp or clf-qcqp
    #[arg(long)]
    controller: Option<ControllerKind>,

    /// Sample period
    #[arg(long, allow_negative_numbers = true)]
    h: Option<f64>,

    /// Horizon
    #[arg(long = "T", allow_negative_numbers = true)]
    t_final: Option<f64>,

    /// Initial state, comma separated
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,

    /// Output gain, rows separated by ';'
    #[arg(long = "K", allow_hyphen_values = true)]
    k: Option<String>,

    #[arg(long = "Q-eta", allow_hyphen_values = true)]
    q_eta: Option<String>,

    /// Decrease margin in (0, 1)
    #[arg(long, allow_negative_numbers = true)]
    c: Option<f64>,

    /// Zero-dynamics margin in (0, 1)
    #[arg(long, allow_negative_numbers = true)]
    d: Option<f64>,

    #[arg(long = "Q-z", allow_hyphen_values = true)]
    q_z: Option<String>,

    /// Lipschitz bound of the zero dynamics in eta
    #[arg(long = "L-q", allow_negative_numbers = true)]
    l_q: Option<f64>,

    /// RK4 substeps per sample period
    #[arg(long)]
    substeps: Option<usize>,

    /// Settling radius
    #[arg(long = "R-target", allow_negative_numbers = true)]
    r_target: Option<f64>,

    /// Output directory
    #[arg(long, short)]
    output: Option<PathBuf>,

    /// Sample periods for `sweep`, comma separated
    #[arg(long, allow_hyphen_values = true)]
    hs: Option<String>,

    /// Coarsest step for `consistency`
    #[arg(long, allow_negative_numbers = true)]
    h0: Option<f64>,

    /// Number of halvings for `consistency`
    #[arg(long)]
    levels: Option<usize>,

    /// Build the composite certificate alongside the output design
    #[arg(long)]
    composite: Option<bool>,
}

impl Flags {
    fn into_partial(self) -> Result<(Option<PathBuf>, PartialConfig), Failure> {
        let list = |name: &str, s: Option<String>| {
            s.map(|s| parse_list(&s).map_err(|e| Failure::config(format!("--{name}: {e}"))))
                .transpose()
        };
        let matrix = |name: &str, s: Option<String>| {
            s.map(|s| {
                parse_matrix(&s)
                    .map(MatrixSpec::Rows)
                    .map_err(|e| Failure::config(format!("--{name}: {e}")))
            })
            .transpose()
        };
        let partial = PartialConfig {
            system: self.system,
            controller: self.controller,
            h: self.h,
            t_final: self.t_final,
            x0: list("x0", self.x0)?,
            k: matrix("K", self.k)?,
            q_eta: matrix("Q-eta", self.q_eta)?,
            c: self.c,
            d: self.d,
            q_z: matrix("Q-z", self.q_z)?,
            l_q: self.l_q,
            substeps: self.substeps,
            r_target: self.r_target,
            output_path: self.output,
            hs: list("hs", self.hs)?,
            h0: self.h0,
            levels: self.levels,
            composite: self.composite,
        };
        Ok((self.config, partial))
    }
}

/// Failure classes mapped onto the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    Check(String),
    Config(String),
    Io(String),
}

impl Failure {
    pub fn check(msg: impl Into<String>) -> Self {
        Failure::Check(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Failure::Config(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Failure::Io(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl From<sdclf::Error> for Failure {
    fn from(e: sdclf::Error) -> Self {
        match e {
            sdclf::Error::Io(_) | sdclf::Error::Csv(_) => Failure::Io(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Check(m) => write!(f, "check failed: {m}"),
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

type Handler = fn(&RunConfig) -> Result<(), Failure>;

fn run(cli: Cli) -> Result<(), Failure> {
    let (command, flags): (Handler, Flags) = match cli.command {
        Command::Design(f) => (commands::design, f),
        Command::Simulate(f) => (commands::simulate, f),
        Command::Sweep(f) => (commands::sweep, f),
        Command::Consistency(f) => (commands::consistency, f),
    };
    let (file, flags) = flags.into_partial()?;
    let base = match file {
        Some(path) => PartialConfig::load(&path)?,
        None => PartialConfig::default(),
    };
    command(&base.overlay(flags).resolve()?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sdclf: {e}");
            ExitCode::from(e.code())
        }
    }
}
