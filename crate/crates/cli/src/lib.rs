//! Command-line front end: reads a JSON problem spec, runs one command and
//! writes CSV/JSON results into the output directory.
//!
//! Exit codes: `0` success, `1` numerical failure or failed verification,
//! `2` usage error (bad flags, bad or empty spec, unknown suite).

pub mod commands;
pub mod output;
pub mod spec;
pub mod verify;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::spec::{ProblemSpec, Tolerances};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Numerical(contourlab::Error),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl From<contourlab::Error> for CliError {
    fn from(e: contourlab::Error) -> Self {
        match e {
            contourlab::Error::InvalidInput(m) => CliError::Usage(m),
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "contourlab", version, about = "Integrals along loops on complex level curves")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Critical points and critical values of H.
    Critical(Common),
    /// Loop functionals T, I, θ±, φ, Ψ over an h grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Named loop to sweep instead of the one in the spec.
        #[arg(long = "loop")]
        loop_name: Option<String>,
    },
    /// Transport of a loop around a critical value.
    Monodromy(Common),
    /// Return-map displacements and the leading Melnikov coefficient.
    Melnikov(Common),
    /// Three-dimensional system with a normally hyperbolic cylinder.
    Simulate3d(Common),
    /// Runs verification suites and reports residuals.
    Verify {
        #[command(flatten)]
        common: Common,
        /// group, psi, monodromy, melnikov, normalvar or all.
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Problem spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Seed of the random suites.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub tol: TolFlags,
}

/// `--tol-*` overrides; they take precedence over the spec's `tolerances`.
#[derive(Debug, Clone, Copy, Default, Args)]
pub struct TolFlags {
    #[arg(long)]
    pub tol_fiber: Option<f64>,
    #[arg(long)]
    pub tol_base: Option<f64>,
    #[arg(long)]
    pub tol_proj: Option<f64>,
    #[arg(long)]
    pub tol_newton: Option<f64>,
    #[arg(long)]
    pub tol_dedup: Option<f64>,
    #[arg(long)]
    pub tol_ode_rel: Option<f64>,
    #[arg(long)]
    pub tol_ode_abs: Option<f64>,
    #[arg(long)]
    pub tol_resonance: Option<f64>,
    #[arg(long)]
    pub tol_max_step: Option<f64>,
}

impl TolFlags {
    pub fn to_tolerances(self) -> Tolerances {
        Tolerances {
            fiber: self.tol_fiber,
            base: self.tol_base,
            proj: self.tol_proj,
            newton: self.tol_newton,
            dedup: self.tol_dedup,
            ode_rel: self.tol_ode_rel,
            ode_abs: self.tol_ode_abs,
            resonance: self.tol_resonance,
            max_step: self.tol_max_step,
        }
    }
}

fn load(common: &Common) -> Result<(ProblemSpec, Tolerances), CliError> {
    let spec = ProblemSpec::from_file(&common.spec)?;
    let tol = spec.tolerances.overridden_by(&common.tol.to_tolerances());
    tol.validate()?;
    Ok((spec, tol))
}

/// Runs one command and returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    match &cli.command {
        Command::Critical(c) => with_spec(c, commands::run_critical),
        Command::Sweep { common, loop_name } => {
            let (spec, tol) = load(common)?;
            commands::run_sweep(&spec, &tol, loop_name.as_deref(), &common.out)
        }
        Command::Monodromy(c) => with_spec(c, commands::run_monodromy),
        Command::Melnikov(c) => with_spec(c, commands::run_melnikov),
        Command::Simulate3d(c) => with_spec(c, commands::run_simulate3d),
        Command::Verify { common, suite } => {
            let suites = verify::parse_suites(suite)?;
            let (spec, tol) = load(common)?;
            let report = verify::cmd_verify(&spec, &tol, &suites, common.seed)?;
            let path = output::write_json(&common.out, "verify.json", &report)?;
            for c in &report.checks {
                log::info!("{} {}/{}: {:.3e} (tol {:.1e})", if c.pass { "PASS" } else { "FAIL" }, c.suite.name(), c.identity, c.residual, c.tolerance);
            }
            if report.pass {
                Ok(vec![path])
            } else {
                let failed = report.checks.iter().filter(|c| !c.pass).count();
                Err(CliError::Failed(format!("{failed} checks failed; see {}", path.display())))
            }
        }
    }
}

fn with_spec(
    common: &Common,
    f: impl FnOnce(&ProblemSpec, &Tolerances, &Path) -> Result<Vec<PathBuf>, CliError>,
) -> Result<Vec<PathBuf>, CliError> {
    let (spec, tol) = load(common)?;
    f(&spec, &tol, &common.out)
}
