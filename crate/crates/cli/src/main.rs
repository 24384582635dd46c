//! `tvflow`: TV flow solvers, space-time optimization, spectral TV
//! decomposition, evaluation and test-image generation on NPY tensors.
//!
//! Exit codes: 0 success, 2 invalid configuration or usage, 3 I/O or
//! tensor-format error, 4 inner solver did not converge (outputs are still
//! written and flagged), 5 non-finite loss or state.

mod config;
mod error;
mod eval;
mod flow;
mod gen;
mod output;
mod spacetime;
mod spectral;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use crate::config::Defaults;
use crate::error::{CliError, CliResult, Kind};
use crate::output::{to_json, Staged};

#[derive(Parser)]
#[command(name = "tvflow", version, about = "Total variation flow, space-time optimization and spectral TV tools")]
struct Cli {
    /// TOML file overriding the built-in defaults (same layout as defaults.toml).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Directory for all outputs.
    #[arg(long, global = true, env = "TVFLOW_OUT_DIR", default_value = ".", value_name = "DIR")]
    out_dir: PathBuf,

    /// Path of the JSON summary [default: <out-dir>/<command>.json].
    #[arg(long, global = true, value_name = "FILE")]
    report: Option<PathBuf>,

    /// Worker threads; only independent input images run in parallel.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve images under the TV flow.
    Flow(flow::FlowArgs),
    /// Minimize the space-time loss for (u, phi) stacks.
    Spacetime(spacetime::SpaceTimeArgs),
    /// Spectral TV transform, band-pass filters and reconstruction of a trajectory.
    Spectral(spectral::SpectralArgs),
    /// Score trajectories, check one-homogeneity, fit eigenfunction decay.
    Eval(eval::EvalArgs),
    /// Render test images.
    Gen(gen::GenArgs),
}

/// Settings shared by every command.
pub struct Context {
    pub defaults: Defaults,
    pub out_dir: PathBuf,
    pub report: Option<PathBuf>,
    pub jobs: usize,
}

impl Context {
    pub fn report_path(&self, name: &str) -> PathBuf {
        self.report.clone().unwrap_or_else(|| self.out_dir.join(format!("{name}.json")))
    }

    /// Applies `f` to every item on a pool of `jobs` threads, keeping order.
    pub fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
        use rayon::prelude::*;
        if self.jobs <= 1 || items.len() <= 1 {
            return items.iter().map(f).collect();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.iter().map(f).collect(),
        }
    }
}

/// What a command hands back: staged files, the summary, and whether an
/// inner solver stopped before converging.
pub struct Finished<S> {
    pub staged: Staged,
    pub summary: S,
    pub unconverged: Option<String>,
}

fn finish<S: Serialize>(ctx: &Context, name: &str, done: Finished<S>) -> CliResult<()> {
    let mut staged = done.staged;
    staged.add_json(ctx.report_path(name), &done.summary);
    staged.commit()?;
    print!("{}", to_json(&done.summary));
    match done.unconverged {
        Some(msg) => Err(CliError::not_converged(msg)),
        None => Ok(()),
    }
}

pub fn check_finite(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::config(format!("{name} must be finite, got {v}")))
    }
}

pub fn show(p: &Path) -> String {
    p.display().to_string()
}

fn run(cli: Cli) -> CliResult<()> {
    let ctx = Context {
        defaults: Defaults::load(cli.config.as_deref())?,
        out_dir: cli.out_dir,
        report: cli.report,
        jobs: usize::from(cli.jobs),
    };
    match cli.command {
        Command::Flow(a) => finish(&ctx, "flow", flow::run(&ctx, &a)?),
        Command::Spacetime(a) => finish(&ctx, "spacetime", spacetime::run(&ctx, &a)?),
        Command::Spectral(a) => finish(&ctx, "spectral", spectral::run(&ctx, &a)?),
        Command::Eval(a) => {
            let name = format!("eval_{}", a.mode_name());
            finish(&ctx, &name, eval::run(&ctx, &a)?)
        }
        Command::Gen(a) => finish(&ctx, "gen", gen::run(&ctx, &a)?),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let mut cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    if let (Command::Gen(a), Some(m)) = (&mut cli.command, matches.subcommand_matches("gen")) {
        a.group_shapes(m);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let what = match e.kind {
                Kind::NotConverged => "warning",
                _ => "error",
            };
            eprintln!("tvflow: {what}: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
