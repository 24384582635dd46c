use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use tvflow_core::io::{encode_fields, encode_stack, encode_vector, read_image};
use tvflow_core::spacetime::{loss, optimize, AdamParams, LossBreakdown, LossWeights, SpaceTimeConfig};

use crate::error::{CliError, CliResult};
use crate::output::{run_dir, Staged};
use crate::{check_finite, show, Context, Finished};

#[derive(Args)]
pub struct SpaceTimeArgs {
    /// Initial image, an (H, W) array; repeat for several images.
    #[arg(long = "input", short = 'i', required = true, value_name = "FILE")]
    pub inputs: Vec<PathBuf>,

    #[arg(long)]
    pub nt: Option<usize>,

    #[arg(long = "T", visible_alias = "t-end", value_name = "T")]
    pub t_end: Option<f64>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub epochs: Option<usize>,

    /// Weight of the subgradient pairing term.
    #[arg(long)]
    pub alpha1: Option<f64>,

    /// Weight of the minimal-norm term.
    #[arg(long)]
    pub alpha2: Option<f64>,

    /// Smoothing of the TV term inside the pairing.
    #[arg(long)]
    pub eps_tv: Option<f64>,

    /// Regularization of the initial field.
    #[arg(long)]
    pub phi_eps: Option<f64>,
}

#[derive(Serialize)]
pub struct SpaceTimeOutputs {
    pub u_stack: String,
    pub phi_stack: String,
    pub times: String,
    pub history: String,
}

#[derive(Serialize)]
pub struct SpaceTimeRun {
    pub input: String,
    pub height: usize,
    pub width: usize,
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
    pub outputs: SpaceTimeOutputs,
}

#[derive(Serialize)]
pub struct SpaceTimeSummary {
    pub command: &'static str,
    pub settings: SpaceTimeConfig,
    pub runs: Vec<SpaceTimeRun>,
}

pub fn resolve(ctx: &Context, a: &SpaceTimeArgs) -> CliResult<SpaceTimeConfig> {
    let d = &ctx.defaults.spacetime;
    let cfg = SpaceTimeConfig {
        nt: a.nt.unwrap_or(d.nt),
        t_end: check_finite("T", a.t_end.unwrap_or(d.t_end))?,
        weights: LossWeights {
            alpha1: check_finite("alpha1", a.alpha1.unwrap_or(d.alpha1))?,
            alpha2: check_finite("alpha2", a.alpha2.unwrap_or(d.alpha2))?,
            eps_tv: check_finite("eps_tv", a.eps_tv.unwrap_or(d.eps_tv))?,
        },
        adam: AdamParams {
            lr: check_finite("lr", a.lr.unwrap_or(d.lr))?,
            beta1: d.beta1,
            beta2: d.beta2,
            eps_adam: d.eps_adam,
            epochs: a.epochs.unwrap_or(d.epochs),
        },
        phi_init_eps: check_finite("phi_eps", a.phi_eps.unwrap_or(d.phi_eps))?,
    };
    if cfg.nt < 2 {
        return Err(CliError::config("nt must be at least 2"));
    }
    if !(cfg.t_end > 0.0) || !(cfg.phi_init_eps > 0.0) {
        return Err(CliError::config("T and phi_eps must be positive"));
    }
    cfg.weights.validate()?;
    cfg.adam.validate()?;
    Ok(cfg)
}

fn run_one(cfg: &SpaceTimeConfig, input: &PathBuf, dir: PathBuf) -> CliResult<(Staged, SpaceTimeRun)> {
    let u0 = read_image(input)?;
    let res = optimize(&u0, cfg)?;
    let st = &res.state;
    let final_loss = loss(st, &u0, &cfg.weights)?;
    if !final_loss.total.is_finite() {
        return Err(CliError { kind: crate::error::Kind::NonFinite, message: format!("{}: final loss is {}", show(input), final_loss.total) });
    }
    let initial_loss = res.history.first().copied().unwrap_or(final_loss);
    let mut staged = Staged::default();
    let outputs = SpaceTimeOutputs {
        u_stack: staged.add(dir.join("u_stack.npy"), encode_stack(st.u())?),
        phi_stack: staged.add(dir.join("phi_stack.npy"), encode_fields(st.phi())?),
        times: staged.add(dir.join("times.npy"), encode_vector(st.times())?),
        history: staged.add_json(dir.join("history.json"), &res.history),
    };
    let run = SpaceTimeRun { input: show(input), height: u0.height(), width: u0.width(), initial_loss, final_loss, outputs };
    Ok((staged, run))
}

pub fn run(ctx: &Context, a: &SpaceTimeArgs) -> CliResult<Finished<SpaceTimeSummary>> {
    let cfg = resolve(ctx, a)?;
    let multiple = a.inputs.len() > 1;
    let results = ctx.par_map(&a.inputs, |input| run_one(&cfg, input, run_dir(&ctx.out_dir, input, multiple)));
    let mut staged = Staged::default();
    let mut runs = Vec::new();
    for r in results {
        let (s, run) = r?;
        staged.extend(s);
        runs.push(run);
    }
    Ok(Finished { staged, summary: SpaceTimeSummary { command: "spacetime", settings: cfg, runs }, unconverged: None })
}
