use std::path::PathBuf;

use clap::{ArgGroup, Args, ValueEnum};
use serde::Serialize;
use tvflow_core::eval::{
    check_one_homogeneity, compare_with_peak, fit_eigen_decay, mask_above, EigenDecayFit, ExplicitMethod, FlowMethod,
    ImplicitMethod, LaggedMethod, MetricReport, SpaceTimeMethod,
};
use tvflow_core::flow::{uniform_times, LaggedDiffusivityConfig};
use tvflow_core::io::{read_image, read_npy, read_trajectory, read_vector};
use tvflow_core::{FlowTrajectory, Image};

use crate::config::Scheme;
use crate::error::{CliError, CliResult};
use crate::flow::{FlowArgs, FlowPlan};
use crate::output::Staged;
use crate::spacetime::SpaceTimeArgs;
use crate::{check_finite, show, Context, Finished};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Implicit,
    Explicit,
    Lagged,
    Spacetime,
}

#[derive(Args)]
#[command(group(ArgGroup::new("mode").required(true).args(["compare", "eigen", "homogeneity"])))]
pub struct EvalArgs {
    /// Score CANDIDATE frames against REFERENCE frames ((H, W) or (Nt, H, W) arrays).
    #[arg(long, num_args = 2, value_names = ["REFERENCE", "CANDIDATE"])]
    pub compare: Option<Vec<PathBuf>>,

    /// Fit the linear decay of an eigenfunction-like image.
    #[arg(long)]
    pub eigen: bool,

    /// Compare the flow of c * u0 at t with c times the flow of u0 at t / c.
    #[arg(long)]
    pub homogeneity: bool,

    /// Initial image for --eigen and --homogeneity.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,

    /// Precomputed trajectory for --eigen instead of running the flow.
    #[arg(long, value_name = "FILE", conflicts_with = "input")]
    pub trajectory: Option<PathBuf>,

    /// Time stamps for --compare or --trajectory.
    #[arg(long, value_name = "FILE")]
    pub times: Option<PathBuf>,

    #[arg(long = "T", visible_alias = "t-end", value_name = "T")]
    pub t_end: Option<f64>,

    #[arg(long)]
    pub nt: Option<usize>,

    /// Mask threshold for --eigen [default: midpoint of the first frame's range].
    #[arg(long)]
    pub threshold: Option<f64>,

    /// Scaling factor for --homogeneity.
    #[arg(long)]
    pub c: Option<f64>,

    /// Flow method under test for --homogeneity.
    #[arg(long, value_enum, default_value = "implicit")]
    pub method: Method,

    /// PSNR peak for --compare.
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
}

impl EvalArgs {
    pub fn mode_name(&self) -> &'static str {
        if self.compare.is_some() {
            "compare"
        } else if self.eigen {
            "eigen"
        } else {
            "homogeneity"
        }
    }
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EvalSummary {
    Compare {
        command: &'static str,
        reference: String,
        candidate: String,
        report: MetricReport,
    },
    Eigen {
        command: &'static str,
        source: String,
        nt: usize,
        t_end: f64,
        threshold: f64,
        mask_pixels: usize,
        /// False when the flow was run here and an inner solve stopped early.
        flow_converged: bool,
        fit: EigenDecayFit,
    },
    Homogeneity {
        command: &'static str,
        input: String,
        method: String,
        c: f64,
        report: MetricReport,
    },
}

/// Frames of an (H, W) or (Nt, H, W) array.
fn read_frames(path: &PathBuf) -> CliResult<Vec<Image>> {
    let (shape, data) = read_npy(path)?;
    let bad = || CliError::io(format!("{}: expected an (H, W) or (Nt, H, W) array, found shape {shape:?}", show(path)));
    let (n, h, w) = match shape.as_slice() {
        [h, w] => (1, *h, *w),
        [n, h, w] => (*n, *h, *w),
        _ => return Err(bad()),
    };
    if n == 0 || h * w == 0 {
        return Err(bad());
    }
    data.chunks(h * w)
        .map(|c| Image::new(h, w, c.to_vec()).map_err(|e| CliError::io(format!("{}: {e}", show(path)))))
        .collect()
}

fn grid(a: &EvalArgs, nt_default: usize, t_default: f64) -> CliResult<Vec<f64>> {
    let t_end = check_finite("T", a.t_end.unwrap_or(t_default))?;
    Ok(uniform_times(a.nt.unwrap_or(nt_default), t_end)?)
}

fn compare(ctx: &Context, a: &EvalArgs, paths: &[PathBuf]) -> CliResult<EvalSummary> {
    if !(a.peak > 0.0 && a.peak.is_finite()) {
        return Err(CliError::config("peak must be positive"));
    }
    let reference = read_frames(&paths[0])?;
    let candidate = read_frames(&paths[1])?;
    if reference.len() != candidate.len() {
        return Err(CliError::config(format!("{} has {} frames, {} has {}", show(&paths[0]), reference.len(), show(&paths[1]), candidate.len())));
    }
    let times = match &a.times {
        Some(p) => read_vector(p)?,
        None if reference.len() == 1 => vec![0.0],
        None => grid(a, reference.len(), ctx.defaults.eval.t_end).map(|t| t[..reference.len().min(t.len())].to_vec())?,
    };
    if times.len() != reference.len() {
        return Err(CliError::config(format!("{} time stamps for {} frames", times.len(), reference.len())));
    }
    let r = FlowTrajectory::new(times.clone(), reference)?;
    let c = FlowTrajectory::new(times, candidate)?;
    Ok(EvalSummary::Compare {
        command: "eval",
        reference: show(&paths[0]),
        candidate: show(&paths[1]),
        report: compare_with_peak(&r, &c, a.peak, "compare")?,
    })
}

/// Flow settings from the defaults, with the eval grid.
fn flow_plan(ctx: &Context, times: &[f64]) -> CliResult<FlowPlan> {
    let args = FlowArgs {
        inputs: Vec::new(),
        scheme: Some(Scheme::Implicit),
        solver: None,
        dt: None,
        t_end: times.last().copied(),
        nt: Some(times.len()),
        eps: None,
        tol: None,
        max_iter: None,
        preview: false,
    };
    FlowPlan::resolve(&ctx.defaults.flow, &args)
}

fn eigen(ctx: &Context, a: &EvalArgs) -> CliResult<EvalSummary> {
    let e = &ctx.defaults.eval;
    let (source, traj, converged) = match (&a.trajectory, &a.input) {
        (Some(tp), _) => {
            let times = a.times.as_ref().ok_or_else(|| CliError::config("--trajectory needs --times"))?;
            (show(tp), read_trajectory(tp, times)?, true)
        }
        (None, Some(ip)) => {
            let times = grid(a, e.eigen_nt, e.eigen_t_end)?;
            let plan = flow_plan(ctx, &times)?;
            let u0 = read_image(ip)?;
            let sol = plan.solve(&u0)?;
            let ok = sol.diagnostics.all_converged();
            (show(ip), sol.trajectory, ok)
        }
        (None, None) => return Err(CliError::config("--eigen needs --input or --trajectory")),
    };
    let first = &traj.frames()[0];
    let (lo, hi) = first.as_slice().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let threshold = check_finite("threshold", a.threshold.unwrap_or(0.5 * (lo + hi)))?;
    let mask = mask_above(first, threshold);
    let mask_pixels = mask.iter().filter(|&&m| m).count();
    if mask_pixels == 0 {
        return Err(CliError::config(format!("no pixel of the first frame exceeds the threshold {threshold}")));
    }
    Ok(EvalSummary::Eigen {
        command: "eval",
        source,
        nt: traj.len(),
        t_end: traj.final_time(),
        threshold,
        mask_pixels,
        flow_converged: converged,
        fit: fit_eigen_decay(&traj, &mask)?,
    })
}

fn homogeneity(ctx: &Context, a: &EvalArgs) -> CliResult<EvalSummary> {
    let input = a.input.as_ref().ok_or_else(|| CliError::config("--homogeneity needs --input"))?;
    let c = check_finite("c", a.c.unwrap_or(ctx.defaults.eval.homogeneity_c))?;
    let times = grid(a, ctx.defaults.eval.nt, ctx.defaults.eval.t_end)?;
    let f = &ctx.defaults.flow;
    let method: Box<dyn FlowMethod> = match a.method {
        Method::Implicit => {
            let plan = flow_plan(ctx, &times)?;
            Box::new(ImplicitMethod(plan.implicit_config().expect("implicit plan")))
        }
        Method::Explicit => Box::new(ExplicitMethod { dt: f.explicit_dt, eps: f.eps }),
        Method::Lagged => {
            Box::new(LaggedMethod(LaggedDiffusivityConfig { dt: f.lagged_dt, eps: f.eps, cg_tol: f.cg_tol, cg_max_iter: f.cg_max_iter }))
        }
        Method::Spacetime => {
            let args = SpaceTimeArgs {
                inputs: Vec::new(),
                nt: None,
                t_end: None,
                lr: None,
                epochs: None,
                alpha1: None,
                alpha2: None,
                eps_tv: None,
                phi_eps: None,
            };
            Box::new(SpaceTimeMethod(crate::spacetime::resolve(ctx, &args)?))
        }
    };
    let u0 = read_image(input)?;
    let report = check_one_homogeneity(method.as_ref(), &u0, c, &times)?;
    Ok(EvalSummary::Homogeneity { command: "eval", input: show(input), method: method.name(), c, report })
}

pub fn run(ctx: &Context, a: &EvalArgs) -> CliResult<Finished<EvalSummary>> {
    let summary = match &a.compare {
        Some(paths) => compare(ctx, a, paths)?,
        None if a.eigen => eigen(ctx, a)?,
        None => homogeneity(ctx, a)?,
    };
    let unconverged = match &summary {
        EvalSummary::Eigen { flow_converged: false, source, .. } => Some(format!("inner solver hit max_iter while evolving {source}")),
        _ => None,
    };
    Ok(Finished { staged: Staged::default(), summary, unconverged })
}
