use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use tvflow_core::flow::{
    flow_explicit_regularized, flow_implicit, flow_lagged_diffusivity, substeps_for, uniform_times, FlowSolution,
    ImplicitFlowConfig, LaggedDiffusivityConfig,
};
use tvflow_core::io::{encode_fields, encode_pgm, encode_stack, encode_vector, read_image};
use tvflow_core::rof::RofParams;
use tvflow_core::spacetime::SpaceTimeState;
use tvflow_core::Image;

use crate::config::{FlowDefaults, Scheme, Solver};
use crate::error::{CliError, CliResult};
use crate::output::{run_dir, Staged};
use crate::{check_finite, show, Context, Finished};

#[derive(Args)]
pub struct FlowArgs {
    /// Initial image, an (H, W) array; repeat for several images.
    #[arg(long = "input", short = 'i', required = true, value_name = "FILE")]
    pub inputs: Vec<PathBuf>,

    #[arg(long, value_enum)]
    pub scheme: Option<Scheme>,

    /// Inner ROF solver of the implicit scheme.
    #[arg(long, value_enum)]
    pub solver: Option<Solver>,

    /// Largest internal time step.
    #[arg(long)]
    pub dt: Option<f64>,

    /// Final time.
    #[arg(long = "T", visible_alias = "t-end", value_name = "T")]
    pub t_end: Option<f64>,

    /// Number of output nodes, both ends included.
    #[arg(long)]
    pub nt: Option<usize>,

    /// Regularization of the explicit and lagged schemes.
    #[arg(long)]
    pub eps: Option<f64>,

    /// Inner-solver stopping tolerance.
    #[arg(long)]
    pub tol: Option<f64>,

    #[arg(long)]
    pub max_iter: Option<usize>,

    /// Also write one PGM preview per node.
    #[arg(long)]
    pub preview: bool,
}

/// Fully resolved flow settings.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FlowPlan {
    pub scheme: &'static str,
    pub solver: Option<&'static str>,
    pub t_end: f64,
    pub nt: usize,
    /// Internal step actually taken.
    pub dt: f64,
    pub substeps: Option<usize>,
    pub eps: Option<f64>,
    #[serde(skip)]
    kind: PlanKind,
}

#[derive(Debug, Clone, Copy)]
enum PlanKind {
    Implicit(ImplicitFlowConfig),
    Explicit { dt: f64, eps: f64 },
    Lagged(LaggedDiffusivityConfig),
}

impl FlowPlan {
    pub fn resolve(d: &FlowDefaults, a: &FlowArgs) -> CliResult<Self> {
        let t_end = check_finite("T", a.t_end.unwrap_or(d.t_end))?;
        let nt = a.nt.unwrap_or(d.nt);
        if nt < 2 {
            return Err(CliError::config("nt must be at least 2"));
        }
        if !(t_end > 0.0) {
            return Err(CliError::config(format!("T must be positive, got {t_end}")));
        }
        let dt = a.dt.map(|v| check_finite("dt", v)).transpose()?;
        if dt.is_some_and(|v| v <= 0.0) {
            return Err(CliError::config("dt must be positive"));
        }
        let eps = a.eps.unwrap_or(d.eps);
        let interval = t_end / (nt - 1) as f64;
        let scheme = a.scheme.unwrap_or(d.scheme);
        let plan = match scheme {
            Scheme::Implicit => {
                let solver = a.solver.unwrap_or(d.solver);
                let inner = RofParams { tol: a.tol.unwrap_or(d.tol), max_iter: a.max_iter.unwrap_or(d.max_iter), ..RofParams::default() };
                inner.validate()?;
                let substeps = dt.map_or(d.substeps, |dt| substeps_for(interval, dt));
                if substeps == 0 {
                    return Err(CliError::config("substeps must be at least 1"));
                }
                let cfg = ImplicitFlowConfig { solver: solver.core(), inner, substeps };
                Self {
                    scheme: scheme.name(),
                    solver: Some(solver.name()),
                    t_end,
                    nt,
                    dt: interval / substeps as f64,
                    substeps: Some(substeps),
                    eps: None,
                    kind: PlanKind::Implicit(cfg),
                }
            }
            Scheme::Explicit => {
                let dt = dt.unwrap_or(d.explicit_dt);
                if !(eps > 0.0) || dt > eps / 8.0 {
                    return Err(CliError::config(format!("explicit scheme needs eps > 0 and dt <= eps/8, got dt = {dt}, eps = {eps}")));
                }
                let m = substeps_for(interval, dt);
                Self {
                    scheme: scheme.name(),
                    solver: None,
                    t_end,
                    nt,
                    dt: interval / m as f64,
                    substeps: Some(m),
                    eps: Some(eps),
                    kind: PlanKind::Explicit { dt, eps },
                }
            }
            Scheme::Lagged => {
                let dt = dt.unwrap_or(d.lagged_dt);
                if !(eps > 0.0) {
                    return Err(CliError::config("eps must be positive"));
                }
                let cfg = LaggedDiffusivityConfig {
                    dt,
                    eps,
                    cg_tol: a.tol.unwrap_or(d.cg_tol),
                    cg_max_iter: a.max_iter.unwrap_or(d.cg_max_iter),
                };
                let m = substeps_for(interval, dt);
                Self {
                    scheme: scheme.name(),
                    solver: None,
                    t_end,
                    nt,
                    dt: interval / m as f64,
                    substeps: Some(m),
                    eps: Some(eps),
                    kind: PlanKind::Lagged(cfg),
                }
            }
        };
        Ok(plan)
    }

    pub fn implicit_config(&self) -> Option<ImplicitFlowConfig> {
        match self.kind {
            PlanKind::Implicit(cfg) => Some(cfg),
            _ => None,
        }
    }

    pub fn solve(&self, u0: &Image) -> CliResult<FlowSolution> {
        let times = uniform_times(self.nt, self.t_end)?;
        Ok(match self.kind {
            PlanKind::Implicit(cfg) => flow_implicit(u0, &times, &cfg)?,
            PlanKind::Explicit { dt, eps } => flow_explicit_regularized(u0, &times, dt, eps)?,
            PlanKind::Lagged(cfg) => flow_lagged_diffusivity(u0, &times, &cfg)?,
        })
    }
}

#[derive(Serialize)]
pub struct FlowOutputs {
    pub trajectory: String,
    pub times: String,
    pub phi: Option<String>,
    pub previews: Vec<String>,
}

#[derive(Serialize)]
pub struct FlowRun {
    pub input: String,
    pub height: usize,
    pub width: usize,
    /// Count of internal steps (implicit) or grid intervals (explicit, lagged).
    pub steps: usize,
    pub unconverged_steps: usize,
    pub worst_residual: f64,
    pub total_iterations: usize,
    pub converged: bool,
    /// Largest relative change of the image mean over the trajectory.
    pub mean_drift: f64,
    pub outputs: FlowOutputs,
}

#[derive(Serialize)]
pub struct FlowSummary {
    pub command: &'static str,
    pub settings: FlowPlan,
    pub converged: bool,
    pub runs: Vec<FlowRun>,
}

fn run_one(plan: &FlowPlan, input: &PathBuf, dir: PathBuf, preview: bool) -> CliResult<(Staged, FlowRun)> {
    let u0 = read_image(input)?;
    let sol = plan.solve(&u0)?;
    let traj = &sol.trajectory;
    if traj.frames().iter().any(|f| f.as_slice().iter().any(|v| !v.is_finite())) {
        return Err(CliError { kind: crate::error::Kind::NonFinite, message: format!("{}: non-finite values in the trajectory", show(input)) });
    }
    let mut staged = Staged::default();
    let trajectory = staged.add(dir.join("trajectory.npy"), encode_stack(traj.frames())?);
    let times = staged.add(dir.join("times.npy"), encode_vector(traj.times())?);
    let phi = match &sol.interval_fields {
        Some(_) => {
            let state = SpaceTimeState::from_implicit_flow(&sol)?;
            Some(staged.add(dir.join("phi.npy"), encode_fields(state.phi())?))
        }
        None => None,
    };
    let previews = if preview {
        traj.frames()
            .iter()
            .enumerate()
            .map(|(k, f)| staged.add(dir.join("preview").join(format!("frame_{k:03}.pgm")), encode_pgm(f)))
            .collect()
    } else {
        Vec::new()
    };
    let d = &sol.diagnostics;
    let run = FlowRun {
        input: show(input),
        height: u0.height(),
        width: u0.width(),
        steps: d.steps.len(),
        unconverged_steps: d.unconverged(),
        worst_residual: d.worst_residual(),
        total_iterations: d.total_iterations(),
        converged: d.all_converged(),
        mean_drift: traj.max_mean_drift(),
        outputs: FlowOutputs { trajectory, times, phi, previews },
    };
    Ok((staged, run))
}

pub fn run(ctx: &Context, a: &FlowArgs) -> CliResult<Finished<FlowSummary>> {
    let plan = FlowPlan::resolve(&ctx.defaults.flow, a)?;
    let multiple = a.inputs.len() > 1;
    let results = ctx.par_map(&a.inputs, |input| run_one(&plan, input, run_dir(&ctx.out_dir, input, multiple), a.preview));
    let mut staged = Staged::default();
    let mut runs = Vec::new();
    for r in results {
        let (s, run) = r?;
        staged.extend(s);
        runs.push(run);
    }
    let bad: Vec<String> = runs.iter().filter(|r| !r.converged).map(|r| format!("{} ({} steps)", r.input, r.unconverged_steps)).collect();
    let unconverged = (!bad.is_empty()).then(|| format!("inner solver hit max_iter for {}; outputs are flagged", bad.join(", ")));
    Ok(Finished { staged, summary: FlowSummary { command: "flow", settings: plan, converged: bad.is_empty(), runs }, unconverged })
}
