//! Model-driven TV-flow solvers.
//!
//! All schemes evolve `u_t = div phi` with `phi` the calibrating field of `u`
//! (`phi = grad u / |grad u|` where the gradient is nonzero) and record frames
//! on a caller-supplied time grid. Each grid interval may be split into
//! several internal steps.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Result};
use crate::grid::{div_raw, grad_raw, Image, VectorField};
use crate::rof::{rof_chambolle_warm, rof_pdhg_warm, RofParams, SolveInfo};

/// Time-stamped stack of images sharing one shape.
///
/// Used both for flow trajectories and for derived stacks such as temporal
/// derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrajectory {
    times: Vec<f64>,
    frames: Vec<Image>,
}

impl FlowTrajectory {
    pub fn new(times: Vec<f64>, frames: Vec<Image>) -> Result<Self> {
        if times.is_empty() || times.len() != frames.len() {
            return Err(invalid_input(format!(
                "need one frame per time stamp, got {} times and {} frames",
                times.len(),
                frames.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(invalid_input("non-finite time stamp"));
        }
        if times.windows(2).any(|p| p[1] <= p[0]) {
            return Err(invalid_input("time stamps must be strictly increasing"));
        }
        let shape = frames[0].shape();
        if frames.iter().any(|f| f.shape() != shape) {
            return Err(invalid_input("all frames must share one shape"));
        }
        Ok(Self { times, frames })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<Image>) {
        (self.times, self.frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.frames[0].shape()
    }

    pub fn last(&self) -> &Image {
        self.frames.last().expect("trajectory is never empty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    /// Multiplies every frame by `c`, keeping the time stamps.
    pub fn scaled(&self, c: f64) -> FlowTrajectory {
        FlowTrajectory { times: self.times.clone(), frames: self.frames.iter().map(|f| f.scaled(c)).collect() }
    }

    /// Largest relative deviation of a frame mean from the first frame's mean.
    pub fn max_mean_drift(&self) -> f64 {
        let m0 = self.frames[0].mean();
        let scale = m0.abs().max(f64::MIN_POSITIVE);
        self.frames.iter().map(|f| (f.mean() - m0).abs() / scale).fold(0.0, f64::max)
    }

    /// Grid spacing if the stamps are equidistant (to 1e-9 relative).
    pub fn uniform_step(&self) -> Result<f64> {
        if self.times.len() < 2 {
            return Err(invalid_input("a single frame has no time step"));
        }
        let h = (self.final_time() - self.times[0]) / (self.times.len() - 1) as f64;
        for p in self.times.windows(2) {
            if ((p[1] - p[0]) - h).abs() > 1e-9 * h {
                return Err(invalid_input("time stamps are not equidistant"));
            }
        }
        Ok(h)
    }
}

/// `nodes` equidistant stamps on `[0, t_end]`, both ends included.
pub fn uniform_times(nodes: usize, t_end: f64) -> Result<Vec<f64>> {
    if nodes < 2 {
        return Err(invalid_param("a time grid needs at least two nodes"));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(invalid_param(format!("final time must be positive, got {t_end}")));
    }
    let h = t_end / (nodes - 1) as f64;
    Ok((0..nodes).map(|k| if k + 1 == nodes { t_end } else { k as f64 * h }).collect())
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(invalid_param("a time grid needs at least two nodes"));
    }
    if times[0] != 0.0 {
        return Err(invalid_param("the time grid must start at 0"));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|p| p[1] <= p[0]) {
        return Err(invalid_param("time stamps must be finite and strictly increasing"));
    }
    Ok(())
}

/// Number of internal steps needed so that none exceeds `max_step`.
pub fn substeps_for(interval: f64, max_step: f64) -> usize {
    ((interval / max_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RofSolver {
    Chambolle,
    Pdhg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImplicitFlowConfig {
    pub solver: RofSolver,
    /// Inner-solver settings; `lam` is overwritten per step.
    pub inner: RofParams,
    /// Implicit steps per grid interval.
    pub substeps: usize,
}

impl Default for ImplicitFlowConfig {
    fn default() -> Self {
        Self { solver: RofSolver::Chambolle, inner: RofParams::default(), substeps: 4 }
    }
}

/// Per-step diagnostics of a flow run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub steps: Vec<SolveInfo>,
}

impl FlowDiagnostics {
    pub fn unconverged(&self) -> usize {
        self.steps.iter().filter(|s| !s.converged).count()
    }

    pub fn all_converged(&self) -> bool {
        self.unconverged() == 0
    }

    pub fn worst_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.residual).fold(0.0, f64::max)
    }

    pub fn total_iterations(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).sum()
    }
}

#[derive(Debug, Clone)]
pub struct FlowSolution {
    pub trajectory: FlowTrajectory,
    pub diagnostics: FlowDiagnostics,
    /// For the implicit scheme: per grid interval `k`, the time-averaged
    /// diffusivity field with `u_{k+1} = u_k + (t_{k+1} - t_k) div phi_k`.
    pub interval_fields: Option<Vec<VectorField>>,
}

/// Implicit Euler: every internal step of length `dt` solves
/// `argmin_v 1/2 ||u - v||^2 + dt TV(v)`, i.e. `lam = 2 dt` in the
/// `||u - v||^2 + lam TV(v)` form. The dual field is warm-started across steps.
pub fn flow_implicit(u0: &Image, times: &[f64], cfg: &ImplicitFlowConfig) -> Result<FlowSolution> {
    check_grid(times)?;
    if cfg.substeps == 0 {
        return Err(invalid_param("substeps must be at least 1"));
    }
    cfg.inner.validate()?;
    let (h, w) = u0.shape();
    let mut frames = Vec::with_capacity(times.len());
    frames.push(u0.clone());
    let mut fields = Vec::with_capacity(times.len() - 1);
    let mut steps = Vec::new();
    let mut current = u0.clone();
    let mut dual: Option<VectorField> = None;

    for k in 0..times.len() - 1 {
        let interval = times[k + 1] - times[k];
        let dt = interval / cfg.substeps as f64;
        let params = RofParams { lam: 2.0 * dt, ..cfg.inner };
        let mut avg_x = vec![0.0; h * w];
        let mut avg_y = vec![0.0; h * w];
        for _ in 0..cfg.substeps {
            let sol = match cfg.solver {
                RofSolver::Chambolle => rof_chambolle_warm(&current, &params, dual.as_ref())?,
                RofSolver::Pdhg => rof_pdhg_warm(&current, &params, dual.as_ref())?,
            };
            // phi = -p, weighted by the step's share of the interval.
            let wgt = -1.0 / cfg.substeps as f64;
            for (a, v) in avg_x.iter_mut().zip(sol.p.x()) {
                *a += wgt * v;
            }
            for (a, v) in avg_y.iter_mut().zip(sol.p.y()) {
                *a += wgt * v;
            }
            steps.push(sol.info);
            current = sol.u;
            dual = Some(sol.p);
        }
        frames.push(current.clone());
        fields.push(VectorField::from_raw(h, w, avg_x, avg_y));
    }

    Ok(FlowSolution {
        trajectory: FlowTrajectory::new(times.to_vec(), frames)?,
        diagnostics: FlowDiagnostics { steps },
        interval_fields: Some(fields),
    })
}

/// Forward Euler on the regularized subgradient. Intervals are split into the
/// fewest equal steps not exceeding `dt`; `dt` must respect `dt <= eps / 8`.
pub fn flow_explicit_regularized(u0: &Image, times: &[f64], dt: f64, eps: f64) -> Result<FlowSolution> {
    check_grid(times)?;
    if !(eps > 0.0) {
        return Err(invalid_param(format!("eps must be positive, got {eps}")));
    }
    if !(dt > 0.0) {
        return Err(invalid_param(format!("dt must be positive, got {dt}")));
    }
    let cap = eps / 8.0;
    if dt > cap {
        return Err(invalid_param(format!("dt = {dt} exceeds the explicit stability cap eps/8 = {cap}")));
    }
    let (h, w) = u0.shape();
    let n = h * w;
    let mut u = u0.as_slice().to_vec();
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut frames = vec![u0.clone()];
    let mut steps = Vec::new();
    let eps2 = eps * eps;

    for k in 0..times.len() - 1 {
        let interval = times[k + 1] - times[k];
        let m = substeps_for(interval, dt);
        let step = interval / m as f64;
        for _ in 0..m {
            grad_raw(h, w, &u, &mut gx, &mut gy);
            crate::grid::normalize_field(&mut gx, &mut gy, eps2);
            div_raw(h, w, &gx, &gy, &mut d);
            for (a, b) in u.iter_mut().zip(&d) {
                *a += step * b;
            }
        }
        steps.push(SolveInfo { converged: true, iterations: m, residual: 0.0 });
        frames.push(Image::new(h, w, u.clone())?);
    }

    Ok(FlowSolution {
        trajectory: FlowTrajectory::new(times.to_vec(), frames)?,
        diagnostics: FlowDiagnostics { steps },
        interval_fields: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaggedDiffusivityConfig {
    /// Largest internal step.
    pub dt: f64,
    pub eps: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for LaggedDiffusivityConfig {
    fn default() -> Self {
        Self { dt: 0.01, eps: 1e-3, cg_tol: 1e-10, cg_max_iter: 2000 }
    }
}

/// Semi-implicit lagged-diffusivity scheme. Each step solves
/// `(I - dt div(D grad)) u_next = u` with `D = 1 / sqrt(|grad u|^2 + eps^2)`
/// frozen at the current state, by matrix-free conjugate gradients.
pub fn flow_lagged_diffusivity(u0: &Image, times: &[f64], cfg: &LaggedDiffusivityConfig) -> Result<FlowSolution> {
    check_grid(times)?;
    if !(cfg.eps > 0.0) {
        return Err(invalid_param(format!("eps must be positive, got {}", cfg.eps)));
    }
    if !(cfg.dt > 0.0) || !(cfg.cg_tol > 0.0) || cfg.cg_max_iter == 0 {
        return Err(invalid_param("dt, cg_tol and cg_max_iter must be positive"));
    }
    let (h, w) = u0.shape();
    let n = h * w;
    let mut u = u0.as_slice().to_vec();
    let mut frames = vec![u0.clone()];
    let mut steps = Vec::new();
    let mut diff = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let eps2 = cfg.eps * cfg.eps;

    for k in 0..times.len() - 1 {
        let interval = times[k + 1] - times[k];
        let m = substeps_for(interval, cfg.dt);
        let step = interval / m as f64;
        for _ in 0..m {
            grad_raw(h, w, &u, &mut gx, &mut gy);
            for ((d, a), b) in diff.iter_mut().zip(&gx).zip(&gy) {
                *d = 1.0 / (a * a + b * b + eps2).sqrt();
            }
            let op = DiffusionOperator { h, w, dt: step, diffusivity: &diff };
            let rhs = u.clone();
            let info = conjugate_gradient(&op, &rhs, &mut u, cfg.cg_tol, cfg.cg_max_iter);
            steps.push(info);
        }
        frames.push(Image::new(h, w, u.clone())?);
    }

    Ok(FlowSolution {
        trajectory: FlowTrajectory::new(times.to_vec(), frames)?,
        diagnostics: FlowDiagnostics { steps },
        interval_fields: None,
    })
}

/// `v -> v - dt div(D grad v)`, symmetric positive definite.
struct DiffusionOperator<'a> {
    h: usize,
    w: usize,
    dt: f64,
    diffusivity: &'a [f64],
}

impl DiffusionOperator<'_> {
    fn apply(&self, v: &[f64], out: &mut [f64], gx: &mut [f64], gy: &mut [f64]) {
        grad_raw(self.h, self.w, v, gx, gy);
        for ((a, b), d) in gx.iter_mut().zip(gy.iter_mut()).zip(self.diffusivity) {
            *a *= d;
            *b *= d;
        }
        div_raw(self.h, self.w, gx, gy, out);
        for (o, vi) in out.iter_mut().zip(v) {
            *o = vi - self.dt * *o;
        }
    }
}

/// Unpreconditioned CG on `op x = b`, starting from the contents of `x`.
/// Stops when `||r|| <= tol ||b||`.
fn conjugate_gradient(op: &DiffusionOperator, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> SolveInfo {
    let n = b.len();
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut ap = vec![0.0; n];
    op.apply(x, &mut ap, &mut gx, &mut gy);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let b_norm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let mut rr = dot(&r, &r);
    let mut info = SolveInfo { converged: false, iterations: 0, residual: rr.sqrt() / b_norm };
    if info.residual <= tol {
        info.converged = true;
        return info;
    }
    for it in 1..=max_iter {
        op.apply(&p, &mut ap, &mut gx, &mut gy);
        let alpha = rr / dot(&p, &ap);
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        info.iterations = it;
        info.residual = rr_new.sqrt() / b_norm;
        if info.residual <= tol {
            info.converged = true;
            break;
        }
        let beta = rr_new / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_new;
    }
    info
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeOrder {
    First,
    Second,
}

/// Finite-difference time derivative on an equidistant grid: central
/// differences inside, second-order one-sided stencils at both ends.
pub fn temporal_derivative(traj: &FlowTrajectory, order: DerivativeOrder) -> Result<FlowTrajectory> {
    let n = traj.len();
    let needed = match order {
        DerivativeOrder::First => 2,
        DerivativeOrder::Second => 3,
    };
    if n < needed {
        return Err(invalid_input(format!("{order:?} derivative needs at least {needed} frames, got {n}")));
    }
    let h = traj.uniform_step()?;
    let f = traj.frames();
    // Stencils are written as weighted differences of frames so that
    // constant trajectories differentiate to exactly zero.
    let comb = |terms: &[(f64, usize, usize)], scale: f64| -> Image {
        let (hh, ww) = f[0].shape();
        let mut out = vec![0.0; hh * ww];
        for &(c, i, j) in terms {
            for (o, (a, b)) in out.iter_mut().zip(f[i].as_slice().iter().zip(f[j].as_slice())) {
                *o += c * (a - b);
            }
        }
        for o in &mut out {
            *o *= scale;
        }
        Image::from_raw(hh, ww, out)
    };
    let last = n - 1;
    let frames: Vec<Image> = match order {
        DerivativeOrder::First if n == 2 => {
            let d = comb(&[(1.0, 1, 0)], 1.0 / h);
            vec![d.clone(), d]
        }
        DerivativeOrder::First => (0..n)
            .map(|k| {
                let s = 0.5 / h;
                if k == 0 {
                    comb(&[(3.0, 1, 0), (-1.0, 2, 1)], s)
                } else if k == last {
                    comb(&[(3.0, last, last - 1), (-1.0, last - 1, last - 2)], s)
                } else {
                    comb(&[(1.0, k + 1, k - 1)], s)
                }
            })
            .collect(),
        DerivativeOrder::Second => (0..n)
            .map(|k| {
                let s = 1.0 / (h * h);
                if k == 0 {
                    if n >= 4 {
                        comb(&[(2.0, 0, 1), (-3.0, 1, 2), (1.0, 2, 3)], s)
                    } else {
                        comb(&[(1.0, 0, 1), (-1.0, 1, 2)], s)
                    }
                } else if k == last {
                    if n >= 4 {
                        comb(&[(2.0, last, last - 1), (-3.0, last - 1, last - 2), (1.0, last - 2, last - 3)], s)
                    } else {
                        comb(&[(1.0, last, last - 1), (-1.0, last - 1, last - 2)], s)
                    }
                } else {
                    comb(&[(1.0, k + 1, k), (-1.0, k, k - 1)], s)
                }
            })
            .collect(),
    };
    FlowTrajectory::new(traj.times().to_vec(), frames)
}
