//! Direct minimization of the PDE-residual loss over a fixed space-time grid.
//!
//! The state is a stack of images `u_k` and diffusivity fields `phi_k` on
//! `Nt` equidistant nodes. The loss is
//!
//! ```text
//! L = sum_k dt ||(u_{k+1} - u_k)/dt - div phi_k||^2            residual
//!   + a1 sum_k dt (<u_k, div phi_k> + TV_eps(u_k))^2           pairing
//!   + sum_k dt sum_x (|phi_k(x)| - 1)_+                        constraint
//!   + ||u0 - u_0||^2                                           initial
//!   + a2 sum_k dt ||div phi_k||^2                              min_norm
//! ```
//!
//! with every time sum a left-endpoint rule over the `Nt - 1` intervals, so
//! the last field slice does not enter the loss. Pixel sums carry unit area.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::flow::{uniform_times, FlowSolution};
use crate::grid::{div_raw, grad_raw, normalize_field, regularized_unit_gradient, zero_boundary, Image, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub eps_tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha1: 1e-4, alpha2: 1e-4, eps_tv: 1e-6 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(invalid_param("loss weights must be nonnegative"));
        }
        if !(self.eps_tv > 0.0) {
            return Err(invalid_param("eps_tv must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub epochs: usize,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { lr: 5e-3, beta1: 0.9, beta2: 0.999, eps_adam: 1e-8, epochs: 2000 }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(invalid_param("lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid_param("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.eps_adam >= 0.0) {
            return Err(invalid_param("eps_adam must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub residual: f64,
    pub pairing: f64,
    pub constraint: f64,
    pub initial: f64,
    pub min_norm: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn finish(mut self, w: &LossWeights) -> Self {
        self.total = self.residual + w.alpha1 * self.pairing + self.constraint + self.initial + w.alpha2 * self.min_norm;
        self
    }
}

/// Jointly optimized `(u, phi)` stacks on an equidistant grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeState {
    times: Vec<f64>,
    u: Vec<Image>,
    phi: Vec<VectorField>,
}

impl SpaceTimeState {
    pub fn new(times: Vec<f64>, u: Vec<Image>, phi: Vec<VectorField>) -> Result<Self> {
        if times.len() < 2 {
            return Err(invalid_input("a space-time state needs at least two time nodes"));
        }
        if u.len() != times.len() || phi.len() != times.len() {
            return Err(invalid_input("u and phi stacks must have one slice per time node"));
        }
        if times[0] != 0.0 {
            return Err(invalid_input("time grid must start at 0"));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if !(dt > 0.0) || times.windows(2).any(|p| ((p[1] - p[0]) - dt).abs() > 1e-9 * dt) {
            return Err(invalid_input("time grid must be equidistant and increasing"));
        }
        let shape = u[0].shape();
        if u.iter().any(|s| s.shape() != shape) || phi.iter().any(|s| s.shape() != shape) {
            return Err(invalid_input("all slices must share one spatial shape"));
        }
        Ok(Self { times, u, phi })
    }

    /// `u_k = u0` and `phi_k = grad u0 / sqrt(|grad u0|^2 + eps^2)` on
    /// `nt` equidistant nodes of `[0, t_end]`.
    pub fn initial(u0: &Image, nt: usize, t_end: f64, phi_eps: f64) -> Result<Self> {
        if !(phi_eps > 0.0) {
            return Err(invalid_param("phi initialization eps must be positive"));
        }
        let times = uniform_times(nt, t_end)?;
        let phi0 = regularized_unit_gradient(u0, phi_eps);
        Self::new(times, vec![u0.clone(); nt], vec![phi0; nt])
    }

    /// State assembled from an implicit-flow run whose grid matches: `u_k`
    /// are its frames and `phi_k` the interval-averaged fields, so that the
    /// residual term vanishes up to solver accuracy. The last field slice
    /// repeats the last interval field.
    pub fn from_implicit_flow(sol: &FlowSolution) -> Result<Self> {
        let fields = sol
            .interval_fields
            .as_ref()
            .ok_or_else(|| invalid_input("flow solution carries no interval fields"))?;
        let mut phi = fields.clone();
        phi.push(fields.last().cloned().ok_or_else(|| invalid_input("empty flow"))?);
        Self::new(sol.trajectory.times().to_vec(), sol.trajectory.frames().to_vec(), phi)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn u(&self) -> &[Image] {
        &self.u
    }

    pub fn phi(&self) -> &[VectorField] {
        &self.phi
    }

    pub fn nt(&self) -> usize {
        self.times.len()
    }

    pub fn dt(&self) -> f64 {
        (self.times[self.nt() - 1] - self.times[0]) / (self.nt() - 1) as f64
    }

    pub fn shape(&self) -> (usize, usize) {
        self.u[0].shape()
    }

    fn layout(&self) -> Layout {
        let (h, w) = self.shape();
        Layout { h, w, nt: self.nt(), dt: self.dt() }
    }

    /// Flat parameter vector `[u_0..u_{Nt-1}, phi_x.., phi_y..]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.nt() * self.u[0].len());
        for s in &self.u {
            out.extend_from_slice(s.as_slice());
        }
        for f in &self.phi {
            out.extend_from_slice(f.x());
        }
        for f in &self.phi {
            out.extend_from_slice(f.y());
        }
        out
    }

    fn from_flat(times: Vec<f64>, lay: &Layout, flat: &[f64]) -> Result<Self> {
        let n = lay.h * lay.w;
        let nt = lay.nt;
        let mut u = Vec::with_capacity(nt);
        let mut phi = Vec::with_capacity(nt);
        for k in 0..nt {
            u.push(Image::new(lay.h, lay.w, flat[k * n..(k + 1) * n].to_vec())?);
        }
        for k in 0..nt {
            let x = flat[(nt + k) * n..(nt + k + 1) * n].to_vec();
            let y = flat[(2 * nt + k) * n..(2 * nt + k + 1) * n].to_vec();
            phi.push(VectorField::new(lay.h, lay.w, x, y)?);
        }
        Self::new(times, u, phi)
    }

    /// Divergence of every field slice.
    pub fn div_phi(&self) -> Vec<Image> {
        self.phi.iter().map(crate::grid::div).collect()
    }
}

/// Gradient of the loss total with respect to every state entry; fixed
/// boundary entries of the fields carry zero.
#[derive(Debug, Clone)]
pub struct StateGradient {
    pub u: Vec<Image>,
    pub phi: Vec<VectorField>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    h: usize,
    w: usize,
    nt: usize,
    dt: f64,
}

/// Evaluates the loss and, when `grad` is given, writes its gradient
/// (same flat layout as [`SpaceTimeState::to_flat`]).
fn evaluate(lay: &Layout, x: &[f64], u0: &[f64], wts: &LossWeights, mut grad: Option<&mut [f64]>) -> LossBreakdown {
    let Layout { h, w, nt, dt } = *lay;
    let n = h * w;
    let u = |k: usize| &x[k * n..(k + 1) * n];
    let px = |k: usize| &x[(nt + k) * n..(nt + k + 1) * n];
    let py = |k: usize| &x[(2 * nt + k) * n..(2 * nt + k + 1) * n];

    let mut d = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut tv_div = vec![0.0; n];
    let mut comb = vec![0.0; n];
    let mut out = LossBreakdown::default();

    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }

    for k in 0..nt - 1 {
        let (uk, uk1) = (u(k), u(k + 1));
        div_raw(h, w, px(k), py(k), &mut d);

        let mut res = 0.0;
        let mut dd = 0.0;
        let mut ud = 0.0;
        for i in 0..n {
            r[i] = (uk1[i] - uk[i]) / dt - d[i];
            res += r[i] * r[i];
            dd += d[i] * d[i];
            ud += uk[i] * d[i];
        }
        out.residual += dt * res;
        out.min_norm += dt * dd;

        grad_raw(h, w, uk, &mut gx, &mut gy);
        let mut tv_eps = 0.0;
        for i in 0..n {
            tv_eps += (gx[i] * gx[i] + gy[i] * gy[i] + wts.eps_tv).sqrt();
        }
        let s = ud + tv_eps;
        out.pairing += dt * s * s;

        let mut hinge = 0.0;
        let (fx, fy) = (px(k), py(k));
        for i in 0..n {
            let m = (fx[i] * fx[i] + fy[i] * fy[i]).sqrt();
            if m > 1.0 {
                hinge += m - 1.0;
            }
        }
        out.constraint += dt * hinge;

        let Some(g) = grad.as_deref_mut() else { continue };

        // d/du: residual couples k and k+1; pairing acts on u_k through
        // <u_k, div phi_k> and grad TV_eps(u_k) = -div(grad u / sqrt(.)).
        normalize_field(&mut gx, &mut gy, wts.eps_tv);
        div_raw(h, w, &gx, &gy, &mut tv_div);
        let cp = wts.alpha1 * 2.0 * dt * s;
        {
            let (lo, hi) = g.split_at_mut((k + 1) * n);
            let gk = &mut lo[k * n..];
            let gk1 = &mut hi[..n];
            for i in 0..n {
                gk[i] += -2.0 * r[i] + cp * (d[i] - tv_div[i]);
                gk1[i] += 2.0 * r[i];
            }
        }

        // d/dphi: every div-coupled term is (-div)^T = grad of one image.
        for i in 0..n {
            comb[i] = 2.0 * dt * r[i] - cp * uk[i] - wts.alpha2 * 2.0 * dt * d[i];
        }
        grad_raw(h, w, &comb, &mut gx, &mut gy);
        let (gpx, gpy) = {
            let (lo, hi) = g.split_at_mut((2 * nt) * n);
            (&mut lo[(nt + k) * n..(nt + k + 1) * n], &mut hi[k * n..(k + 1) * n])
        };
        for i in 0..n {
            let m = (fx[i] * fx[i] + fy[i] * fy[i]).sqrt();
            let (hx, hy) = if m > 1.0 { (dt * fx[i] / m, dt * fy[i] / m) } else { (0.0, 0.0) };
            gpx[i] = gx[i] + hx;
            gpy[i] = gy[i] + hy;
        }
        zero_boundary(h, w, gpx, gpy);
    }

    let u_first = u(0);
    let mut init = 0.0;
    for i in 0..n {
        let e = u0[i] - u_first[i];
        init += e * e;
    }
    out.initial = init;
    if let Some(g) = grad {
        for i in 0..n {
            g[i] += -2.0 * (u0[i] - u_first[i]);
        }
    }
    out.finish(wts)
}

fn check_inputs(state: &SpaceTimeState, u0: &Image, w: &LossWeights) -> Result<()> {
    w.validate()?;
    if state.shape() != u0.shape() {
        return Err(invalid_input(format!(
            "initial image {:?} does not match state {:?}",
            u0.shape(),
            state.shape()
        )));
    }
    Ok(())
}

pub fn loss(state: &SpaceTimeState, u0: &Image, w: &LossWeights) -> Result<LossBreakdown> {
    check_inputs(state, u0, w)?;
    Ok(evaluate(&state.layout(), &state.to_flat(), u0.as_slice(), w, None))
}

pub fn loss_grad(state: &SpaceTimeState, u0: &Image, w: &LossWeights) -> Result<StateGradient> {
    check_inputs(state, u0, w)?;
    let lay = state.layout();
    let flat = state.to_flat();
    let mut g = vec![0.0; flat.len()];
    evaluate(&lay, &flat, u0.as_slice(), w, Some(&mut g));
    let n = lay.h * lay.w;
    let nt = lay.nt;
    let u = (0..nt).map(|k| Image::from_raw(lay.h, lay.w, g[k * n..(k + 1) * n].to_vec())).collect();
    let phi = (0..nt)
        .map(|k| {
            VectorField::from_raw(
                lay.h,
                lay.w,
                g[(nt + k) * n..(nt + k + 1) * n].to_vec(),
                g[(2 * nt + k) * n..(2 * nt + k + 1) * n].to_vec(),
            )
        })
        .collect();
    Ok(StateGradient { u, phi })
}

/// First and second moment estimates of Adam plus its step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamMoments {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], moments: &mut AdamMoments, cfg: &AdamParams) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), moments.m.len());
    moments.step += 1;
    let t = moments.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        params[i] -= cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.eps_adam);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeConfig {
    pub nt: usize,
    pub t_end: f64,
    pub weights: LossWeights,
    pub adam: AdamParams,
    /// Regularization of the initial field `grad u0 / sqrt(|grad u0|^2 + eps^2)`.
    pub phi_init_eps: f64,
}

impl Default for SpaceTimeConfig {
    fn default() -> Self {
        Self { nt: 50, t_end: 1.0, weights: LossWeights::default(), adam: AdamParams::default(), phi_init_eps: 1e-3 }
    }
}

#[derive(Debug, Clone)]
pub struct SpaceTimeResult {
    pub state: SpaceTimeState,
    /// Loss at the start of every epoch, before its update.
    pub history: Vec<LossBreakdown>,
}

/// Runs `cfg.adam.epochs` full-batch Adam iterations on the whole state.
pub fn optimize(u0: &Image, cfg: &SpaceTimeConfig) -> Result<SpaceTimeResult> {
    optimize_from(u0, SpaceTimeState::initial(u0, cfg.nt, cfg.t_end, cfg.phi_init_eps)?, &cfg.weights, &cfg.adam)
}

/// Like [`optimize`] but starting from an arbitrary state.
pub fn optimize_from(u0: &Image, init: SpaceTimeState, w: &LossWeights, adam: &AdamParams) -> Result<SpaceTimeResult> {
    check_inputs(&init, u0, w)?;
    adam.validate()?;
    let lay = init.layout();
    let times = init.times.clone();
    let mut x = init.to_flat();
    let mut g = vec![0.0; x.len()];
    let mut moments = AdamMoments::new(x.len());
    let mut history = Vec::with_capacity(adam.epochs);

    for epoch in 0..adam.epochs {
        let l = evaluate(&lay, &x, u0.as_slice(), w, Some(&mut g));
        if !l.total.is_finite() {
            return Err(Error::Diverged { epoch, detail: format!("loss became {}", l.total) });
        }
        history.push(l);
        adam_step(&mut x, &g, &mut moments, adam);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged { epoch: adam.epochs, detail: "non-finite state after the final update".into() });
    }
    let state = if adam.epochs == 0 { init } else { SpaceTimeState::from_flat(times, &lay, &x)? };
    Ok(SpaceTimeResult { state, history })
}
