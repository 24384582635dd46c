//! Solvers for the ROF denoising problem
//!
//! ```text
//! argmin_v ||f - v||^2 + lam * TV(v)
//! ```
//!
//! Both solvers work with the standard proximal weight `lambda = lam / 2`
//! (i.e. `argmin_v 1/2 ||f - v||^2 + lambda * TV(v)`) and return the primal
//! image together with a dual field `p`, `|p(x)| <= 1`, such that
//! `u = f - lambda * div p`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};
use crate::grid::{div_raw, grad_raw, tv, Image, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RofParams {
    /// Weight of the TV term in `||f - v||^2 + lam * TV(v)`.
    pub lam: f64,
    pub max_iter: usize,
    /// Stop once the max-norm change of the dual field drops below this.
    pub tol: f64,
    /// Dual step of the projection method, at most 1/8.
    pub tau: f64,
}

impl Default for RofParams {
    fn default() -> Self {
        Self { lam: 0.0, max_iter: 2000, tol: 1e-6, tau: 0.125 }
    }
}

impl RofParams {
    pub fn with_lam(lam: f64) -> Self {
        Self { lam, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lam >= 0.0) || !self.lam.is_finite() {
            return Err(invalid_param(format!("lam must be finite and >= 0, got {}", self.lam)));
        }
        if !(self.tol > 0.0) {
            return Err(invalid_param(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.tau > 0.0 && self.tau <= 0.125) {
            return Err(invalid_param(format!("tau must lie in (0, 1/8], got {}", self.tau)));
        }
        if self.max_iter == 0 {
            return Err(invalid_param("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub converged: bool,
    pub iterations: usize,
    /// Last stopping-rule value (max-norm dual change for the ROF solvers,
    /// relative residual for CG).
    pub residual: f64,
}

impl SolveInfo {
    pub(crate) fn trivial() -> Self {
        Self { converged: true, iterations: 0, residual: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct RofSolution {
    pub u: Image,
    pub p: VectorField,
    pub info: SolveInfo,
}

/// `||f - v||^2 + lam * TV(v)`
pub fn rof_energy(f: &Image, v: &Image, lam: f64) -> f64 {
    let d = f.distance(v);
    d * d + lam * tv(v)
}

/// Chambolle's dual projection iteration.
pub fn rof_chambolle(f: &Image, params: &RofParams) -> Result<RofSolution> {
    rof_chambolle_warm(f, params, None)
}

/// [`rof_chambolle`] started from a given dual field.
pub fn rof_chambolle_warm(f: &Image, params: &RofParams, warm: Option<&VectorField>) -> Result<RofSolution> {
    params.validate()?;
    let (h, w) = f.shape();
    if let Some(p) = warm {
        if p.shape() != f.shape() {
            return Err(crate::error::invalid_input("warm-start field shape differs from image"));
        }
    }
    if params.lam == 0.0 {
        return Ok(RofSolution { u: f.clone(), p: VectorField::zeros(h, w)?, info: SolveInfo::trivial() });
    }
    let lambda = 0.5 * params.lam;
    let tau = params.tau;
    let n = h * w;
    let (mut px, mut py) = match warm {
        Some(p) => (p.x().to_vec(), p.y().to_vec()),
        None => (vec![0.0; n], vec![0.0; n]),
    };
    let fs = f.as_slice();
    let mut d = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    let mut info = SolveInfo { converged: false, iterations: 0, residual: f64::INFINITY };
    let tv_f = tv(f);

    for it in 1..=params.max_iter {
        div_raw(h, w, &px, &py, &mut d);
        for (dk, fk) in d.iter_mut().zip(fs) {
            *dk -= fk / lambda;
        }
        grad_raw(h, w, &d, &mut gx, &mut gy);
        let mut change: f64 = 0.0;
        for k in 0..n {
            let mag = (gx[k] * gx[k] + gy[k] * gy[k]).sqrt();
            let denom = 1.0 + tau * mag;
            let nx = (px[k] + tau * gx[k]) / denom;
            let ny = (py[k] + tau * gy[k]) / denom;
            change = change.max((nx - px[k]).abs()).max((ny - py[k]).abs());
            px[k] = nx;
            py[k] = ny;
        }
        info.iterations = it;
        info.residual = change;
        if change < params.tol {
            div_raw(h, w, &px, &py, &mut d);
            if descent_certified(h, w, fs, &d, lambda, tv_f) {
                info.converged = true;
                break;
            }
        }
    }

    div_raw(h, w, &px, &py, &mut d);
    let u: Vec<f64> = fs.iter().zip(&d).map(|(fk, dk)| fk - lambda * dk).collect();
    Ok(RofSolution { u: Image::from_raw(h, w, u), p: VectorField::from_raw(h, w, px, py), info })
}

/// Accelerated primal-dual hybrid gradient on the saddle-point form
/// `min_u max_{|y| <= lambda} <grad u, y> + 1/2 ||u - f||^2`.
pub fn rof_pdhg(f: &Image, params: &RofParams) -> Result<RofSolution> {
    rof_pdhg_impl(f, params, None, 0).map(|(s, _)| s)
}

/// [`rof_pdhg`] started from a given dual field.
pub fn rof_pdhg_warm(f: &Image, params: &RofParams, warm: Option<&VectorField>) -> Result<RofSolution> {
    rof_pdhg_impl(f, params, warm, 0).map(|(s, _)| s)
}

/// [`rof_pdhg`] that additionally records `(iteration, primal-dual gap)` every
/// `gap_every` iterations. The gap is measured in the `1/2 ||u - f||^2` scaling.
pub fn rof_pdhg_traced(f: &Image, params: &RofParams, gap_every: usize) -> Result<(RofSolution, Vec<(usize, f64)>)> {
    rof_pdhg_impl(f, params, None, gap_every.max(1))
}

fn rof_pdhg_impl(
    f: &Image,
    params: &RofParams,
    warm: Option<&VectorField>,
    gap_every: usize,
) -> Result<(RofSolution, Vec<(usize, f64)>)> {
    params.validate()?;
    let (h, w) = f.shape();
    if params.lam == 0.0 {
        return Ok((
            RofSolution { u: f.clone(), p: VectorField::zeros(h, w)?, info: SolveInfo::trivial() },
            Vec::new(),
        ));
    }
    let lambda = 0.5 * params.lam;
    let n = h * w;
    let fs = f.as_slice();

    // y = -lambda * p
    let (mut yx, mut yy) = match warm {
        Some(p) => (
            p.x().iter().map(|v| -lambda * v).collect::<Vec<_>>(),
            p.y().iter().map(|v| -lambda * v).collect::<Vec<_>>(),
        ),
        None => (vec![0.0; n], vec![0.0; n]),
    };
    let mut d = vec![0.0; n];
    div_raw(h, w, &yx, &yy, &mut d);
    let mut u: Vec<f64> = fs.iter().zip(&d).map(|(a, b)| a + b).collect();
    let mut ubar = u.clone();
    let mut u_prev = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];

    // sigma * tau * 8 <= 1; strong convexity 1 of the data term drives acceleration.
    let mut tau = 1.0 / 8f64.sqrt();
    let mut sigma = 1.0 / 8f64.sqrt();
    let gamma = 1.0;

    let tv_f = tv(f);
    let mut trace = Vec::new();
    let mut info = SolveInfo { converged: false, iterations: 0, residual: f64::INFINITY };

    for it in 1..=params.max_iter {
        grad_raw(h, w, &ubar, &mut gx, &mut gy);
        let mut dual_change: f64 = 0.0;
        for k in 0..n {
            let ax = yx[k] + sigma * gx[k];
            let ay = yy[k] + sigma * gy[k];
            let mag = (ax * ax + ay * ay).sqrt();
            let s = if mag > lambda { lambda / mag } else { 1.0 };
            let (nx, ny) = (ax * s, ay * s);
            dual_change = dual_change.max((nx - yx[k]).abs()).max((ny - yy[k]).abs());
            yx[k] = nx;
            yy[k] = ny;
        }
        div_raw(h, w, &yx, &yy, &mut d);
        u_prev.copy_from_slice(&u);
        let mut primal_change: f64 = 0.0;
        for k in 0..n {
            let nu = (u[k] + tau * d[k] + tau * fs[k]) / (1.0 + tau);
            primal_change = primal_change.max((nu - u[k]).abs());
            u[k] = nu;
        }
        let theta = 1.0 / (1.0 + 2.0 * gamma * tau).sqrt();
        tau *= theta;
        sigma /= theta;
        for k in 0..n {
            ubar[k] = u[k] + theta * (u[k] - u_prev[k]);
        }

        if gap_every > 0 && it % gap_every == 0 {
            trace.push((it, primal_dual_gap(h, w, fs, &u, &yx, &yy, lambda)));
        }

        let change = (dual_change / lambda).max(primal_change / lambda);
        info.iterations = it;
        info.residual = change;
        if change < params.tol && primal_descent(h, w, fs, &u, lambda, tv_f) {
            info.converged = true;
            break;
        }
    }

    let px: Vec<f64> = yx.iter().map(|v| -v / lambda).collect();
    let py: Vec<f64> = yy.iter().map(|v| -v / lambda).collect();
    Ok((
        RofSolution { u: Image::from_raw(h, w, u), p: VectorField::from_raw(h, w, px, py), info },
        trace,
    ))
}

/// The stopping rule also requires the iterate to be no worse than the prox
/// center itself, `1/2 ||u - f||^2 + lambda TV(u) <= lambda TV(f)`, which
/// implies `TV(u) <= TV(f)`.
fn primal_descent(h: usize, w: usize, f: &[f64], u: &[f64], lambda: f64, tv_f: f64) -> bool {
    let n = h * w;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    grad_raw(h, w, u, &mut gx, &mut gy);
    let tv_u: f64 = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).sum();
    let fid: f64 = u.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * fid + lambda * tv_u <= lambda * tv_f
}

/// [`primal_descent`] for the primal `u = f - lambda * div_p`.
fn descent_certified(h: usize, w: usize, f: &[f64], div_p: &[f64], lambda: f64, tv_f: f64) -> bool {
    let u: Vec<f64> = f.iter().zip(div_p).map(|(a, b)| a - lambda * b).collect();
    primal_descent(h, w, f, &u, lambda, tv_f)
}

fn primal_dual_gap(h: usize, w: usize, f: &[f64], u: &[f64], yx: &[f64], yy: &[f64], lambda: f64) -> f64 {
    let n = h * w;
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    grad_raw(h, w, u, &mut gx, &mut gy);
    let tv_u: f64 = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).sum();
    let fid: f64 = u.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
    let primal = 0.5 * fid + lambda * tv_u;
    let mut d = vec![0.0; n];
    div_raw(h, w, yx, yy, &mut d);
    let dual: f64 = -f.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() - 0.5 * d.iter().map(|v| v * v).sum::<f64>();
    primal - dual
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(h: usize, w: usize, seed: u64) -> Image {
        let mut s = seed.wrapping_add(0x9E3779B97F4A7C15);
        Image::from_fn(h, w, |_, _| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
        .unwrap()
    }

    #[test]
    fn zero_weight_is_identity() {
        let f = noise(8, 8, 1);
        for sol in [
            rof_chambolle(&f, &RofParams::with_lam(0.0)).unwrap(),
            rof_pdhg(&f, &RofParams::with_lam(0.0)).unwrap(),
        ] {
            assert_eq!(sol.u, f);
            assert!(sol.p.x().iter().chain(sol.p.y()).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constant_input_is_fixed() {
        let f = Image::filled(10, 10, 0.4).unwrap();
        let a = rof_chambolle(&f, &RofParams::with_lam(0.5)).unwrap();
        let b = rof_pdhg(&f, &RofParams::with_lam(0.5)).unwrap();
        assert!(a.u.max_abs_diff(&f) < 1e-12);
        assert!(b.u.max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn negative_weight_rejected() {
        let f = noise(4, 4, 2);
        assert!(rof_chambolle(&f, &RofParams::with_lam(-0.1)).is_err());
        let bad_tau = RofParams { tau: 0.25, ..RofParams::with_lam(0.1) };
        assert!(rof_chambolle(&f, &bad_tau).is_err());
    }

    #[test]
    fn dual_field_is_feasible_and_reproduces_primal() {
        let f = noise(16, 16, 3);
        let params = RofParams { lam: 0.1, tol: 1e-7, max_iter: 20_000, ..RofParams::default() };
        let sol = rof_chambolle(&f, &params).unwrap();
        assert!(sol.info.converged);
        assert!(sol.p.max_magnitude() <= 1.0 + 1e-12);
        let recon = f.axpy(-0.05, &crate::grid::div(&sol.p));
        assert!(recon.max_abs_diff(&sol.u) < 1e-12);
        // Mean is untouched by the divergence.
        assert!((sol.u.mean() - f.mean()).abs() < 1e-14);
    }

    #[test]
    fn solution_beats_nearby_candidates() {
        let f = noise(12, 12, 4);
        let lam = 0.2;
        let params = RofParams { lam, tol: 1e-9, max_iter: 20000, ..RofParams::default() };
        let sol = rof_chambolle(&f, &params).unwrap();
        let e0 = rof_energy(&f, &sol.u, lam);
        let pert = noise(12, 12, 99);
        for s in [1e-2, 1e-3] {
            let v = sol.u.axpy(s, &pert.map(|x| x - 0.5));
            assert!(rof_energy(&f, &v, lam) > e0);
        }
    }

    #[test]
    fn unconverged_solve_is_flagged() {
        let f = noise(16, 16, 5);
        let params = RofParams { lam: 0.5, tol: 1e-14, max_iter: 3, ..RofParams::default() };
        let sol = rof_chambolle(&f, &params).unwrap();
        assert!(!sol.info.converged);
        assert_eq!(sol.info.iterations, 3);
        assert!(sol.info.residual > 0.0);
    }

    #[test]
    fn solvers_agree_on_disk() {
        let f = Image::from_fn(16, 16, |i, j| {
            let (dy, dx) = (i as f64 - 7.5, j as f64 - 7.5);
            if dx * dx + dy * dy <= 25.0 { 1.0 } else { 0.0 }
        })
        .unwrap();
        let params = RofParams { lam: 0.3, tol: 1e-8, max_iter: 200_000, ..RofParams::default() };
        let a = rof_chambolle(&f, &params).unwrap();
        let b = rof_pdhg(&f, &params).unwrap();
        assert!(a.info.converged && b.info.converged);
        assert!(a.u.max_abs_diff(&b.u) <= 1e-4, "{}", a.u.max_abs_diff(&b.u));
    }

    #[test]
    fn pdhg_gap_decreases_after_burn_in() {
        let f = noise(16, 16, 6);
        let params = RofParams { lam: 0.2, tol: 1e-12, max_iter: 2000, ..RofParams::default() };
        let (_, trace) = rof_pdhg_traced(&f, &params, 25).unwrap();
        let tail: Vec<f64> = trace.iter().filter(|(it, _)| *it >= 100).map(|(_, g)| *g).collect();
        assert!(tail.len() > 10);
        for pair in tail.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-9), "gap rose: {pair:?}");
        }
        assert!(tail.iter().all(|&g| g >= -1e-9));
    }
}
