//! Spectral TV decomposition of a flow trajectory.
//!
//! The transform is `phi(t) = t u_tt(t)`; integrating it over `[0, T]` and
//! adding the residual `u(T) - T u_t(T)` recovers `u(0)`.

use crate::error::{invalid_input, invalid_param, Result};
use crate::flow::{temporal_derivative, DerivativeOrder, FlowTrajectory};
use crate::grid::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralStack {
    times: Vec<f64>,
    responses: Vec<Image>,
}

impl SpectralStack {
    pub fn new(times: Vec<f64>, responses: Vec<Image>) -> Result<Self> {
        if times.len() != responses.len() || times.len() < 2 {
            return Err(invalid_input("a spectral stack needs matching times and responses, at least two"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid_input("times must be strictly increasing"));
        }
        let shape = responses[0].shape();
        if responses.iter().any(|r| r.shape() != shape) {
            return Err(invalid_input("responses differ in shape"));
        }
        Ok(Self { times, responses })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn responses(&self) -> &[Image] {
        &self.responses
    }

    pub fn shape(&self) -> (usize, usize) {
        self.responses[0].shape()
    }

    /// Total response energy `sum_x |phi(t, x)|` at each node.
    pub fn spectrum(&self) -> Vec<f64> {
        self.responses.iter().map(|r| r.as_slice().iter().map(|v| v.abs()).sum()).collect()
    }
}

pub fn tv_transform(traj: &FlowTrajectory) -> Result<SpectralStack> {
    if traj.len() < 3 {
        return Err(invalid_input(format!("spectral transform needs at least 3 frames, got {}", traj.len())));
    }
    let utt = temporal_derivative(traj, DerivativeOrder::Second)?;
    let responses = utt.frames().iter().zip(traj.times()).map(|(f, &t)| f.scaled(t)).collect();
    SpectralStack::new(traj.times().to_vec(), responses)
}

/// Integral over `[t1, t2]` of the piecewise-linear interpolant of the
/// responses, i.e. the trapezoidal rule with the band edges inserted as
/// extra nodes. Bands therefore add exactly.
pub fn band_pass(stack: &SpectralStack, t1: f64, t2: f64) -> Result<Image> {
    let times = stack.times();
    let (t0, tn) = (times[0], times[times.len() - 1]);
    if !(t1 < t2) {
        return Err(invalid_param(format!("empty band [{t1}, {t2}]")));
    }
    if t1 < t0 || t2 > tn {
        return Err(invalid_param(format!("band [{t1}, {t2}] leaves the time range [{t0}, {tn}]")));
    }
    let (h, w) = stack.shape();
    let mut out = vec![0.0; h * w];
    let r = stack.responses();
    for i in 0..times.len() - 1 {
        let (a, b) = (times[i].max(t1), times[i + 1].min(t2));
        if !(b > a) {
            continue;
        }
        let len = times[i + 1] - times[i];
        let (wa, wb) = ((a - times[i]) / len, (b - times[i]) / len);
        let half = 0.5 * (b - a);
        let (ri, rj) = (r[i].as_slice(), r[i + 1].as_slice());
        for (o, (x, y)) in out.iter_mut().zip(ri.iter().zip(rj)) {
            let va = x + wa * (y - x);
            let vb = x + wb * (y - x);
            *o += half * (va + vb);
        }
    }
    Ok(Image::from_raw(h, w, out))
}

/// `u(T) - T u_t(T)` with the backward one-sided first derivative.
pub fn residual(traj: &FlowTrajectory) -> Result<Image> {
    if traj.len() < 3 {
        return Err(invalid_input(format!("spectral residual needs at least 3 frames, got {}", traj.len())));
    }
    let ut = temporal_derivative(traj, DerivativeOrder::First)?;
    let t_end = traj.final_time();
    Ok(traj.last().axpy(-t_end, ut.last()))
}

/// Inverse transform: full band plus the residual.
pub fn reconstruct(traj: &FlowTrajectory) -> Result<Image> {
    let stack = tv_transform(traj)?;
    let t = stack.times();
    let band = band_pass(&stack, t[0], t[t.len() - 1])?;
    Ok(band.zip_map(&residual(traj)?, |a, b| a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{synth_texture, TextureMode};
    use crate::flow::uniform_times;

    fn affine(nt: usize, seed: u64) -> (FlowTrajectory, Image, Image) {
        let a = synth_texture(6, 7, seed, TextureMode::Uniform).unwrap();
        let b = synth_texture(6, 7, seed + 1, TextureMode::Uniform).unwrap().map(|v| v - 0.5);
        let times = uniform_times(nt, 1.3).unwrap();
        let frames = times.iter().map(|&t| a.axpy(t, &b)).collect();
        (FlowTrajectory::new(times, frames).unwrap(), a, b)
    }

    #[test]
    fn constant_trajectory() {
        let c = Image::filled(5, 5, 0.7).unwrap();
        let traj = FlowTrajectory::new(uniform_times(6, 1.0).unwrap(), vec![c.clone(); 6]).unwrap();
        let s = tv_transform(&traj).unwrap();
        assert!(s.responses().iter().all(|r| r.max_abs() == 0.0));
        assert_eq!(reconstruct(&traj).unwrap(), c);
    }

    #[test]
    fn linear_in_time_is_exact() {
        for nt in [3, 4, 9] {
            let (traj, a, _) = affine(nt, 3);
            let s = tv_transform(&traj).unwrap();
            assert!(s.responses().iter().all(|r| r.max_abs() < 1e-10));
            assert!(reconstruct(&traj).unwrap().max_abs_diff(&a) <= 1e-10);
        }
    }

    #[test]
    fn bands_are_additive() {
        let frames: Vec<Image> = (0..7).map(|k| synth_texture(5, 5, k, TextureMode::Uniform).unwrap()).collect();
        let traj = FlowTrajectory::new(uniform_times(7, 1.0).unwrap(), frames).unwrap();
        let s = tv_transform(&traj).unwrap();
        for (t1, t2, t3) in [(0.0, 0.4, 1.0), (0.05, 1.0 / 3.0, 0.71), (0.2, 0.21, 0.9)] {
            let lhs = band_pass(&s, t1, t2).unwrap().zip_map(&band_pass(&s, t2, t3).unwrap(), |a, b| a + b);
            assert!(lhs.max_abs_diff(&band_pass(&s, t1, t3).unwrap()) <= 1e-12);
        }
    }

    #[test]
    fn full_band_plus_residual_is_reconstruction() {
        let frames: Vec<Image> = (0..5).map(|k| synth_texture(5, 5, 10 + k, TextureMode::Smooth).unwrap()).collect();
        let traj = FlowTrajectory::new(uniform_times(5, 2.0).unwrap(), frames).unwrap();
        let s = tv_transform(&traj).unwrap();
        let sum = band_pass(&s, 0.0, 2.0).unwrap().zip_map(&residual(&traj).unwrap(), |a, b| a + b);
        assert_eq!(sum, reconstruct(&traj).unwrap());
    }

    // On a uniform grid the quadrature telescopes; what survives is the
    // gap between the four-point and three-point end stencils for u_tt,
    // which is (N/2) times the third backward difference at T.
    #[test]
    fn reconstruction_error_is_last_third_difference() {
        let frames: Vec<Image> = (0..9).map(|k| synth_texture(4, 5, 30 + k, TextureMode::Uniform).unwrap()).collect();
        let traj = FlowTrajectory::new(uniform_times(9, 0.8).unwrap(), frames.clone()).unwrap();
        let half_n = 0.5 * (frames.len() - 1) as f64;
        let f = |k: usize| frames[frames.len() - 1 - k].as_slice();
        let expected = Image::from_fn(4, 5, |i, j| {
            let p = i * 5 + j;
            frames[0].as_slice()[p] + half_n * (f(0)[p] - 3.0 * f(1)[p] + 3.0 * f(2)[p] - f(3)[p])
        })
        .unwrap();
        assert!(reconstruct(&traj).unwrap().max_abs_diff(&expected) <= 1e-12);
    }

    #[test]
    fn reconstruction_is_linear() {
        let frames: Vec<Image> = (0..6).map(|k| synth_texture(5, 5, 20 + k, TextureMode::Uniform).unwrap()).collect();
        let traj = FlowTrajectory::new(uniform_times(6, 1.0).unwrap(), frames).unwrap();
        let r = reconstruct(&traj).unwrap();
        let r3 = reconstruct(&traj.scaled(3.0)).unwrap();
        assert!(r3.max_abs_diff(&r.scaled(3.0)) <= 1e-12 * r.max_abs().max(1.0) * 10.0);
    }

    #[test]
    fn invalid_bands_and_short_trajectories() {
        let (traj, _, _) = affine(5, 1);
        let s = tv_transform(&traj).unwrap();
        assert!(band_pass(&s, 0.5, 0.2).is_err());
        assert!(band_pass(&s, 0.5, 0.5).is_err());
        assert!(band_pass(&s, -0.1, 0.5).is_err());
        assert!(band_pass(&s, 0.1, 2.0).is_err());
        let short = FlowTrajectory::new(uniform_times(2, 1.0).unwrap(), traj.frames()[..2].to_vec()).unwrap();
        assert!(tv_transform(&short).is_err());
        assert!(reconstruct(&short).is_err());
    }
}
