//! Image metrics and the protocol runners built on them.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Result};
use crate::flow::{
    flow_explicit_regularized, flow_implicit, flow_lagged_diffusivity, FlowTrajectory, ImplicitFlowConfig,
    LaggedDiffusivityConfig,
};
use crate::grid::Image;
use crate::spacetime::{optimize, SpaceTimeConfig};

/// PSNR in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if !(peak > 0.0) {
        return Err(invalid_param("psnr peak must be positive"));
    }
    let mse = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Side of the square SSIM window; smaller frames get no SSIM.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows, dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with_range(a, b, 1.0)
}

pub fn ssim_with_range(a: &Image, b: &Image, range: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if !(range > 0.0) {
        return Err(invalid_param("ssim dynamic range must be positive"));
    }
    let (h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid_input(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}")));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let (xa, xb) = (a.as_slice(), b.as_slice());
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=h - SSIM_WINDOW {
        for j0 in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (di, gi) in g.iter().enumerate() {
                let row = (i0 + di) * w + j0;
                for (dj, gj) in g.iter().enumerate() {
                    let wt = gi * gj;
                    let (x, y) = (xa[row + dj], xb[row + dj]);
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetric {
    pub time: f64,
    /// `None` when the frames are identical.
    pub psnr: Option<f64>,
    /// `None` for frames smaller than the SSIM window.
    pub ssim: Option<f64>,
    pub identical: bool,
    /// Set when the node lies outside the range a method can be evaluated on.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

impl Summary {
    /// Mean and population standard deviation of `values`.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean: Some(mean), std: Some(var.sqrt()), count: values.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub height: usize,
    pub width: usize,
    pub times: Vec<f64>,
    pub nodes: Vec<NodeMetric>,
    /// Over nodes that are neither identical nor extrapolated.
    pub psnr: Summary,
    /// Over nodes that are not extrapolated.
    pub ssim: Summary,
    pub identical_nodes: usize,
    pub extrapolated_nodes: usize,
}

impl MetricReport {
    fn from_nodes(method: impl Into<String>, shape: (usize, usize), nodes: Vec<NodeMetric>) -> Self {
        let psnrs: Vec<f64> = nodes.iter().filter(|n| !n.extrapolated).filter_map(|n| n.psnr).collect();
        let ssims: Vec<f64> = nodes.iter().filter(|n| !n.extrapolated).filter_map(|n| n.ssim).collect();
        Self {
            method: method.into(),
            height: shape.0,
            width: shape.1,
            times: nodes.iter().map(|n| n.time).collect(),
            psnr: Summary::of(&psnrs),
            ssim: Summary::of(&ssims),
            identical_nodes: nodes.iter().filter(|n| n.identical).count(),
            extrapolated_nodes: nodes.iter().filter(|n| n.extrapolated).count(),
            nodes,
        }
    }

    /// True when every evaluated node is identical.
    pub fn all_identical(&self) -> bool {
        self.nodes.iter().all(|n| n.extrapolated || n.identical)
    }
}

fn node_metric(time: f64, a: &Image, b: &Image, peak: f64, extrapolated: bool) -> Result<NodeMetric> {
    let p = psnr(a, b, peak)?;
    let s = if a.height() >= SSIM_WINDOW && a.width() >= SSIM_WINDOW { Some(ssim_with_range(a, b, peak)?) } else { None };
    Ok(NodeMetric { time, psnr: p.is_finite().then_some(p), ssim: s, identical: p.is_infinite(), extrapolated })
}

/// Per-node PSNR (peak 1) and SSIM of `candidate` frames against `reference`.
pub fn compare_methods(reference: &FlowTrajectory, candidate: &FlowTrajectory) -> Result<MetricReport> {
    compare_with_peak(reference, candidate, 1.0, "compare")
}

pub fn compare_with_peak(reference: &FlowTrajectory, candidate: &FlowTrajectory, peak: f64, method: &str) -> Result<MetricReport> {
    if reference.shape() != candidate.shape() {
        return Err(invalid_input("trajectories differ in spatial shape"));
    }
    if reference.len() != candidate.len()
        || reference.times().iter().zip(candidate.times()).any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0))
    {
        return Err(invalid_input("trajectories are on different time grids"));
    }
    let nodes = reference
        .times()
        .iter()
        .zip(reference.frames().iter().zip(candidate.frames()))
        .map(|(&t, (r, c))| node_metric(t, r, c, peak, false))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_nodes(method, reference.shape(), nodes))
}

/// Aggregate over a dataset: statistics of the per-image mean values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub images: Vec<MetricReport>,
    pub psnr: Summary,
    pub ssim: Summary,
}

impl DatasetReport {
    pub fn new(images: Vec<MetricReport>) -> Self {
        let p: Vec<f64> = images.iter().filter_map(|r| r.psnr.mean).collect();
        let s: Vec<f64> = images.iter().filter_map(|r| r.ssim.mean).collect();
        Self { psnr: Summary::of(&p), ssim: Summary::of(&s), images }
    }
}

/// A flow solver viewed as a map from an initial image and a time grid to
/// a trajectory.
pub trait FlowMethod {
    fn name(&self) -> String;

    fn run(&self, u0: &Image, times: &[f64]) -> Result<FlowTrajectory>;

    /// Largest time the method can be evaluated at, if bounded.
    fn horizon(&self) -> Option<f64> {
        None
    }
}

pub struct ImplicitMethod(pub ImplicitFlowConfig);

impl FlowMethod for ImplicitMethod {
    fn name(&self) -> String {
        "implicit".into()
    }

    fn run(&self, u0: &Image, times: &[f64]) -> Result<FlowTrajectory> {
        Ok(flow_implicit(u0, times, &self.0)?.trajectory)
    }
}

pub struct ExplicitMethod {
    pub dt: f64,
    pub eps: f64,
}

impl FlowMethod for ExplicitMethod {
    fn name(&self) -> String {
        "explicit".into()
    }

    fn run(&self, u0: &Image, times: &[f64]) -> Result<FlowTrajectory> {
        Ok(flow_explicit_regularized(u0, times, self.dt, self.eps)?.trajectory)
    }
}

pub struct LaggedMethod(pub LaggedDiffusivityConfig);

impl FlowMethod for LaggedMethod {
    fn name(&self) -> String {
        "lagged".into()
    }

    fn run(&self, u0: &Image, times: &[f64]) -> Result<FlowTrajectory> {
        Ok(flow_lagged_diffusivity(u0, times, &self.0)?.trajectory)
    }
}

/// Space-time optimization on the requested grid, which must be equidistant
/// from 0; `nt` and `t_end` of the stored config are overridden by it.
pub struct SpaceTimeMethod(pub SpaceTimeConfig);

impl FlowMethod for SpaceTimeMethod {
    fn name(&self) -> String {
        "spacetime".into()
    }

    fn run(&self, u0: &Image, times: &[f64]) -> Result<FlowTrajectory> {
        let t_end = *times.last().ok_or_else(|| invalid_input("empty time grid"))?;
        let cfg = SpaceTimeConfig { nt: times.len(), t_end, ..self.0 };
        let res = optimize(u0, &cfg)?;
        let st = res.state;
        FlowTrajectory::new(st.times().to_vec(), st.u().to_vec())
    }
}

/// Compares `method(c u0)` at `t` with `c method(u0)` at `t / c`, with PSNR
/// peak and SSIM range `c`. Nodes where `t / c` exceeds the method's
/// horizon are flagged and left out of the means.
pub fn check_one_homogeneity(method: &dyn FlowMethod, u0: &Image, c: f64, times: &[f64]) -> Result<MetricReport> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(invalid_param("scaling factor must be positive"));
    }
    let scaled_times: Vec<f64> = times.iter().map(|t| t / c).collect();
    let lhs = method.run(&u0.scaled(c), times)?;
    let rhs = method.run(u0, &scaled_times)?.scaled(c);
    let horizon = method.horizon();
    let nodes = times
        .iter()
        .zip(lhs.frames().iter().zip(rhs.frames()))
        .zip(&scaled_times)
        .map(|((&t, (a, b)), &ts)| node_metric(t, a, b, c, horizon.is_some_and(|hz| ts > hz * (1.0 + 1e-12))))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_nodes(format!("{}:homogeneity(c={c})", method.name()), u0.shape(), nodes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Zero crossing of the fitted line against the global mean.
    pub extinction_estimate: f64,
    /// First node whose masked mean is within tolerance of the global mean.
    pub extinction_node: Option<f64>,
    pub fit_nodes: usize,
    pub degenerate: bool,
}

/// Masked mean tolerance used to detect extinction.
pub const EXTINCTION_TOL: f64 = 1e-3;

/// Least-squares line through the masked mean intensity over the nodes
/// preceding extinction. `mask` is row-major, one flag per pixel.
pub fn fit_eigen_decay(traj: &FlowTrajectory, mask: &[bool]) -> Result<EigenDecayFit> {
    let (h, w) = traj.shape();
    if mask.len() != h * w {
        return Err(invalid_input(format!("mask has {} entries for a {h}x{w} image", mask.len())));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(invalid_input("mask is empty"));
    }
    let global = traj.frames()[0].mean();
    let means: Vec<f64> = traj
        .frames()
        .iter()
        .map(|f| f.as_slice().iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>() / count as f64)
        .collect();
    let times = traj.times();
    let knee = means.iter().position(|m| (m - global).abs() <= EXTINCTION_TOL);
    let fit_end = knee.unwrap_or(means.len());
    if fit_end < 2 {
        return Ok(EigenDecayFit {
            slope: 0.0,
            intercept: means[0],
            r_squared: 1.0,
            extinction_estimate: 0.0,
            extinction_node: knee.map(|k| times[k]),
            fit_nodes: fit_end,
            degenerate: true,
        });
    }
    let (ts, ms) = (&times[..fit_end], &means[..fit_end]);
    let n = fit_end as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let mm = ms.iter().sum::<f64>() / n;
    let stt: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
    let stm: f64 = ts.iter().zip(ms).map(|(t, m)| (t - tm) * (m - mm)).sum();
    let slope = stm / stt;
    let intercept = mm - slope * tm;
    let ss_tot: f64 = ms.iter().map(|m| (m - mm).powi(2)).sum();
    let ss_res: f64 = ts.iter().zip(ms).map(|(t, m)| (m - intercept - slope * t).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    let extinction_estimate = if slope != 0.0 { (global - intercept) / slope } else { 0.0 };
    Ok(EigenDecayFit {
        slope,
        intercept,
        r_squared,
        extinction_estimate,
        extinction_node: knee.map(|k| times[k]),
        fit_nodes: fit_end,
        degenerate: false,
    })
}

/// Row-major mask of the pixels of `img` above `threshold`.
pub fn mask_above(img: &Image, threshold: f64) -> Vec<bool> {
    img.as_slice().iter().map(|&v| v > threshold).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
}

impl MachineInfo {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub label: String,
    pub warmup: usize,
    pub samples_s: Vec<f64>,
    pub median_s: f64,
    pub machine: MachineInfo,
}

/// Median wall-clock time of `runs` executions after `warmup` discarded ones.
pub fn time_method(label: &str, warmup: usize, runs: usize, mut task: impl FnMut() -> Result<()>) -> Result<TimingReport> {
    if runs == 0 {
        return Err(invalid_param("timing needs at least one run"));
    }
    for _ in 0..warmup {
        task()?;
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        task()?;
        samples.push(start.elapsed().as_secs_f64());
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if runs % 2 == 1 { sorted[runs / 2] } else { 0.5 * (sorted[runs / 2 - 1] + sorted[runs / 2]) };
    Ok(TimingReport { label: label.into(), warmup, samples_s: samples, median_s: median, machine: MachineInfo::current() })
}
