use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use tvflow_core::eval::{psnr, ssim, SSIM_WINDOW};
use tvflow_core::io::{encode_image, encode_stack, read_image, read_trajectory};
use tvflow_core::spectral::{band_pass, reconstruct, tv_transform};

use crate::error::{CliError, CliResult};
use crate::output::Staged;
use crate::{show, Context, Finished};

/// A `t1:t2` band with `t1 < t2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band(pub f64, pub f64);

fn parse_band(s: &str) -> Result<Band, String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected t1:t2, got {s:?}"))?;
    let t1: f64 = a.trim().parse().map_err(|_| format!("bad band start {a:?}"))?;
    let t2: f64 = b.trim().parse().map_err(|_| format!("bad band end {b:?}"))?;
    if !(t1.is_finite() && t2.is_finite() && t1 < t2) {
        return Err(format!("band {s} must satisfy t1 < t2"));
    }
    Ok(Band(t1, t2))
}

#[derive(Args)]
pub struct SpectralArgs {
    /// Trajectory stack, an (Nt, H, W) array.
    #[arg(long, value_name = "FILE")]
    pub trajectory: PathBuf,

    /// Time stamps, an (Nt,) array.
    #[arg(long, value_name = "FILE")]
    pub times: PathBuf,

    /// Band-pass filter over [t1, t2]; repeatable.
    #[arg(long = "band", value_name = "T1:T2", value_parser = parse_band)]
    pub bands: Vec<Band>,

    /// Write the inverse transform and score it against u0.
    #[arg(long)]
    pub reconstruct: bool,

    /// Reference image for the reconstruction [default: first frame].
    #[arg(long, value_name = "FILE")]
    pub u0: Option<PathBuf>,
}

#[derive(Serialize)]
pub struct BandOutput {
    pub t1: f64,
    pub t2: f64,
    pub path: String,
}

#[derive(Serialize)]
pub struct Reconstruction {
    pub path: String,
    /// Where the reference came from: the `--u0` path or "first_frame".
    pub reference: String,
    /// Null when the reconstruction matches the reference exactly.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub identical: bool,
}

#[derive(Serialize)]
pub struct SpectralSummary {
    pub command: &'static str,
    pub trajectory: String,
    pub height: usize,
    pub width: usize,
    pub nt: usize,
    pub t_end: f64,
    pub responses: String,
    /// Total response magnitude per node.
    pub spectrum: Vec<f64>,
    pub bands: Vec<BandOutput>,
    pub reconstruction: Option<Reconstruction>,
}

pub fn run(ctx: &Context, a: &SpectralArgs) -> CliResult<Finished<SpectralSummary>> {
    let traj = read_trajectory(&a.trajectory, &a.times)?;
    let reference = a.u0.as_ref().map(|p| read_image(p)).transpose()?;
    let (t0, tn) = (traj.times()[0], traj.final_time());
    for Band(t1, t2) in &a.bands {
        if *t1 < t0 || *t2 > tn {
            return Err(CliError::config(format!("band {t1}:{t2} leaves the trajectory's time range [{t0}, {tn}]")));
        }
    }
    let stack = tv_transform(&traj)?;
    let dir = &ctx.out_dir;
    let mut staged = Staged::default();
    let responses = staged.add(dir.join("responses.npy"), encode_stack(stack.responses())?);
    let mut bands = Vec::new();
    for (k, &Band(t1, t2)) in a.bands.iter().enumerate() {
        let img = band_pass(&stack, t1, t2)?;
        bands.push(BandOutput { t1, t2, path: staged.add(dir.join(format!("band_{k:02}.npy")), encode_image(&img)?) });
    }
    let reconstruction = if a.reconstruct {
        let img = reconstruct(&traj)?;
        let (refimg, label) = match (&reference, &a.u0) {
            (Some(r), Some(p)) => (r, show(p)),
            _ => (&traj.frames()[0], "first_frame".to_string()),
        };
        if refimg.shape() != img.shape() {
            return Err(CliError::config("u0 and the trajectory differ in shape"));
        }
        let p = psnr(&img, refimg, 1.0)?;
        let s = (img.height() >= SSIM_WINDOW && img.width() >= SSIM_WINDOW).then(|| ssim(&img, refimg)).transpose()?;
        let path = staged.add(dir.join("reconstruction.npy"), encode_image(&img)?);
        Some(Reconstruction { path, reference: label, psnr: p.is_finite().then_some(p), ssim: s, identical: p.is_infinite() })
    } else {
        None
    };
    let (height, width) = traj.shape();
    let summary = SpectralSummary {
        command: "spectral",
        trajectory: show(&a.trajectory),
        height,
        width,
        nt: traj.len(),
        t_end: tn,
        responses,
        spectrum: stack.spectrum(),
        bands,
        reconstruction,
    };
    Ok(Finished { staged, summary, unconverged: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_syntax() {
        assert_eq!(parse_band("0.1:0.5"), Ok(Band(0.1, 0.5)));
        assert!(parse_band("0.5:0.2").is_err());
        assert!(parse_band("0.5:0.5").is_err());
        assert!(parse_band("0.5").is_err());
        assert!(parse_band("a:1").is_err());
        assert!(parse_band("0:inf").is_err());
    }
}
