use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{ArgAction, Args, ValueEnum};
use serde::Serialize;
use tvflow_core::datagen::{random_shapes, render, synth_texture, synthetic_suite, ShapeSpec, TextureMode};
use tvflow_core::io::{encode_image, encode_pgm};
use tvflow_core::Image;

use crate::error::{CliError, CliResult};
use crate::output::Staged;
use crate::{Context, Finished};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Texture {
    Uniform,
    Smooth,
}

#[derive(Args)]
pub struct GenArgs {
    /// Disk, e.g. `--disk r=8 c=1 [x=15.5 y=15.5]`; repeatable, later shapes overwrite.
    #[arg(long, num_args = 1.., action = ArgAction::Append, value_name = "KEY=VALUE")]
    pub disk: Vec<String>,

    /// Ellipse, e.g. `--ellipse rx=10 ry=5 angle=0.3 c=0.5`; angle in radians.
    #[arg(long, num_args = 1.., action = ArgAction::Append, value_name = "KEY=VALUE")]
    pub ellipse: Vec<String>,

    /// `--disk` and `--ellipse` values grouped per occurrence.
    #[arg(skip)]
    pub disk_groups: Vec<Vec<String>>,

    #[arg(skip)]
    pub ellipse_groups: Vec<Vec<String>>,

    /// Seeded noise texture.
    #[arg(long, value_enum, conflicts_with_all = ["disk", "ellipse", "random_shapes", "suite"])]
    pub texture: Option<Texture>,

    /// Composite of COUNT random disks and ellipses.
    #[arg(long, value_name = "COUNT", conflicts_with_all = ["disk", "ellipse", "suite"])]
    pub random_shapes: Option<usize>,

    /// Evaluation suite: SHAPES random composites followed by TEXTURES smooth textures.
    #[arg(long, num_args = 2, value_names = ["SHAPES", "TEXTURES"], conflicts_with_all = ["disk", "ellipse"])]
    pub suite: Option<Vec<usize>>,

    /// Square image side.
    #[arg(long)]
    pub size: Option<usize>,

    #[arg(long, requires = "width")]
    pub height: Option<usize>,

    #[arg(long, requires = "height")]
    pub width: Option<usize>,

    #[arg(long)]
    pub background: Option<f64>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Blend shape edges by subpixel coverage.
    #[arg(long)]
    pub antialias: bool,

    /// Output file stem inside the output directory.
    #[arg(long, default_value = "u0")]
    pub name: String,

    /// Also write PGM previews.
    #[arg(long)]
    pub preview: bool,
}

#[derive(Serialize)]
pub struct GenOutput {
    pub path: String,
    pub preview: Option<String>,
    pub height: usize,
    pub width: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

#[derive(Serialize)]
pub struct GenSummary {
    pub command: &'static str,
    pub kind: &'static str,
    pub seed: u64,
    pub shapes: Vec<ShapeSpec>,
    pub outputs: Vec<GenOutput>,
}

fn keyvals(items: &[String], allowed: &[&str]) -> CliResult<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in items {
        let (k, v) = item.split_once('=').ok_or_else(|| CliError::config(format!("expected KEY=VALUE, got {item:?}")))?;
        if !allowed.contains(&k) {
            return Err(CliError::config(format!("unknown shape key {k:?}; expected one of {}", allowed.join(", "))));
        }
        let val: f64 = v.parse().map_err(|_| CliError::config(format!("bad value for {k}: {v:?}")))?;
        if out.insert(k.to_string(), val).is_some() {
            return Err(CliError::config(format!("shape key {k} given twice")));
        }
    }
    Ok(out)
}

fn shapes(a: &GenArgs, h: usize, w: usize, contrast: f64) -> CliResult<Vec<ShapeSpec>> {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let need = |m: &BTreeMap<String, f64>, k: &str| m.get(k).copied().ok_or_else(|| CliError::config(format!("shape needs {k}=...")));
    let mut out = Vec::new();
    for d in &a.disk_groups {
        let m = keyvals(d, &["r", "c", "x", "y"])?;
        out.push(ShapeSpec::disk(m.get("x").copied().unwrap_or(cx), m.get("y").copied().unwrap_or(cy), need(&m, "r")?, m.get("c").copied().unwrap_or(contrast)));
    }
    for e in &a.ellipse_groups {
        let m = keyvals(e, &["rx", "ry", "angle", "c", "x", "y"])?;
        out.push(ShapeSpec::ellipse(
            m.get("x").copied().unwrap_or(cx),
            m.get("y").copied().unwrap_or(cy),
            need(&m, "rx")?,
            need(&m, "ry")?,
            m.get("angle").copied().unwrap_or(0.0),
            m.get("c").copied().unwrap_or(contrast),
        ));
    }
    for s in &out {
        s.validate()?;
    }
    Ok(out)
}

fn describe(staged: &mut Staged, path: PathBuf, img: &Image, preview: bool) -> CliResult<GenOutput> {
    let s = img.as_slice();
    let preview = preview.then(|| staged.add(path.with_extension("pgm"), encode_pgm(img)));
    Ok(GenOutput {
        path: staged.add(path, encode_image(img)?),
        preview,
        height: img.height(),
        width: img.width(),
        min: s.iter().copied().fold(f64::INFINITY, f64::min),
        max: s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: img.mean(),
    })
}

impl GenArgs {
    pub fn group_shapes(&mut self, m: &clap::ArgMatches) {
        let groups = |id: &str| -> Vec<Vec<String>> {
            m.get_occurrences::<String>(id).map(|occ| occ.map(|o| o.cloned().collect()).collect()).unwrap_or_default()
        };
        self.disk_groups = groups("disk");
        self.ellipse_groups = groups("ellipse");
    }
}

pub fn run(ctx: &Context, a: &GenArgs) -> CliResult<Finished<GenSummary>> {
    let d = &ctx.defaults.gen;
    let (h, w) = match (a.height, a.width, a.size) {
        (Some(h), Some(w), None) => (h, w),
        (None, None, s) => {
            let s = s.unwrap_or(d.size);
            (s, s)
        }
        _ => return Err(CliError::config("give either --size or --height with --width")),
    };
    if h < 2 || w < 2 {
        return Err(CliError::config("images must be at least 2x2"));
    }
    let seed = a.seed.unwrap_or(d.seed);
    let background = a.background.unwrap_or(d.background);
    if !background.is_finite() {
        return Err(CliError::config("background must be finite"));
    }
    let specs = shapes(a, h, w, d.contrast)?;
    let square = || if h == w { Ok(h) } else { Err(CliError::config("random shapes and suites are square; use --size")) };
    let (kind, images): (&'static str, Vec<Image>) = if let Some(t) = a.texture {
        let mode = match t {
            Texture::Uniform => TextureMode::Uniform,
            Texture::Smooth => TextureMode::Smooth,
        };
        ("texture", vec![synth_texture(h, w, seed, mode)?])
    } else if let Some(count) = a.random_shapes {
        ("random_shapes", vec![random_shapes(square()?, count, seed)?])
    } else if let Some(s) = &a.suite {
        ("suite", synthetic_suite(square()?, s[0], s[1], seed)?)
    } else if !specs.is_empty() {
        ("shapes", vec![render(&specs, h, w, background, a.antialias)?])
    } else {
        ("random_shapes", vec![random_shapes(square()?, d.random_shapes, seed)?])
    };
    let mut staged = Staged::default();
    let outputs = if kind == "suite" {
        images
            .iter()
            .enumerate()
            .map(|(k, img)| describe(&mut staged, ctx.out_dir.join(format!("{}_{k:03}.npy", a.name)), img, a.preview))
            .collect::<CliResult<Vec<_>>>()?
    } else {
        vec![describe(&mut staged, ctx.out_dir.join(format!("{}.npy", a.name)), &images[0], a.preview)?]
    };
    Ok(Finished { staged, summary: GenSummary { command: "gen", kind, seed, shapes: specs, outputs }, unconverged: None })
}
