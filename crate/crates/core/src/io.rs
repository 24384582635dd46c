//! Tensor files (NPY 1.0, little-endian, C order) and PGM previews.
//!
//! Shapes: image `(H, W)`, trajectory `(Nt, H, W)`, field stack
//! `(Nt, 2, H, W)` with channel 0 the x component, times `(Nt,)`.
//! Writes go through a temporary file in the target directory followed by
//! a rename, so a failed write never leaves a partial file behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use npyz::WriterBuilder;

use crate::error::{Error, Result};
use crate::flow::FlowTrajectory;
use crate::grid::{Image, VectorField};

fn format_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}

/// Serializes `data` with the given shape as little-endian f64.
pub fn encode_npy(shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let shape: Vec<u64> = shape.iter().map(|&s| s as u64).collect();
    let mut buf = Vec::with_capacity(128 + 8 * data.len());
    let mut w = npyz::WriteOptions::<f64>::new().default_dtype().shape(&shape).writer(&mut buf).begin_nd()?;
    w.extend(data.iter().copied())?;
    w.finish()?;
    Ok(buf)
}

/// Parses an f32 or f64 array (either byte order, C order) into f64 values.
pub fn decode_npy(bytes: &[u8]) -> std::result::Result<(Vec<usize>, Vec<f64>), String> {
    let npy = npyz::NpyFile::new(bytes).map_err(|e| e.to_string())?;
    if npy.order() != npyz::Order::C {
        return Err("only C-ordered arrays are supported".into());
    }
    let shape: Vec<usize> = npy.shape().iter().map(|&s| s as usize).collect();
    let dtype = match npy.dtype() {
        npyz::DType::Plain(ts) => ts.to_string(),
        other => return Err(format!("unsupported dtype {other:?}")),
    };
    let data = match &dtype[1..] {
        "f8" => npy.into_vec::<f64>().map_err(|e| e.to_string())?,
        "f4" => npy.into_vec::<f32>().map_err(|e| e.to_string())?.into_iter().map(f64::from).collect(),
        _ => return Err(format!("unsupported element type {dtype}, expected f4 or f8")),
    };
    Ok((shape, data))
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| format_err(path, "not a file path"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Shape and f64 values of any float array file.
pub fn read_npy(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    decode_npy(&bytes).map_err(|e| format_err(path, e))
}

pub fn encode_image(img: &Image) -> Result<Vec<u8>> {
    encode_npy(&[img.height(), img.width()], img.as_slice())
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &encode_image(img)?)
}

pub fn read_image(path: &Path) -> Result<Image> {
    match read_npy(path)? {
        (s, data) if s.len() == 2 => Image::new(s[0], s[1], data).map_err(|e| format_err(path, e)),
        (s, _) => Err(format_err(path, format!("expected an (H, W) image, found shape {s:?}"))),
    }
}

pub fn encode_stack(frames: &[Image]) -> Result<Vec<u8>> {
    let (h, w) = frames.first().map(|f| f.shape()).ok_or_else(|| Error::InvalidInput("empty stack".into()))?;
    let mut data = Vec::with_capacity(frames.len() * h * w);
    for f in frames {
        if f.shape() != (h, w) {
            return Err(Error::InvalidInput("stack frames differ in shape".into()));
        }
        data.extend_from_slice(f.as_slice());
    }
    encode_npy(&[frames.len(), h, w], &data)
}

pub fn write_stack(path: &Path, frames: &[Image]) -> Result<()> {
    write_atomic(path, &encode_stack(frames)?)
}

pub fn read_stack(path: &Path) -> Result<Vec<Image>> {
    let (s, data) = read_npy(path)?;
    if s.len() != 3 {
        return Err(format_err(path, format!("expected an (Nt, H, W) stack, found shape {s:?}")));
    }
    let n = s[1] * s[2];
    data.chunks(n.max(1))
        .take(s[0])
        .map(|c| Image::new(s[1], s[2], c.to_vec()).map_err(|e| format_err(path, e)))
        .collect()
}

pub fn encode_fields(fields: &[VectorField]) -> Result<Vec<u8>> {
    let (h, w) = fields.first().map(|f| f.shape()).ok_or_else(|| Error::InvalidInput("empty field stack".into()))?;
    let mut data = Vec::with_capacity(fields.len() * 2 * h * w);
    for f in fields {
        if f.shape() != (h, w) {
            return Err(Error::InvalidInput("field slices differ in shape".into()));
        }
        data.extend_from_slice(f.x());
        data.extend_from_slice(f.y());
    }
    encode_npy(&[fields.len(), 2, h, w], &data)
}

pub fn write_fields(path: &Path, fields: &[VectorField]) -> Result<()> {
    write_atomic(path, &encode_fields(fields)?)
}

/// Reads an `(Nt, 2, H, W)` field stack; nonzero entries on the fixed
/// boundary are rejected.
pub fn read_fields(path: &Path) -> Result<Vec<VectorField>> {
    let (s, data) = read_npy(path)?;
    if s.len() != 4 || s[1] != 2 {
        return Err(format_err(path, format!("expected an (Nt, 2, H, W) field stack, found shape {s:?}")));
    }
    let n = s[2] * s[3];
    data.chunks((2 * n).max(1))
        .take(s[0])
        .map(|c| VectorField::new(s[2], s[3], c[..n].to_vec(), c[n..].to_vec()).map_err(|e| format_err(path, e)))
        .collect()
}

pub fn encode_vector(v: &[f64]) -> Result<Vec<u8>> {
    encode_npy(&[v.len()], v)
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_atomic(path, &encode_vector(v)?)
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    match read_npy(path)? {
        (s, data) if s.len() == 1 => Ok(data),
        (s, _) => Err(format_err(path, format!("expected a 1-d vector, found shape {s:?}"))),
    }
}

/// Reads a trajectory from its frame stack and times vector.
pub fn read_trajectory(frames: &Path, times: &Path) -> Result<FlowTrajectory> {
    let f = read_stack(frames)?;
    let t = read_vector(times)?;
    FlowTrajectory::new(t, f).map_err(|e| format_err(frames, e))
}

pub fn write_trajectory(frames: &Path, times: &Path, traj: &FlowTrajectory) -> Result<()> {
    write_stack(frames, traj.frames())?;
    write_vector(times, traj.times())
}

/// Binary PGM with `[0, 1]` mapped linearly to `[0, 255]` and clamped.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.as_slice().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &encode_pgm(img))
}
