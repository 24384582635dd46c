//! Synthetic test images: indicator shapes, pseudo-random textures, crops.
//!
//! The PRNG is xorshift64* (Vigna): state update `x ^= x >> 12; x ^= x << 25;
//! x ^= x >> 27`, output `x * 0x2545F4914F6CDD1D`. Seeds are expanded with one
//! splitmix64 round so that seed 0 is valid. Doubles take the top 53 bits.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Result};
use crate::grid::Image;

const XORSHIFT_MUL: u64 = 0x2545_F491_4F6C_DD1D;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Xorshift64Star {
    state: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Xorshift64Star {
    pub fn new(seed: u64) -> Self {
        let s = splitmix64(seed);
        Self { state: if s == 0 { 0x9E37_79B9_7F4A_7C15 } else { s } }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(XORSHIFT_MUL)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Ellipse,
}

/// A filled shape. Coordinates are in pixels with pixel `(row, col)`
/// centered at `(x, y) = (col, row)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    pub radii: (f64, f64),
    #[serde(default)]
    pub angle: f64,
    pub contrast: f64,
}

impl ShapeSpec {
    pub fn disk(cx: f64, cy: f64, r: f64, contrast: f64) -> Self {
        Self { kind: ShapeKind::Disk, center: (cx, cy), radii: (r, r), angle: 0.0, contrast }
    }

    pub fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, angle: f64, contrast: f64) -> Self {
        Self { kind: ShapeKind::Ellipse, center: (cx, cy), radii: (rx, ry), angle, contrast }
    }

    /// Disk of radius `r` centered on an `n x n` grid.
    pub fn centered_disk(n: usize, r: f64, contrast: f64) -> Self {
        let c = (n as f64 - 1.0) / 2.0;
        Self::disk(c, c, r, contrast)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.radii;
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(invalid_param("shape radii must be positive and finite"));
        }
        if self.kind == ShapeKind::Disk && a != b {
            return Err(invalid_param("a disk has a single radius"));
        }
        if !self.contrast.is_finite() || !self.center.0.is_finite() || !self.center.1.is_finite() || !self.angle.is_finite() {
            return Err(invalid_param("shape parameters must be finite"));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        match self.kind {
            ShapeKind::Disk => dx * dx + dy * dy <= self.radii.0 * self.radii.0,
            ShapeKind::Ellipse => {
                let (s, c) = self.angle.sin_cos();
                let xr = c * dx + s * dy;
                let yr = -s * dx + c * dy;
                let (a, b) = self.radii;
                (xr / a).powi(2) + (yr / b).powi(2) <= 1.0
            }
        }
    }
}

const SUPERSAMPLE: usize = 4;

/// Renders shapes over a constant background; later shapes overwrite
/// earlier ones, each setting its region to `background + contrast`.
/// Without antialiasing a pixel is inside iff its center is. With it, the
/// coverage fraction on a 4x4 subpixel lattice blends the new value in.
pub fn render(shapes: &[ShapeSpec], height: usize, width: usize, background: f64, antialias: bool) -> Result<Image> {
    if height == 0 || width == 0 {
        return Err(invalid_input("image dimensions must be positive"));
    }
    for s in shapes {
        s.validate()?;
    }
    let mut img = Image::filled(height, width, background)?;
    let data = img.as_mut_slice();
    for s in shapes {
        let value = background + s.contrast;
        for i in 0..height {
            for j in 0..width {
                let cov = if antialias {
                    let mut hits = 0;
                    for a in 0..SUPERSAMPLE {
                        for b in 0..SUPERSAMPLE {
                            let oy = (a as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                            let ox = (b as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5;
                            if s.contains(j as f64 + ox, i as f64 + oy) {
                                hits += 1;
                            }
                        }
                    }
                    hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
                } else if s.contains(j as f64, i as f64) {
                    1.0
                } else {
                    0.0
                };
                if cov > 0.0 {
                    let v = &mut data[i * width + j];
                    *v = (1.0 - cov) * *v + cov * value;
                }
            }
        }
    }
    Ok(img)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureMode {
    Uniform,
    Smooth,
}

/// Half-width of the box kernel used by [`TextureMode::Smooth`] (5x5 box).
const BOX_RADIUS: usize = 2;

/// Deterministic texture. Uniform mode draws i.i.d. values in `[0, 1)` in
/// row-major order; smooth mode box-filters that noise (window clipped at
/// the image border) and rescales to `[0, 1]`.
pub fn synth_texture(height: usize, width: usize, seed: u64, mode: TextureMode) -> Result<Image> {
    let mut rng = Xorshift64Star::new(seed);
    let noise = Image::from_fn(height, width, |_, _| rng.next_f64())?;
    match mode {
        TextureMode::Uniform => Ok(noise),
        TextureMode::Smooth => {
            let r = BOX_RADIUS;
            let box_mean = Image::from_fn(height, width, |i, j| {
                let (i0, i1) = (i.saturating_sub(r), (i + r).min(height - 1));
                let (j0, j1) = (j.saturating_sub(r), (j + r).min(width - 1));
                let mut s = 0.0;
                for a in i0..=i1 {
                    for b in j0..=j1 {
                        s += noise.get(a, b);
                    }
                }
                s / ((i1 - i0 + 1) * (j1 - j0 + 1)) as f64
            })?;
            Ok(rescale_unit(&box_mean))
        }
    }
}

/// Affine map onto `[0, 1]`; constant images map to zero.
pub fn rescale_unit(img: &Image) -> Image {
    let lo = img.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return img.map(|_| 0.0);
    }
    img.map(|v| (v - lo) / (hi - lo))
}

pub fn crop(img: &Image, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
    if top + height > img.height() || left + width > img.width() {
        return Err(invalid_input(format!(
            "crop window {}x{} at ({}, {}) exceeds {}x{} image",
            height,
            width,
            top,
            left,
            img.height(),
            img.width()
        )));
    }
    Image::from_fn(height, width, |i, j| img.get(top + i, left + j))
}

/// A few random overlapping shapes with contrasts in `[0.2, 0.8]` on a
/// background in `[0.1, 0.3]`, rendered as pure indicators.
pub fn random_shapes(size: usize, count: usize, seed: u64) -> Result<Image> {
    let mut rng = Xorshift64Star::new(seed);
    let n = size as f64;
    let background = rng.uniform(0.1, 0.3);
    let shapes: Vec<ShapeSpec> = (0..count)
        .map(|_| {
            let cx = rng.uniform(0.25 * n, 0.75 * n);
            let cy = rng.uniform(0.25 * n, 0.75 * n);
            let contrast = rng.uniform(0.2, 0.8) * if rng.next_f64() < 0.5 { 1.0 } else { 0.6 };
            if rng.next_f64() < 0.5 {
                ShapeSpec::disk(cx, cy, rng.uniform(0.1 * n, 0.25 * n), contrast)
            } else {
                let rx = rng.uniform(0.1 * n, 0.3 * n);
                let ry = rng.uniform(0.1 * n, 0.3 * n);
                ShapeSpec::ellipse(cx, cy, rx, ry, rng.uniform(0.0, std::f64::consts::PI), contrast)
            }
        })
        .collect();
    render(&shapes, size, size, background, false)
}

/// Evaluation suite of square images: `shapes` random shape composites
/// followed by `textures` smooth textures, all seeded from `seed`.
pub fn synthetic_suite(size: usize, shapes: usize, textures: usize, seed: u64) -> Result<Vec<Image>> {
    let mut out = Vec::with_capacity(shapes + textures);
    for k in 0..shapes {
        out.push(random_shapes(size, 3, seed.wrapping_add(k as u64))?);
    }
    for k in 0..textures {
        out.push(synth_texture(size, size, seed.wrapping_add(1000 + k as u64), TextureMode::Smooth)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tv;

    #[test]
    fn xorshift_reference_values() {
        // Raw xorshift64* from state 1, independent of the seeding step.
        let mut g = Xorshift64Star { state: 1 };
        let mut x: u64 = 1;
        for _ in 0..5 {
            x ^= x >> 12;
            x ^= x << 25;
            x ^= x >> 27;
            assert_eq!(g.next_u64(), x.wrapping_mul(0x2545F4914F6CDD1D));
        }
        let mut g = Xorshift64Star { state: 1 };
        assert_eq!(g.next_u64(), 5180492295206395165);
    }

    #[test]
    fn doubles_in_unit_interval() {
        let mut g = Xorshift64Star::new(0);
        for _ in 0..10_000 {
            let v = g.next_f64();
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn empty_render_is_background() {
        let img = render(&[], 5, 7, 0.25, false).unwrap();
        assert!(img.as_slice().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn centered_disk_counts() {
        let img = render(&[ShapeSpec::centered_disk(32, 8.0, 1.0)], 32, 32, 0.0, false).unwrap();
        assert_eq!(img.get(16, 16), 1.0);
        assert_eq!(img.get(0, 0), 0.0);
        let inside = img.as_slice().iter().filter(|&&v| v == 1.0).count() as f64;
        let area = std::f64::consts::PI * 64.0;
        assert!((inside - area).abs() <= 0.05 * area, "{inside}");
    }

    #[test]
    fn integer_shift_equivariance() {
        let a = render(&[ShapeSpec::ellipse(12.3, 14.1, 5.0, 3.0, 0.4, 0.7)], 32, 32, 0.1, true).unwrap();
        let b = render(&[ShapeSpec::ellipse(15.3, 12.1, 5.0, 3.0, 0.4, 0.7)], 32, 32, 0.1, true).unwrap();
        for i in 2..30 {
            for j in 0..29 {
                assert_eq!(a.get(i, j), b.get(i - 2, j + 3));
            }
        }
    }

    #[test]
    fn later_shapes_overwrite() {
        let big = ShapeSpec::disk(10.0, 10.0, 6.0, 0.5);
        let small = ShapeSpec::disk(10.0, 10.0, 2.0, 0.9);
        let img = render(&[big, small], 21, 21, 0.0, false).unwrap();
        assert_eq!(img.get(10, 10), 0.9);
        assert_eq!(img.get(10, 14), 0.5);
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(render(&[ShapeSpec::disk(1.0, 1.0, 0.0, 1.0)], 4, 4, 0.0, false).is_err());
        assert!(render(&[], 0, 4, 0.0, false).is_err());
    }

    #[test]
    fn textures_are_deterministic() {
        for mode in [TextureMode::Uniform, TextureMode::Smooth] {
            let a = synth_texture(16, 16, 42, mode).unwrap();
            let b = synth_texture(16, 16, 42, mode).unwrap();
            assert_eq!(a, b);
            let c = synth_texture(16, 16, 43, mode).unwrap();
            assert!(a.max_abs_diff(&c) > 0.1);
        }
    }

    #[test]
    fn smooth_texture_has_lower_tv() {
        let u = synth_texture(32, 32, 7, TextureMode::Uniform).unwrap();
        let s = synth_texture(32, 32, 7, TextureMode::Smooth).unwrap();
        assert!(tv(&s) < tv(&u));
        let lo = s.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = s.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn crop_semantics() {
        let img = synth_texture(10, 12, 1, TextureMode::Uniform).unwrap();
        assert_eq!(crop(&img, 0, 0, 10, 12).unwrap(), img);
        let c = crop(&img, 2, 3, 4, 5).unwrap();
        assert_eq!(c.get(1, 2), img.get(3, 5));
        assert!(crop(&img, 7, 0, 4, 4).is_err());
        assert!(crop(&img, 0, 0, 1, 1).is_err());
    }

    #[test]
    fn crop_keeps_disk_tv() {
        let img = render(&[ShapeSpec::disk(20.0, 20.0, 6.0, 1.0)], 40, 40, 0.0, true).unwrap();
        let c = crop(&img, 10, 10, 21, 21).unwrap();
        assert!((tv(&img) - tv(&c)).abs() < 1e-12);
    }
}
