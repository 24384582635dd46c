//! Discrete spatial calculus on a unit-spaced pixel grid.
//!
//! `grad` uses forward differences and reads as zero across the last
//! column/row, which is the discrete homogeneous Neumann condition. `div` uses
//! the matching backward differences so that `<grad u, p> = -<u, div p>`
//! holds exactly. A [`VectorField`] therefore carries a zero x-component on
//! the last column and a zero y-component on the last row.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Result};

/// Single-channel image, row-major, unit pixel spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

fn check_shape(height: usize, width: usize) -> Result<()> {
    if height < 2 || width < 2 {
        return Err(invalid_input(format!(
            "grid must be at least 2x2, got {height}x{width}"
        )));
    }
    Ok(())
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_shape(height, width)?;
        if data.len() != height * width {
            return Err(invalid_input(format!(
                "expected {} values for a {height}x{width} image, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid_input(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 0.0)
    }

    /// Builds an image from a per-pixel function of `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self::new(height, width, data)
    }

    /// Shape-preserving construction for internal code whose values are finite
    /// by construction.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if !self.same_shape(other) {
            return Err(invalid_input(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Image) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Euclidean distance `||self - other||_2`.
    pub fn distance(&self, other: &Image) -> f64 {
        debug_assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_raw(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn scaled(&self, c: f64) -> Image {
        self.map(|v| c * v)
    }

    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        debug_assert!(self.same_shape(other));
        Image::from_raw(
            self.height,
            self.width,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// `self + c * other`
    pub fn axpy(&self, c: f64, other: &Image) -> Image {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn transpose(&self) -> Image {
        let (h, w) = self.shape();
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                out[j * h + i] = self.data[i * w + j];
            }
        }
        Image::from_raw(w, h, out)
    }

    /// `true` when every pixel equals the first one bit-for-bit.
    pub fn is_constant(&self) -> bool {
        let first = self.data[0];
        self.data.iter().all(|&v| v == first)
    }
}

/// Two-component field on the pixel grid (diffusivity field or image gradient).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    height: usize,
    width: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl VectorField {
    /// Validates shape, finiteness and the zero-boundary convention.
    pub fn new(height: usize, width: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        check_shape(height, width)?;
        let n = height * width;
        if x.len() != n || y.len() != n {
            return Err(invalid_input(format!(
                "component lengths {} / {} do not match a {height}x{width} grid",
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(invalid_input("non-finite field component"));
        }
        for i in 0..height {
            if x[i * width + width - 1] != 0.0 {
                return Err(invalid_input(format!(
                    "x component must vanish on the last column (row {i})"
                )));
            }
        }
        for j in 0..width {
            if y[(height - 1) * width + j] != 0.0 {
                return Err(invalid_input(format!(
                    "y component must vanish on the last row (col {j})"
                )));
            }
        }
        Ok(Self { height, width, x, y })
    }

    /// Like [`VectorField::new`] but overwrites the boundary entries with zero.
    pub fn with_zero_boundary(height: usize, width: usize, mut x: Vec<f64>, mut y: Vec<f64>) -> Result<Self> {
        check_shape(height, width)?;
        if x.len() == height * width && y.len() == height * width {
            zero_boundary(height, width, &mut x, &mut y);
        }
        Self::new(height, width, x, y)
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_shape(height, width)?;
        Ok(Self::from_raw(height, width, vec![0.0; height * width], vec![0.0; height * width]))
    }

    pub(crate) fn from_raw(height: usize, width: usize, x: Vec<f64>, y: Vec<f64>) -> Self {
        debug_assert_eq!(x.len(), height * width);
        debug_assert_eq!(y.len(), height * width);
        Self { height, width, x, y }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        let dx: f64 = self.x.iter().zip(&other.x).map(|(a, b)| a * b).sum();
        let dy: f64 = self.y.iter().zip(&other.y).map(|(a, b)| a * b).sum();
        dx + dy
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Sum over pixels of `|x| + |y|`.
    pub fn l1_norm(&self) -> f64 {
        self.x.iter().chain(&self.y).map(|v| v.abs()).sum()
    }

    /// Largest pointwise Euclidean magnitude `max_x |p(x)|_2`.
    pub fn max_magnitude(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .fold(0.0, |m, (a, b)| m.max((a * a + b * b).sqrt()))
    }

    pub fn scaled(&self, c: f64) -> VectorField {
        VectorField::from_raw(
            self.height,
            self.width,
            self.x.iter().map(|v| c * v).collect(),
            self.y.iter().map(|v| c * v).collect(),
        )
    }

    pub fn max_abs_diff(&self, other: &VectorField) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .chain(self.y.iter().zip(&other.y))
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

pub(crate) fn zero_boundary(h: usize, w: usize, x: &mut [f64], y: &mut [f64]) {
    for i in 0..h {
        x[i * w + w - 1] = 0.0;
    }
    for j in 0..w {
        y[(h - 1) * w + j] = 0.0;
    }
}

pub(crate) fn grad_raw(h: usize, w: usize, u: &[f64], gx: &mut [f64], gy: &mut [f64]) {
    for i in 0..h {
        let row = i * w;
        for j in 0..w - 1 {
            gx[row + j] = u[row + j + 1] - u[row + j];
        }
        gx[row + w - 1] = 0.0;
    }
    for i in 0..h - 1 {
        let row = i * w;
        for j in 0..w {
            gy[row + j] = u[row + w + j] - u[row + j];
        }
    }
    gy[(h - 1) * w..].fill(0.0);
}

pub(crate) fn div_raw(h: usize, w: usize, px: &[f64], py: &[f64], out: &mut [f64]) {
    for i in 0..h {
        let row = i * w;
        out[row] = px[row];
        for j in 1..w - 1 {
            out[row + j] = px[row + j] - px[row + j - 1];
        }
        out[row + w - 1] = -px[row + w - 2];
    }
    for j in 0..w {
        out[j] += py[j];
    }
    for i in 1..h - 1 {
        let row = i * w;
        for j in 0..w {
            out[row + j] += py[row + j] - py[row - w + j];
        }
    }
    let last = (h - 1) * w;
    for j in 0..w {
        out[last + j] -= py[last - w + j];
    }
}

/// Forward-difference gradient with zero flux across the far boundary.
pub fn grad(u: &Image) -> VectorField {
    let (h, w) = u.shape();
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    grad_raw(h, w, &u.data, &mut gx, &mut gy);
    VectorField::from_raw(h, w, gx, gy)
}

/// Backward-difference divergence, the negative adjoint of [`grad`].
pub fn div(phi: &VectorField) -> Image {
    let (h, w) = phi.shape();
    let mut out = vec![0.0; h * w];
    div_raw(h, w, &phi.x, &phi.y, &mut out);
    Image::from_raw(h, w, out)
}

/// Isotropic total variation `sum_x |grad u(x)|_2`.
pub fn tv(u: &Image) -> f64 {
    let g = grad(u);
    g.x.iter().zip(&g.y).map(|(a, b)| (a * a + b * b).sqrt()).sum()
}

/// Smoothed total variation `sum_x sqrt(|grad u(x)|^2 + eps)`.
pub fn tv_smooth(u: &Image, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid_param(format!("eps must be positive, got {eps}")));
    }
    let g = grad(u);
    Ok(g.x.iter().zip(&g.y).map(|(a, b)| (a * a + b * b + eps).sqrt()).sum())
}

/// Gradient of [`tv_smooth`] with respect to the pixel values:
/// `-div(grad u / sqrt(|grad u|^2 + eps))`.
pub fn tv_smooth_gradient(u: &Image, eps: f64) -> Result<Image> {
    if !(eps > 0.0) {
        return Err(invalid_param(format!("eps must be positive, got {eps}")));
    }
    let mut g = grad(u);
    normalize_field(&mut g.x, &mut g.y, eps);
    Ok(div(&g).scaled(-1.0))
}

/// `p <- p / sqrt(|p|^2 + eps)` pointwise.
pub(crate) fn normalize_field(px: &mut [f64], py: &mut [f64], eps: f64) {
    for (a, b) in px.iter_mut().zip(py.iter_mut()) {
        let s = (*a * *a + *b * *b + eps).sqrt();
        *a /= s;
        *b /= s;
    }
}

/// Regularized normalized gradient `grad u / sqrt(|grad u|^2 + eps^2)`.
pub fn regularized_unit_gradient(u: &Image, eps: f64) -> VectorField {
    let mut g = grad(u);
    normalize_field(&mut g.x, &mut g.y, eps * eps);
    g
}
