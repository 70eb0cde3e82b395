//! Physical-grid raster primitives: images, masks, landmarks,
//! interpolation, smoothing, resolution pyramids, and distance
//! transforms.
//!
//! All rasters are row-major with pixel `(i, j)` at physical position
//! `origin + spacing * (i, j)`; `i` indexes columns (x), `j` rows (y).
//! Types are immutable after construction and all operations are pure.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// 2-vector in physical (mm) or pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Isotropic physical pixel grid.
///
/// `spacing` is mm per pixel; `origin` is the physical position of the
/// center of pixel `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
    pub origin: Vec2,
}

impl Grid2D {
    pub fn new(width: usize, height: usize, spacing: f64, origin: Vec2) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::invalid(format!(
                "grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing}")));
        }
        Ok(Grid2D { width, height, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    /// Physical position of the center of pixel `(i, j)`.
    #[inline]
    pub fn position(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + self.spacing * i as f64,
            self.origin.y + self.spacing * j as f64,
        )
    }

    /// Continuous pixel coordinates of a physical point.
    #[inline]
    pub fn to_pixel(&self, p: Vec2) -> (f64, f64) {
        (
            (p.x - self.origin.x) / self.spacing,
            (p.y - self.origin.y) / self.spacing,
        )
    }

    /// Physical bounding box of the pixel centers.
    pub fn extent(&self) -> (Vec2, Vec2) {
        (
            self.origin,
            self.position(self.width - 1, self.height - 1),
        )
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (lo, hi) = self.extent();
        p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
    }

    /// Physical center of the grid.
    pub fn center(&self) -> Vec2 {
        Vec2::new(
            self.origin.x + self.spacing * (self.width - 1) as f64 * 0.5,
            self.origin.y + self.spacing * (self.height - 1) as f64 * 0.5,
        )
    }

    /// Half the larger physical side length; the scale used to relate
    /// extent-normalized optimization parameters to mm.
    pub fn half_extent(&self) -> f64 {
        0.5 * self.spacing * (self.width.max(self.height) - 1) as f64
    }
}

/// Scalar raster on a physical grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl Image2D {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "value count {} does not match grid {}x{}",
                values.len(),
                grid.width,
                grid.height
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Image2D { grid, values })
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Image2D { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Image2D { grid, values: vec![c; grid.len()] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Role of a mask within the evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Full,
    Partial,
    LeftPartial,
    RightPartial,
    RegistrationRoi,
}

/// Boolean raster annotating an image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub grid: Grid2D,
    pub values: Vec<bool>,
    pub kind: MaskKind,
}

impl BinaryMask {
    pub fn new(grid: Grid2D, values: Vec<bool>, kind: MaskKind) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid("mask value count does not match grid"));
        }
        Ok(BinaryMask { grid, values, kind })
    }

    pub fn count_true(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    /// Every metric-bound mask must contain at least one pixel.
    pub fn ensure_nonempty(&self) -> Result<()> {
        if self.count_true() == 0 {
            Err(Error::Degenerate(format!("{:?} mask is empty", self.kind)))
        } else {
            Ok(())
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.values[self.grid.index(i, j)]
    }

    /// Resample onto another grid of the same physical domain: the 0/1
    /// raster is read bilinearly at the target pixel centers and
    /// re-binarized at 0.5.
    pub fn resample_to(&self, grid: Grid2D) -> BinaryMask {
        let float: Vec<f64> = self.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let mut out = vec![false; grid.len()];
        for j in 0..grid.height {
            for i in 0..grid.width {
                let p = grid.position(i, j);
                let (x, y) = self.grid.to_pixel(p);
                let v = bilinear_zero(&float, self.grid.width, self.grid.height, x, y);
                out[grid.index(i, j)] = v >= 0.5;
            }
        }
        BinaryMask { grid, values: out, kind: self.kind }
    }
}

/// Anatomical landmark labels, one point each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkLabel {
    ApexLeft,
    ApexRight,
    CostophrenicLeft,
    CostophrenicRight,
    CostocardiacLeft,
    CostocardiacRight,
}

pub const LANDMARK_LABELS: [LandmarkLabel; 6] = [
    LandmarkLabel::ApexLeft,
    LandmarkLabel::ApexRight,
    LandmarkLabel::CostophrenicLeft,
    LandmarkLabel::CostophrenicRight,
    LandmarkLabel::CostocardiacLeft,
    LandmarkLabel::CostocardiacRight,
];

impl LandmarkLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            LandmarkLabel::ApexLeft => "apex-left",
            LandmarkLabel::ApexRight => "apex-right",
            LandmarkLabel::CostophrenicLeft => "costophrenic-left",
            LandmarkLabel::CostophrenicRight => "costophrenic-right",
            LandmarkLabel::CostocardiacLeft => "costocardiac-left",
            LandmarkLabel::CostocardiacRight => "costocardiac-right",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        LANDMARK_LABELS.iter().copied().find(|l| l.as_str() == s)
    }
}

/// Exactly six labeled physical points (mm), one per [`LandmarkLabel`].
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: [(LandmarkLabel, Vec2); 6],
}

impl LandmarkSet {
    /// Points must come in the canonical label order and, when a grid
    /// is supplied, lie inside its physical extent.
    pub fn new(points: [(LandmarkLabel, Vec2); 6], grid: Option<&Grid2D>) -> Result<Self> {
        for (k, (label, p)) in points.iter().enumerate() {
            if *label != LANDMARK_LABELS[k] {
                return Err(Error::invalid(format!(
                    "landmark {k} must be {:?}, got {:?}",
                    LANDMARK_LABELS[k], label
                )));
            }
            if !p.is_finite() {
                return Err(Error::invalid("landmark coordinates must be finite"));
            }
            if let Some(g) = grid {
                if !g.contains(*p) {
                    return Err(Error::invalid(format!(
                        "landmark {} at ({}, {}) outside grid extent",
                        label.as_str(),
                        p.x,
                        p.y
                    )));
                }
            }
        }
        Ok(LandmarkSet { points })
    }

    pub fn from_points(pts: [Vec2; 6], grid: Option<&Grid2D>) -> Result<Self> {
        let mut arr = [(LandmarkLabel::ApexLeft, Vec2::ZERO); 6];
        for (k, p) in pts.into_iter().enumerate() {
            arr[k] = (LANDMARK_LABELS[k], p);
        }
        LandmarkSet::new(arr, grid)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LandmarkLabel, Vec2)> + '_ {
        self.points.iter().copied()
    }

    pub fn get(&self, label: LandmarkLabel) -> Vec2 {
        self.points.iter().find(|(l, _)| *l == label).unwrap().1
    }

    /// Map every point through `f`, keeping labels.
    pub fn map(&self, mut f: impl FnMut(Vec2) -> Vec2) -> LandmarkSet {
        let mut points = self.points;
        for (_, p) in points.iter_mut() {
            *p = f(*p);
        }
        LandmarkSet { points }
    }
}

/// Pad with zeros to a `target`x`target` square; the original values
/// occupy the top-left block and the origin is unchanged.
pub fn pad_to_square(img: &Image2D, target: usize) -> Result<Image2D> {
    let (w, h) = (img.grid.width, img.grid.height);
    if target < w || target < h {
        return Err(Error::invalid(format!(
            "pad target {target} smaller than image {w}x{h}"
        )));
    }
    let grid = Grid2D::new(target, target, img.grid.spacing, img.grid.origin)?;
    let mut values = vec![0.0; grid.len()];
    for j in 0..h {
        let src = &img.values[j * w..(j + 1) * w];
        values[j * target..j * target + w].copy_from_slice(src);
    }
    Ok(Image2D { grid, values })
}

/// Extract the top-left `w`x`h` block, inverting [`pad_to_square`].
pub fn unpad(img: &Image2D, w: usize, h: usize) -> Result<Image2D> {
    if w > img.grid.width || h > img.grid.height {
        return Err(Error::invalid("unpad size exceeds image"));
    }
    let grid = Grid2D::new(w, h, img.grid.spacing, img.grid.origin)?;
    let mut values = Vec::with_capacity(w * h);
    for j in 0..h {
        values.extend_from_slice(&img.values[j * img.grid.width..j * img.grid.width + w]);
    }
    Ok(Image2D { grid, values })
}

/// Translate columns by `dx` pixels with zero fill. Integer shifts are
/// lossless aside from the columns pushed out of the domain.
pub fn shift_horizontal(img: &Image2D, dx: i64) -> Result<Image2D> {
    let w = img.grid.width as i64;
    if dx.abs() >= w {
        return Err(Error::invalid(format!("|dx| = {} must be < width {}", dx.abs(), w)));
    }
    let mut values = vec![0.0; img.values.len()];
    for j in 0..img.grid.height {
        for i in 0..img.grid.width {
            let src = i as i64 - dx;
            if src >= 0 && src < w {
                values[img.grid.index(i, j)] = img.values[img.grid.index(src as usize, j)];
            }
        }
    }
    Ok(Image2D { grid: img.grid, values })
}

/// Normalized discrete Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for k in -radius..=radius {
        kernel.push((-(k as f64).powi(2) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    kernel
}

/// Separable Gaussian convolution with edge replication. `sigma = 0`
/// returns the input unchanged.
pub fn gaussian_smooth(img: &Image2D, sigma: f64) -> Result<Image2D> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (img.grid.width as i64, img.grid.height as i64);

    // Horizontal pass.
    let mut tmp = vec![0.0; img.values.len()];
    for j in 0..h {
        let row = &img.values[(j * w) as usize..((j + 1) * w) as usize];
        for i in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let src = (i + t as i64 - radius).clamp(0, w - 1);
                acc += kv * row[src as usize];
            }
            tmp[(j * w + i) as usize] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; img.values.len()];
    for j in 0..h {
        for i in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                let src = (j + t as i64 - radius).clamp(0, h - 1);
                acc += kv * tmp[(src * w + i) as usize];
            }
            out[(j * w + i) as usize] = acc;
        }
    }
    Ok(Image2D { grid: img.grid, values: out })
}

/// Anti-alias smoothing sigma applied per pyramid octave.
pub const PYRAMID_SIGMA: f64 = 1.0;

/// Smooth with sigma 1.0 then keep every second pixel. The spacing
/// doubles and the origin stays at the same physical location.
pub fn downsample_by_2(img: &Image2D) -> Result<Image2D> {
    let (w, h) = (img.grid.width, img.grid.height);
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::invalid(format!("dimensions {w}x{h} must be even")));
    }
    let smoothed = gaussian_smooth(img, PYRAMID_SIGMA)?;
    let grid = Grid2D::new(w / 2, h / 2, img.grid.spacing * 2.0, img.grid.origin)?;
    let mut values = Vec::with_capacity(grid.len());
    for j in 0..grid.height {
        for i in 0..grid.width {
            values.push(smoothed.values[img.grid.index(2 * i, 2 * j)]);
        }
    }
    Ok(Image2D { grid, values })
}

/// Coarse-to-fine resolution pyramid: element 0 is the coarsest, the
/// last element is the input itself.
pub fn build_pyramid(img: &Image2D, levels: usize) -> Result<Vec<Image2D>> {
    if levels == 0 {
        return Err(Error::invalid("pyramid needs at least one level"));
    }
    let div = 1usize << (levels - 1);
    if img.grid.width % div != 0 || img.grid.height % div != 0 {
        return Err(Error::invalid(format!(
            "dimensions {}x{} not divisible by 2^{}",
            img.grid.width,
            img.grid.height,
            levels - 1
        )));
    }
    let mut pyramid = vec![img.clone()];
    for _ in 1..levels {
        let next = downsample_by_2(pyramid.last().unwrap())?;
        pyramid.push(next);
    }
    pyramid.reverse();
    Ok(pyramid)
}

/// Bilinear read of a row-major raster at continuous pixel coordinates
/// with zero extension: missing neighbors contribute zero, so points
/// more than one pixel outside the domain sample to exactly 0.
#[inline]
pub fn bilinear_zero(values: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (i0, j0) = (x0 as i64, y0 as i64);
    let at = |i: i64, j: i64| -> f64 {
        if i < 0 || j < 0 || i >= w as i64 || j >= h as i64 {
            0.0
        } else {
            values[j as usize * w + i as usize]
        }
    };
    let v00 = at(i0, j0);
    let v10 = at(i0 + 1, j0);
    let v01 = at(i0, j0 + 1);
    let v11 = at(i0 + 1, j0 + 1);
    (1.0 - fx) * (1.0 - fy) * v00 + fx * (1.0 - fy) * v10 + (1.0 - fx) * fy * v01 + fx * fy * v11
}

/// As [`bilinear_zero`] but also returns the in-cell spatial derivative
/// of the interpolant per pixel unit: `(value, d/dx, d/dy)`.
#[inline]
pub fn bilinear_zero_grad(values: &[f64], w: usize, h: usize, x: f64, y: f64) -> (f64, f64, f64) {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (i0, j0) = (x0 as i64, y0 as i64);
    let at = |i: i64, j: i64| -> f64 {
        if i < 0 || j < 0 || i >= w as i64 || j >= h as i64 {
            0.0
        } else {
            values[j as usize * w + i as usize]
        }
    };
    let v00 = at(i0, j0);
    let v10 = at(i0 + 1, j0);
    let v01 = at(i0, j0 + 1);
    let v11 = at(i0 + 1, j0 + 1);
    let value = (1.0 - fx) * (1.0 - fy) * v00
        + fx * (1.0 - fy) * v10
        + (1.0 - fx) * fy * v01
        + fx * fy * v11;
    let ddx = (1.0 - fy) * (v10 - v00) + fy * (v11 - v01);
    let ddy = (1.0 - fx) * (v01 - v00) + fx * (v11 - v10);
    (value, ddx, ddy)
}

/// Bilinear interpolation of the image at a physical point; outside
/// the grid the image is extended with zeros (matching pad semantics).
pub fn sample_bilinear(img: &Image2D, p: Vec2) -> f64 {
    let (x, y) = img.grid.to_pixel(p);
    bilinear_zero(&img.values, img.grid.width, img.grid.height, x, y)
}

/// Image value and physical-space gradient (per mm) at a point.
pub fn sample_bilinear_grad(img: &Image2D, p: Vec2) -> (f64, Vec2) {
    let (x, y) = img.grid.to_pixel(p);
    let (v, dx, dy) = bilinear_zero_grad(&img.values, img.grid.width, img.grid.height, x, y);
    (v, Vec2::new(dx / img.grid.spacing, dy / img.grid.spacing))
}

/// Exact squared Euclidean distance transform (in pixel units) to the
/// nearest true pixel, by the two-pass lower-envelope method. Pixels of
/// an all-false mask map to infinity.
pub fn distance_transform_sq(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
    const INF: f64 = 1e20;
    let mut dist: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { INF }).collect();

    let mut f = vec![0.0; w.max(h)];
    let mut d = vec![0.0; w.max(h)];
    let mut v = vec![0usize; w.max(h)];
    let mut z = vec![0.0; w.max(h) + 1];

    // Columns then rows; each pass computes the 1-D squared-distance
    // lower envelope of parabolas rooted at the previous pass values.
    let envelope = |n: usize, f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]| {
        let mut k = 0usize;
        v[0] = 0;
        z[0] = -INF;
        z[1] = INF;
        for q in 1..n {
            loop {
                let s = ((f[q] + (q * q) as f64) - (f[v[k]] + (v[k] * v[k]) as f64))
                    / (2.0 * q as f64 - 2.0 * v[k] as f64);
                if s <= z[k] {
                    if k == 0 {
                        v[0] = q;
                        z[0] = -INF;
                        break;
                    }
                    k -= 1;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = INF;
                    break;
                }
            }
        }
        let mut k = 0usize;
        for q in 0..n {
            while z[k + 1] < q as f64 {
                k += 1;
            }
            let dq = q as f64 - v[k] as f64;
            d[q] = dq * dq + f[v[k]];
        }
    };

    for i in 0..w {
        for j in 0..h {
            f[j] = dist[j * w + i];
        }
        envelope(h, &f, &mut d, &mut v, &mut z);
        for j in 0..h {
            dist[j * w + i] = d[j];
        }
    }
    for j in 0..h {
        f[..w].copy_from_slice(&dist[j * w..(j + 1) * w]);
        envelope(w, &f, &mut d, &mut v, &mut z);
        dist[j * w..(j + 1) * w].copy_from_slice(&d[..w]);
    }
    dist
}

/// Morphological dilation by a Euclidean disk of `radius` pixels.
pub fn dilate_mask(mask: &BinaryMask, radius: f64) -> Result<BinaryMask> {
    mask.ensure_nonempty()?;
    let dist = distance_transform_sq(&mask.values, mask.grid.width, mask.grid.height);
    let r2 = radius * radius;
    let values = dist.iter().map(|&d| d <= r2).collect();
    Ok(BinaryMask { grid: mask.grid, values, kind: mask.kind })
}

/// Rescale intensities to [0, 1] by the 0.5th/99.5th percentiles
/// (nearest-rank), clipping outside values. Used to stabilize the
/// similarity guard constants and learning rates before optimization;
/// analysis always runs on raw intensities.
pub fn normalize_percentile(img: &Image2D) -> Image2D {
    let mut sorted = img.values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = |pct: f64| -> f64 {
        let k = ((pct / 100.0 * n as f64).ceil() as usize).clamp(1, n) - 1;
        sorted[k]
    };
    let lo = rank(0.5);
    let hi = rank(99.5);
    let scale = hi - lo;
    if scale <= 0.0 {
        return img.clone();
    }
    let values = img
        .values
        .iter()
        .map(|&v| ((v - lo) / scale).clamp(0.0, 1.0))
        .collect();
    Image2D { grid: img.grid, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize) -> Grid2D {
        Grid2D::new(w, h, 1.0, Vec2::ZERO).unwrap()
    }

    fn image_from_fn(w: usize, h: usize, spacing: f64, f: impl Fn(usize, usize) -> f64) -> Image2D {
        let g = Grid2D::new(w, h, spacing, Vec2::ZERO).unwrap();
        let mut values = Vec::with_capacity(w * h);
        for j in 0..h {
            for i in 0..w {
                values.push(f(i, j));
            }
        }
        Image2D::new(g, values).unwrap()
    }

    #[test]
    fn pad_appends_zero_columns() {
        // 956x947 (width 947) -> 956 square with 9 zero columns appended.
        let img = image_from_fn(947, 956, 1.0, |_, _| 1.0);
        let padded = pad_to_square(&img, 956).unwrap();
        assert_eq!(padded.grid.width, 956);
        assert_eq!(padded.grid.height, 956);
        for j in 0..956 {
            for i in 947..956 {
                assert_eq!(padded.get(i, j), 0.0);
            }
        }
        assert_eq!(padded.get(500, 500), 1.0);
        assert_eq!(padded.grid.origin, img.grid.origin);
    }

    #[test]
    fn pad_noop_when_square_at_target() {
        let img = image_from_fn(4, 4, 1.0, |i, j| (i * 4 + j) as f64);
        let padded = pad_to_square(&img, 4).unwrap();
        assert_eq!(padded, img);
    }

    #[test]
    fn pad_2x3_of_ones_layout() {
        // 2 rows x 3 columns of ones, target 3: column sums (2,2,2),
        // row sums (3,3,0).
        let img = image_from_fn(3, 2, 1.0, |_, _| 1.0);
        let padded = pad_to_square(&img, 3).unwrap();
        for i in 0..3 {
            let col: f64 = (0..3).map(|j| padded.get(i, j)).sum();
            assert_eq!(col, 2.0);
        }
        let rows: Vec<f64> = (0..3)
            .map(|j| (0..3).map(|i| padded.get(i, j)).sum())
            .collect();
        assert_eq!(rows, vec![3.0, 3.0, 0.0]);
    }

    #[test]
    fn pad_rejects_small_target() {
        let img = image_from_fn(4, 3, 1.0, |_, _| 0.0);
        assert!(pad_to_square(&img, 3).is_err());
    }

    #[test]
    fn shift_zero_is_identity() {
        let img = image_from_fn(5, 4, 1.0, |i, j| (i + 10 * j) as f64);
        assert_eq!(shift_horizontal(&img, 0).unwrap(), img);
    }

    #[test]
    fn shift_moves_bright_pixel() {
        let mut img = Image2D::zeros(grid(10, 4));
        let idx = img.grid.index(2, 1);
        img.values[idx] = 7.0;
        let shifted = shift_horizontal(&img, 3).unwrap();
        assert_eq!(shifted.get(5, 1), 7.0);
        assert_eq!(shifted.values.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn shift_forward_back_zeroes_boundary_columns() {
        let img = image_from_fn(12, 3, 1.0, |i, j| (1 + i + 100 * j) as f64);
        let round = shift_horizontal(&shift_horizontal(&img, 5).unwrap(), -5).unwrap();
        for j in 0..3 {
            // +5 pushes the rightmost 5 columns out of the domain and
            // -5 leaves zeros in their place; columns 0..=6 survive.
            for i in 0..12 {
                let expect = if i >= 7 { 0.0 } else { img.get(i, j) };
                assert_eq!(round.get(i, j), expect, "col {i} row {j}");
            }
        }
    }

    #[test]
    fn gaussian_sigma_zero_identity() {
        let img = image_from_fn(6, 6, 1.0, |i, j| (i * j) as f64);
        assert_eq!(gaussian_smooth(&img, 0.0).unwrap(), img);
    }

    #[test]
    fn gaussian_preserves_constants() {
        let img = Image2D::constant(grid(9, 7), 3.25);
        let sm = gaussian_smooth(&img, 2.0).unwrap();
        for &v in &sm.values {
            assert_abs_diff_eq!(v, 3.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn gaussian_impulse_center_weight() {
        // Center response of a unit impulse is the squared normalized
        // kernel weight at offset 0 (separable 2-D kernel).
        let n = 15;
        let mut img = Image2D::zeros(grid(n, n));
        let c = n / 2;
        let idx = img.grid.index(c, c);
        img.values[idx] = 1.0;
        let sm = gaussian_smooth(&img, 1.0).unwrap();
        let kernel = gaussian_kernel(1.0);
        let w0 = kernel[kernel.len() / 2];
        assert_abs_diff_eq!(sm.get(c, c), w0 * w0, epsilon = 1e-14);

        // Cross-check an off-center tap against the direct kernel-sum
        // oracle.
        let oracle: f64 = {
            let r = kernel.len() / 2;
            let mut acc = 0.0;
            for (ty, &ky) in kernel.iter().enumerate() {
                for (tx, &kx) in kernel.iter().enumerate() {
                    let sx = (c + 1) as i64 + tx as i64 - r as i64;
                    let sy = c as i64 + ty as i64 - r as i64;
                    let sx = sx.clamp(0, n as i64 - 1) as usize;
                    let sy = sy.clamp(0, n as i64 - 1) as usize;
                    if sx == c && sy == c {
                        acc += kx * ky;
                    }
                }
            }
            acc
        };
        assert_abs_diff_eq!(sm.get(c + 1, c), oracle, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_rejects_negative_sigma() {
        let img = Image2D::zeros(grid(4, 4));
        assert!(gaussian_smooth(&img, -1.0).is_err());
    }

    #[test]
    fn downsample_doubles_spacing() {
        let img = image_from_fn(256, 256, 1.66, |_, _| 1.0);
        let down = downsample_by_2(&img).unwrap();
        assert_eq!(down.grid.width, 128);
        assert_eq!(down.grid.height, 128);
        assert_abs_diff_eq!(down.grid.spacing, 3.32, epsilon = 1e-12);
        assert_eq!(down.grid.origin, img.grid.origin);
        for &v in &down.values {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn downsample_rejects_odd() {
        let img = image_from_fn(5, 4, 1.0, |_, _| 0.0);
        assert!(downsample_by_2(&img).is_err());
    }

    #[test]
    fn downsample_ramp_doubles_step() {
        // Gaussian smoothing preserves affine signals away from the
        // replicated borders, so the subsampled ramp has twice the
        // per-pixel step.
        let img = image_from_fn(32, 32, 1.0, |i, _| i as f64);
        let down = downsample_by_2(&img).unwrap();
        for j in 4..12 {
            for i in 4..12 {
                let step = down.get(i + 1, j) - down.get(i, j);
                assert_abs_diff_eq!(step, 2.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn pyramid_sizes_and_order() {
        let img = image_from_fn(256, 256, 1.66, |i, j| ((i + j) % 7) as f64);
        let pyr = build_pyramid(&img, 4).unwrap();
        let sizes: Vec<usize> = pyr.iter().map(|im| im.grid.width).collect();
        assert_eq!(sizes, vec![32, 64, 128, 256]);
        assert_eq!(pyr[3], img);
    }

    #[test]
    fn pyramid_single_level() {
        let img = image_from_fn(10, 10, 1.0, |i, _| i as f64);
        let pyr = build_pyramid(&img, 1).unwrap();
        assert_eq!(pyr.len(), 1);
        assert_eq!(pyr[0], img);
    }

    #[test]
    fn pyramid_mean_preserved_for_interior_blob() {
        // Normalized smoothing preserves the mean of a blob supported
        // away from the borders to within 1% per level.
        let img = image_from_fn(64, 64, 1.0, |i, j| {
            let dx = i as f64 - 32.0;
            let dy = j as f64 - 32.0;
            (-(dx * dx + dy * dy) / 60.0).exp()
        });
        let pyr = build_pyramid(&img, 3).unwrap();
        let m0 = img.mean();
        for level in &pyr {
            assert!((level.mean() - m0).abs() < 0.01 * m0.abs());
        }
    }

    #[test]
    fn pyramid_rejects_indivisible() {
        let img = image_from_fn(20, 20, 1.0, |_, _| 0.0);
        assert!(build_pyramid(&img, 4).is_err());
    }

    #[test]
    fn bilinear_pixel_center_exact() {
        let img = image_from_fn(5, 5, 2.0, |i, j| (i * 10 + j) as f64);
        let p = img.grid.position(3, 2);
        assert_eq!(sample_bilinear(&img, p), 32.0);
    }

    #[test]
    fn bilinear_midpoint_average() {
        let img = image_from_fn(4, 4, 1.0, |i, j| if j == 1 && (i == 1 || i == 2) { (i * 2) as f64 } else { 0.0 });
        let a = img.get(1, 1);
        let b = img.get(2, 1);
        let p = Vec2::new(1.5, 1.0);
        assert_abs_diff_eq!(sample_bilinear(&img, p), (a + b) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn bilinear_matches_four_term_oracle() {
        let img = image_from_fn(8, 8, 1.0, |i, j| ((i * 31 + j * 17) % 13) as f64);
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let x = rnd() * 6.5;
            let y = rnd() * 6.5;
            let (i0, j0) = (x.floor() as usize, y.floor() as usize);
            let (fx, fy) = (x - i0 as f64, y - j0 as f64);
            let oracle = (1.0 - fx) * (1.0 - fy) * img.get(i0, j0)
                + fx * (1.0 - fy) * img.get(i0 + 1, j0)
                + (1.0 - fx) * fy * img.get(i0, j0 + 1)
                + fx * fy * img.get(i0 + 1, j0 + 1);
            let got = sample_bilinear(&img, Vec2::new(x, y));
            assert!((got - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_outside_is_zero() {
        let img = image_from_fn(4, 4, 1.0, |_, _| 5.0);
        assert_eq!(sample_bilinear(&img, Vec2::new(-2.0, 1.0)), 0.0);
        assert_eq!(sample_bilinear(&img, Vec2::new(1.0, 10.0)), 0.0);
    }

    #[test]
    fn bilinear_exact_on_affine_images() {
        let (c0, c1, c2) = (0.7, 1.3, -2.1);
        let img = image_from_fn(9, 9, 1.0, |i, j| c0 + c1 * i as f64 + c2 * j as f64);
        let mut state = 42u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let x = 0.5 + rnd() * 7.0;
            let y = 0.5 + rnd() * 7.0;
            let expect = c0 + c1 * x + c2 * y;
            let got = sample_bilinear(&img, Vec2::new(x, y));
            assert!((got - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn bilinear_grad_matches_finite_differences() {
        let img = image_from_fn(8, 8, 0.5, |i, j| ((i * i + 3 * j) % 11) as f64);
        let p = Vec2::new(1.3, 2.2);
        let (_, g) = sample_bilinear_grad(&img, p);
        let h = 1e-7;
        let gx = (sample_bilinear(&img, Vec2::new(p.x + h, p.y))
            - sample_bilinear(&img, Vec2::new(p.x - h, p.y)))
            / (2.0 * h);
        let gy = (sample_bilinear(&img, Vec2::new(p.x, p.y + h))
            - sample_bilinear(&img, Vec2::new(p.x, p.y - h)))
            / (2.0 * h);
        assert_abs_diff_eq!(g.x, gx, epsilon = 1e-5);
        assert_abs_diff_eq!(g.y, gy, epsilon = 1e-5);
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let w = 13;
        let h = 9;
        let mut state = 7u64;
        let mut rnd = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(777);
            state >> 33
        };
        for _ in 0..20 {
            let mask: Vec<bool> = (0..w * h).map(|_| rnd() % 5 == 0).collect();
            if !mask.iter().any(|&b| b) {
                continue;
            }
            let dt = distance_transform_sq(&mask, w, h);
            for j in 0..h {
                for i in 0..w {
                    let mut best = f64::INFINITY;
                    for jj in 0..h {
                        for ii in 0..w {
                            if mask[jj * w + ii] {
                                let d = ((i as f64 - ii as f64).powi(2)
                                    + (j as f64 - jj as f64).powi(2))
                                    as f64;
                                best = best.min(d);
                            }
                        }
                    }
                    assert_abs_diff_eq!(dt[j * w + i], best, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn dilation_of_disk_grows_radius() {
        let g = grid(64, 64);
        let r = 10.0;
        let values: Vec<bool> = (0..g.len())
            .map(|idx| {
                let (i, j) = (idx % 64, idx / 64);
                let dx = i as f64 - 32.0;
                let dy = j as f64 - 32.0;
                dx * dx + dy * dy <= r * r
            })
            .collect();
        let mask = BinaryMask::new(g, values, MaskKind::RegistrationRoi).unwrap();
        let dilated = dilate_mask(&mask, 6.0).unwrap();
        for j in 0..64usize {
            for i in 0..64usize {
                let d = ((i as f64 - 32.0).powi(2) + (j as f64 - 32.0).powi(2)).sqrt();
                let inside = dilated.get(i, j);
                // Within 1 px of the ideal radius the rasterization may
                // go either way.
                if d < r + 6.0 - 1.0 {
                    assert!(inside, "pixel ({i},{j}) at {d} should be inside");
                }
                if d > r + 6.0 + 1.0 {
                    assert!(!inside, "pixel ({i},{j}) at {d} should be outside");
                }
            }
        }
    }

    #[test]
    fn normalize_percentile_range_and_constant_guard() {
        let img = image_from_fn(16, 16, 1.0, |i, j| (i + j) as f64);
        let norm = normalize_percentile(&img);
        let (lo, hi) = norm.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
        assert!(hi > 0.9);
        let flat = Image2D::constant(grid(4, 4), 2.0);
        assert_eq!(normalize_percentile(&flat), flat);
    }

    #[test]
    fn landmarks_require_canonical_labels_and_extent() {
        let g = grid(10, 10);
        let pts = [
            Vec2::new(1.0, 1.0),
            Vec2::new(8.0, 1.0),
            Vec2::new(1.0, 8.0),
            Vec2::new(8.0, 8.0),
            Vec2::new(3.0, 8.0),
            Vec2::new(6.0, 8.0),
        ];
        assert!(LandmarkSet::from_points(pts, Some(&g)).is_ok());
        let mut outside = pts;
        outside[0] = Vec2::new(-5.0, 0.0);
        assert!(LandmarkSet::from_points(outside, Some(&g)).is_err());
    }

    proptest! {
        #[test]
        fn pad_unpad_roundtrip(w in 2usize..12, h in 2usize..12, seed in 0u64..1000) {
            let mut state = seed.wrapping_add(1);
            let mut rnd = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let g = Grid2D::new(w, h, 1.0, Vec2::ZERO).unwrap();
            let values: Vec<f64> = (0..w * h).map(|_| rnd()).collect();
            let img = Image2D::new(g, values).unwrap();
            let target = w.max(h) + 3;
            let padded = pad_to_square(&img, target).unwrap();
            let back = unpad(&padded, w, h).unwrap();
            prop_assert_eq!(back, img);
        }

        #[test]
        fn smoothing_is_linear(seed in 0u64..500) {
            let mut state = seed.wrapping_add(99);
            let mut rnd = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            };
            let g = Grid2D::new(9, 9, 1.0, Vec2::ZERO).unwrap();
            let xs: Vec<f64> = (0..81).map(|_| rnd()).collect();
            let ys: Vec<f64> = (0..81).map(|_| rnd()).collect();
            let (a, b) = (rnd() * 4.0, rnd() * 4.0);
            let x = Image2D::new(g, xs.clone()).unwrap();
            let y = Image2D::new(g, ys.clone()).unwrap();
            let combo = Image2D::new(
                g,
                xs.iter().zip(&ys).map(|(&xv, &yv)| a * xv + b * yv).collect(),
            )
            .unwrap();
            let lhs = gaussian_smooth(&combo, 1.5).unwrap();
            let sx = gaussian_smooth(&x, 1.5).unwrap();
            let sy = gaussian_smooth(&y, 1.5).unwrap();
            for k in 0..81 {
                let rhs = a * sx.values[k] + b * sy.values[k];
                prop_assert!((lhs.values[k] - rhs).abs() < 1e-12);
            }
        }

        #[test]
        fn downsample_keeps_physical_extent(exp in 2u32..6) {
            let n = 1usize << exp;
            let g = Grid2D::new(n, n, 1.25, Vec2::ZERO).unwrap();
            let img = Image2D::new(g, vec![1.0; n * n]).unwrap();
            let down = downsample_by_2(&img).unwrap();
            let before = g.width as f64 * g.spacing;
            let after = down.grid.width as f64 * down.grid.spacing;
            prop_assert!((before - after).abs() < down.grid.spacing);
        }
    }
}
