//! Spatial transformation models: affine maps and diffeomorphic
//! stationary-velocity free-form deformations (cubic B-spline velocity
//! lattice exponentiated by scaling and squaring), plus Jacobian
//! analysis of dense deformations.

use crate::error::{Error, Result};
use crate::imaging::{sample_bilinear, Grid2D, Image2D, LandmarkSet, Vec2};
use serde::{Deserialize, Serialize};

/// 2-D affine map `p -> A p + t` (t in mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub a: [[f64; 2]; 2],
    pub t: Vec2,
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform { a: [[1.0, 0.0], [0.0, 1.0]], t: Vec2::ZERO }
    }

    pub fn translation(t: Vec2) -> Self {
        AffineTransform { a: [[1.0, 0.0], [0.0, 1.0]], t }
    }

    pub fn det(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    #[inline]
    pub fn apply(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            self.a[0][0] * p.x + self.a[0][1] * p.y + self.t.x,
            self.a[1][0] * p.x + self.a[1][1] * p.y + self.t.y,
        )
    }

    /// Composition `self(other(p))`.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        let a = [
            [
                self.a[0][0] * other.a[0][0] + self.a[0][1] * other.a[1][0],
                self.a[0][0] * other.a[0][1] + self.a[0][1] * other.a[1][1],
            ],
            [
                self.a[1][0] * other.a[0][0] + self.a[1][1] * other.a[1][0],
                self.a[1][0] * other.a[0][1] + self.a[1][1] * other.a[1][1],
            ],
        ];
        let t = self.apply(other.t);
        AffineTransform { a, t }
    }
}

/// Cubic B-spline lattice of stationary velocity coefficients.
///
/// Control points live in physical coordinates with spacing
/// `stride` finest-level pixels, covering the image domain plus a
/// one-control-point margin on every side; the same lattice is shared
/// by all pyramid levels. Coefficients are velocity vectors in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityLattice {
    /// Control-point spacing in finest-level pixels.
    pub stride: f64,
    /// Control grid dimensions.
    pub nx: usize,
    pub ny: usize,
    /// Physical position of lattice coordinate 0 (= grid origin).
    pub origin: Vec2,
    /// Physical control-point spacing in mm.
    pub ctrl_spacing: f64,
    /// Row-major (ny rows of nx) velocity coefficients in mm.
    pub coeffs: Vec<Vec2>,
}

impl VelocityLattice {
    /// Zero lattice sized to cover `finest` with the given stride:
    /// `nx = ceil(width/stride) + 3` control points per axis (cubic
    /// support), control point `q` at lattice coordinate `q - 1`.
    pub fn for_grid(finest: &Grid2D, stride: f64) -> Result<Self> {
        if !(stride >= 1.0) || !stride.is_finite() {
            return Err(Error::invalid(format!("stride must be >= 1 px, got {stride}")));
        }
        let nx = (finest.width as f64 / stride).ceil() as usize + 3;
        let ny = (finest.height as f64 / stride).ceil() as usize + 3;
        Ok(VelocityLattice {
            stride,
            nx,
            ny,
            origin: finest.origin,
            ctrl_spacing: stride * finest.spacing,
            coeffs: vec![Vec2::ZERO; nx * ny],
        })
    }

    pub fn num_params(&self) -> usize {
        2 * self.coeffs.len()
    }

    pub fn max_coeff_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Lattice with every coefficient negated (velocity of the inverse
    /// flow).
    pub fn negated(&self) -> VelocityLattice {
        let mut out = self.clone();
        for c in out.coeffs.iter_mut() {
            *c = -*c;
        }
        out
    }

    fn coverage_check(&self, grid: &Grid2D) -> Result<()> {
        let smax_x = (grid.origin.x + grid.spacing * (grid.width - 1) as f64 - self.origin.x)
            / self.ctrl_spacing;
        let smax_y = (grid.origin.y + grid.spacing * (grid.height - 1) as f64 - self.origin.y)
            / self.ctrl_spacing;
        let smin_x = (grid.origin.x - self.origin.x) / self.ctrl_spacing;
        let smin_y = (grid.origin.y - self.origin.y) / self.ctrl_spacing;
        if smin_x < -1e-9
            || smin_y < -1e-9
            || smax_x.floor() as i64 + 4 > self.nx as i64
            || smax_y.floor() as i64 + 4 > self.ny as i64
        {
            return Err(Error::invalid(
                "velocity lattice does not cover the evaluation grid",
            ));
        }
        Ok(())
    }
}

/// The four uniform cubic B-spline weights for in-cell offset `t`.
#[inline]
pub fn bspline3_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        (1.0 - t) * (1.0 - t) * (1.0 - t) / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}

/// Full-support uniform cubic B-spline basis function.
pub fn bspline3(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + a * a * a / 2.0
    } else if a < 2.0 {
        let b = 2.0 - a;
        b * b * b / 6.0
    } else {
        0.0
    }
}

/// Cached separable evaluation plan of a lattice on one pixel grid.
///
/// Because grid columns share one lattice x-coordinate and rows one
/// y-coordinate, per-pixel tensor weights factor into per-column and
/// per-row tables. The plan is valid as long as lattice geometry and
/// grid stay fixed (coefficient values may change freely).
pub struct SplinePlan {
    pub grid: Grid2D,
    nx: usize,
    col_base: Vec<usize>,
    col_w: Vec<[f64; 4]>,
    row_base: Vec<usize>,
    row_w: Vec<[f64; 4]>,
}

impl SplinePlan {
    pub fn new(lattice: &VelocityLattice, grid: Grid2D) -> Result<Self> {
        lattice.coverage_check(&grid)?;
        let spacing = grid.spacing;
        let axis = |n_pix: usize, pix_origin: f64, n_ctrl: usize| -> (Vec<usize>, Vec<[f64; 4]>) {
            let mut base = Vec::with_capacity(n_pix);
            let mut w = Vec::with_capacity(n_pix);
            for k in 0..n_pix {
                let s = (pix_origin + spacing * k as f64) / lattice.ctrl_spacing;
                let mut i = s.floor();
                // Guard the exact upper lattice boundary.
                if i as i64 + 4 > n_ctrl as i64 {
                    i -= 1.0;
                }
                let t = s - i;
                base.push(i as usize);
                w.push(bspline3_weights(t));
            }
            (base, w)
        };
        let (col_base, col_w) = axis(grid.width, grid.origin.x - lattice.origin.x, lattice.nx);
        let (row_base, row_w) = axis(grid.height, grid.origin.y - lattice.origin.y, lattice.ny);
        Ok(SplinePlan { grid, nx: lattice.nx, col_base, col_w, row_base, row_w })
    }

    /// Dense velocity raster `v(p) = sum_k B3(p/stride - k) c_k` on the
    /// plan's grid.
    pub fn evaluate(&self, lattice: &VelocityLattice) -> Vec<Vec2> {
        let (w, h) = (self.grid.width, self.grid.height);
        let mut out = vec![Vec2::ZERO; w * h];
        for j in 0..h {
            let jb = self.row_base[j];
            let wy = self.row_w[j];
            let row = &mut out[j * w..(j + 1) * w];
            for (i, slot) in row.iter_mut().enumerate() {
                let ib = self.col_base[i];
                let wx = self.col_w[i];
                let mut acc = Vec2::ZERO;
                for (n, &wyn) in wy.iter().enumerate() {
                    let base = (jb + n) * self.nx + ib;
                    let c = &lattice.coeffs[base..base + 4];
                    let mut rx = 0.0;
                    let mut ry = 0.0;
                    for (m, &wxm) in wx.iter().enumerate() {
                        rx += wxm * c[m].x;
                        ry += wxm * c[m].y;
                    }
                    acc.x += wyn * rx;
                    acc.y += wyn * ry;
                }
                *slot = acc;
            }
        }
        out
    }

    /// Adjoint of [`SplinePlan::evaluate`]: scatter a per-pixel
    /// velocity gradient back onto coefficient gradients.
    pub fn scatter(&self, grad_v: &[Vec2], lattice: &VelocityLattice) -> Vec<Vec2> {
        let (w, h) = (self.grid.width, self.grid.height);
        assert_eq!(grad_v.len(), w * h);
        let mut grad_c = vec![Vec2::ZERO; lattice.coeffs.len()];
        for j in 0..h {
            let jb = self.row_base[j];
            let wy = self.row_w[j];
            for i in 0..w {
                let g = grad_v[j * w + i];
                if g.x == 0.0 && g.y == 0.0 {
                    continue;
                }
                let ib = self.col_base[i];
                let wx = self.col_w[i];
                for (n, &wyn) in wy.iter().enumerate() {
                    let base = (jb + n) * self.nx + ib;
                    for (m, &wxm) in wx.iter().enumerate() {
                        let wgt = wyn * wxm;
                        grad_c[base + m].x += wgt * g.x;
                        grad_c[base + m].y += wgt * g.y;
                    }
                }
            }
        }
        grad_c
    }
}

/// Evaluate a lattice on a grid. Convenience wrapper over
/// [`SplinePlan`] for one-shot use.
pub fn spline_velocity(lattice: &VelocityLattice, grid: Grid2D) -> Result<Vec<Vec2>> {
    Ok(SplinePlan::new(lattice, grid)?.evaluate(lattice))
}

/// Dense displacement field `u` with `phi(p) = p + u(p)` (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub grid: Grid2D,
    pub u: Vec<Vec2>,
}

/// Edge-clamped bilinear read of a vector raster at pixel coordinates.
#[inline]
pub(crate) fn bilinear_vec2_clamped(u: &[Vec2], w: usize, h: usize, x: f64, y: f64) -> Vec2 {
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let i0 = (xc.floor() as usize).min(w - 2);
    let j0 = (yc.floor() as usize).min(h - 2);
    let fx = xc - i0 as f64;
    let fy = yc - j0 as f64;
    let v00 = u[j0 * w + i0];
    let v10 = u[j0 * w + i0 + 1];
    let v01 = u[(j0 + 1) * w + i0];
    let v11 = u[(j0 + 1) * w + i0 + 1];
    Vec2::new(
        (1.0 - fx) * (1.0 - fy) * v00.x + fx * (1.0 - fy) * v10.x
            + (1.0 - fx) * fy * v01.x
            + fx * fy * v11.x,
        (1.0 - fx) * (1.0 - fy) * v00.y + fx * (1.0 - fy) * v10.y
            + (1.0 - fx) * fy * v01.y
            + fx * fy * v11.y,
    )
}

impl DisplacementField {
    pub fn identity(grid: Grid2D) -> Self {
        DisplacementField { grid, u: vec![Vec2::ZERO; grid.len()] }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().all(|v| v.is_finite())
    }

    /// Displacement at a physical point, bilinearly interpolated with
    /// edge-clamped lookups.
    pub fn sample(&self, p: Vec2) -> Vec2 {
        let (x, y) = self.grid.to_pixel(p);
        bilinear_vec2_clamped(&self.u, self.grid.width, self.grid.height, x, y)
    }

    /// `phi(p) = p + u(p)`.
    pub fn apply(&self, p: Vec2) -> Vec2 {
        p + self.sample(p)
    }

    pub fn max_displacement(&self) -> f64 {
        self.u.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Longest per-step displacement allowed before another halving, as a
/// fraction of the pixel spacing.
const SQUARING_STEP_FRACTION: f64 = 0.5;
/// Hard cap on squaring steps.
pub const MAX_SQUARING_STEPS: u32 = 16;

/// Number of scaling-and-squaring halvings for a velocity raster:
/// the smallest `N` with `max|v| / 2^N < 0.5 * spacing`, capped at 16.
pub fn squaring_steps(v: &[Vec2], spacing: f64) -> u32 {
    let vmax = v.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let limit = SQUARING_STEP_FRACTION * spacing;
    let mut n = 0u32;
    while vmax / (1u64 << n) as f64 >= limit {
        n += 1;
        if n >= MAX_SQUARING_STEPS {
            log::warn!(
                "scaling-and-squaring step cap {MAX_SQUARING_STEPS} reached (max |v| = {vmax:.3} mm)"
            );
            break;
        }
    }
    n
}

/// Intermediate flows of one exponential, kept for the adjoint pass.
pub(crate) struct ExpTrace {
    pub grid: Grid2D,
    pub steps: u32,
    /// `fields[k]` is the flow after `k` squarings; `fields[0] = v / 2^N`.
    pub fields: Vec<Vec<Vec2>>,
}

impl ExpTrace {
    pub fn final_field(&self) -> &[Vec2] {
        self.fields.last().unwrap()
    }
}

/// One squaring: `u'(p) = u(p + u(p)) + u(p)` with edge-clamped
/// bilinear resampling of `u`.
fn square_once(u: &[Vec2], grid: &Grid2D) -> Vec<Vec2> {
    let (w, h) = (grid.width, grid.height);
    let mut out = vec![Vec2::ZERO; u.len()];
    for j in 0..h {
        for i in 0..w {
            let idx = j * w + i;
            let d = u[idx];
            let x = i as f64 + d.x / grid.spacing;
            let y = j as f64 + d.y / grid.spacing;
            out[idx] = bilinear_vec2_clamped(u, w, h, x, y) + d;
        }
    }
    out
}

/// Cell geometry of one edge-clamped bilinear lookup: the four corner
/// raster indices with weights, plus whether each coordinate hit the
/// clamp (its positional derivative is then zero).
#[inline]
fn clamped_cell(
    w: usize,
    h: usize,
    x: f64,
    y: f64,
) -> ([usize; 4], [f64; 4], f64, f64, usize, usize, bool, bool) {
    let clamped_x = x <= 0.0 || x >= (w - 1) as f64;
    let clamped_y = y <= 0.0 || y >= (h - 1) as f64;
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let i0 = (xc.floor() as usize).min(w - 2);
    let j0 = (yc.floor() as usize).min(h - 2);
    let fx = xc - i0 as f64;
    let fy = yc - j0 as f64;
    let idx = [
        j0 * w + i0,
        j0 * w + i0 + 1,
        (j0 + 1) * w + i0,
        (j0 + 1) * w + i0 + 1,
    ];
    let wgt = [
        (1.0 - fx) * (1.0 - fy),
        fx * (1.0 - fy),
        (1.0 - fx) * fy,
        fx * fy,
    ];
    (idx, wgt, fx, fy, i0, j0, clamped_x, clamped_y)
}

/// Adjoint of [`square_once`]: pull a gradient with respect to the
/// squared field back onto the input field.
///
/// With `q(p) = p + u(p)` the forward differential is
/// `du'(p) = du(p) + S[du](q) + J_u(q) du(p)` where `S` is the clamped
/// bilinear sampler and `J_u` the in-cell Jacobian of the interpolant;
/// each term is transposed here.
fn square_adjoint(u: &[Vec2], grid: &Grid2D, g: &[Vec2]) -> Vec<Vec2> {
    let (w, h) = (grid.width, grid.height);
    let s = grid.spacing;
    let mut out = vec![Vec2::ZERO; u.len()];
    for j in 0..h {
        for i in 0..w {
            let idx = j * w + i;
            let gp = g[idx];
            // Identity term.
            out[idx] += gp;
            if gp.x == 0.0 && gp.y == 0.0 {
                continue;
            }
            let d = u[idx];
            let x = i as f64 + d.x / s;
            let y = j as f64 + d.y / s;
            let (nidx, wgt, fx, fy, _, _, cx, cy) = clamped_cell(w, h, x, y);
            let (v00, v10, v01, v11) = (u[nidx[0]], u[nidx[1]], u[nidx[2]], u[nidx[3]]);
            // In-cell Jacobian of the interpolant (per mm), zero in a
            // clamped coordinate.
            let (jxx, jyx) = if cx {
                (0.0, 0.0)
            } else {
                (
                    ((1.0 - fy) * (v10.x - v00.x) + fy * (v11.x - v01.x)) / s,
                    ((1.0 - fy) * (v10.y - v00.y) + fy * (v11.y - v01.y)) / s,
                )
            };
            let (jxy, jyy) = if cy {
                (0.0, 0.0)
            } else {
                (
                    ((1.0 - fx) * (v01.x - v00.x) + fx * (v11.x - v10.x)) / s,
                    ((1.0 - fx) * (v01.y - v00.y) + fx * (v11.y - v10.y)) / s,
                )
            };
            // Chain through the sample position: J^T g.
            out[idx].x += jxx * gp.x + jyx * gp.y;
            out[idx].y += jxy * gp.x + jyy * gp.y;
            // Scatter through the value lookup.
            for (&ni, &nw) in nidx.iter().zip(wgt.iter()) {
                out[ni] += gp * nw;
            }
        }
    }
    out
}

/// Pull a gradient with respect to the final flow of `trace` back to
/// the initial flow `u_0 = v / 2^N`. The caller converts to a velocity
/// gradient by dividing by `2^N`.
pub(crate) fn exp_adjoint(trace: &ExpTrace, grad_final: &[Vec2]) -> Vec<Vec2> {
    let mut g = grad_final.to_vec();
    for k in (0..trace.steps as usize).rev() {
        g = square_adjoint(&trace.fields[k], &trace.grid, &g);
    }
    g
}

pub(crate) fn exp_svf_trace(v: &[Vec2], grid: Grid2D, steps: u32) -> ExpTrace {
    let scale = 1.0 / (1u64 << steps) as f64;
    let mut fields = Vec::with_capacity(steps as usize + 1);
    fields.push(v.iter().map(|&x| x * scale).collect::<Vec<_>>());
    for _ in 0..steps {
        let next = square_once(fields.last().unwrap(), &grid);
        fields.push(next);
    }
    ExpTrace { grid, steps, fields }
}

/// Exponential of a stationary velocity raster by scaling and
/// squaring; returns the dense deformation `phi = id + u`.
pub fn exp_svf(v: &[Vec2], grid: Grid2D) -> DisplacementField {
    let steps = squaring_steps(v, grid.spacing);
    exp_svf_with_steps(v, grid, steps)
}

/// Exponential with an explicit squaring-step count (used by the
/// step-consistency checks).
pub fn exp_svf_with_steps(v: &[Vec2], grid: Grid2D, steps: u32) -> DisplacementField {
    let trace = exp_svf_trace(v, grid, steps);
    DisplacementField { grid, u: trace.fields.into_iter().last().unwrap() }
}

/// Exponential of a lattice velocity on a grid.
pub fn exp_lattice(lattice: &VelocityLattice, grid: Grid2D) -> Result<DisplacementField> {
    let v = spline_velocity(lattice, grid)?;
    Ok(exp_svf(&v, grid))
}

/// Exponential of the negated lattice velocity:
/// `exp(v) . exp(-v) ~ id`.
pub fn invert_svf(lattice: &VelocityLattice, grid: Grid2D) -> Result<DisplacementField> {
    exp_lattice(&lattice.negated(), grid)
}

/// Pull-back warp: `out(p) = m(phi(p))`, zero outside the domain.
///
/// When `m` lives on the deformation's grid the sample coordinates are
/// formed directly in pixel space, so an identity deformation
/// reproduces the image bit-exactly.
pub fn warp_image(m: &Image2D, phi: &DisplacementField) -> Image2D {
    let grid = phi.grid;
    let mut values = Vec::with_capacity(grid.len());
    if m.grid == grid {
        let (w, h) = (grid.width, grid.height);
        for j in 0..h {
            for i in 0..w {
                let d = phi.u[j * w + i];
                values.push(crate::imaging::bilinear_zero(
                    &m.values,
                    w,
                    h,
                    i as f64 + d.x / grid.spacing,
                    j as f64 + d.y / grid.spacing,
                ));
            }
        }
    } else {
        for j in 0..grid.height {
            for i in 0..grid.width {
                let p = grid.position(i, j) + phi.u[grid.index(i, j)];
                values.push(sample_bilinear(m, p));
            }
        }
    }
    Image2D { grid, values }
}

/// Transform every landmark by the dense deformation.
pub fn apply_to_points(phi: &DisplacementField, pts: &LandmarkSet) -> LandmarkSet {
    pts.map(|p| phi.apply(p))
}

/// Transform every landmark by an affine map.
pub fn apply_affine_to_points(affine: &AffineTransform, pts: &LandmarkSet) -> LandmarkSet {
    pts.map(|p| affine.apply(p))
}

/// Dense field of the composition `p -> A(p + u(p)) + t`, i.e. the
/// SVFFD lookup followed by the affine map (the total transform when
/// the moving image was affinely pre-resampled).
pub fn compose_affine_displacement(
    affine: &AffineTransform,
    field: &DisplacementField,
) -> DisplacementField {
    let grid = field.grid;
    let mut u = Vec::with_capacity(grid.len());
    for j in 0..grid.height {
        for i in 0..grid.width {
            let p = grid.position(i, j);
            let q = p + field.u[grid.index(i, j)];
            u.push(affine.apply(q) - p);
        }
    }
    DisplacementField { grid, u }
}

/// Jacobian-determinant analysis of a dense deformation.
#[derive(Debug, Clone)]
pub struct JacobianMap {
    pub grid: Grid2D,
    /// det(grad phi) per pixel, central differences (one-sided at the
    /// borders) in physical units.
    pub det_j: Vec<f64>,
    /// |grad det(J)| per pixel (per mm).
    pub grad_mag: Vec<f64>,
    /// Fraction of pixels with det(J) < 0.
    pub folding_ratio: f64,
    /// Mean of `grad_mag`.
    pub mmgjd: f64,
}

/// Central difference of a scalar raster along x/y with one-sided
/// stencils at the borders, in physical units.
fn derivative(vals: &[f64], w: usize, h: usize, spacing: f64, i: usize, j: usize) -> (f64, f64) {
    let at = |i: usize, j: usize| vals[j * w + i];
    let dx = if i == 0 {
        (at(1, j) - at(0, j)) / spacing
    } else if i == w - 1 {
        (at(w - 1, j) - at(w - 2, j)) / spacing
    } else {
        (at(i + 1, j) - at(i - 1, j)) / (2.0 * spacing)
    };
    let dy = if j == 0 {
        (at(i, 1) - at(i, 0)) / spacing
    } else if j == h - 1 {
        (at(i, h - 1) - at(i, h - 2)) / spacing
    } else {
        (at(i, j + 1) - at(i, j - 1)) / (2.0 * spacing)
    };
    (dx, dy)
}

/// det(J), its gradient magnitude, the folding ratio, and MMGJD for a
/// dense deformation.
pub fn jacobian_analysis(phi: &DisplacementField) -> JacobianMap {
    let grid = phi.grid;
    let (w, h) = (grid.width, grid.height);
    let s = grid.spacing;
    let ux: Vec<f64> = phi.u.iter().map(|v| v.x).collect();
    let uy: Vec<f64> = phi.u.iter().map(|v| v.y).collect();

    let mut det_j = vec![0.0; w * h];
    for j in 0..h {
        for i in 0..w {
            let (duxdx, duxdy) = derivative(&ux, w, h, s, i, j);
            let (duydx, duydy) = derivative(&uy, w, h, s, i, j);
            det_j[j * w + i] = (1.0 + duxdx) * (1.0 + duydy) - duxdy * duydx;
        }
    }

    let mut grad_mag = vec![0.0; w * h];
    let mut folded = 0usize;
    let mut mag_sum = 0.0;
    for j in 0..h {
        for i in 0..w {
            let (gx, gy) = derivative(&det_j, w, h, s, i, j);
            let mag = gx.hypot(gy);
            grad_mag[j * w + i] = mag;
            mag_sum += mag;
            if det_j[j * w + i] < 0.0 {
                folded += 1;
            }
        }
    }

    JacobianMap {
        grid,
        det_j,
        grad_mag,
        folding_ratio: folded as f64 / (w * h) as f64,
        mmgjd: mag_sum / (w * h) as f64,
    }
}
