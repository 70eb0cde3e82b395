//! Similarity terms (SSD, NCC, LNCC with optional masking), the
//! bending-energy regularizer, and the composite registration
//! objective with exact gradients with respect to the velocity-lattice
//! coefficients.
//!
//! All reductions use a fixed sequential order so that identical
//! inputs produce bit-identical losses and gradients.

use crate::error::{Error, Result};
use crate::imaging::{bilinear_zero_grad, BinaryMask, Grid2D, Image2D, Vec2};
use crate::transform::{exp_adjoint, exp_svf_trace, squaring_steps, SplinePlan, VelocityLattice};
use serde::{Deserialize, Serialize};

/// Variance guard added to correlation denominators, in squared
/// intensity units of unit-normalized images.
pub const DEFAULT_EPSILON_VAR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Ssd,
    Ncc,
    Lncc,
}

/// Similarity choice, LNCC window, optional averaging mask, and the
/// regularization weight of the composite objective.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    pub similarity: Similarity,
    /// LNCC window side length in pixels (odd, >= 3).
    pub kernel: usize,
    /// Restricts the similarity average; windows stay unmasked.
    pub mask: Option<BinaryMask>,
    /// Bending-energy weight.
    pub alpha: f64,
    pub epsilon_var: f64,
}

impl ObjectiveSpec {
    pub fn new(similarity: Similarity, kernel: usize, alpha: f64) -> Self {
        ObjectiveSpec { similarity, kernel, mask: None, alpha, epsilon_var: DEFAULT_EPSILON_VAR }
    }

    pub fn with_mask(mut self, mask: BinaryMask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.similarity == Similarity::Lncc && (self.kernel % 2 == 0 || self.kernel < 3) {
            return Err(Error::invalid(format!(
                "LNCC kernel must be odd and >= 3, got {}",
                self.kernel
            )));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.epsilon_var > 0.0) {
            return Err(Error::invalid("epsilon_var must be > 0"));
        }
        if let Some(m) = &self.mask {
            m.ensure_nonempty()?;
        }
        Ok(())
    }
}

/// Sliding-window sums over the kernel window clipped to the domain.
/// O(width * height) independent of the radius; self-adjoint because
/// `r in W(p) <=> p in W(r)`.
pub fn box_sum(vals: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    // Horizontal pass.
    let mut tmp = vec![0.0; vals.len()];
    for j in 0..h {
        let row = &vals[j * w..(j + 1) * w];
        let out = &mut tmp[j * w..(j + 1) * w];
        let mut acc = 0.0;
        for i in 0..radius.min(w) {
            acc += row[i];
        }
        for i in 0..w {
            if i + radius < w {
                acc += row[i + radius];
            }
            out[i] = acc;
            if i >= radius {
                acc -= row[i - radius];
            }
        }
    }
    // Vertical pass with a row-wide rolling accumulator.
    let mut out = vec![0.0; vals.len()];
    let mut acc = vec![0.0; w];
    for j in 0..radius.min(h) {
        for i in 0..w {
            acc[i] += tmp[j * w + i];
        }
    }
    for j in 0..h {
        if j + radius < h {
            let row = &tmp[(j + radius) * w..(j + radius + 1) * w];
            for i in 0..w {
                acc[i] += row[i];
            }
        }
        out[j * w..(j + 1) * w].copy_from_slice(&acc);
        if j >= radius {
            let row = &tmp[(j - radius) * w..(j - radius + 1) * w];
            for i in 0..w {
                acc[i] -= row[i];
            }
        }
    }
    out
}

/// Per-pixel clipped window pixel counts, computed analytically.
pub fn box_counts(w: usize, h: usize, radius: usize) -> Vec<f64> {
    let mut counts = vec![0.0; w * h];
    let span = |k: usize, n: usize| -> f64 {
        let lo = k.saturating_sub(radius);
        let hi = (k + radius).min(n - 1);
        (hi - lo + 1) as f64
    };
    for j in 0..h {
        let sy = span(j, h);
        for i in 0..w {
            counts[j * w + i] = sy * span(i, w);
        }
    }
    counts
}

fn check_same_grid(f: &Image2D, w: &Image2D) -> Result<()> {
    if f.grid != w.grid {
        return Err(Error::invalid("images live on different grids"));
    }
    Ok(())
}

/// Masked pixel selection: indicator raster and pixel count.
fn selection(grid: &Grid2D, mask: Option<&BinaryMask>) -> Result<(Vec<f64>, f64)> {
    match mask {
        None => Ok((vec![1.0; grid.len()], grid.len() as f64)),
        Some(m) => {
            if m.grid != *grid {
                return Err(Error::invalid("mask grid does not match images"));
            }
            m.ensure_nonempty()?;
            let sel: Vec<f64> = m.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let count = m.count_true() as f64;
            Ok((sel, count))
        }
    }
}

/// Mean over (masked) pixels of the squared difference.
pub fn ssd_loss(f: &Image2D, w: &Image2D, mask: Option<&BinaryMask>) -> Result<f64> {
    check_same_grid(f, w)?;
    let (sel, count) = selection(&f.grid, mask)?;
    let mut acc = 0.0;
    for k in 0..f.values.len() {
        let d = f.values[k] - w.values[k];
        acc += sel[k] * d * d;
    }
    Ok(acc / count)
}

fn ssd_loss_grad(f: &[f64], w: &[f64], sel: &[f64], count: f64) -> (f64, Vec<f64>) {
    let mut acc = 0.0;
    let mut grad = vec![0.0; w.len()];
    for k in 0..w.len() {
        let d = f[k] - w[k];
        acc += sel[k] * d * d;
        grad[k] = sel[k] * 2.0 * (w[k] - f[k]) / count;
    }
    (acc / count, grad)
}

/// NCC loss result; `degenerate` flags a constant region where the
/// correlation is undefined and the loss is pinned at 1.
#[derive(Debug, Clone, Copy)]
pub struct NccOutcome {
    pub loss: f64,
    pub degenerate: bool,
}

/// `1 - rho` where `rho` is the Pearson correlation over (masked)
/// pixels; range [0, 2].
pub fn ncc_loss(
    f: &Image2D,
    w: &Image2D,
    mask: Option<&BinaryMask>,
    epsilon_var: f64,
) -> Result<NccOutcome> {
    check_same_grid(f, w)?;
    let (sel, count) = selection(&f.grid, mask)?;
    let (outcome, _) = ncc_loss_grad(&f.values, &w.values, &sel, count, epsilon_var);
    Ok(outcome)
}

fn ncc_loss_grad(
    f: &[f64],
    w: &[f64],
    sel: &[f64],
    count: f64,
    epsilon_var: f64,
) -> (NccOutcome, Vec<f64>) {
    let mut sf = 0.0;
    let mut sw = 0.0;
    for k in 0..f.len() {
        sf += sel[k] * f[k];
        sw += sel[k] * w[k];
    }
    let mf = sf / count;
    let mw = sw / count;
    let mut sff = 0.0;
    let mut sww = 0.0;
    let mut sfw = 0.0;
    for k in 0..f.len() {
        let df = sel[k] * (f[k] - mf);
        let dw = sel[k] * (w[k] - mw);
        sff += df * df;
        sww += dw * dw;
        sfw += df * dw;
    }
    if sff / count <= epsilon_var || sww / count <= epsilon_var {
        log::debug!("NCC degenerate region: variances {:.3e}/{:.3e}", sff / count, sww / count);
        return (NccOutcome { loss: 1.0, degenerate: true }, vec![0.0; f.len()]);
    }
    let denom = (sff * sww).sqrt();
    let rho = sfw / denom;
    let mut grad = vec![0.0; f.len()];
    for k in 0..f.len() {
        if sel[k] != 0.0 {
            let drho = (f[k] - mf) / denom - rho * (w[k] - mw) / sww;
            grad[k] = -drho;
        }
    }
    (NccOutcome { loss: 1.0 - rho, degenerate: false }, grad)
}

/// Windowed squared-correlation loss: for each pixel the kernel-window
/// sums of mean-removed values give
/// `cc = S_fw^2 / (S_ff * S_ww + epsilon)`, and the loss is
/// `1 - mean cc` over (masked) pixels.
pub fn lncc_loss(
    f: &Image2D,
    w: &Image2D,
    kernel: usize,
    mask: Option<&BinaryMask>,
    epsilon_var: f64,
) -> Result<f64> {
    check_same_grid(f, w)?;
    if kernel % 2 == 0 || kernel < 3 || kernel > f.grid.width.min(f.grid.height) {
        return Err(Error::invalid(format!("bad LNCC kernel {kernel}")));
    }
    let (sel, count) = selection(&f.grid, mask)?;
    let stats = LnccFixedStats::new(&f.values, f.grid.width, f.grid.height, kernel);
    let (loss, _) = lncc_loss_grad(&stats, &f.values, &w.values, &sel, count, epsilon_var, false);
    Ok(loss)
}

/// Window statistics of the fixed image; they do not change during
/// optimization and are computed once per level.
pub struct LnccFixedStats {
    w: usize,
    h: usize,
    radius: usize,
    counts: Vec<f64>,
    sum_f: Vec<f64>,
    var_f: Vec<f64>,
}

impl LnccFixedStats {
    pub fn new(f: &[f64], w: usize, h: usize, kernel: usize) -> Self {
        let radius = kernel / 2;
        let counts = box_counts(w, h, radius);
        let sum_f = box_sum(f, w, h, radius);
        let f2: Vec<f64> = f.iter().map(|&v| v * v).collect();
        let sum_ff = box_sum(&f2, w, h, radius);
        let var_f: Vec<f64> = (0..f.len())
            .map(|k| sum_ff[k] - sum_f[k] * sum_f[k] / counts[k])
            .collect();
        LnccFixedStats { w, h, radius, counts, sum_f, var_f }
    }
}

/// LNCC loss and, when `with_grad`, its gradient with respect to the
/// warped image. The box filter is self-adjoint, so the per-pixel
/// coefficients of the gradient scatter back through four more box
/// sums.
fn lncc_loss_grad(
    stats: &LnccFixedStats,
    f: &[f64],
    wv: &[f64],
    sel: &[f64],
    count: f64,
    epsilon_var: f64,
    with_grad: bool,
) -> (f64, Vec<f64>) {
    let (w, h, radius) = (stats.w, stats.h, stats.radius);
    let n = &stats.counts;
    let sum_w = box_sum(wv, w, h, radius);
    let w2: Vec<f64> = wv.iter().map(|&v| v * v).collect();
    let sum_ww = box_sum(&w2, w, h, radius);
    let fw: Vec<f64> = f.iter().zip(wv).map(|(&a, &b)| a * b).collect();
    let sum_fw = box_sum(&fw, w, h, radius);

    let len = f.len();
    let mut cc_acc = 0.0;
    // Scatter fields a*sel, a*mean_f*sel, b*sel, b*mean_w*sel.
    let mut a_sel = vec![0.0; if with_grad { len } else { 0 }];
    let mut a_mf = vec![0.0; if with_grad { len } else { 0 }];
    let mut b_sel = vec![0.0; if with_grad { len } else { 0 }];
    let mut b_mw = vec![0.0; if with_grad { len } else { 0 }];

    for k in 0..len {
        let cross = sum_fw[k] - stats.sum_f[k] * sum_w[k] / n[k];
        let var_w = sum_ww[k] - sum_w[k] * sum_w[k] / n[k];
        let denom = stats.var_f[k] * var_w + epsilon_var;
        let cc = cross * cross / denom;
        if sel[k] != 0.0 {
            cc_acc += cc;
        }
        if with_grad && sel[k] != 0.0 {
            let a = 2.0 * cross / denom;
            let b = 2.0 * cross * cross * stats.var_f[k] / (denom * denom);
            a_sel[k] = a;
            a_mf[k] = a * stats.sum_f[k] / n[k];
            b_sel[k] = b;
            b_mw[k] = b * sum_w[k] / n[k];
        }
    }
    let loss = 1.0 - cc_acc / count;
    if !with_grad {
        return (loss, Vec::new());
    }

    let box_a = box_sum(&a_sel, w, h, radius);
    let box_amf = box_sum(&a_mf, w, h, radius);
    let box_b = box_sum(&b_sel, w, h, radius);
    let box_bmw = box_sum(&b_mw, w, h, radius);
    let mut grad = vec![0.0; len];
    for k in 0..len {
        grad[k] = -(f[k] * box_a[k] - box_amf[k] - wv[k] * box_b[k] + box_bmw[k]) / count;
    }
    (loss, grad)
}

/// Similarity loss and gradient with respect to the warped image.
pub fn similarity_loss_grad(
    similarity: Similarity,
    epsilon_var: f64,
    fixed: &[f64],
    warped: &[f64],
    lncc_stats: Option<&LnccFixedStats>,
    sel: &[f64],
    count: f64,
) -> (f64, Vec<f64>, bool) {
    match similarity {
        Similarity::Ssd => {
            let (loss, grad) = ssd_loss_grad(fixed, warped, sel, count);
            (loss, grad, false)
        }
        Similarity::Ncc => {
            let (outcome, grad) = ncc_loss_grad(fixed, warped, sel, count, epsilon_var);
            (outcome.loss, grad, outcome.degenerate)
        }
        Similarity::Lncc => {
            let stats = lncc_stats.expect("LNCC requires precomputed fixed-image stats");
            let (loss, grad) =
                lncc_loss_grad(stats, fixed, warped, sel, count, epsilon_var, true);
            (loss, grad, false)
        }
    }
}

/// Mean over interior pixels and both vector components of
/// `(d2/dx2)^2 + 2 (d2/dxdy)^2 + (d2/dy2)^2`, second derivatives by
/// central differences in physical units.
pub fn bending_energy(v: &[Vec2], grid: &Grid2D) -> Result<f64> {
    let (val, _) = bending_energy_grad(v, grid, false)?;
    Ok(val)
}

/// Bending energy and optionally its gradient with respect to the
/// raster values.
pub fn bending_energy_grad(
    v: &[Vec2],
    grid: &Grid2D,
    with_grad: bool,
) -> Result<(f64, Vec<Vec2>)> {
    let (w, h) = (grid.width, grid.height);
    if w < 3 || h < 3 {
        return Err(Error::invalid("bending energy needs at least a 3x3 raster"));
    }
    let s2 = grid.spacing * grid.spacing;
    let inv_s2 = 1.0 / s2;
    let inv_4s2 = 1.0 / (4.0 * s2);
    let n_int = ((w - 2) * (h - 2)) as f64;

    let mut energy = 0.0;
    let mut grad = vec![Vec2::ZERO; if with_grad { v.len() } else { 0 }];
    let component = |vv: &Vec2, axis: usize| if axis == 0 { vv.x } else { vv.y };

    for j in 1..h - 1 {
        for i in 1..w - 1 {
            let idx = j * w + i;
            for axis in 0..2 {
                let c = component(&v[idx], axis);
                let xm = component(&v[idx - 1], axis);
                let xp = component(&v[idx + 1], axis);
                let ym = component(&v[idx - w], axis);
                let yp = component(&v[idx + w], axis);
                let pp = component(&v[idx + w + 1], axis);
                let pm = component(&v[idx - w + 1], axis);
                let mp = component(&v[idx + w - 1], axis);
                let mm = component(&v[idx - w - 1], axis);

                let dxx = (xp - 2.0 * c + xm) * inv_s2;
                let dyy = (yp - 2.0 * c + ym) * inv_s2;
                let dxy = (pp - pm - mp + mm) * inv_4s2;
                energy += dxx * dxx + 2.0 * dxy * dxy + dyy * dyy;

                if with_grad {
                    let gxx = 2.0 * dxx / n_int * inv_s2;
                    let gyy = 2.0 * dyy / n_int * inv_s2;
                    let gxy = 4.0 * dxy / n_int * inv_4s2;
                    let add = |g: &mut Vec<Vec2>, k: usize, val: f64| {
                        if axis == 0 {
                            g[k].x += val;
                        } else {
                            g[k].y += val;
                        }
                    };
                    add(&mut grad, idx + 1, gxx);
                    add(&mut grad, idx, -2.0 * gxx);
                    add(&mut grad, idx - 1, gxx);
                    add(&mut grad, idx + w, gyy);
                    add(&mut grad, idx, -2.0 * gyy);
                    add(&mut grad, idx - w, gyy);
                    add(&mut grad, idx + w + 1, gxy);
                    add(&mut grad, idx - w + 1, -gxy);
                    add(&mut grad, idx + w - 1, -gxy);
                    add(&mut grad, idx - w - 1, gxy);
                }
            }
        }
    }
    Ok((energy / n_int, grad))
}

/// One evaluation of the composite objective.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub similarity: f64,
    pub bending: f64,
    /// Gradient with respect to the lattice coefficients (per mm).
    pub grad: Vec<Vec2>,
    pub degenerate: bool,
    pub squaring_steps: u32,
}

/// Composite objective `L = sim(F, M . exp(v)) + alpha * bending(v)`
/// bound to one resolution level.
///
/// The fixed/moving images, mask, and spline plan are immutable per
/// level; only the lattice coefficients change between evaluations.
pub struct CompositeProblem<'a> {
    fixed: &'a Image2D,
    moving: &'a Image2D,
    spec: &'a ObjectiveSpec,
    plan: SplinePlan,
    sel: Vec<f64>,
    count: f64,
    lncc_stats: Option<LnccFixedStats>,
}

impl<'a> CompositeProblem<'a> {
    pub fn new(
        spec: &'a ObjectiveSpec,
        fixed: &'a Image2D,
        moving: &'a Image2D,
        lattice: &VelocityLattice,
    ) -> Result<Self> {
        spec.validate()?;
        check_same_grid(fixed, moving)?;
        let plan = SplinePlan::new(lattice, fixed.grid)?;
        let (sel, count) = selection(&fixed.grid, spec.mask.as_ref())?;
        let lncc_stats = match spec.similarity {
            Similarity::Lncc => {
                if spec.kernel > fixed.grid.width.min(fixed.grid.height) {
                    return Err(Error::invalid(format!(
                        "LNCC kernel {} exceeds image size {}x{}",
                        spec.kernel, fixed.grid.width, fixed.grid.height
                    )));
                }
                Some(LnccFixedStats::new(
                    &fixed.values,
                    fixed.grid.width,
                    fixed.grid.height,
                    spec.kernel,
                ))
            }
            _ => None,
        };
        Ok(CompositeProblem { fixed, moving, spec, plan, sel, count, lncc_stats })
    }

    pub fn grid(&self) -> Grid2D {
        self.fixed.grid
    }

    /// Loss and exact coefficient gradient at the given lattice state.
    pub fn evaluate(&self, lattice: &VelocityLattice) -> Result<Evaluation> {
        let grid = self.fixed.grid;
        let (w, h) = (grid.width, grid.height);

        // Forward: velocity, exponential, warp.
        let v = self.plan.evaluate(lattice);
        let steps = squaring_steps(&v, grid.spacing);
        let trace = exp_svf_trace(&v, grid, steps);
        let u = trace.final_field();

        // Fixed and moving share a grid; sample coordinates formed in
        // pixel space keep the identity transform exact.
        let mut warped = vec![0.0; w * h];
        let mut mgrad = vec![Vec2::ZERO; w * h];
        let inv_s = 1.0 / grid.spacing;
        for j in 0..h {
            for i in 0..w {
                let idx = j * w + i;
                let x = i as f64 + u[idx].x * inv_s;
                let y = j as f64 + u[idx].y * inv_s;
                let (val, dx, dy) = bilinear_zero_grad(&self.moving.values, w, h, x, y);
                warped[idx] = val;
                mgrad[idx] = Vec2::new(dx * inv_s, dy * inv_s);
            }
        }

        let (sim, dsim_dwarped, degenerate) = similarity_loss_grad(
            self.spec.similarity,
            self.spec.epsilon_var,
            &self.fixed.values,
            &warped,
            self.lncc_stats.as_ref(),
            &self.sel,
            self.count,
        );

        let (bend, mut dv) = if self.spec.alpha > 0.0 {
            let (b, g) = bending_energy_grad(&v, &grid, true)?;
            (b, g)
        } else {
            (bending_energy(&v, &grid)?, vec![Vec2::ZERO; w * h])
        };
        for g in dv.iter_mut() {
            *g = *g * self.spec.alpha;
        }

        let loss = sim + self.spec.alpha * bend;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "composite loss (sim {sim}, bending {bend})"
            )));
        }

        // Backward: image chain, exponential adjoint, spline scatter.
        let grad_u: Vec<Vec2> = (0..w * h)
            .map(|k| mgrad[k] * dsim_dwarped[k])
            .collect();
        let grad_u0 = exp_adjoint(&trace, &grad_u);
        let scale = 1.0 / (1u64 << steps) as f64;
        for (g, g0) in dv.iter_mut().zip(&grad_u0) {
            *g += *g0 * scale;
        }
        let grad = self.plan.scatter(&dv, lattice);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("composite gradient".into()));
        }

        Ok(Evaluation { loss, similarity: sim, bending: bend, grad, degenerate, squaring_steps: steps })
    }
}

/// One-shot composite loss and gradient.
pub fn composite_loss(
    spec: &ObjectiveSpec,
    fixed: &Image2D,
    moving: &Image2D,
    lattice: &VelocityLattice,
) -> Result<Evaluation> {
    CompositeProblem::new(spec, fixed, moving, lattice)?.evaluate(lattice)
}
