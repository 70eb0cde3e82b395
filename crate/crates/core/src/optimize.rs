//! Adam optimization, the adaptive convergence rule, multiresolution
//! registration drivers, ROI preparation for the attenuation pipeline,
//! the two end-to-end pipelines, and the parameter-sweep harness.
//!
//! Transformation parameters are optimized in extent-normalized units
//! (coefficients divided by half the fixed image's physical extent) so
//! that one learning rate behaves consistently across image sizes; the
//! public lattice and affine types stay in mm.

use crate::analysis::median_lower;
use crate::error::{Error, Result};
use crate::imaging::{
    bilinear_zero_grad, dilate_mask, normalize_percentile, BinaryMask, Image2D, MaskKind, Vec2,
};
use crate::metrics::{full_report, PairAnnotations};
use crate::objective::{
    similarity_loss_grad, CompositeProblem, ObjectiveSpec, Similarity, DEFAULT_EPSILON_VAR,
};
use crate::transform::{
    compose_affine_displacement, exp_lattice, AffineTransform, DisplacementField, VelocityLattice,
};
use crate::{imaging::build_pyramid, transform::jacobian_analysis};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Bias-corrected Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(lr: f64, n: usize) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// One bias-corrected update. Non-finite gradients abort.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("Adam gradient".into()));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let mhat = self.m[k] / c1;
            let vhat = self.v[k] / c2;
            params[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Adaptive stopping rule: converged when the current objective value
/// differs from the moving average of the last `window` values
/// (including the current one, checked every step) by less than
/// `threshold_factor` times the initial objective value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvergenceRule {
    pub window: usize,
    pub threshold_factor: f64,
    pub max_steps: usize,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        ConvergenceRule { window: 200, threshold_factor: 1e-3, max_steps: 3500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    WindowCriterion,
    MaxSteps,
}

/// Stop decision for the current loss history.
pub fn convergence_reason(
    rule: &ConvergenceRule,
    history: &[f64],
    initial_loss: f64,
) -> Option<StopReason> {
    let n = history.len();
    if n >= rule.window {
        let mean: f64 = history[n - rule.window..].iter().sum::<f64>() / rule.window as f64;
        if (history[n - 1] - mean).abs() < rule.threshold_factor * initial_loss.abs() {
            return Some(StopReason::WindowCriterion);
        }
    }
    if n >= rule.max_steps {
        return Some(StopReason::MaxSteps);
    }
    None
}

pub fn check_convergence(rule: &ConvergenceRule, history: &[f64], initial_loss: f64) -> bool {
    convergence_reason(rule, history, initial_loss).is_some()
}

/// Per-level parameters of the multiresolution non-rigid stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiresSchedule {
    pub levels: usize,
    /// LNCC kernel per level, coarse to fine.
    pub kernels: Vec<usize>,
    /// Learning rate per level, coarse to fine.
    pub lrs: Vec<f64>,
    /// Control-point stride in finest-level pixels, shared by levels.
    pub stride: f64,
    /// Bending-energy weight, shared by levels.
    pub alpha: f64,
    pub rule: ConvergenceRule,
}

impl MultiresSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::invalid("schedule needs at least one level"));
        }
        if self.kernels.len() != self.levels || self.lrs.len() != self.levels {
            return Err(Error::invalid(format!(
                "kernel/lr lists must have {} entries",
                self.levels
            )));
        }
        if self.rule.window == 0 || !(self.rule.threshold_factor > 0.0) {
            return Err(Error::invalid("bad convergence rule"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelTrajectory {
    pub level: usize,
    pub size: usize,
    pub losses: Vec<f64>,
    pub reason: StopReason,
}

/// Outcome of one registration run.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub affine: Option<AffineTransform>,
    pub lattice: VelocityLattice,
    /// Deformation of the SVFFD stage alone at the finest level.
    pub svffd_phi: DisplacementField,
    /// Total deformation (affine composed after the SVFFD lookup when
    /// an affine pre-registration ran).
    pub phi: DisplacementField,
    pub trajectories: Vec<LevelTrajectory>,
    /// Wall-clock seconds; reporting only, never part of deterministic
    /// outputs.
    pub duration_s: f64,
    pub degenerate_steps: usize,
}

fn write_scaled_coeffs(lattice: &mut VelocityLattice, theta: &[f64], scale: f64) {
    for (k, c) in lattice.coeffs.iter_mut().enumerate() {
        c.x = theta[2 * k] * scale;
        c.y = theta[2 * k + 1] * scale;
    }
}

/// Multiresolution SVFFD registration of `moving` onto `fixed`.
///
/// Images are percentile-normalized for the objective; the returned
/// transform applies to raw intensities. The optional mask restricts
/// the similarity average and is resampled per level.
pub fn register_nonrigid(
    fixed: &Image2D,
    moving: &Image2D,
    schedule: &MultiresSchedule,
    similarity: Similarity,
    mask: Option<&BinaryMask>,
    epsilon_var: f64,
) -> Result<(VelocityLattice, DisplacementField, Vec<LevelTrajectory>, usize)> {
    schedule.validate()?;
    if fixed.grid != moving.grid {
        return Err(Error::invalid("fixed and moving must share a grid"));
    }
    let fixed_n = normalize_percentile(fixed);
    let moving_n = normalize_percentile(moving);
    let fixed_pyr = build_pyramid(&fixed_n, schedule.levels)?;
    let moving_pyr = build_pyramid(&moving_n, schedule.levels)?;

    let finest = fixed.grid;
    let mut lattice = VelocityLattice::for_grid(&finest, schedule.stride)?;
    let scale = finest.half_extent();
    let mut theta = vec![0.0; lattice.num_params()];
    let mut trajectories = Vec::with_capacity(schedule.levels);
    let mut degenerate_steps = 0usize;

    for level in 0..schedule.levels {
        let f_l = &fixed_pyr[level];
        let m_l = &moving_pyr[level];
        let mut spec = ObjectiveSpec::new(similarity, schedule.kernels[level], schedule.alpha);
        spec.epsilon_var = epsilon_var;
        if let Some(m) = mask {
            spec = spec.with_mask(m.resample_to(f_l.grid));
        }
        let problem = CompositeProblem::new(&spec, f_l, m_l, &lattice)?;
        let mut adam = AdamState::new(schedule.lrs[level], theta.len());
        let mut history: Vec<f64> = Vec::new();
        let reason;

        loop {
            write_scaled_coeffs(&mut lattice, &theta, scale);
            let eval = problem.evaluate(&lattice).map_err(|e| {
                Error::NonFinite(format!("level {level}, step {}: {e}", history.len()))
            })?;
            if eval.degenerate {
                degenerate_steps += 1;
            }
            history.push(eval.loss);
            if let Some(r) = convergence_reason(&schedule.rule, &history, history[0]) {
                reason = r;
                break;
            }
            let grad_theta: Vec<f64> = eval
                .grad
                .iter()
                .flat_map(|g| [g.x * scale, g.y * scale])
                .collect();
            adam.step(&mut theta, &grad_theta).map_err(|e| {
                Error::NonFinite(format!("level {level}, step {}: {e}", history.len()))
            })?;
        }
        trajectories.push(LevelTrajectory {
            level,
            size: f_l.grid.width,
            losses: history,
            reason,
        });
    }

    write_scaled_coeffs(&mut lattice, &theta, scale);
    let phi = exp_lattice(&lattice, finest)?;
    if !phi.is_finite() {
        return Err(Error::NonFinite("final deformation".into()));
    }
    Ok((lattice, phi, trajectories, degenerate_steps))
}

/// Fixed per-level step counts of the affine stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineSchedule {
    /// Steps per level, coarse to fine; the level count follows from
    /// the list length.
    pub steps: Vec<usize>,
    pub lr: f64,
}

impl Default for AffineSchedule {
    fn default() -> Self {
        AffineSchedule { steps: vec![800, 50, 50, 50], lr: 1e-3 }
    }
}

/// Centered affine parameterization in extent-normalized units:
/// `phi(p) = A (p - c) + c + s tau` with `theta = [a00 a01 a10 a11 tau]`.
fn affine_from_theta(theta: &[f64; 6], center: Vec2, scale: f64) -> AffineTransform {
    let a = [[theta[0], theta[1]], [theta[2], theta[3]]];
    let t = Vec2::new(
        center.x - a[0][0] * center.x - a[0][1] * center.y + scale * theta[4],
        center.y - a[1][0] * center.x - a[1][1] * center.y + scale * theta[5],
    );
    AffineTransform { a, t }
}

fn run_affine_once(
    fixed_pyr: &[Image2D],
    moving_pyr: &[Image2D],
    roi: &BinaryMask,
    schedule: &AffineSchedule,
    lr: f64,
    center: Vec2,
    scale: f64,
    epsilon_var: f64,
) -> Result<([f64; 6], usize)> {
    let mut theta = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let mut degenerate_steps = 0usize;
    for (level, &steps) in schedule.steps.iter().enumerate() {
        let f_l = &fixed_pyr[level];
        let m_l = &moving_pyr[level];
        let grid = f_l.grid;
        let (w, h) = (grid.width, grid.height);
        let mask_l = roi.resample_to(grid);
        mask_l.ensure_nonempty()?;
        let sel: Vec<f64> = mask_l.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let count = mask_l.count_true() as f64;
        let mut adam = AdamState::new(lr, 6);
        for _ in 0..steps {
            let affine = affine_from_theta(&theta, center, scale);
            let mut warped = vec![0.0; w * h];
            let mut mgrad = vec![Vec2::ZERO; w * h];
            for j in 0..h {
                for i in 0..w {
                    let idx = j * w + i;
                    let p = affine.apply(grid.position(i, j));
                    let (x, y) = m_l.grid.to_pixel(p);
                    let (val, dx, dy) =
                        bilinear_zero_grad(&m_l.values, m_l.grid.width, m_l.grid.height, x, y);
                    warped[idx] = val;
                    mgrad[idx] = Vec2::new(dx / m_l.grid.spacing, dy / m_l.grid.spacing);
                }
            }
            let (_, dloss_dwarped, degenerate) = similarity_loss_grad(
                Similarity::Ncc,
                epsilon_var,
                &f_l.values,
                &warped,
                None,
                &sel,
                count,
            );
            if degenerate {
                degenerate_steps += 1;
            }
            let mut grad = [0.0f64; 6];
            for j in 0..h {
                for i in 0..w {
                    let idx = j * w + i;
                    let g = dloss_dwarped[idx];
                    if g == 0.0 {
                        continue;
                    }
                    let p = grid.position(i, j);
                    let (px, py) = (p.x - center.x, p.y - center.y);
                    let mg = mgrad[idx];
                    grad[0] += g * mg.x * px;
                    grad[1] += g * mg.x * py;
                    grad[2] += g * mg.y * px;
                    grad[3] += g * mg.y * py;
                    grad[4] += g * mg.x * scale;
                    grad[5] += g * mg.y * scale;
                }
            }
            let mut th = theta.to_vec();
            adam.step(&mut th, &grad)?;
            theta.copy_from_slice(&th);
        }
    }
    Ok((theta, degenerate_steps))
}

/// Multiresolution 6-parameter affine registration with a masked NCC
/// objective and fixed per-level step counts.
///
/// A rank-deficient result triggers one retry from identity at half
/// the learning rate; a second failure aborts.
pub fn register_affine(
    fixed: &Image2D,
    moving: &Image2D,
    roi: &BinaryMask,
    schedule: &AffineSchedule,
    epsilon_var: f64,
) -> Result<AffineTransform> {
    if fixed.grid != moving.grid {
        return Err(Error::invalid("fixed and moving must share a grid"));
    }
    roi.ensure_nonempty()?;
    let levels = schedule.steps.len();
    let fixed_n = normalize_percentile(fixed);
    let moving_n = normalize_percentile(moving);
    let fixed_pyr = build_pyramid(&fixed_n, levels)?;
    let moving_pyr = build_pyramid(&moving_n, levels)?;
    let center = fixed.grid.center();
    let scale = fixed.grid.half_extent();

    const MIN_DET: f64 = 1e-3;
    let (theta, _) = run_affine_once(
        &fixed_pyr, &moving_pyr, roi, schedule, schedule.lr, center, scale, epsilon_var,
    )?;
    let affine = affine_from_theta(&theta, center, scale);
    if affine.det().abs() >= MIN_DET {
        return Ok(affine);
    }
    log::warn!(
        "affine registration degenerate (det = {:.3e}); retrying from identity at halved lr",
        affine.det()
    );
    let (theta, _) = run_affine_once(
        &fixed_pyr, &moving_pyr, roi, schedule, schedule.lr * 0.5, center, scale, epsilon_var,
    )?;
    let affine = affine_from_theta(&theta, center, scale);
    if affine.det().abs() >= MIN_DET {
        Ok(affine)
    } else {
        Err(Error::Degenerate(format!(
            "affine registration rank-deficient after retry (det = {:.3e})",
            affine.det()
        )))
    }
}

/// 2-D point used by the concave hull.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Pt {
    x: f64,
    y: f64,
}

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by the monotone chain, counter-clockwise.
fn convex_hull(mut pts: Vec<Pt>) -> Vec<Pt> {
    pts.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()));
    pts.dedup();
    let n = pts.len();
    if n < 3 {
        return pts;
    }
    let mut hull: Vec<Pt> = Vec::with_capacity(2 * n);
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev() {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn point_segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.x + t * dx, a.y + t * dy);
    ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt()
}

/// Concave hull by edge digging: starting from the convex hull, any
/// boundary edge longer than `concavity` pixels is split at the
/// nearest interior candidate point, recursively. With the default
/// concavity of 300 px no edge of a 256-px image qualifies and the
/// result equals the convex hull.
fn concave_hull(points: &[Pt], concavity: f64) -> Vec<Pt> {
    let mut hull = convex_hull(points.to_vec());
    if hull.len() < 3 {
        return hull;
    }
    let mut interior: Vec<Pt> = points
        .iter()
        .copied()
        .filter(|p| !hull.iter().any(|h| h == p))
        .collect();
    let mut k = 0usize;
    let mut guard = 0usize;
    while k < hull.len() && guard < 100_000 {
        guard += 1;
        let a = hull[k];
        let b = hull[(k + 1) % hull.len()];
        let edge_len = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).sqrt();
        if edge_len <= concavity || interior.is_empty() {
            k += 1;
            continue;
        }
        let (best, dist) = interior
            .iter()
            .enumerate()
            .map(|(idx, &p)| (idx, point_segment_distance(p, a, b)))
            .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        // Only dig when the candidate is closer to this edge than the
        // edge is long, keeping the polygon simple in practice.
        if dist < edge_len {
            let p = interior.swap_remove(best);
            hull.insert(k + 1, p);
        } else {
            k += 1;
        }
    }
    hull
}

fn point_in_polygon(x: f64, y: f64, poly: &[Pt]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for k in 0..n {
        let a = poly[k];
        let b = poly[(k + 1) % n];
        // On-edge points count as inside.
        if point_segment_distance(Pt { x, y }, a, b) < 1e-9 {
            return true;
        }
        if (a.y > y) != (b.y > y) {
            let t = (y - a.y) / (b.y - a.y);
            if x < a.x + t * (b.x - a.x) {
                inside = !inside;
            }
        }
    }
    inside
}

/// Registration ROI for the attenuation pipeline: the partial
/// inspiration mask dilated by a 25 px disk, closed over with the
/// concave hull (concavity 300 px), rasterized back to a mask.
pub fn prepare_attenuation_roi(
    partial_mask: &BinaryMask,
    dilation_px: f64,
    concavity: f64,
) -> Result<BinaryMask> {
    partial_mask.ensure_nonempty()?;
    let dilated = dilate_mask(partial_mask, dilation_px)?;
    let (w, h) = (dilated.grid.width, dilated.grid.height);
    let boundary = crate::metrics::boundary_pixels(&dilated);
    let pts: Vec<Pt> = (0..w * h)
        .filter(|&k| boundary[k])
        .map(|k| Pt { x: (k % w) as f64, y: (k / w) as f64 })
        .collect();
    let hull = concave_hull(&pts, concavity);
    if hull.len() < 3 {
        // Degenerate point cloud: keep the dilation.
        return Ok(BinaryMask { grid: dilated.grid, values: dilated.values, kind: MaskKind::RegistrationRoi });
    }
    let mut values = vec![false; w * h];
    for j in 0..h {
        for i in 0..w {
            values[j * w + i] = point_in_polygon(i as f64, j as f64, &hull);
        }
    }
    // The hull closes over the dilation; keep any stray dilated pixels.
    for (out, &src) in values.iter_mut().zip(&dilated.values) {
        *out = *out || src;
    }
    Ok(BinaryMask { grid: dilated.grid, values, kind: MaskKind::RegistrationRoi })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Darkfield,
    Attenuation,
}

/// All tunable parameters of one registration pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub levels: usize,
    pub stride: f64,
    pub alpha: f64,
    pub kernels: Vec<usize>,
    pub lr: f64,
    pub rule: ConvergenceRule,
    pub affine: AffineSchedule,
    pub roi_dilation_px: f64,
    pub roi_concavity: f64,
    pub epsilon_var: f64,
}

impl PipelineConfig {
    /// Dark-field defaults: stride 10, alpha 100, kernels 11/21/41/81,
    /// lr 1e-4, adaptive convergence.
    pub fn darkfield_default() -> Self {
        PipelineConfig {
            levels: 4,
            stride: 10.0,
            alpha: 100.0,
            kernels: vec![11, 21, 41, 81],
            lr: 1e-4,
            rule: ConvergenceRule::default(),
            affine: AffineSchedule::default(),
            roi_dilation_px: 25.0,
            roi_concavity: 300.0,
            epsilon_var: DEFAULT_EPSILON_VAR,
        }
    }

    /// Attenuation defaults: affine pre-registration then masked LNCC
    /// with alpha 80 and kernels 5/11/21/41.
    pub fn attenuation_default() -> Self {
        PipelineConfig {
            alpha: 80.0,
            kernels: vec![5, 11, 21, 41],
            ..PipelineConfig::darkfield_default()
        }
    }

    pub fn schedule(&self) -> MultiresSchedule {
        MultiresSchedule {
            levels: self.levels,
            kernels: self.kernels.clone(),
            lrs: vec![self.lr; self.levels],
            stride: self.stride,
            alpha: self.alpha,
            rule: self.rule,
        }
    }
}

/// Images (and the inspiration partial mask required by the
/// attenuation pipeline) for one registration.
#[derive(Debug, Clone)]
pub struct PipelineInput {
    pub fixed: Image2D,
    pub moving: Image2D,
    pub fixed_partial_mask: Option<BinaryMask>,
}

/// Run the modality-appropriate registration pipeline.
///
/// Dark-field: multiresolution SVFFD with unmasked LNCC. Attenuation:
/// ROI preparation, masked-NCC affine pre-registration, affine
/// resampling of the moving image, then masked-LNCC SVFFD; the total
/// transform composes the SVFFD lookup with the affine map.
pub fn run_pipeline(
    input: &PipelineInput,
    modality: Modality,
    config: &PipelineConfig,
) -> Result<RegistrationResult> {
    let start = Instant::now();
    let schedule = config.schedule();
    match modality {
        Modality::Darkfield => {
            let (lattice, phi, trajectories, degenerate_steps) = register_nonrigid(
                &input.fixed,
                &input.moving,
                &schedule,
                Similarity::Lncc,
                None,
                config.epsilon_var,
            )?;
            Ok(RegistrationResult {
                affine: None,
                lattice,
                svffd_phi: phi.clone(),
                phi,
                trajectories,
                duration_s: start.elapsed().as_secs_f64(),
                degenerate_steps,
            })
        }
        Modality::Attenuation => {
            let partial = input.fixed_partial_mask.as_ref().ok_or_else(|| {
                Error::invalid("attenuation pipeline requires the inspiration partial mask")
            })?;
            let roi =
                prepare_attenuation_roi(partial, config.roi_dilation_px, config.roi_concavity)?;
            let affine =
                register_affine(&input.fixed, &input.moving, &roi, &config.affine, config.epsilon_var)?;
            // Resample the moving image through the affine once, then
            // refine non-rigidly.
            let grid = input.fixed.grid;
            let mut pre = Vec::with_capacity(grid.len());
            for j in 0..grid.height {
                for i in 0..grid.width {
                    let p = affine.apply(grid.position(i, j));
                    pre.push(crate::imaging::sample_bilinear(&input.moving, p));
                }
            }
            let moving_pre = Image2D { grid, values: pre };
            let (lattice, svffd_phi, trajectories, degenerate_steps) = register_nonrigid(
                &input.fixed,
                &moving_pre,
                &schedule,
                Similarity::Lncc,
                Some(&roi),
                config.epsilon_var,
            )?;
            let phi = compose_affine_displacement(&affine, &svffd_phi);
            Ok(RegistrationResult {
                affine: Some(affine),
                lattice,
                svffd_phi,
                phi,
                trajectories,
                duration_s: start.elapsed().as_secs_f64(),
                degenerate_steps,
            })
        }
    }
}

/// One annotated pair for the sweep harness.
#[derive(Debug, Clone)]
pub struct SweepPair {
    pub name: String,
    pub fixed: Image2D,
    pub moving: Image2D,
    pub annotations: PairAnnotations,
}

/// Per-configuration medians over the sweep pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub stride: f64,
    pub dice_full: Option<f64>,
    pub dice_partial: Option<f64>,
    pub msd_full: Option<f64>,
    pub msd_partial: Option<f64>,
    pub tre: Option<f64>,
    pub mmgjd: Option<f64>,
    pub duration_s: Option<f64>,
    /// Pairs that failed in this cell, with reasons.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// Dark-field pipeline sweep over the alpha x stride grid, medians per
/// cell; per-pair failures are recorded and the sweep continues.
pub fn parameter_sweep(
    pairs: &[SweepPair],
    alphas: &[f64],
    strides: &[f64],
    base: &PipelineConfig,
) -> Result<SweepReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("sweep needs at least one pair"));
    }
    let mut rows = Vec::with_capacity(alphas.len() * strides.len());
    for &alpha in alphas {
        for &stride in strides {
            let mut config = base.clone();
            config.alpha = alpha;
            config.stride = stride;
            let mut dice_full = Vec::new();
            let mut dice_partial = Vec::new();
            let mut msd_full = Vec::new();
            let mut msd_partial = Vec::new();
            let mut tre = Vec::new();
            let mut mmgjd = Vec::new();
            let mut durations = Vec::new();
            let mut failures = Vec::new();
            for pair in pairs {
                let input = PipelineInput {
                    fixed: pair.fixed.clone(),
                    moving: pair.moving.clone(),
                    fixed_partial_mask: None,
                };
                let outcome = run_pipeline(&input, Modality::Darkfield, &config)
                    .and_then(|res| {
                        let (_, after) = full_report(&pair.annotations, &res.phi)?;
                        Ok((res, after))
                    });
                match outcome {
                    Ok((res, after)) => {
                        if let Some(v) = after.dice_full {
                            dice_full.push(v);
                        }
                        if let Some(v) = after.dice_partial {
                            dice_partial.push(v);
                        }
                        if let Some(v) = after.msd_full {
                            msd_full.push(v);
                        }
                        if let Some(v) = after.msd_partial {
                            msd_partial.push(v);
                        }
                        if let Some(v) = after.tre_mean {
                            tre.push(v);
                        }
                        if let Some(v) = after.mmgjd {
                            mmgjd.push(v);
                        }
                        durations.push(res.duration_s);
                    }
                    Err(e) => failures.push(format!("{}: {e}", pair.name)),
                }
            }
            rows.push(SweepRow {
                alpha,
                stride,
                dice_full: median_lower(&dice_full),
                dice_partial: median_lower(&dice_partial),
                msd_full: median_lower(&msd_full),
                msd_partial: median_lower(&msd_partial),
                tre: median_lower(&tre),
                mmgjd: median_lower(&mmgjd),
                duration_s: median_lower(&durations),
                failures,
            });
        }
    }
    Ok(SweepReport { rows })
}

/// Folding ratio and MMGJD of a registration's total deformation.
pub fn regularity_of(result: &RegistrationResult) -> (f64, f64) {
    let jac = jacobian_analysis(&result.phi);
    (jac.folding_ratio, jac.mmgjd)
}
