//! Seeded synthetic test pairs: textured lung-like phantoms with
//! ground-truth diffeomorphic deformations, masks, landmarks, and
//! probe points, enabling desk-scale verification of the whole
//! pipeline. Attenuation-like phantoms add rigid bone overlays that
//! move differently from the lung texture, reproducing the
//! bone-overlap confound of projection imaging.

use crate::error::{Error, Result};
use crate::imaging::{
    gaussian_smooth, BinaryMask, Grid2D, Image2D, LandmarkSet, MaskKind, Vec2,
};
use crate::metrics::warp_mask;
use crate::transform::{
    exp_lattice, jacobian_analysis, spline_velocity, DisplacementField, VelocityLattice,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntensityModel {
    /// Signal only inside the lung fields; near-zero elsewhere.
    DarkfieldLike,
    /// Lung signal plus bright rib/clavicle bands following a rigid
    /// motion of their own, over a soft-tissue background.
    AttenuationLike,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// Square image side in pixels (power of two).
    pub size: usize,
    pub seed: u64,
    /// Gaussian scale of the band-limited texture, px.
    pub texture_scale: f64,
    /// Peak deformation magnitude, finest-level px.
    pub amplitude_px: f64,
    /// Control stride of the generating velocity lattice, px.
    pub gen_stride: f64,
    pub intensity_model: IntensityModel,
    /// mm per pixel.
    pub spacing: f64,
    /// Peak relative signal increase of the expiration frame toward
    /// the lung base (the planted ratio trend).
    pub ratio_gain: f64,
    /// Uniform multiplicative noise of the signal-change field; keeps
    /// the ratio texture spatially homogeneous even at zero gain.
    pub ratio_noise: f64,
}

impl PhantomSpec {
    pub fn default_darkfield(seed: u64) -> Self {
        PhantomSpec {
            size: 256,
            seed,
            texture_scale: 2.0,
            amplitude_px: 15.0,
            gen_stride: 32.0,
            intensity_model: IntensityModel::DarkfieldLike,
            spacing: 1.66,
            ratio_gain: 0.35,
            ratio_noise: 0.03,
        }
    }

    pub fn default_attenuation(seed: u64) -> Self {
        PhantomSpec {
            intensity_model: IntensityModel::AttenuationLike,
            ratio_gain: 0.10,
            ..PhantomSpec::default_darkfield(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 16 || !self.size.is_power_of_two() {
            return Err(Error::invalid(format!("size {} must be a power of two >= 16", self.size)));
        }
        if self.amplitude_px < 0.0 || self.amplitude_px > self.size as f64 / 8.0 {
            return Err(Error::invalid(format!(
                "amplitude {} px exceeds size/8 = {}",
                self.amplitude_px,
                self.size / 8
            )));
        }
        if self.gen_stride < 4.0 {
            return Err(Error::invalid("generation stride must be >= 4 px"));
        }
        if !(self.spacing > 0.0) {
            return Err(Error::invalid("spacing must be positive"));
        }
        Ok(())
    }
}

/// One synthetic pair with its complete ground truth.
#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub name: String,
    pub spec: PhantomSpec,
    pub fixed: Image2D,
    pub moving: Image2D,
    /// The map registration should recover (fixed to moving space).
    pub truth_phi: DisplacementField,
    pub truth_lattice: VelocityLattice,
    pub fixed_full: BinaryMask,
    pub moving_full: BinaryMask,
    pub fixed_partial: BinaryMask,
    pub moving_partial: BinaryMask,
    pub fixed_left_partial: BinaryMask,
    pub fixed_right_partial: BinaryMask,
    pub fixed_landmarks: LandmarkSet,
    pub moving_landmarks: LandmarkSet,
    /// 36 probe points inside the lung fields (fixed space).
    pub probe_points: Vec<Vec2>,
    /// Bone band region (attenuation-like phantoms only).
    pub bone_mask: Option<BinaryMask>,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
}

impl Ellipse {
    fn level(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx) / self.a).powi(2) + ((y - self.cy) / self.b).powi(2)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        self.level(x, y) <= 1.0
    }

    /// Soft membership with an edge of roughly `soft` px.
    fn soft(&self, x: f64, y: f64, soft: f64) -> f64 {
        let e = self.level(x, y);
        1.0 / (1.0 + ((e - 1.0) * self.b / soft).exp())
    }
}

struct Geometry {
    left: Ellipse,
    right: Ellipse,
    heart: Ellipse,
    /// Per-side diaphragm cut (partial masks exclude rows below).
    cut_left: f64,
    cut_right: f64,
}

fn geometry(n: f64) -> Geometry {
    Geometry {
        left: Ellipse { cx: 0.33 * n, cy: 0.48 * n, a: 0.145 * n, b: 0.30 * n },
        right: Ellipse { cx: 0.67 * n, cy: 0.50 * n, a: 0.15 * n, b: 0.29 * n },
        heart: Ellipse { cx: 0.53 * n, cy: 0.64 * n, a: 0.13 * n, b: 0.15 * n },
        cut_left: 0.48 * n + 0.22 * n,
        cut_right: 0.50 * n + 0.20 * n,
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Seeded band-limited noise raster with unit standard deviation.
fn band_limited_noise(grid: Grid2D, rng: &mut ChaCha8Rng, scale: f64) -> Image2D {
    let white: Vec<f64> = (0..grid.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let smooth = gaussian_smooth(&Image2D { grid, values: white }, scale).unwrap();
    let mean = smooth.mean();
    let var = smooth.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        / smooth.values.len() as f64;
    let std = var.sqrt().max(1e-12);
    Image2D {
        grid,
        values: smooth.values.iter().map(|&v| (v - mean) / std).collect(),
    }
}

/// Rigid shift of the bone overlay between the frames, px.
const BONE_SHIFT: Vec2 = Vec2 { x: 2.0, y: -3.0 };

/// Additive bone overlay: a clavicle and two rib bands with soft
/// Gaussian cross-sections, shifted by `offset` px. Bands are spaced
/// widely so that a band mask dilated by the deformation amplitude
/// still leaves bone-free baseline strips in between.
fn bone_field(grid: Grid2D, offset: Vec2) -> Vec<f64> {
    let n = grid.width as f64;
    let mut out = vec![0.0; grid.len()];
    // (y at lateral edge, slope toward midline, half thickness px, gain)
    let ribs: [(f64, f64, f64, f64); 3] = [
        (0.20, -0.06, 2.5, 0.55), // clavicle
        (0.46, 0.12, 2.5, 0.50),
        (0.72, 0.16, 2.5, 0.50),
    ];
    for j in 0..grid.height {
        for i in 0..grid.width {
            let x = i as f64 - offset.x;
            let y = j as f64 - offset.y;
            let mut acc = 0.0;
            for &(y0, slope, half, gain) in &ribs {
                // Mirror-symmetric arcs about the midline.
                let lateral = (x - 0.5 * n).abs() / (0.5 * n);
                let yc = (y0 + slope * (1.0 - lateral)) * n;
                let d = (y - yc) / half;
                acc += gain * (-0.5 * d * d).exp();
            }
            out[j * grid.width + i] = acc;
        }
    }
    out
}

fn mask_from(grid: Grid2D, kind: MaskKind, pred: impl Fn(f64, f64) -> bool) -> BinaryMask {
    let mut values = Vec::with_capacity(grid.len());
    for j in 0..grid.height {
        for i in 0..grid.width {
            values.push(pred(i as f64, j as f64));
        }
    }
    BinaryMask { grid, values, kind }
}

/// Generate one phantom pair with ground truth.
///
/// The moving image is the fixed image (times the planted signal-change
/// field) warped once through the inverse truth map, so the truth map
/// itself is what registration of moving onto fixed should recover.
pub fn make_phantom(spec: &PhantomSpec) -> Result<PhantomCase> {
    spec.validate()?;
    let n = spec.size;
    let grid = Grid2D::new(n, n, spec.spacing, Vec2::ZERO)?;
    let nf = n as f64;
    let geo = geometry(nf);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Shared random draws (identical for both intensity models).
    let texture = band_limited_noise(grid, &mut rng, spec.texture_scale);
    let ratio_noise = band_limited_noise(grid, &mut rng, 4.0);
    let ratio_floor_noise = band_limited_noise(grid, &mut rng, 4.0);
    let mut lattice = VelocityLattice::for_grid(&grid, spec.gen_stride)?;
    let rand_coeffs: Vec<Vec2> = (0..lattice.coeffs.len())
        .map(|_| {
            Vec2::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            )
        })
        .collect();

    // Velocity: dominant caudal-cranial compression plus seeded
    // smooth randomness, scaled to the requested amplitude.
    let amp_mm = spec.amplitude_px * spec.spacing;
    let mut truth_phi = DisplacementField::identity(grid);
    if spec.amplitude_px > 0.0 {
        let mut attempt_amp = amp_mm;
        let mut ok = false;
        for _ in 0..4 {
            for (q, c) in lattice.coeffs.iter_mut().enumerate() {
                let qy = (q / lattice.nx) as f64;
                let fy = (qy / lattice.ny as f64).clamp(0.0, 1.0);
                // Saturates by the diaphragm so the peak amplitude acts
                // inside the lung fields, not below them.
                let caudal = smoothstep((fy - 0.22) / 0.38);
                c.x = 0.2 * attempt_amp * rand_coeffs[q].x;
                c.y = -attempt_amp * caudal + 0.2 * attempt_amp * rand_coeffs[q].y;
            }
            let v = spline_velocity(&lattice, grid)?;
            let vmax = v.iter().map(|x| x.norm()).fold(0.0, f64::max).max(1e-12);
            let rescale = attempt_amp / vmax;
            for c in lattice.coeffs.iter_mut() {
                *c = *c * rescale;
            }
            let phi = exp_lattice(&lattice, grid)?;
            let jac = jacobian_analysis(&phi);
            if jac.det_j.iter().all(|&d| d > 0.0) {
                truth_phi = phi;
                ok = true;
                break;
            }
            attempt_amp *= 0.5;
        }
        if !ok {
            return Err(Error::Degenerate(
                "phantom deformation folds even after halving the amplitude 3 times".into(),
            ));
        }
    } else {
        for c in lattice.coeffs.iter_mut() {
            *c = Vec2::ZERO;
        }
    }
    let phi_inv = crate::transform::invert_svf(&lattice, grid)?;

    // Fixed-frame intensity.
    let lung_soft = |x: f64, y: f64| -> f64 {
        geo.left.soft(x, y, 2.0).max(geo.right.soft(x, y, 2.0))
    };
    let mut lung_part = vec![0.0; grid.len()];
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (i as f64, j as f64);
            let idx = j * n + i;
            let envelope = lung_soft(x, y);
            let radial = 1.0
                - 0.3 * geo.left.level(x, y).min(geo.right.level(x, y)).min(1.0);
            let tex = 0.35 * texture.values[idx].clamp(-2.0, 2.0) / 2.0;
            lung_part[idx] = envelope * (0.55 * radial + tex).max(0.05);
        }
    }

    let darkfield_floor = 0.004;
    let fixed_values: Vec<f64> = match spec.intensity_model {
        IntensityModel::DarkfieldLike => (0..grid.len())
            .map(|idx| darkfield_floor * (1.0 + 0.2 * texture.values[idx].clamp(-1.0, 1.0)) + lung_part[idx])
            .collect(),
        IntensityModel::AttenuationLike => {
            let bones = bone_field(grid, Vec2::ZERO);
            (0..grid.len())
                .map(|idx| {
                    let j = idx / n;
                    0.25 + 0.05 * (j as f64 / nf)
                        + 0.8 * lung_part[idx]
                        + bones[idx]
                        + 0.01 * texture.values[idx].clamp(-1.0, 1.0)
                })
                .collect()
        }
    };
    let fixed = Image2D::new(grid, fixed_values)?;

    // Planted signal-change field: ratio rises toward the lung base,
    // with a uniform multiplicative noise floor so the ratio image has
    // spatially homogeneous texture even at zero gain.
    let apex_y = (geo.left.cy - geo.left.b).min(geo.right.cy - geo.right.b);
    let base_y = geo.cut_left.max(geo.cut_right);
    let sfield: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let j = (idx / n) as f64;
            let cc = smoothstep((j - apex_y) / (base_y - apex_y));
            let trend =
                1.0 + spec.ratio_gain * cc * (1.0 + 0.06 * ratio_noise.values[idx].clamp(-2.0, 2.0));
            trend * (1.0 + spec.ratio_noise * ratio_floor_noise.values[idx].clamp(-2.0, 2.0))
        })
        .collect();

    // Moving frame: lung content (with signal change) follows the
    // inverse truth map; attenuation bones follow a small rigid shift
    // of their own.
    let moving_values: Vec<f64> = match spec.intensity_model {
        IntensityModel::DarkfieldLike => {
            let changed = Image2D::new(
                grid,
                fixed.values.iter().zip(&sfield).map(|(&v, &s)| v * s).collect(),
            )?;
            crate::transform::warp_image(&changed, &phi_inv).values
        }
        IntensityModel::AttenuationLike => {
            let lung_changed = Image2D::new(
                grid,
                lung_part.iter().zip(&sfield).map(|(&v, &s)| 0.8 * v * s).collect(),
            )?;
            let lung_moved = crate::transform::warp_image(&lung_changed, &phi_inv);
            let bones_moved = bone_field(grid, BONE_SHIFT);
            (0..grid.len())
                .map(|idx| {
                    let j = idx / n;
                    0.25 + 0.05 * (j as f64 / nf)
                        + lung_moved.values[idx]
                        + bones_moved[idx]
                        + 0.01 * texture.values[idx].clamp(-1.0, 1.0)
                })
                .collect()
        }
    };
    let moving = Image2D::new(grid, moving_values)?;

    // Masks (fixed analytically, moving mapped through the truth).
    let in_left_partial = |x: f64, y: f64| {
        geo.left.contains(x, y) && y < geo.cut_left && !geo.heart.contains(x, y)
    };
    let in_right_partial = |x: f64, y: f64| {
        geo.right.contains(x, y) && y < geo.cut_right && !geo.heart.contains(x, y)
    };
    let fixed_full = mask_from(grid, MaskKind::Full, |x, y| {
        geo.left.contains(x, y) || geo.right.contains(x, y)
    });
    let fixed_partial = mask_from(grid, MaskKind::Partial, |x, y| {
        in_left_partial(x, y) || in_right_partial(x, y)
    });
    let fixed_left_partial = mask_from(grid, MaskKind::LeftPartial, in_left_partial);
    let fixed_right_partial = mask_from(grid, MaskKind::RightPartial, in_right_partial);
    let moving_full = warp_mask(&fixed_full, &phi_inv);
    let moving_partial = warp_mask(&fixed_partial, &phi_inv);

    // Landmarks: apexes plus the costophrenic (lateral) and
    // costocardiac (medial) diaphragm corners.
    let corner = |e: &Ellipse, cut: f64, lateral_sign: f64| -> Vec2 {
        let frac = ((cut - e.cy) / e.b).clamp(-1.0, 1.0);
        let dx = e.a * (1.0 - frac * frac).sqrt();
        Vec2::new((e.cx + lateral_sign * dx) * spec.spacing, cut * spec.spacing)
    };
    let fixed_landmarks = LandmarkSet::from_points(
        [
            Vec2::new(geo.left.cx, geo.left.cy - geo.left.b) * spec.spacing,
            Vec2::new(geo.right.cx, geo.right.cy - geo.right.b) * spec.spacing,
            corner(&geo.left, geo.cut_left, -1.0),
            corner(&geo.right, geo.cut_right, 1.0),
            corner(&geo.left, geo.cut_left, 1.0),
            corner(&geo.right, geo.cut_right, -1.0),
        ],
        Some(&grid),
    )?;
    let moving_landmarks = fixed_landmarks.map(|p| truth_phi.apply(p));

    // 36 probe points: 6 rows x 3 columns inside each lung ellipse.
    let mut probe_points = Vec::with_capacity(36);
    for e in [&geo.left, &geo.right] {
        for row in 0..6 {
            let fy = -0.7 + 1.4 * (row as f64 / 5.0);
            for col in 0..3 {
                let fx = -0.5 + 0.5 * col as f64;
                let width = (1.0 - fy * fy).sqrt();
                probe_points.push(
                    Vec2::new(e.cx + fx * e.a * width, e.cy + fy * e.b) * spec.spacing,
                );
            }
        }
    }

    // Band region: bone support in either frame, dilated by the
    // deformation amplitude so warped bone artifacts stay inside it.
    let bone_mask = match spec.intensity_model {
        IntensityModel::DarkfieldLike => None,
        IntensityModel::AttenuationLike => {
            let fixed_bones = bone_field(grid, Vec2::ZERO);
            let moving_bones = bone_field(grid, BONE_SHIFT);
            let support = BinaryMask {
                grid,
                values: fixed_bones
                    .iter()
                    .zip(&moving_bones)
                    .map(|(&a, &b)| a.max(b) > 0.1)
                    .collect(),
                kind: MaskKind::RegistrationRoi,
            };
            Some(crate::imaging::dilate_mask(&support, spec.amplitude_px + 5.0)?)
        }
    };

    Ok(PhantomCase {
        name: format!("phantom-{:05}", spec.seed),
        spec: *spec,
        fixed,
        moving,
        truth_phi,
        truth_lattice: lattice,
        fixed_full,
        moving_full,
        fixed_partial,
        moving_partial,
        fixed_left_partial,
        fixed_right_partial,
        fixed_landmarks,
        moving_landmarks,
        probe_points,
        bone_mask,
    })
}

/// Ground-truth summary row of one suite case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRow {
    pub name: String,
    pub seed: u64,
    pub amplitude_px: f64,
    pub max_displacement_px: f64,
    pub before_dice_full: f64,
    pub before_tre_mm: f64,
}

/// `n` seeded cases derived from a base spec (seeds `base_seed + k`),
/// with a truth table for acceptance runs.
pub fn phantom_suite(n: usize, base: &PhantomSpec) -> Result<(Vec<PhantomCase>, Vec<TruthRow>)> {
    if n == 0 {
        return Err(Error::invalid("suite needs at least one case"));
    }
    let mut cases = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let spec = PhantomSpec { seed: base.seed + k as u64, ..*base };
        let case = make_phantom(&spec)?;
        let before_dice = crate::metrics::dice(&case.fixed_full, &case.moving_full)?;
        let before_tre =
            crate::metrics::tre(&case.fixed_landmarks, &case.moving_landmarks, None);
        rows.push(TruthRow {
            name: case.name.clone(),
            seed: spec.seed,
            amplitude_px: spec.amplitude_px,
            max_displacement_px: case.truth_phi.max_displacement() / spec.spacing,
            before_dice_full: before_dice,
            before_tre_mm: before_tre,
        });
        cases.push(case);
    }
    Ok((cases, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dice;

    #[test]
    fn zero_amplitude_zero_gain_reproduces_fixed() {
        let spec = PhantomSpec {
            size: 64,
            amplitude_px: 0.0,
            ratio_gain: 0.0,
            ratio_noise: 0.0,
            ..PhantomSpec::default_darkfield(7)
        };
        let case = make_phantom(&spec).unwrap();
        assert_eq!(case.fixed, case.moving);
        assert_eq!(case.fixed_landmarks, case.moving_landmarks);
    }

    #[test]
    fn truth_never_folds() {
        for seed in [1u64, 17, 900] {
            let spec = PhantomSpec { size: 128, ..PhantomSpec::default_darkfield(seed) };
            let case = make_phantom(&spec).unwrap();
            let jac = jacobian_analysis(&case.truth_phi);
            assert_eq!(jac.folding_ratio, 0.0, "seed {seed}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = PhantomSpec { size: 64, amplitude_px: 6.0, ..PhantomSpec::default_darkfield(42) };
        let a = make_phantom(&spec).unwrap();
        let b = make_phantom(&spec).unwrap();
        assert_eq!(a.fixed, b.fixed);
        assert_eq!(a.moving, b.moving);
        assert_eq!(a.truth_phi, b.truth_phi);
        assert_eq!(a.fixed_full, b.fixed_full);
        assert_eq!(a.probe_points, b.probe_points);
    }

    #[test]
    fn darkfield_background_below_one_percent_of_peak() {
        let spec = PhantomSpec { size: 128, ..PhantomSpec::default_darkfield(3) };
        let case = make_phantom(&spec).unwrap();
        let peak = case.fixed.values.iter().cloned().fold(0.0, f64::max);
        // Outside the full mask, dilated by a small margin for the
        // soft lung edge.
        let outside = crate::imaging::dilate_mask(&case.fixed_full, 6.0).unwrap();
        for j in 0..128 {
            for i in 0..128 {
                if !outside.get(i, j) {
                    assert!(
                        case.fixed.get(i, j) < 0.01 * peak,
                        "background at ({i},{j}) = {}",
                        case.fixed.get(i, j)
                    );
                }
            }
        }
    }

    #[test]
    fn suite_has_distinct_seeds_and_nontrivial_deformation() {
        let base = PhantomSpec { size: 128, amplitude_px: 10.0, ..PhantomSpec::default_darkfield(100) };
        let (cases, rows) = phantom_suite(4, &base).unwrap();
        assert_eq!(cases.len(), 4);
        assert_eq!(rows.len(), 4);
        let mut seeds: Vec<u64> = rows.iter().map(|r| r.seed).collect();
        seeds.dedup();
        assert_eq!(seeds.len(), 4);
        for (case, row) in cases.iter().zip(&rows) {
            assert!(row.before_dice_full < 0.95, "{}: {}", case.name, row.before_dice_full);
            assert_eq!(case.probe_points.len(), 36);
        }
    }

    #[test]
    fn moving_masks_follow_truth() {
        let spec = PhantomSpec { size: 128, ..PhantomSpec::default_darkfield(5) };
        let case = make_phantom(&spec).unwrap();
        // Pulling the moving mask back through the truth map must
        // nearly reproduce the fixed mask.
        let recovered = warp_mask(&case.moving_full, &case.truth_phi);
        let overlap = dice(&case.fixed_full, &recovered).unwrap();
        assert!(overlap > 0.98, "dice {overlap}");
    }

    #[test]
    fn attenuation_phantom_shares_truth_with_darkfield() {
        let df = make_phantom(&PhantomSpec { size: 64, amplitude_px: 6.0, ..PhantomSpec::default_darkfield(9) })
            .unwrap();
        let at = make_phantom(&PhantomSpec { size: 64, amplitude_px: 6.0, ..PhantomSpec::default_attenuation(9) })
            .unwrap();
        assert_eq!(df.truth_phi, at.truth_phi);
        assert!(at.bone_mask.is_some());
        assert!(df.bone_mask.is_none());
    }

    #[test]
    fn amplitude_cap_enforced() {
        let spec = PhantomSpec { size: 64, amplitude_px: 20.0, ..PhantomSpec::default_darkfield(1) };
        assert!(make_phantom(&spec).is_err());
    }
}
