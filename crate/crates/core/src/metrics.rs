//! Registration accuracy and regularity metrics: mask overlap (DICE),
//! symmetric surface distances (MSD, HD), landmark TRE, folding ratio,
//! and MMGJD, with before/after reporting for one registered pair.

use crate::error::{Error, Result};
use crate::imaging::{
    bilinear_zero, distance_transform_sq, BinaryMask, LandmarkSet,
};
use crate::transform::{apply_to_points, jacobian_analysis, DisplacementField};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Before,
    After,
}

/// All evaluation metrics for one pair and phase; fields are `None`
/// when the required annotation was missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub phase: Phase,
    pub dice_full: Option<f64>,
    pub dice_partial: Option<f64>,
    pub msd_full: Option<f64>,
    pub msd_partial: Option<f64>,
    pub hd_full: Option<f64>,
    pub hd_partial: Option<f64>,
    pub tre_mean: Option<f64>,
    pub folding_ratio: Option<f64>,
    pub mmgjd: Option<f64>,
}

impl MetricsReport {
    fn empty(phase: Phase) -> Self {
        MetricsReport {
            phase,
            dice_full: None,
            dice_partial: None,
            msd_full: None,
            msd_partial: None,
            hd_full: None,
            hd_partial: None,
            tre_mean: None,
            folding_ratio: None,
            mmgjd: None,
        }
    }
}

/// Pull-back resampling of a 0/1 mask raster through `phi`,
/// re-binarized at 0.5. Sample coordinates are formed directly in
/// pixel space when the grids coincide (exact for identity maps).
pub fn warp_mask(mask: &BinaryMask, phi: &DisplacementField) -> BinaryMask {
    let float: Vec<f64> = mask.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let grid = phi.grid;
    let (mw, mh) = (mask.grid.width, mask.grid.height);
    let mut values = Vec::with_capacity(grid.len());
    for j in 0..grid.height {
        for i in 0..grid.width {
            let d = phi.u[grid.index(i, j)];
            let (x, y) = if mask.grid == grid {
                (i as f64 + d.x / grid.spacing, j as f64 + d.y / grid.spacing)
            } else {
                mask.grid.to_pixel(grid.position(i, j) + d)
            };
            values.push(bilinear_zero(&float, mw, mh, x, y) >= 0.5);
        }
    }
    BinaryMask { grid, values, kind: mask.kind }
}

/// Overlap score `2|A n B| / (|A| + |B|)`.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::invalid("dice requires a common grid"));
    }
    a.ensure_nonempty()?;
    b.ensure_nonempty()?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Boundary pixels: the mask minus its 4-connected erosion. Pixels on
/// the raster border count as boundary (their missing neighbor is
/// outside the domain).
pub fn boundary_pixels(mask: &BinaryMask) -> Vec<bool> {
    let (w, h) = (mask.grid.width, mask.grid.height);
    let at = |i: i64, j: i64| -> bool {
        if i < 0 || j < 0 || i >= w as i64 || j >= h as i64 {
            false
        } else {
            mask.values[j as usize * w + i as usize]
        }
    };
    let mut out = vec![false; w * h];
    for j in 0..h as i64 {
        for i in 0..w as i64 {
            if at(i, j) {
                let eroded = at(i - 1, j) && at(i + 1, j) && at(i, j - 1) && at(i, j + 1);
                out[j as usize * w as usize + i as usize] = !eroded;
            }
        }
    }
    out
}

/// Symmetric mean surface distance and symmetric Hausdorff distance
/// (mm) between the mask outlines, via the exact Euclidean distance
/// transform of the boundary sets.
pub fn surface_distances(a: &BinaryMask, b: &BinaryMask) -> Result<(f64, f64)> {
    if a.grid != b.grid {
        return Err(Error::invalid("surface distances require a common grid"));
    }
    a.ensure_nonempty()?;
    b.ensure_nonempty()?;
    let (w, h) = (a.grid.width, a.grid.height);
    let ba = boundary_pixels(a);
    let bb = boundary_pixels(b);
    if !ba.iter().any(|&x| x) || !bb.iter().any(|&x| x) {
        return Err(Error::Degenerate("empty mask boundary".into()));
    }
    let dist_to_a = distance_transform_sq(&ba, w, h);
    let dist_to_b = distance_transform_sq(&bb, w, h);

    let directed = |boundary: &[bool], dist: &[f64]| -> (f64, f64) {
        let mut sum = 0.0;
        let mut count = 0.0;
        let mut max = 0.0f64;
        for k in 0..boundary.len() {
            if boundary[k] {
                let d = dist[k].sqrt();
                sum += d;
                count += 1.0;
                max = max.max(d);
            }
        }
        (sum / count, max)
    };
    let (mean_ab, max_ab) = directed(&ba, &dist_to_b);
    let (mean_ba, max_ba) = directed(&bb, &dist_to_a);
    let s = a.grid.spacing;
    Ok((
        0.5 * (mean_ab + mean_ba) * s,
        max_ab.max(max_ba) * s,
    ))
}

/// Mean target registration error (mm): fixed landmarks are mapped
/// forward through `phi` (identity when `None`) and compared with the
/// moving landmarks, label by label.
pub fn tre(
    fixed_lms: &LandmarkSet,
    moving_lms: &LandmarkSet,
    phi: Option<&DisplacementField>,
) -> f64 {
    let mapped = match phi {
        Some(field) => apply_to_points(field, fixed_lms),
        None => fixed_lms.clone(),
    };
    let mut acc = 0.0;
    let mut n = 0.0;
    for ((la, pa), (lb, pb)) in mapped.iter().zip(moving_lms.iter()) {
        debug_assert_eq!(la, lb);
        acc += (pa - pb).norm();
        n += 1.0;
    }
    acc / n
}

/// Annotations available for one registered pair. Missing pieces lead
/// to `None` metric fields rather than errors.
#[derive(Debug, Clone, Default)]
pub struct PairAnnotations {
    pub fixed_full: Option<BinaryMask>,
    pub moving_full: Option<BinaryMask>,
    pub fixed_partial: Option<BinaryMask>,
    pub moving_partial: Option<BinaryMask>,
    pub fixed_landmarks: Option<LandmarkSet>,
    pub moving_landmarks: Option<LandmarkSet>,
}

/// Full before/after metric reports for one registered pair.
///
/// Before-phase masks and landmarks are compared directly (identity
/// transform, zero folding); after-phase moving masks are pulled back
/// through `phi` and fixed landmarks mapped forward through it.
pub fn full_report(
    annotations: &PairAnnotations,
    phi: &DisplacementField,
) -> Result<(MetricsReport, MetricsReport)> {
    let mut before = MetricsReport::empty(Phase::Before);
    let mut after = MetricsReport::empty(Phase::After);

    let mask_metrics = |fixed: &Option<BinaryMask>,
                            moving: &Option<BinaryMask>,
                            out: &mut [(&mut Option<f64>, &mut Option<f64>, &mut Option<f64>); 2]|
     -> Result<()> {
        if let (Some(f), Some(m)) = (fixed, moving) {
            {
                let (dice_slot, msd_slot, hd_slot) = &mut out[0];
                **dice_slot = Some(dice(f, m)?);
                let (msd, hd) = surface_distances(f, m)?;
                **msd_slot = Some(msd);
                **hd_slot = Some(hd);
            }
            let warped = warp_mask(m, phi);
            warped.ensure_nonempty()?;
            let (dice_slot, msd_slot, hd_slot) = &mut out[1];
            **dice_slot = Some(dice(f, &warped)?);
            let (msd, hd) = surface_distances(f, &warped)?;
            **msd_slot = Some(msd);
            **hd_slot = Some(hd);
        }
        Ok(())
    };

    mask_metrics(
        &annotations.fixed_full,
        &annotations.moving_full,
        &mut [
            (&mut before.dice_full, &mut before.msd_full, &mut before.hd_full),
            (&mut after.dice_full, &mut after.msd_full, &mut after.hd_full),
        ],
    )?;
    mask_metrics(
        &annotations.fixed_partial,
        &annotations.moving_partial,
        &mut [
            (&mut before.dice_partial, &mut before.msd_partial, &mut before.hd_partial),
            (&mut after.dice_partial, &mut after.msd_partial, &mut after.hd_partial),
        ],
    )?;

    if let (Some(fl), Some(ml)) = (&annotations.fixed_landmarks, &annotations.moving_landmarks) {
        before.tre_mean = Some(tre(fl, ml, None));
        after.tre_mean = Some(tre(fl, ml, Some(phi)));
    }

    before.folding_ratio = Some(0.0);
    before.mmgjd = Some(0.0);
    let jac = jacobian_analysis(phi);
    after.folding_ratio = Some(jac.folding_ratio);
    after.mmgjd = Some(jac.mmgjd);

    Ok((before, after))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{Grid2D, MaskKind, Vec2};
    use approx::assert_abs_diff_eq;

    fn grid(w: usize, h: usize, spacing: f64) -> Grid2D {
        Grid2D::new(w, h, spacing, Vec2::ZERO).unwrap()
    }

    fn mask_from(g: Grid2D, pred: impl Fn(usize, usize) -> bool, kind: MaskKind) -> BinaryMask {
        let mut values = Vec::with_capacity(g.len());
        for j in 0..g.height {
            for i in 0..g.width {
                values.push(pred(i, j));
            }
        }
        BinaryMask::new(g, values, kind).unwrap()
    }

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed.wrapping_add(0x2545F4914F6CDD1D);
        move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    /// Brute-force symmetric surface distances over all boundary
    /// pixel pairs.
    fn surface_oracle(a: &BinaryMask, b: &BinaryMask) -> (f64, f64) {
        let (w, h) = (a.grid.width, a.grid.height);
        let pts = |m: &BinaryMask| -> Vec<(f64, f64)> {
            let boundary = boundary_pixels(m);
            (0..w * h)
                .filter(|&k| boundary[k])
                .map(|k| ((k % w) as f64, (k / w) as f64))
                .collect()
        };
        let pa = pts(a);
        let pb = pts(b);
        let directed = |from: &[(f64, f64)], to: &[(f64, f64)]| -> (f64, f64) {
            let mut sum = 0.0;
            let mut max = 0.0f64;
            for &(x, y) in from {
                let d = to
                    .iter()
                    .map(|&(tx, ty)| ((x - tx).powi(2) + (y - ty).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                sum += d;
                max = max.max(d);
            }
            (sum / from.len() as f64, max)
        };
        let (ma, xa) = directed(&pa, &pb);
        let (mb, xb) = directed(&pb, &pa);
        let s = a.grid.spacing;
        (0.5 * (ma + mb) * s, xa.max(xb) * s)
    }

    #[test]
    fn warp_mask_identity_and_translation() {
        let g = grid(16, 16, 1.0);
        let m = mask_from(g, |i, j| (4..9).contains(&i) && (5..10).contains(&j), MaskKind::Full);
        let id = DisplacementField::identity(g);
        assert_eq!(warp_mask(&m, &id), m);

        // phi = +2 px in x pulls content 2 px toward -x.
        let phi = DisplacementField { grid: g, u: vec![Vec2::new(2.0, 0.0); g.len()] };
        let moved = warp_mask(&m, &phi);
        for j in 0..16 {
            for i in 0..14 {
                assert_eq!(moved.get(i, j), m.get(i + 2, j), "({i},{j})");
            }
        }
    }

    #[test]
    fn warp_mask_half_pixel_line_matches_interpolation_oracle() {
        let g = grid(12, 6, 1.0);
        let m = mask_from(g, |i, _| i == 5, MaskKind::Full);
        let phi = DisplacementField { grid: g, u: vec![Vec2::new(0.5, 0.0); g.len()] };
        let moved = warp_mask(&m, &phi);
        // Interpolated value at x + 0.5 is 0.5 on columns 4 and 5:
        // both reach the >= 0.5 threshold.
        for j in 0..6 {
            for i in 0..12 {
                let interp: f64 = if i == 4 || i == 5 { 0.5 } else { 0.0 };
                assert_eq!(moved.get(i, j), interp >= 0.5, "({i},{j})");
            }
        }
    }

    #[test]
    fn dice_trivial_and_enumerated() {
        let g = grid(12, 12, 1.0);
        let a = mask_from(g, |i, j| (2..4).contains(&i) && (2..4).contains(&j), MaskKind::Full);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let disjoint =
            mask_from(g, |i, j| (8..10).contains(&i) && (8..10).contains(&j), MaskKind::Full);
        assert_eq!(dice(&a, &disjoint).unwrap(), 0.0);
        // 2x2 square shifted by one column: 2 px overlap.
        let shifted =
            mask_from(g, |i, j| (3..5).contains(&i) && (2..4).contains(&j), MaskKind::Full);
        assert_abs_diff_eq!(dice(&a, &shifted).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn dice_symmetric_and_empty_rejected() {
        let g = grid(8, 8, 1.0);
        let a = mask_from(g, |i, _| i < 4, MaskKind::Full);
        let b = mask_from(g, |i, j| i > 1 && j < 6, MaskKind::Full);
        assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        let empty = mask_from(g, |_, _| false, MaskKind::Full);
        assert!(dice(&a, &empty).is_err());
    }

    #[test]
    fn surface_identical_masks_zero() {
        let g = grid(10, 10, 1.66);
        let a = mask_from(g, |i, j| (3..7).contains(&i) && (2..8).contains(&j), MaskKind::Full);
        let (msd, hd) = surface_distances(&a, &a).unwrap();
        assert_eq!(msd, 0.0);
        assert_eq!(hd, 0.0);
    }

    #[test]
    fn surface_two_points_five_pixels_apart() {
        let g = grid(16, 16, 1.66);
        let a = mask_from(g, |i, j| i == 3 && j == 8, MaskKind::Full);
        let b = mask_from(g, |i, j| i == 8 && j == 8, MaskKind::Full);
        let (msd, hd) = surface_distances(&a, &b).unwrap();
        assert_abs_diff_eq!(msd, 8.3, epsilon = 1e-12);
        assert_abs_diff_eq!(hd, 8.3, epsilon = 1e-12);
    }

    #[test]
    fn surface_concentric_squares_match_oracle() {
        let g = grid(20, 20, 1.0);
        let a = mask_from(g, |i, j| (4..16).contains(&i) && (4..16).contains(&j), MaskKind::Full);
        let b = mask_from(g, |i, j| (7..13).contains(&i) && (7..13).contains(&j), MaskKind::Full);
        let (msd, hd) = surface_distances(&a, &b).unwrap();
        let (omsd, ohd) = surface_oracle(&a, &b);
        assert_abs_diff_eq!(msd, omsd, epsilon = 1e-9);
        assert_abs_diff_eq!(hd, ohd, epsilon = 1e-9);
    }

    #[test]
    fn surface_random_masks_match_oracle() {
        let g = grid(14, 11, 1.0);
        let mut rnd = lcg(31);
        for _ in 0..25 {
            let a = {
                let values: Vec<bool> = (0..g.len()).map(|_| rnd() < 0.3).collect();
                BinaryMask::new(g, values, MaskKind::Full).unwrap()
            };
            let b = {
                let values: Vec<bool> = (0..g.len()).map(|_| rnd() < 0.3).collect();
                BinaryMask::new(g, values, MaskKind::Full).unwrap()
            };
            if a.count_true() == 0 || b.count_true() == 0 {
                continue;
            }
            let (msd, hd) = surface_distances(&a, &b).unwrap();
            let (omsd, ohd) = surface_oracle(&a, &b);
            assert_abs_diff_eq!(msd, omsd, epsilon = 1e-9);
            assert_abs_diff_eq!(hd, ohd, epsilon = 1e-9);
            assert!(msd <= hd + 1e-12);
        }
    }

    #[test]
    fn surface_distances_scale_linearly_with_spacing() {
        let g1 = grid(18, 18, 1.0);
        let g2 = grid(18, 18, 2.0);
        let shape = |g: Grid2D| {
            mask_from(g, |i, j| (i as i64 - 9).pow(2) + (j as i64 - 9).pow(2) < 25, MaskKind::Full)
        };
        let other = |g: Grid2D| {
            mask_from(g, |i, j| (3..12).contains(&i) && (5..15).contains(&j), MaskKind::Full)
        };
        let (m1, h1) = surface_distances(&shape(g1), &other(g1)).unwrap();
        let (m2, h2) = surface_distances(&shape(g2), &other(g2)).unwrap();
        assert_eq!(m2, 2.0 * m1);
        assert_eq!(h2, 2.0 * h1);
    }

    fn landmarks(offset: Vec2, g: &Grid2D) -> LandmarkSet {
        LandmarkSet::from_points(
            [
                Vec2::new(8.0, 6.0) + offset,
                Vec2::new(24.0, 6.0) + offset,
                Vec2::new(5.0, 25.0) + offset,
                Vec2::new(27.0, 25.0) + offset,
                Vec2::new(13.0, 23.0) + offset,
                Vec2::new(19.0, 23.0) + offset,
            ],
            Some(g),
        )
        .unwrap()
    }

    #[test]
    fn tre_identity_and_three_four_five() {
        let g = grid(40, 40, 1.0);
        let fixed = landmarks(Vec2::ZERO, &g);
        assert_eq!(tre(&fixed, &fixed, None), 0.0);
        let moving = landmarks(Vec2::new(3.0, 4.0), &g);
        assert_abs_diff_eq!(tre(&fixed, &moving, None), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn full_report_shape_and_identity_case() {
        let g = grid(32, 32, 1.0);
        let full = mask_from(g, |i, j| {
            (i as i64 - 16).pow(2) + (j as i64 - 16).pow(2) < 120
        }, MaskKind::Full);
        let partial = mask_from(g, |i, j| {
            (i as i64 - 16).pow(2) + (j as i64 - 14).pow(2) < 70
        }, MaskKind::Partial);
        let ann = PairAnnotations {
            fixed_full: Some(full.clone()),
            moving_full: Some(full.clone()),
            fixed_partial: Some(partial.clone()),
            moving_partial: Some(partial.clone()),
            fixed_landmarks: Some(landmarks(Vec2::ZERO, &g)),
            moving_landmarks: Some(landmarks(Vec2::ZERO, &g)),
        };
        let id = DisplacementField::identity(g);
        let (before, after) = full_report(&ann, &id).unwrap();
        // 9 metric fields per phase, all present here.
        for report in [&before, &after] {
            assert!(report.dice_full.is_some());
            assert!(report.dice_partial.is_some());
            assert!(report.msd_full.is_some());
            assert!(report.msd_partial.is_some());
            assert!(report.hd_full.is_some());
            assert!(report.hd_partial.is_some());
            assert!(report.tre_mean.is_some());
            assert!(report.folding_ratio.is_some());
            assert!(report.mmgjd.is_some());
        }
        assert_eq!(before.dice_full, after.dice_full);
        assert_eq!(after.dice_full.unwrap(), 1.0);
        assert_eq!(after.tre_mean.unwrap(), 0.0);
        assert_eq!(after.folding_ratio.unwrap(), 0.0);
    }

    #[test]
    fn full_report_partial_annotations_yield_nulls() {
        let g = grid(16, 16, 1.0);
        let full = mask_from(g, |i, j| i > 4 && j > 4, MaskKind::Full);
        let ann = PairAnnotations {
            fixed_full: Some(full.clone()),
            moving_full: Some(full),
            ..Default::default()
        };
        let id = DisplacementField::identity(g);
        let (before, after) = full_report(&ann, &id).unwrap();
        assert!(before.dice_full.is_some());
        assert!(before.dice_partial.is_none());
        assert!(after.tre_mean.is_none());
        assert!(after.mmgjd.is_some());
    }
}
