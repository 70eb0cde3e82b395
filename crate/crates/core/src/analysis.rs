//! Signal-ratio analysis of registered pairs: the per-pixel
//! expiration/inspiration ratio raster, craniocaudal projections with
//! robust linear fits, three-lung-field statistics, relative vital
//! lung capacity, and Spearman rank correlations for cohort tables.

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, Grid2D, Image2D};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Operands below this floor mark the ratio pixel as NaN instead of
/// risking a blow-up division.
pub const DEFAULT_RATIO_FLOOR: f64 = 1e-15;

/// Huber transition point in units of the robust scale estimate.
pub const HUBER_DELTA: f64 = 1.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioModality {
    Darkfield,
    Attenuation,
}

/// Per-pixel ratio raster; NaN marks pixels where either operand fell
/// below the floor.
#[derive(Debug, Clone)]
pub struct RatioImage {
    pub grid: Grid2D,
    pub r: Vec<f64>,
    pub modality: RatioModality,
}

impl RatioImage {
    pub fn finite_count(&self) -> usize {
        self.r.iter().filter(|v| v.is_finite()).count()
    }
}

/// Elementwise `warped_exp / insp` with floor masking.
pub fn ratio_image(
    warped_exp: &Image2D,
    insp: &Image2D,
    floor: f64,
    modality: RatioModality,
) -> Result<RatioImage> {
    if warped_exp.grid != insp.grid {
        return Err(Error::invalid("ratio operands live on different grids"));
    }
    let r = warped_exp
        .values
        .iter()
        .zip(&insp.values)
        .map(|(&num, &den)| {
            if num < floor || den < floor {
                f64::NAN
            } else {
                num / den
            }
        })
        .collect();
    Ok(RatioImage { grid: warped_exp.grid, r, modality })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Mean-ratio profile along the craniocaudal axis of one lung side,
/// with the fitted linear trend (slope per mm).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcProjection {
    pub side: Side,
    /// CC distance from the lung apex (topmost mask row), mm; strictly
    /// increasing.
    pub rows: Vec<f64>,
    pub means: Vec<f64>,
    /// Finite ratio pixels per row.
    pub counts: Vec<usize>,
    pub slope: f64,
    pub intercept: f64,
}

/// Project ratio values within the side mask onto the CC axis and fit
/// the trend with a Huber regression (default delta).
pub fn cc_projection(
    ratio: &RatioImage,
    side_mask: &BinaryMask,
    side: Side,
    weighted: bool,
) -> Result<CcProjection> {
    cc_projection_with(ratio, side_mask, side, weighted, HUBER_DELTA)
}

/// As [`cc_projection`] with an explicit Huber transition point.
/// Rows without finite pixels are skipped; `weighted` weights rows by
/// their pixel count in the fit.
pub fn cc_projection_with(
    ratio: &RatioImage,
    side_mask: &BinaryMask,
    side: Side,
    weighted: bool,
    delta: f64,
) -> Result<CcProjection> {
    if side_mask.grid != ratio.grid {
        return Err(Error::invalid("side mask grid does not match ratio image"));
    }
    side_mask.ensure_nonempty()?;
    let (w, h) = (ratio.grid.width, ratio.grid.height);
    let apex_row = (0..h)
        .find(|&j| (0..w).any(|i| side_mask.get(i, j)))
        .expect("non-empty mask has an apex row");

    let mut rows = Vec::new();
    let mut means = Vec::new();
    let mut counts = Vec::new();
    for j in apex_row..h {
        let mut acc = 0.0;
        let mut n = 0usize;
        for i in 0..w {
            if side_mask.get(i, j) {
                let v = ratio.r[j * w + i];
                if v.is_finite() {
                    acc += v;
                    n += 1;
                }
            }
        }
        if n > 0 {
            rows.push((j - apex_row) as f64 * ratio.grid.spacing);
            means.push(acc / n as f64);
            counts.push(n);
        }
    }
    if rows.len() < 2 {
        return Err(Error::Degenerate(format!(
            "{side:?} mask occupies {} rows with finite ratio pixels; need >= 2",
            rows.len()
        )));
    }
    let (slope, intercept) = if weighted {
        let ws: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        huber_fit_with(&rows, &means, &ws, delta)?
    } else {
        huber_fit_with(&rows, &means, &vec![1.0; rows.len()], delta)?
    };
    Ok(CcProjection { side, rows, means, counts, slope, intercept })
}

fn weighted_ols(xs: &[f64], ys: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let mut sw = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for k in 0..xs.len() {
        sw += w[k];
        sx += w[k] * xs[k];
        sy += w[k] * ys[k];
        sxx += w[k] * xs[k] * xs[k];
        sxy += w[k] * xs[k] * ys[k];
    }
    let det = sw * sxx - sx * sx;
    let scale = sw * sxx.abs().max(1.0);
    if det.abs() <= 1e-14 * scale {
        return Err(Error::Degenerate("rank-deficient line fit (all x equal)".into()));
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / sw;
    Ok((slope, intercept))
}

fn median_of(mut vals: Vec<f64>) -> f64 {
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

/// Robust line fit minimizing the Huber loss with delta 1.35 in units
/// of the jointly re-estimated MAD scale; IRLS iterated to parameter
/// change < 1e-8 or 200 iterations.
pub fn huber_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    huber_fit_with(xs, ys, &vec![1.0; xs.len()], HUBER_DELTA)
}

/// As [`huber_fit`] with per-point base weights (row pixel counts in
/// the weighted-projection mode) and an explicit transition point.
pub fn huber_fit_with(xs: &[f64], ys: &[f64], base_w: &[f64], delta: f64) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() != base_w.len() {
        return Err(Error::invalid("mismatched fit input lengths"));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("need at least 2 points for a line fit"));
    }
    let (mut slope, mut intercept) = weighted_ols(xs, ys, base_w)?;
    let y_spread = {
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo).abs()
    };
    for _ in 0..200 {
        let residuals: Vec<f64> =
            (0..xs.len()).map(|k| ys[k] - slope * xs[k] - intercept).collect();
        let scale = median_of(residuals.iter().map(|r| r.abs()).collect()) / 0.6745;
        if scale <= 1e-12 * y_spread.max(1.0) {
            break; // essentially exact fit
        }
        let w: Vec<f64> = (0..xs.len())
            .map(|k| {
                let standardized = residuals[k].abs() / scale;
                let huber = if standardized <= delta { 1.0 } else { delta / standardized };
                base_w[k] * huber
            })
            .collect();
        let (new_slope, new_intercept) = weighted_ols(xs, ys, &w)?;
        let change = (new_slope - slope).abs().max((new_intercept - intercept).abs());
        slope = new_slope;
        intercept = new_intercept;
        if change < 1e-8 {
            break;
        }
    }
    Ok((slope, intercept))
}

/// Mean ratios in the pooled upper/middle/lower lung fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LungFieldStats {
    pub mean_upper: f64,
    pub mean_middle: f64,
    pub mean_lower: f64,
    pub count_upper: usize,
    pub count_middle: usize,
    pub count_lower: usize,
}

/// Rows occupied by a mask, in order.
fn occupied_rows(mask: &BinaryMask) -> Vec<usize> {
    let (w, h) = (mask.grid.width, mask.grid.height);
    (0..h)
        .filter(|&j| (0..w).any(|i| mask.get(i, j)))
        .collect()
}

/// Split an ordered row list into three contiguous bands of equal row
/// count, remainder rows assigned to the lower bands.
fn band_split(rows: &[usize]) -> [Vec<usize>; 3] {
    let n = rows.len();
    let q = n / 3;
    let r = n % 3;
    let sizes = [q, q + usize::from(r == 2), q + usize::from(r >= 1)];
    let mut out: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut cursor = 0usize;
    for (band, &size) in sizes.iter().enumerate() {
        out[band] = rows[cursor..cursor + size].to_vec();
        cursor += size;
    }
    out
}

/// Three-lung-field means: each side's occupied rows are split into
/// upper/middle/lower bands, then the two sides are pooled per band
/// and finite ratio pixels averaged.
pub fn lung_fields(
    ratio: &RatioImage,
    left_mask: &BinaryMask,
    right_mask: &BinaryMask,
) -> Result<LungFieldStats> {
    for m in [left_mask, right_mask] {
        if m.grid != ratio.grid {
            return Err(Error::invalid("lung-field mask grid mismatch"));
        }
        m.ensure_nonempty()?;
    }
    let w = ratio.grid.width;
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for mask in [left_mask, right_mask] {
        let rows = occupied_rows(mask);
        if rows.len() < 3 {
            return Err(Error::Degenerate(format!(
                "{:?} mask occupies {} rows; need >= 3",
                mask.kind,
                rows.len()
            )));
        }
        let bands = band_split(&rows);
        for (band, band_rows) in bands.iter().enumerate() {
            for &j in band_rows {
                for i in 0..w {
                    if mask.get(i, j) {
                        let v = ratio.r[j * w + i];
                        if v.is_finite() {
                            sums[band] += v;
                            counts[band] += 1;
                        }
                    }
                }
            }
        }
    }
    if counts.iter().any(|&c| c == 0) {
        return Err(Error::Degenerate("a lung field has no finite ratio pixels".into()));
    }
    Ok(LungFieldStats {
        mean_upper: sums[0] / counts[0] as f64,
        mean_middle: sums[1] / counts[1] as f64,
        mean_lower: sums[2] / counts[2] as f64,
        count_upper: counts[0],
        count_middle: counts[1],
        count_lower: counts[2],
    })
}

/// Normalized relative vital lung capacity
/// `(V_insp - V_exp) / V_insp`. Negative outputs are physiologically
/// implausible but allowed.
pub fn vlc_rel(v_insp: f64, v_exp: f64) -> Result<f64> {
    if !(v_insp > 0.0) {
        return Err(Error::invalid(format!("inspiration volume must be > 0, got {v_insp}")));
    }
    let value = (v_insp - v_exp) / v_insp;
    if value < 0.0 {
        log::warn!("implausible negative VLC_rel = {value:.4}");
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub r_s: f64,
    pub p: f64,
}

/// Mid-ranks with average ranks for ties (1-based).
fn mid_ranks(vals: &[f64]) -> Vec<f64> {
    let n = vals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut k = 0usize;
    while k < n {
        let mut m = k;
        while m + 1 < n && vals[order[m + 1]] == vals[order[k]] {
            m += 1;
        }
        let avg = (k + m) as f64 / 2.0 + 1.0;
        for &idx in &order[k..=m] {
            ranks[idx] = avg;
        }
        k = m + 1;
    }
    ranks
}

/// Spearman rank correlation with mid-ranks and the two-sided
/// Student-t p-value approximation.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<SpearmanResult> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("mismatched correlation input lengths"));
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::invalid(format!("need >= 3 observations, got {n}")));
    }
    let rx = mid_ranks(xs);
    let ry = mid_ranks(ys);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for k in 0..n {
        let dx = rx[k] - mx;
        let dy = ry[k] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero rank variance in correlation".into()));
    }
    let r_s = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r_s.abs() >= 1.0 {
        0.0
    } else {
        let t = r_s * (df / (1.0 - r_s * r_s)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid dof");
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(SpearmanResult { r_s, p })
}

/// Median with the lower-interpolation convention: the element at
/// sorted index `floor((n-1)/2)`.
pub fn median_lower(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Some(sorted[(sorted.len() - 1) / 2])
}

/// (q1, median, q3) with the lower-interpolation convention.
pub fn quartiles_lower(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |q: f64| sorted[((sorted.len() - 1) as f64 * q).floor() as usize];
    Some((pick(0.25), pick(0.5), pick(0.75)))
}

/// One subject's analysis outputs plus ingested clinical covariates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortRecord {
    pub subject: String,
    pub vlc_rel: f64,
    /// Visual emphysema grade, 0 (absent) to 5 (advanced destructive).
    pub fleischner: u8,
    pub mean_upper: f64,
    pub mean_middle: f64,
    pub mean_lower: f64,
    pub slope_left: f64,
    pub slope_right: f64,
}

impl CohortRecord {
    pub fn validate(&self) -> Result<()> {
        if self.fleischner > 5 {
            return Err(Error::invalid(format!(
                "fleischner score {} out of range 0-5",
                self.fleischner
            )));
        }
        if !self.vlc_rel.is_finite() {
            return Err(Error::invalid("VLC_rel must be finite"));
        }
        Ok(())
    }
}

/// Spearman correlations of the regional means and CC slopes against
/// VLC_rel over the cohort. A column with zero rank variance is
/// reported as `None` rather than failing the table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n: usize,
    pub upper_vs_vlc: Option<SpearmanResult>,
    pub middle_vs_vlc: Option<SpearmanResult>,
    pub lower_vs_vlc: Option<SpearmanResult>,
    pub slope_left_vs_vlc: Option<SpearmanResult>,
    pub slope_right_vs_vlc: Option<SpearmanResult>,
}

pub fn cohort_table(records: &[CohortRecord]) -> Result<CohortSummary> {
    if records.len() < 3 {
        return Err(Error::invalid(format!(
            "cohort needs >= 3 records, got {}",
            records.len()
        )));
    }
    for r in records {
        r.validate()?;
    }
    let vlc: Vec<f64> = records.iter().map(|r| r.vlc_rel).collect();
    let corr = |f: fn(&CohortRecord) -> f64| -> Result<Option<SpearmanResult>> {
        let ys: Vec<f64> = records.iter().map(f).collect();
        match spearman(&vlc, &ys) {
            Ok(r) => Ok(Some(r)),
            Err(Error::Degenerate(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    Ok(CohortSummary {
        n: records.len(),
        upper_vs_vlc: corr(|r| r.mean_upper)?,
        middle_vs_vlc: corr(|r| r.mean_middle)?,
        lower_vs_vlc: corr(|r| r.mean_lower)?,
        slope_left_vs_vlc: corr(|r| r.slope_left)?,
        slope_right_vs_vlc: corr(|r| r.slope_right)?,
    })
}
