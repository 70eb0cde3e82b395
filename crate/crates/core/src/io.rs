//! File formats and the on-disk dataset layout.
//!
//! Rasters travel in the LW2D container: a one-line 7-field text
//! header `LW2D <width> <height> <spacing-mm> <origin-x> <origin-y>
//! <dtype>` followed by row-major little-endian payloads, dtype `f32`
//! for scalar rasters and `f32x2` for displacement fields. Masks are
//! also accepted as 8-bit binary PGM (P5) with threshold > 127;
//! landmarks as CSV with columns `label,x_mm,y_mm`.

use crate::analysis::RatioModality;
use crate::error::{Error, Result};
use crate::imaging::{
    BinaryMask, Grid2D, Image2D, LandmarkLabel, LandmarkSet, MaskKind, Vec2, LANDMARK_LABELS,
};
use crate::metrics::PairAnnotations;
use crate::phantom::PhantomCase;
use crate::transform::{AffineTransform, DisplacementField, VelocityLattice};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &str = "LW2D";

/// Write bytes via a temporary file and rename, so readers never see a
/// partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn header(grid: &Grid2D, dtype: &str) -> String {
    format!(
        "{MAGIC} {} {} {} {} {} {dtype}\n",
        grid.width, grid.height, grid.spacing, grid.origin.x, grid.origin.y
    )
}

fn parse_header(path: &Path, text: &str) -> Result<(Grid2D, String)> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 7 || fields[0] != MAGIC {
        return Err(Error::format(path.display().to_string(), "bad LW2D header"));
    }
    let parse_usize = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path.display().to_string(), format!("bad {what}")))
    };
    let parse_f64 = |s: &str, what: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::format(path.display().to_string(), format!("bad {what}")))
    };
    let grid = Grid2D::new(
        parse_usize(fields[1], "width")?,
        parse_usize(fields[2], "height")?,
        parse_f64(fields[3], "spacing")?,
        Vec2::new(parse_f64(fields[4], "origin-x")?, parse_f64(fields[5], "origin-y")?),
    )?;
    Ok((grid, fields[6].to_string()))
}

fn read_lw2d(path: &Path, expect_dtype: &str) -> Result<(Grid2D, Vec<u8>)> {
    let data = fs::read(path)?;
    let newline = data
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path.display().to_string(), "missing header line"))?;
    let text = std::str::from_utf8(&data[..newline])
        .map_err(|_| Error::format(path.display().to_string(), "non-UTF8 header"))?;
    let (grid, dtype) = parse_header(path, text)?;
    if dtype != expect_dtype {
        return Err(Error::format(
            path.display().to_string(),
            format!("dtype {dtype}, expected {expect_dtype}"),
        ));
    }
    let per = if expect_dtype == "f32x2" { 8 } else { 4 };
    let payload = &data[newline + 1..];
    if payload.len() != grid.len() * per {
        return Err(Error::format(
            path.display().to_string(),
            format!("payload {} bytes, expected {}", payload.len(), grid.len() * per),
        ));
    }
    Ok((grid, payload.to_vec()))
}

/// Canonical quiet-NaN bit pattern keeps written files byte-stable.
const CANONICAL_NAN: u32 = 0x7FC0_0000;

fn f32_bytes(v: f64) -> [u8; 4] {
    let f = v as f32;
    if f.is_nan() {
        CANONICAL_NAN.to_le_bytes()
    } else {
        f.to_le_bytes()
    }
}

/// Write a scalar raster (values may contain NaN markers).
pub fn write_raster(path: &Path, grid: &Grid2D, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::invalid("raster length does not match grid"));
    }
    let mut bytes = header(grid, "f32").into_bytes();
    bytes.reserve(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&f32_bytes(v));
    }
    atomic_write(path, &bytes)
}

/// Read a scalar raster, NaN markers preserved.
pub fn read_raster(path: &Path) -> Result<(Grid2D, Vec<f64>)> {
    let (grid, payload) = read_lw2d(path, "f32")?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((grid, values))
}

pub fn write_image(path: &Path, img: &Image2D) -> Result<()> {
    write_raster(path, &img.grid, &img.values)
}

pub fn read_image(path: &Path) -> Result<Image2D> {
    let (grid, values) = read_raster(path)?;
    Image2D::new(grid, values)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

pub fn write_field(path: &Path, field: &DisplacementField) -> Result<()> {
    let mut bytes = header(&field.grid, "f32x2").into_bytes();
    bytes.reserve(field.u.len() * 8);
    for v in &field.u {
        bytes.extend_from_slice(&f32_bytes(v.x));
        bytes.extend_from_slice(&f32_bytes(v.y));
    }
    atomic_write(path, &bytes)
}

pub fn read_field(path: &Path) -> Result<DisplacementField> {
    let (grid, payload) = read_lw2d(path, "f32x2")?;
    let u = payload
        .chunks_exact(8)
        .map(|c| {
            Vec2::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]) as f64,
            )
        })
        .collect();
    Ok(DisplacementField { grid, u })
}

/// Write a mask as binary PGM (255 = true).
pub fn write_mask_pgm(path: &Path, mask: &BinaryMask) -> Result<()> {
    let mut bytes =
        format!("P5\n{} {}\n255\n", mask.grid.width, mask.grid.height).into_bytes();
    bytes.extend(mask.values.iter().map(|&b| if b { 255u8 } else { 0u8 }));
    atomic_write(path, &bytes)
}

/// Read a binary PGM mask; gray values > 127 become true. The grid's
/// physical placement comes from the caller (PGM carries none).
pub fn read_mask_pgm(path: &Path, spacing: f64, origin: Vec2, kind: MaskKind) -> Result<BinaryMask> {
    let mut data = Vec::new();
    fs::File::open(path)?.read_to_end(&mut data)?;
    let err = |reason: &str| Error::format(path.display().to_string(), reason);
    // Header: three whitespace-separated tokens after the magic.
    let mut pos = 0usize;
    let mut token = |data: &[u8]| -> Result<String> {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        // Comment lines start with '#'.
        while pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        Ok(std::str::from_utf8(&data[start..pos])
            .map_err(|_| err("non-UTF8 header"))?
            .to_string())
    };
    if token(&data)? != "P5" {
        return Err(err("not a P5 PGM"));
    }
    let width: usize = token(&data)?.parse().map_err(|_| err("bad width"))?;
    let height: usize = token(&data)?.parse().map_err(|_| err("bad height"))?;
    let maxval: usize = token(&data)?.parse().map_err(|_| err("bad maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(err("only 8-bit PGM supported"));
    }
    pos += 1; // single whitespace after maxval
    let payload = &data[pos..];
    if payload.len() != width * height {
        return Err(err("payload size mismatch"));
    }
    let grid = Grid2D::new(width, height, spacing, origin)?;
    let values = payload.iter().map(|&b| b > 127).collect();
    BinaryMask::new(grid, values, kind)
}

/// Write landmarks as `label,x_mm,y_mm` CSV.
pub fn write_landmarks(path: &Path, lms: &LandmarkSet) -> Result<()> {
    let mut out = String::from("label,x_mm,y_mm\n");
    for (label, p) in lms.iter() {
        out.push_str(&format!("{},{},{}\n", label.as_str(), p.x, p.y));
    }
    atomic_write(path, out.as_bytes())
}

/// Read a landmark CSV; all six canonical labels must be present.
pub fn read_landmarks(path: &Path, grid: Option<&Grid2D>) -> Result<LandmarkSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let mut found: Vec<(LandmarkLabel, Vec2)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        if record.len() != 3 {
            return Err(Error::format(path.display().to_string(), "expected 3 columns"));
        }
        let label = LandmarkLabel::parse(record[0].trim()).ok_or_else(|| {
            Error::format(path.display().to_string(), format!("unknown label {}", &record[0]))
        })?;
        let x: f64 = record[1].trim().parse().map_err(|_| {
            Error::format(path.display().to_string(), format!("bad x for {}", &record[0]))
        })?;
        let y: f64 = record[2].trim().parse().map_err(|_| {
            Error::format(path.display().to_string(), format!("bad y for {}", &record[0]))
        })?;
        found.push((label, Vec2::new(x, y)));
    }
    let mut points = [(LandmarkLabel::ApexLeft, Vec2::ZERO); 6];
    for (k, want) in LANDMARK_LABELS.iter().enumerate() {
        let (_, p) = found
            .iter()
            .find(|(l, _)| l == want)
            .ok_or_else(|| {
                Error::format(path.display().to_string(), format!("missing label {}", want.as_str()))
            })?;
        points[k] = (*want, *p);
    }
    LandmarkSet::new(points, grid)
}

/// Serialized registration transform: the velocity lattice plus the
/// affine pre-registration when one ran.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformFile {
    pub affine: Option<AffineTransform>,
    pub lattice: VelocityLattice,
}

pub fn write_transform(path: &Path, tf: &TransformFile) -> Result<()> {
    let json = serde_json::to_string_pretty(tf)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    atomic_write(path, json.as_bytes())
}

pub fn read_transform(path: &Path) -> Result<TransformFile> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// One row of the cohort input CSV
/// (`subject,v_insp,v_exp,fleischner`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortEntry {
    pub subject: String,
    pub v_insp: f64,
    pub v_exp: f64,
    pub fleischner: u8,
}

pub fn read_cohort(path: &Path) -> Result<Vec<CohortEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let mut out = Vec::new();
    for record in reader.deserialize::<CohortEntry>() {
        let entry =
            record.map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        if entry.fleischner > 5 {
            return Err(Error::format(
                path.display().to_string(),
                format!("fleischner {} out of range for {}", entry.fleischner, entry.subject),
            ));
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn write_cohort(path: &Path, entries: &[CohortEntry]) -> Result<()> {
    let mut out = String::from("subject,v_insp,v_exp,fleischner\n");
    for e in entries {
        out.push_str(&format!("{},{},{},{}\n", e.subject, e.v_insp, e.v_exp, e.fleischner));
    }
    atomic_write(path, out.as_bytes())
}

/// Conventional file names inside a subject directory.
pub mod names {
    pub const FIXED: &str = "fixed.lw2d";
    pub const MOVING: &str = "moving.lw2d";
    pub const MASK_FULL_FIXED: &str = "mask_full_fixed.pgm";
    pub const MASK_FULL_MOVING: &str = "mask_full_moving.pgm";
    pub const MASK_PARTIAL_FIXED: &str = "mask_partial_fixed.pgm";
    pub const MASK_PARTIAL_MOVING: &str = "mask_partial_moving.pgm";
    pub const MASK_LEFT_FIXED: &str = "mask_left_fixed.pgm";
    pub const MASK_RIGHT_FIXED: &str = "mask_right_fixed.pgm";
    pub const LANDMARKS_FIXED: &str = "landmarks_fixed.csv";
    pub const LANDMARKS_MOVING: &str = "landmarks_moving.csv";
    pub const BONE_MASK: &str = "bone_mask.pgm";
    pub const TRUTH_PHI: &str = "truth_phi.lw2d";
    pub const TRUTH_META: &str = "truth.json";
}

/// Images plus whatever annotations a subject directory provides.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub name: String,
    pub fixed: Image2D,
    pub moving: Image2D,
    pub annotations: PairAnnotations,
    pub fixed_left_partial: Option<BinaryMask>,
    pub fixed_right_partial: Option<BinaryMask>,
}

/// Load a subject directory by filename convention; masks and
/// landmarks are optional. Mask grids adopt the fixed image's spacing
/// and origin and must match its dimensions.
pub fn read_subject(dir: &Path) -> Result<SubjectData> {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "subject".into());
    let fixed = read_image(&dir.join(names::FIXED))?;
    let moving = read_image(&dir.join(names::MOVING))?;
    if fixed.grid != moving.grid {
        return Err(Error::invalid(format!(
            "{name}: fixed and moving grids differ"
        )));
    }
    let grid = fixed.grid;
    let mask = |file: &str, kind: MaskKind| -> Result<Option<BinaryMask>> {
        let path = dir.join(file);
        if !path.exists() {
            return Ok(None);
        }
        let m = read_mask_pgm(&path, grid.spacing, grid.origin, kind)?;
        if m.grid != grid {
            return Err(Error::invalid(format!("{name}/{file}: grid mismatch")));
        }
        Ok(Some(m))
    };
    let lms = |file: &str| -> Result<Option<LandmarkSet>> {
        let path = dir.join(file);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(read_landmarks(&path, Some(&grid))?))
    };
    let annotations = PairAnnotations {
        fixed_full: mask(names::MASK_FULL_FIXED, MaskKind::Full)?,
        moving_full: mask(names::MASK_FULL_MOVING, MaskKind::Full)?,
        fixed_partial: mask(names::MASK_PARTIAL_FIXED, MaskKind::Partial)?,
        moving_partial: mask(names::MASK_PARTIAL_MOVING, MaskKind::Partial)?,
        fixed_landmarks: lms(names::LANDMARKS_FIXED)?,
        moving_landmarks: lms(names::LANDMARKS_MOVING)?,
    };
    let fixed_left_partial = mask(names::MASK_LEFT_FIXED, MaskKind::LeftPartial)?;
    let fixed_right_partial = mask(names::MASK_RIGHT_FIXED, MaskKind::RightPartial)?;
    Ok(SubjectData { name, fixed, moving, annotations, fixed_left_partial, fixed_right_partial })
}

/// Phantom ground-truth metadata sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthMeta {
    pub seed: u64,
    pub amplitude_px: f64,
    pub max_displacement_px: f64,
    pub probe_points: Vec<Vec2>,
    /// Images of the probe points under the truth map.
    pub probe_targets: Vec<Vec2>,
}

/// Emit a phantom case as a self-contained subject directory usable by
/// every command, truth files included.
pub fn write_phantom_case(dir: &Path, case: &PhantomCase) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_image(&dir.join(names::FIXED), &case.fixed)?;
    write_image(&dir.join(names::MOVING), &case.moving)?;
    write_mask_pgm(&dir.join(names::MASK_FULL_FIXED), &case.fixed_full)?;
    write_mask_pgm(&dir.join(names::MASK_FULL_MOVING), &case.moving_full)?;
    write_mask_pgm(&dir.join(names::MASK_PARTIAL_FIXED), &case.fixed_partial)?;
    write_mask_pgm(&dir.join(names::MASK_PARTIAL_MOVING), &case.moving_partial)?;
    write_mask_pgm(&dir.join(names::MASK_LEFT_FIXED), &case.fixed_left_partial)?;
    write_mask_pgm(&dir.join(names::MASK_RIGHT_FIXED), &case.fixed_right_partial)?;
    write_landmarks(&dir.join(names::LANDMARKS_FIXED), &case.fixed_landmarks)?;
    write_landmarks(&dir.join(names::LANDMARKS_MOVING), &case.moving_landmarks)?;
    if let Some(bones) = &case.bone_mask {
        write_mask_pgm(&dir.join(names::BONE_MASK), bones)?;
    }
    write_field(&dir.join(names::TRUTH_PHI), &case.truth_phi)?;
    let meta = TruthMeta {
        seed: case.spec.seed,
        amplitude_px: case.spec.amplitude_px,
        max_displacement_px: case.truth_phi.max_displacement() / case.spec.spacing,
        probe_points: case.probe_points.clone(),
        probe_targets: case.probe_points.iter().map(|&p| case.truth_phi.apply(p)).collect(),
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::format(dir.display().to_string(), e.to_string()))?;
    atomic_write(&dir.join(names::TRUTH_META), json.as_bytes())?;
    Ok(())
}

pub fn read_truth_meta(dir: &Path) -> Result<TruthMeta> {
    let path = dir.join(names::TRUTH_META);
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Ratio rasters carry their modality in a sidecar-free way: encode it
/// in the filename chosen by the caller; this helper just writes the
/// raster with NaN markers intact.
pub fn write_ratio(path: &Path, ratio: &crate::analysis::RatioImage) -> Result<()> {
    write_raster(path, &ratio.grid, &ratio.r)
}

pub fn read_ratio(path: &Path, modality: RatioModality) -> Result<crate::analysis::RatioImage> {
    let (grid, r) = read_raster(path)?;
    Ok(crate::analysis::RatioImage { grid, r, modality })
}

/// List subject subdirectories of a dataset root, sorted by name.
pub fn list_subject_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join(names::FIXED).exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, PhantomSpec};
    use tempfile::tempdir;

    fn grid(w: usize, h: usize, spacing: f64) -> Grid2D {
        Grid2D::new(w, h, spacing, Vec2::new(1.0, -2.0)).unwrap()
    }

    #[test]
    fn image_roundtrip_is_f32_exact() {
        let dir = tempdir().unwrap();
        let g = grid(9, 5, 1.66);
        let img = Image2D::new(
            g,
            (0..45).map(|k| (k as f64 * 0.317).sin() * 3.5).collect(),
        )
        .unwrap();
        let path = dir.path().join("img.lw2d");
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.grid, img.grid);
        for (a, b) in back.values.iter().zip(&img.values) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn raster_preserves_nan_markers() {
        let dir = tempdir().unwrap();
        let g = grid(4, 4, 1.0);
        let mut values = vec![1.5; 16];
        values[3] = f64::NAN;
        values[9] = f64::NAN;
        let path = dir.path().join("ratio.lw2d");
        write_raster(&path, &g, &values).unwrap();
        let (_, back) = read_raster(&path).unwrap();
        assert!(back[3].is_nan());
        assert!(back[9].is_nan());
        assert_eq!(back[0], 1.5);
    }

    #[test]
    fn field_roundtrip() {
        let dir = tempdir().unwrap();
        let g = grid(6, 4, 2.0);
        let field = DisplacementField {
            grid: g,
            u: (0..24).map(|k| Vec2::new(k as f64 * 0.25, -(k as f64) * 0.125)).collect(),
        };
        let path = dir.path().join("phi.lw2d");
        write_field(&path, &field).unwrap();
        let back = read_field(&path).unwrap();
        assert_eq!(back.grid, field.grid);
        for (a, b) in back.u.iter().zip(&field.u) {
            assert_eq!(a.x, b.x as f32 as f64);
            assert_eq!(a.y, b.y as f32 as f64);
        }
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let dir = tempdir().unwrap();
        let g = grid(4, 4, 1.0);
        let img = Image2D::zeros(g);
        let path = dir.path().join("img.lw2d");
        write_image(&path, &img).unwrap();
        assert!(read_field(&path).is_err());
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.lw2d");
        atomic_write(&path, b"LW2D 4 4 1 0 0 f32\n\x00\x00").unwrap();
        assert!(read_image(&path).is_err());
        let path2 = dir.path().join("bad2.lw2d");
        atomic_write(&path2, b"NOPE 4 4 1 0 0 f32\n").unwrap();
        assert!(read_image(&path2).is_err());
    }

    #[test]
    fn pgm_roundtrip_and_threshold() {
        let dir = tempdir().unwrap();
        let g = grid(7, 3, 1.0);
        let mask = BinaryMask::new(
            g,
            (0..21).map(|k| k % 3 == 0).collect(),
            MaskKind::Partial,
        )
        .unwrap();
        let path = dir.path().join("m.pgm");
        write_mask_pgm(&path, &mask).unwrap();
        let back = read_mask_pgm(&path, 1.0, Vec2::new(1.0, -2.0), MaskKind::Partial).unwrap();
        assert_eq!(back, mask);

        // Gray values at and below 127 are false, above are true.
        let gray = b"P5\n2 2\n255\n\x7f\x80\x00\xff";
        let path = dir.path().join("gray.pgm");
        atomic_write(&path, gray).unwrap();
        let m = read_mask_pgm(&path, 1.0, Vec2::ZERO, MaskKind::Full).unwrap();
        assert_eq!(m.values, vec![false, true, false, true]);
    }

    #[test]
    fn landmarks_roundtrip_and_missing_label() {
        let dir = tempdir().unwrap();
        let g = Grid2D::new(64, 64, 1.0, Vec2::ZERO).unwrap();
        let lms = LandmarkSet::from_points(
            [
                Vec2::new(10.0, 8.0),
                Vec2::new(50.0, 8.5),
                Vec2::new(6.0, 50.0),
                Vec2::new(58.0, 51.0),
                Vec2::new(25.0, 48.0),
                Vec2::new(38.0, 49.0),
            ],
            Some(&g),
        )
        .unwrap();
        let path = dir.path().join("lms.csv");
        write_landmarks(&path, &lms).unwrap();
        let back = read_landmarks(&path, Some(&g)).unwrap();
        assert_eq!(back, lms);

        let partial = "label,x_mm,y_mm\napex-left,1,1\n";
        atomic_write(&dir.path().join("partial.csv"), partial.as_bytes()).unwrap();
        assert!(read_landmarks(&dir.path().join("partial.csv"), None).is_err());
    }

    #[test]
    fn transform_file_roundtrip() {
        let dir = tempdir().unwrap();
        let g = Grid2D::new(32, 32, 1.66, Vec2::ZERO).unwrap();
        let mut lattice = VelocityLattice::for_grid(&g, 8.0).unwrap();
        lattice.coeffs[10] = Vec2::new(1.25, -0.75);
        let tf = TransformFile {
            affine: Some(AffineTransform::translation(Vec2::new(3.0, -1.0))),
            lattice,
        };
        let path = dir.path().join("transform.json");
        write_transform(&path, &tf).unwrap();
        let back = read_transform(&path).unwrap();
        assert_eq!(back.lattice, tf.lattice);
        assert_eq!(back.affine, tf.affine);
    }

    #[test]
    fn cohort_roundtrip_and_validation() {
        let dir = tempdir().unwrap();
        let entries = vec![
            CohortEntry { subject: "s1".into(), v_insp: 6.2, v_exp: 4.4, fleischner: 0 },
            CohortEntry { subject: "s2".into(), v_insp: 5.8, v_exp: 5.1, fleischner: 3 },
        ];
        let path = dir.path().join("cohort.csv");
        write_cohort(&path, &entries).unwrap();
        let back = read_cohort(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].subject, "s2");
        assert_eq!(back[1].fleischner, 3);

        atomic_write(&path, b"subject,v_insp,v_exp,fleischner\nbad,1,1,9\n").unwrap();
        assert!(read_cohort(&path).is_err());
    }

    #[test]
    fn phantom_dataset_roundtrip() {
        let dir = tempdir().unwrap();
        let spec = PhantomSpec { size: 64, amplitude_px: 6.0, ..PhantomSpec::default_darkfield(11) };
        let case = make_phantom(&spec).unwrap();
        let subject_dir = dir.path().join(&case.name);
        write_phantom_case(&subject_dir, &case).unwrap();

        let subject = read_subject(&subject_dir).unwrap();
        assert_eq!(subject.fixed.grid, case.fixed.grid);
        assert_eq!(
            subject.annotations.fixed_full.as_ref().unwrap().values,
            case.fixed_full.values
        );
        assert!(subject.annotations.fixed_landmarks.is_some());
        assert!(subject.fixed_left_partial.is_some());
        let meta = read_truth_meta(&subject_dir).unwrap();
        assert_eq!(meta.seed, 11);
        assert_eq!(meta.probe_points.len(), 36);

        let listed = list_subject_dirs(dir.path()).unwrap();
        assert_eq!(listed, vec![subject_dir]);
    }
}
