//! Command implementations behind the CLI: register, evaluate,
//! analyze, sweep, and phantom generation. Every command writes its
//! outputs atomically and reports failures through exit codes; failed
//! registrations leave a FAILED marker file instead of partial
//! results.

use crate::config::{Preprocessing, RunConfig};
use lungwarp_core::analysis::{
    cc_projection_with, cohort_table, lung_fields, quartiles_lower, ratio_image, vlc_rel,
    CohortRecord, RatioModality, Side,
};
use lungwarp_core::imaging::{downsample_by_2, pad_to_square, shift_horizontal, BinaryMask};
use lungwarp_core::io::{self, SubjectData, TransformFile};
use lungwarp_core::metrics::{full_report, MetricsReport, PairAnnotations, Phase};
use lungwarp_core::optimize::{
    parameter_sweep, run_pipeline, Modality, PipelineInput, RegistrationResult, StopReason,
    SweepPair,
};
use lungwarp_core::transform::warp_image;
use lungwarp_core::Error as CoreError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Failure category mapped onto process exit codes: 2 config,
/// 3 input/output, 4 optimization.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Optimization(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Optimization(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "input/output error: {m}"),
            CliError::Optimization(m) => write!(f, "optimization aborted: {m}"),
        }
    }
}

fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

fn core_err(e: CoreError) -> CliError {
    match e {
        CoreError::NonFinite(m) => CliError::Optimization(m),
        CoreError::Degenerate(m) => CliError::Optimization(m),
        other => CliError::Io(other.to_string()),
    }
}

pub type CmdResult<T> = Result<T, CliError>;

pub fn load_config(path: &Path) -> CmdResult<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    RunConfig::parse(&text).map_err(CliError::Config)
}

fn pad_mask(mask: &BinaryMask, target: usize) -> CmdResult<BinaryMask> {
    let (w, h) = (mask.grid.width, mask.grid.height);
    let grid = lungwarp_core::Grid2D::new(target, target, mask.grid.spacing, mask.grid.origin)
        .map_err(core_err)?;
    let mut values = vec![false; grid.len()];
    for j in 0..h {
        for i in 0..w {
            values[j * target + i] = mask.values[j * w + i];
        }
    }
    BinaryMask::new(grid, values, mask.kind).map_err(core_err)
}

/// Apply padding, the manual horizontal shift of the moving image, and
/// optional half-resolution steps to a subject; masks follow the
/// images and landmarks stay in physical coordinates.
pub fn preprocess_subject(subject: &SubjectData, pre: &Preprocessing) -> CmdResult<SubjectData> {
    let target = if pre.pad_to == 0 {
        subject.fixed.grid.width.max(subject.fixed.grid.height)
    } else {
        pre.pad_to
    };
    let mut fixed = pad_to_square(&subject.fixed, target).map_err(core_err)?;
    let mut moving = pad_to_square(&subject.moving, target).map_err(core_err)?;
    if pre.shift_px != 0 {
        moving = shift_horizontal(&moving, pre.shift_px).map_err(core_err)?;
    }
    let mut masks: Vec<Option<BinaryMask>> = vec![
        subject.annotations.fixed_full.clone(),
        subject.annotations.moving_full.clone(),
        subject.annotations.fixed_partial.clone(),
        subject.annotations.moving_partial.clone(),
        subject.fixed_left_partial.clone(),
        subject.fixed_right_partial.clone(),
    ];
    for slot in masks.iter_mut() {
        if let Some(m) = slot.take() {
            *slot = Some(pad_mask(&m, target)?);
        }
    }
    for _ in 0..pre.downsample_steps {
        fixed = downsample_by_2(&fixed).map_err(core_err)?;
        moving = downsample_by_2(&moving).map_err(core_err)?;
        for slot in masks.iter_mut() {
            if let Some(m) = slot.take() {
                *slot = Some(m.resample_to(fixed.grid));
            }
        }
    }
    let mut it = masks.into_iter();
    Ok(SubjectData {
        name: subject.name.clone(),
        fixed,
        moving,
        annotations: PairAnnotations {
            fixed_full: it.next().unwrap(),
            moving_full: it.next().unwrap(),
            fixed_partial: it.next().unwrap(),
            moving_partial: it.next().unwrap(),
            fixed_landmarks: subject.annotations.fixed_landmarks.clone(),
            moving_landmarks: subject.annotations.moving_landmarks.clone(),
        },
        fixed_left_partial: it.next().unwrap(),
        fixed_right_partial: it.next().unwrap(),
    })
}

/// Deterministic registration record (no wall-clock content).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultMeta {
    pub pair: String,
    pub data_dir: String,
    pub modality: Modality,
    pub preprocessing: Preprocessing,
    pub levels: Vec<LevelMeta>,
    pub degenerate_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelMeta {
    pub level: usize,
    pub size: usize,
    pub steps: usize,
    pub reason: StopReason,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Wall-clock log; the only output that differs between identical
/// reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub duration_s: f64,
    pub finished_unix_ms: u128,
}

pub mod out_names {
    pub const TRANSFORM: &str = "transform.json";
    pub const PHI: &str = "phi.lw2d";
    pub const WARPED: &str = "warped.lw2d";
    pub const TRAJECTORY: &str = "trajectory.csv";
    pub const RESULT: &str = "result.json";
    pub const RUN_LOG: &str = "run_log.json";
    pub const FAILED: &str = "FAILED";
    pub const RATIO: &str = "ratio.lw2d";
    pub const PROJECTIONS: &str = "projections.csv";
    pub const FIELDS: &str = "fields.json";
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(io_err)?;
    io::atomic_write(path, text.as_bytes()).map_err(io_err)
}

fn register_one(
    config: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
) -> CmdResult<RegistrationResult> {
    let subject = io::read_subject(data_dir).map_err(core_err)?;
    let subject = preprocess_subject(&subject, &config.preprocessing)?;
    let input = PipelineInput {
        fixed: subject.fixed.clone(),
        moving: subject.moving.clone(),
        fixed_partial_mask: subject.annotations.fixed_partial.clone(),
    };
    let result =
        run_pipeline(&input, config.modality, &config.pipeline_config()).map_err(core_err)?;

    fs::create_dir_all(out_dir).map_err(io_err)?;
    io::write_transform(
        &out_dir.join(out_names::TRANSFORM),
        &TransformFile { affine: result.affine, lattice: result.lattice.clone() },
    )
    .map_err(core_err)?;
    io::write_field(&out_dir.join(out_names::PHI), &result.phi).map_err(core_err)?;
    let warped = warp_image(&subject.moving, &result.phi);
    io::write_image(&out_dir.join(out_names::WARPED), &warped).map_err(core_err)?;

    let mut csv = String::from("level,step,loss\n");
    for traj in &result.trajectories {
        for (step, loss) in traj.losses.iter().enumerate() {
            csv.push_str(&format!("{},{},{}\n", traj.level, step, loss));
        }
    }
    io::atomic_write(&out_dir.join(out_names::TRAJECTORY), csv.as_bytes()).map_err(io_err)?;

    let meta = ResultMeta {
        pair: subject.name.clone(),
        data_dir: data_dir.display().to_string(),
        modality: config.modality,
        preprocessing: config.preprocessing.clone(),
        levels: result
            .trajectories
            .iter()
            .map(|t| LevelMeta {
                level: t.level,
                size: t.size,
                steps: t.losses.len(),
                reason: t.reason,
                initial_loss: t.losses[0],
                final_loss: *t.losses.last().unwrap(),
            })
            .collect(),
        degenerate_steps: result.degenerate_steps,
    };
    write_json(&out_dir.join(out_names::RESULT), &meta)?;
    let log = RunLog {
        duration_s: result.duration_s,
        finished_unix_ms: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
    };
    write_json(&out_dir.join(out_names::RUN_LOG), &log)?;
    Ok(result)
}

/// Register one or more pair directories; failures leave a FAILED
/// marker in the pair's output directory and the first failure's exit
/// code is reported after all pairs ran.
pub fn cmd_register(config: &RunConfig, pairs: &[PathBuf], out: &Path) -> CmdResult<()> {
    if pairs.is_empty() {
        return Err(CliError::Config("no pair directories given".into()));
    }
    fs::create_dir_all(out).map_err(io_err)?;
    let outcomes: Vec<(String, CmdResult<RegistrationResult>)> = pairs
        .par_iter()
        .map(|dir| {
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "pair".into());
            let pair_out = out.join(&name);
            let outcome = register_one(config, dir, &pair_out);
            if let Err(e) = &outcome {
                let _ = fs::create_dir_all(&pair_out);
                let _ = io::atomic_write(
                    &pair_out.join(out_names::FAILED),
                    format!("{e}\n").as_bytes(),
                );
                log::error!("{name}: {e}");
            } else {
                log::info!("{name}: registered");
            }
            (name, outcome)
        })
        .collect();
    for (_, outcome) in outcomes {
        outcome?;
    }
    Ok(())
}

fn metrics_csv_row(pair: &str, report: &MetricsReport) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let phase = match report.phase {
        Phase::Before => "before",
        Phase::After => "after",
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}\n",
        pair,
        phase,
        cell(report.dice_full),
        cell(report.dice_partial),
        cell(report.msd_full),
        cell(report.msd_partial),
        cell(report.hd_full),
        cell(report.hd_partial),
        cell(report.tre_mean),
        cell(report.folding_ratio),
        cell(report.mmgjd),
    )
}

#[derive(Debug, Clone, Serialize)]
struct AggregateEntry {
    metric: String,
    phase: String,
    n: usize,
    median: f64,
    q1: f64,
    q3: f64,
}

#[derive(Debug, Clone, Serialize)]
struct AggregateFile {
    convention: String,
    entries: Vec<AggregateEntry>,
}

/// Evaluate completed registrations: per-pair before/after reports
/// plus median/IQR aggregates across pairs.
pub fn cmd_evaluate(result_dirs: &[PathBuf], out: &Path) -> CmdResult<()> {
    if result_dirs.is_empty() {
        return Err(CliError::Config("no result directories given".into()));
    }
    fs::create_dir_all(out).map_err(io_err)?;
    let mut csv = String::from(
        "pair,phase,dice_full,dice_partial,msd_full,msd_partial,hd_full,hd_partial,tre_mean,folding_ratio,mmgjd\n",
    );
    let mut reports: Vec<(String, MetricsReport, MetricsReport)> = Vec::new();
    for dir in result_dirs {
        if dir.join(out_names::FAILED).exists() {
            return Err(CliError::Io(format!(
                "{} holds a failed registration",
                dir.display()
            )));
        }
        let meta: ResultMeta = serde_json::from_str(
            &fs::read_to_string(dir.join(out_names::RESULT)).map_err(io_err)?,
        )
        .map_err(io_err)?;
        let subject = io::read_subject(Path::new(&meta.data_dir)).map_err(core_err)?;
        let subject = preprocess_subject(&subject, &meta.preprocessing)?;
        let phi = io::read_field(&dir.join(out_names::PHI)).map_err(core_err)?;
        let (before, after) = full_report(&subject.annotations, &phi).map_err(core_err)?;
        write_json(&out.join(format!("{}_metrics_before.json", meta.pair)), &before)?;
        write_json(&out.join(format!("{}_metrics_after.json", meta.pair)), &after)?;
        csv.push_str(&metrics_csv_row(&meta.pair, &before));
        csv.push_str(&metrics_csv_row(&meta.pair, &after));
        reports.push((meta.pair, before, after));
    }
    io::atomic_write(&out.join("metrics.csv"), csv.as_bytes()).map_err(io_err)?;

    // Aggregate with the lower-interpolation convention.
    let mut entries = Vec::new();
    let metrics: [(&str, fn(&MetricsReport) -> Option<f64>); 9] = [
        ("dice_full", |r| r.dice_full),
        ("dice_partial", |r| r.dice_partial),
        ("msd_full", |r| r.msd_full),
        ("msd_partial", |r| r.msd_partial),
        ("hd_full", |r| r.hd_full),
        ("hd_partial", |r| r.hd_partial),
        ("tre_mean", |r| r.tre_mean),
        ("folding_ratio", |r| r.folding_ratio),
        ("mmgjd", |r| r.mmgjd),
    ];
    for phase in ["before", "after"] {
        for (name, getter) in &metrics {
            let values: Vec<f64> = reports
                .iter()
                .filter_map(|(_, b, a)| getter(if phase == "before" { b } else { a }))
                .collect();
            if let Some((q1, median, q3)) = quartiles_lower(&values) {
                entries.push(AggregateEntry {
                    metric: name.to_string(),
                    phase: phase.to_string(),
                    n: values.len(),
                    median,
                    q1,
                    q3,
                });
            }
        }
    }
    let mut agg_csv = String::from("metric,phase,n,median,q1,q3\n");
    for e in &entries {
        agg_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.metric, e.phase, e.n, e.median, e.q1, e.q3
        ));
    }
    io::atomic_write(&out.join("aggregate.csv"), agg_csv.as_bytes()).map_err(io_err)?;
    write_json(
        &out.join("aggregate.json"),
        &AggregateFile { convention: "lower-interpolation".into(), entries },
    )?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct AnalyzeSummary {
    analyzed: Vec<String>,
    skipped: Vec<SkippedSubject>,
    implausible_vlc: Vec<String>,
    band_rule: String,
    cc_fit_weighted: bool,
    spearman: Option<lungwarp_core::analysis::CohortSummary>,
}

#[derive(Debug, Clone, Serialize)]
struct SkippedSubject {
    subject: String,
    reason: String,
}

fn analyze_one(
    config: &RunConfig,
    results_root: &Path,
    subject_id: &str,
    out: &Path,
) -> Result<(f64, f64, lungwarp_core::analysis::LungFieldStats), String> {
    let dir = results_root.join(subject_id);
    let meta_path = dir.join(out_names::RESULT);
    if !meta_path.exists() {
        return Err("no completed registration".into());
    }
    let meta: ResultMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let subject =
        io::read_subject(Path::new(&meta.data_dir)).map_err(|e| e.to_string())?;
    let subject = preprocess_subject(&subject, &meta.preprocessing)
        .map_err(|e| e.to_string())?;
    let left = subject
        .fixed_left_partial
        .as_ref()
        .ok_or("missing left partial mask")?;
    let right = subject
        .fixed_right_partial
        .as_ref()
        .ok_or("missing right partial mask")?;
    let warped = io::read_image(&dir.join(out_names::WARPED)).map_err(|e| e.to_string())?;

    let modality = match meta.modality {
        Modality::Darkfield => RatioModality::Darkfield,
        Modality::Attenuation => RatioModality::Attenuation,
    };
    let ratio = ratio_image(&warped, &subject.fixed, config.analysis.ratio_floor, modality)
        .map_err(|e| e.to_string())?;

    let subject_out = out.join(subject_id);
    fs::create_dir_all(&subject_out).map_err(|e| e.to_string())?;
    io::write_ratio(&subject_out.join(out_names::RATIO), &ratio).map_err(|e| e.to_string())?;

    let delta = config.analysis.huber_delta;
    let weighted = config.analysis.weighted_cc_fit;
    let left_proj =
        cc_projection_with(&ratio, left, Side::Left, weighted, delta).map_err(|e| e.to_string())?;
    let right_proj = cc_projection_with(&ratio, right, Side::Right, weighted, delta)
        .map_err(|e| e.to_string())?;
    let mut proj_csv = String::from("cc_mm,mean_ratio,side\n");
    for (row, mean) in left_proj.rows.iter().zip(&left_proj.means) {
        proj_csv.push_str(&format!("{},{},left\n", row, mean));
    }
    for (row, mean) in right_proj.rows.iter().zip(&right_proj.means) {
        proj_csv.push_str(&format!("{},{},right\n", row, mean));
    }
    io::atomic_write(&subject_out.join(out_names::PROJECTIONS), proj_csv.as_bytes())
        .map_err(|e| e.to_string())?;

    let fields = lung_fields(&ratio, left, right).map_err(|e| e.to_string())?;
    let fields_json = serde_json::json!({
        "fields": fields,
        "slope_left_per_mm": left_proj.slope,
        "intercept_left": left_proj.intercept,
        "slope_right_per_mm": right_proj.slope,
        "intercept_right": right_proj.intercept,
    });
    io::atomic_write(
        &subject_out.join(out_names::FIELDS),
        serde_json::to_string_pretty(&fields_json)
            .map_err(|e| e.to_string())?
            .as_bytes(),
    )
    .map_err(|e| e.to_string())?;
    Ok((left_proj.slope, right_proj.slope, fields))
}

/// Ratio analysis over a cohort: per-subject ratio rasters, CC
/// projections, lung-field means, then Spearman correlations against
/// VLC_rel. Subjects with missing inputs are skipped and listed.
pub fn cmd_analyze(
    config: &RunConfig,
    results_root: &Path,
    cohort_csv: &Path,
    out: &Path,
) -> CmdResult<()> {
    let cohort = io::read_cohort(cohort_csv).map_err(core_err)?;
    fs::create_dir_all(out).map_err(io_err)?;
    let mut records: Vec<CohortRecord> = Vec::new();
    let mut skipped = Vec::new();
    let mut implausible = Vec::new();
    let mut cohort_csv_out = String::from(
        "subject,vlc_rel,fleischner,mean_upper,mean_middle,mean_lower,slope_left,slope_right\n",
    );
    for entry in &cohort {
        let vlc = match vlc_rel(entry.v_insp, entry.v_exp) {
            Ok(v) => v,
            Err(e) => {
                skipped.push(SkippedSubject { subject: entry.subject.clone(), reason: e.to_string() });
                continue;
            }
        };
        if vlc < 0.0 {
            implausible.push(entry.subject.clone());
        }
        match analyze_one(config, results_root, &entry.subject, out) {
            Ok((slope_left, slope_right, fields)) => {
                cohort_csv_out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    entry.subject,
                    vlc,
                    entry.fleischner,
                    fields.mean_upper,
                    fields.mean_middle,
                    fields.mean_lower,
                    slope_left,
                    slope_right
                ));
                records.push(CohortRecord {
                    subject: entry.subject.clone(),
                    vlc_rel: vlc,
                    fleischner: entry.fleischner,
                    mean_upper: fields.mean_upper,
                    mean_middle: fields.mean_middle,
                    mean_lower: fields.mean_lower,
                    slope_left,
                    slope_right,
                });
            }
            Err(reason) => {
                log::warn!("skipping {}: {reason}", entry.subject);
                skipped.push(SkippedSubject { subject: entry.subject.clone(), reason });
            }
        }
    }
    io::atomic_write(&out.join("cohort.csv"), cohort_csv_out.as_bytes()).map_err(io_err)?;
    let spearman = if records.len() >= 3 {
        Some(cohort_table(&records).map_err(core_err)?)
    } else {
        None
    };
    let summary = AnalyzeSummary {
        analyzed: records.iter().map(|r| r.subject.clone()).collect(),
        skipped,
        implausible_vlc: implausible,
        band_rule: "equal-rows".into(),
        cc_fit_weighted: config.analysis.weighted_cc_fit,
        spearman,
    };
    write_json(&out.join("spearman.json"), &summary)?;
    Ok(())
}

/// Table-II-shaped sweep over alpha x stride with metric medians.
pub fn cmd_sweep(config: &RunConfig, pairs: &[PathBuf], out: &Path) -> CmdResult<()> {
    if pairs.is_empty() {
        return Err(CliError::Config("no pair directories given".into()));
    }
    fs::create_dir_all(out).map_err(io_err)?;
    let mut sweep_pairs = Vec::with_capacity(pairs.len());
    for dir in pairs {
        let subject = io::read_subject(dir).map_err(core_err)?;
        let subject = preprocess_subject(&subject, &config.preprocessing)?;
        sweep_pairs.push(SweepPair {
            name: subject.name.clone(),
            fixed: subject.fixed.clone(),
            moving: subject.moving.clone(),
            annotations: subject.annotations.clone(),
        });
    }
    let report = parameter_sweep(
        &sweep_pairs,
        &config.sweep.alphas,
        &config.sweep.strides,
        &config.pipeline_config(),
    )
    .map_err(core_err)?;

    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut csv = String::from(
        "alpha,stride,dice_full,dice_partial,msd_full,msd_partial,tre,mmgjd,duration_s\n",
    );
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.alpha,
            row.stride,
            cell(row.dice_full),
            cell(row.dice_partial),
            cell(row.msd_full),
            cell(row.msd_partial),
            cell(row.tre),
            cell(row.mmgjd),
            cell(row.duration_s),
        ));
    }
    io::atomic_write(&out.join("sweep.csv"), csv.as_bytes()).map_err(io_err)?;
    write_json(&out.join("sweep.json"), &report)?;
    let failures: Vec<(f64, f64, Vec<String>)> = report
        .rows
        .iter()
        .filter(|r| !r.failures.is_empty())
        .map(|r| (r.alpha, r.stride, r.failures.clone()))
        .collect();
    if !failures.is_empty() {
        write_json(&out.join("sweep_failures.json"), &failures)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct PhantomOptions {
    pub count: usize,
    pub seed: u64,
    pub size: usize,
    pub modality: Modality,
    pub amplitude_px: f64,
}

/// Emit a self-contained phantom dataset (one subject directory per
/// case plus a ground-truth table).
pub fn cmd_phantom(opts: &PhantomOptions, out: &Path) -> CmdResult<()> {
    use lungwarp_core::phantom::{phantom_suite, IntensityModel, PhantomSpec};
    let base = PhantomSpec {
        size: opts.size,
        amplitude_px: opts.amplitude_px,
        intensity_model: match opts.modality {
            Modality::Darkfield => IntensityModel::DarkfieldLike,
            Modality::Attenuation => IntensityModel::AttenuationLike,
        },
        ratio_gain: match opts.modality {
            Modality::Darkfield => 0.35,
            Modality::Attenuation => 0.10,
        },
        ..PhantomSpec::default_darkfield(opts.seed)
    };
    base.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (cases, rows) = phantom_suite(opts.count, &base).map_err(core_err)?;
    fs::create_dir_all(out).map_err(io_err)?;
    for case in &cases {
        io::write_phantom_case(&out.join(&case.name), case).map_err(core_err)?;
    }
    let mut csv = String::from(
        "name,seed,amplitude_px,max_displacement_px,before_dice_full,before_tre_mm\n",
    );
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.name,
            row.seed,
            row.amplitude_px,
            row.max_displacement_px,
            row.before_dice_full,
            row.before_tre_mm
        ));
    }
    io::atomic_write(&out.join("truth.csv"), csv.as_bytes()).map_err(io_err)?;
    Ok(())
}
