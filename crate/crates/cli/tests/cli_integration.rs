//! End-to-end command tests on small phantom datasets: output
//! contracts, optional annotations, exit codes of the binary, and
//! byte-determinism of reruns.

use lungwarp_cli::commands::{
    cmd_analyze, cmd_evaluate, cmd_phantom, cmd_register, out_names, CliError, PhantomOptions,
};
use lungwarp_cli::config::RunConfig;
use lungwarp_core::io::CohortEntry;
use lungwarp_core::optimize::Modality;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use tempfile::tempdir;

/// Production parameter shape at reduced size/budget so one test run
/// stays in seconds.
fn quick_config() -> RunConfig {
    let mut config = RunConfig::darkfield_default();
    config.preprocessing.levels = 3;
    config.nonrigid.kernels = vec![5, 9, 17];
    config.nonrigid.window = 40;
    config.nonrigid.max_steps = 250;
    config
}

fn make_dataset(root: &Path, count: usize, size: usize, amplitude: f64) -> Vec<PathBuf> {
    let opts = PhantomOptions {
        count,
        seed: 7,
        size,
        modality: Modality::Darkfield,
        amplitude_px: amplitude,
    };
    cmd_phantom(&opts, root).unwrap();
    lungwarp_core::io::list_subject_dirs(root).unwrap()
}

#[test]
fn register_emits_all_artifacts_and_evaluate_reports() {
    let data = tempdir().unwrap();
    let out = tempdir().unwrap();
    let pairs = make_dataset(data.path(), 1, 64, 6.0);
    assert_eq!(pairs.len(), 1);
    let config = quick_config();
    cmd_register(&config, &pairs, out.path()).unwrap();

    let pair_out = out.path().join(pairs[0].file_name().unwrap());
    for artifact in [
        out_names::TRANSFORM,
        out_names::PHI,
        out_names::WARPED,
        out_names::TRAJECTORY,
        out_names::RESULT,
    ] {
        assert!(pair_out.join(artifact).exists(), "missing {artifact}");
    }
    assert!(!pair_out.join(out_names::FAILED).exists());

    let eval_out = tempdir().unwrap();
    cmd_evaluate(&[pair_out.clone()], eval_out.path()).unwrap();
    let csv = fs::read_to_string(eval_out.path().join("metrics.csv")).unwrap();
    assert!(csv.starts_with("pair,phase,dice_full"));
    assert_eq!(csv.lines().count(), 3); // header + before + after
    let after: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(
            eval_out
                .path()
                .join(format!("{}_metrics_after.json", pairs[0].file_name().unwrap().to_str().unwrap())),
        )
        .unwrap(),
    )
    .unwrap();
    assert!(after["dice_full"].as_f64().unwrap() > 0.5);
    assert!(eval_out.path().join("aggregate.json").exists());
}

#[test]
fn missing_landmarks_still_register_with_null_metric_fields() {
    let data = tempdir().unwrap();
    let out = tempdir().unwrap();
    let pairs = make_dataset(data.path(), 1, 64, 6.0);
    fs::remove_file(pairs[0].join("landmarks_fixed.csv")).unwrap();
    fs::remove_file(pairs[0].join("landmarks_moving.csv")).unwrap();

    let config = quick_config();
    cmd_register(&config, &pairs, out.path()).unwrap();
    let pair_out = out.path().join(pairs[0].file_name().unwrap());
    let eval_out = tempdir().unwrap();
    cmd_evaluate(&[pair_out], eval_out.path()).unwrap();
    let name = pairs[0].file_name().unwrap().to_str().unwrap().to_string();
    let after: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(eval_out.path().join(format!("{name}_metrics_after.json"))).unwrap(),
    )
    .unwrap();
    assert!(after["tre_mean"].is_null());
    assert!(after["dice_full"].as_f64().is_some());
}

#[test]
fn analyze_writes_ratio_projections_and_cohort() {
    let data = tempdir().unwrap();
    let out = tempdir().unwrap();
    let pairs = make_dataset(data.path(), 3, 64, 6.0);
    let config = quick_config();
    cmd_register(&config, &pairs, out.path()).unwrap();

    let cohort_path = data.path().join("cohort.csv");
    let entries: Vec<CohortEntry> = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| CohortEntry {
            subject: p.file_name().unwrap().to_string_lossy().into_owned(),
            v_insp: 6.0,
            v_exp: 6.0 - 0.5 * (k as f64 + 1.0),
            fleischner: k as u8,
        })
        .collect();
    lungwarp_core::io::write_cohort(&cohort_path, &entries).unwrap();

    let analyze_out = tempdir().unwrap();
    cmd_analyze(&config, out.path(), &cohort_path, analyze_out.path()).unwrap();
    for p in &pairs {
        let name = p.file_name().unwrap().to_str().unwrap();
        let subject_out = analyze_out.path().join(name);
        assert!(subject_out.join(out_names::RATIO).exists());
        let proj = fs::read_to_string(subject_out.join(out_names::PROJECTIONS)).unwrap();
        assert!(proj.starts_with("cc_mm,mean_ratio,side"));
        assert!(proj.contains(",left"));
        assert!(proj.contains(",right"));
        assert!(subject_out.join(out_names::FIELDS).exists());
    }
    let cohort_csv = fs::read_to_string(analyze_out.path().join("cohort.csv")).unwrap();
    assert!(cohort_csv.starts_with("subject,vlc_rel,fleischner,mean_upper"));
    assert_eq!(cohort_csv.lines().count(), 4);
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(analyze_out.path().join("spearman.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["analyzed"].as_array().unwrap().len(), 3);
    assert!(summary["spearman"].is_object());
}

#[test]
fn analyze_skips_subjects_without_results() {
    let data = tempdir().unwrap();
    let out = tempdir().unwrap();
    let pairs = make_dataset(data.path(), 1, 64, 6.0);
    let config = quick_config();
    cmd_register(&config, &pairs, out.path()).unwrap();
    let cohort_path = data.path().join("cohort.csv");
    let mut entries = vec![CohortEntry {
        subject: pairs[0].file_name().unwrap().to_string_lossy().into_owned(),
        v_insp: 6.0,
        v_exp: 4.5,
        fleischner: 1,
    }];
    entries.push(CohortEntry {
        subject: "missing-subject".into(),
        v_insp: 5.0,
        v_exp: 4.0,
        fleischner: 0,
    });
    lungwarp_core::io::write_cohort(&cohort_path, &entries).unwrap();
    let analyze_out = tempdir().unwrap();
    cmd_analyze(&config, out.path(), &cohort_path, analyze_out.path()).unwrap();
    let summary: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(analyze_out.path().join("spearman.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["skipped"].as_array().unwrap().len(), 1);
    assert_eq!(summary["skipped"][0]["subject"], "missing-subject");
}

#[test]
fn config_error_maps_to_exit_code_two() {
    let err = CliError::Config("x".into());
    assert_eq!(err.exit_code(), 2);
    assert_eq!(CliError::Io("x".into()).exit_code(), 3);
    assert_eq!(CliError::Optimization("x".into()).exit_code(), 4);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_lungwarp");
    let dir = tempdir().unwrap();

    // Invalid config -> 2.
    let bad_config = dir.path().join("bad.toml");
    fs::write(&bad_config, "modality = \"darkfield\"\nmystery = 1\n").unwrap();
    let status = Command::new(bin)
        .args(["register", "--config"])
        .arg(&bad_config)
        .args(["--out"])
        .arg(dir.path().join("out"))
        .arg(dir.path().join("nonexistent"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Valid config, missing input -> 3.
    let good_config = dir.path().join("good.toml");
    fs::write(&good_config, quick_config().to_toml()).unwrap();
    let status = Command::new(bin)
        .args(["register", "--config"])
        .arg(&good_config)
        .args(["--out"])
        .arg(dir.path().join("out"))
        .arg(dir.path().join("nonexistent"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    // Failure marker written.
    assert!(dir.path().join("out/nonexistent/FAILED").exists());

    // Phantom end-to-end -> 0.
    let status = Command::new(bin)
        .args(["phantom", "--out"])
        .arg(dir.path().join("phantoms"))
        .args(["--count", "1", "--size", "32", "--amplitude", "3", "--seed", "5"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(dir.path().join("phantoms/truth.csv").exists());
}

#[test]
fn sweep_csv_has_table_shape() {
    let data = tempdir().unwrap();
    let out = tempdir().unwrap();
    let pairs = make_dataset(data.path(), 1, 32, 3.0);
    let mut config = quick_config();
    config.preprocessing.levels = 2;
    config.nonrigid.kernels = vec![5, 9];
    config.nonrigid.window = 10;
    config.nonrigid.max_steps = 30;
    lungwarp_cli::commands::cmd_sweep(&config, &pairs, out.path()).unwrap();
    let csv = fs::read_to_string(out.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "alpha,stride,dice_full,dice_partial,msd_full,msd_partial,tre,mmgjd,duration_s"
    );
    assert_eq!(lines.count(), 12);
}

/// Collect every non-log file under a directory tree with its bytes.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                if rel.ends_with(out_names::RUN_LOG) {
                    continue; // wall-clock log
                }
                files.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn rerun_is_byte_identical_except_logs() {
    let data = tempdir().unwrap();
    let pairs = make_dataset(data.path(), 1, 64, 6.0);
    let config = quick_config();
    let cohort_path = data.path().join("cohort.csv");
    lungwarp_core::io::write_cohort(
        &cohort_path,
        &[CohortEntry {
            subject: pairs[0].file_name().unwrap().to_string_lossy().into_owned(),
            v_insp: 6.0,
            v_exp: 4.8,
            fleischner: 2,
        }],
    )
    .unwrap();

    let run = |root: &Path| {
        let reg = root.join("reg");
        cmd_register(&config, &pairs, &reg).unwrap();
        let pair_out = reg.join(pairs[0].file_name().unwrap());
        cmd_evaluate(&[pair_out], &root.join("eval")).unwrap();
        cmd_analyze(&config, &reg, &cohort_path, &root.join("analyze")).unwrap();
    };
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    run(a.path());
    run(b.path());
    let sa = snapshot(a.path());
    let sb = snapshot(b.path());
    assert_eq!(sa.len(), sb.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in sa.iter().zip(sb.iter()) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "file {name_a} differs between reruns");
    }
}
