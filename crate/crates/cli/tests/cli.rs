//! End-to-end CLI contract tests: exit codes, diagnostics, help text,
//! and reproducibility of the file outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinecarve"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn spinecarve")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_spec(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

/// Generates a small phantom dataset and returns its directory.
fn phantom_dataset(dir: &Path, name: &str, spec_body: &str) -> PathBuf {
    let spec = write_spec(dir, &format!("{name}_spec.json"), spec_body);
    let out = dir.join(name);
    let result = run_in(
        dir,
        &[
            "phantom",
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert!(
        result.status.success(),
        "phantom failed: {}",
        stderr_of(&result)
    );
    out
}

const SMALL_SPEC: &str = r#"{"dims": [16, 16], "n_shapes": 3, "jitter": 1.0, "seed": 1}"#;

fn dataset_files(dir: &Path, masks: bool) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let ext = p.extension().unwrap_or_default().to_string_lossy();
            (ext == "pgm" || ext == "mhd")
                && p.file_stem().unwrap().to_string_lossy().ends_with("_mask") == masks
        })
        .collect();
    files.sort();
    files
}

fn first_image(dir: &Path) -> PathBuf {
    dataset_files(dir, false).remove(0)
}

fn first_mask(dir: &Path) -> PathBuf {
    dataset_files(dir, true).remove(0)
}

#[test]
fn missing_input_exits_2_and_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "segment",
            "--image",
            "absent.pgm",
            "--model",
            "absent.model",
            "--out",
            "seg",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("absent.pgm"));
}

#[test]
fn missing_mask_exits_2_and_names_the_expected_file() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = phantom_dataset(tmp.path(), "ds", SMALL_SPEC);
    for entry in fs::read_dir(&ds).unwrap() {
        let path = entry.unwrap().path();
        if path
            .file_stem()
            .is_some_and(|s| s.to_string_lossy().ends_with("_mask"))
        {
            fs::remove_file(&path).unwrap();
            break;
        }
    }
    let out = run_in(
        tmp.path(),
        &[
            "train",
            "--images",
            ds.to_str().unwrap(),
            "--masks",
            ds.to_str().unwrap(),
            "--out",
            "model.bin",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("_mask"), "{}", stderr_of(&out));
}

#[test]
fn mismatched_grids_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let small = phantom_dataset(tmp.path(), "small", SMALL_SPEC);
    let large = phantom_dataset(
        tmp.path(),
        "large",
        r#"{"dims": [24, 24], "n_shapes": 1, "jitter": 1.0, "seed": 2}"#,
    );
    let train = run_in(
        tmp.path(),
        &[
            "train",
            "--images",
            small.to_str().unwrap(),
            "--masks",
            small.to_str().unwrap(),
            "--out",
            "model.bin",
        ],
    );
    assert!(train.status.success(), "{}", stderr_of(&train));
    let image = first_image(&large);
    let out = run_in(
        tmp.path(),
        &[
            "segment",
            "--image",
            image.to_str().unwrap(),
            "--model",
            "model.bin",
            "--out",
            "seg",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("dimension mismatch"));
}

#[test]
fn unconverged_run_exits_4_but_writes_the_result() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = phantom_dataset(tmp.path(), "ds", SMALL_SPEC);
    let train = run_in(
        tmp.path(),
        &[
            "train",
            "--images",
            ds.to_str().unwrap(),
            "--masks",
            ds.to_str().unwrap(),
            "--out",
            "model.bin",
        ],
    );
    assert!(train.status.success(), "{}", stderr_of(&train));
    let cfg = write_spec(
        tmp.path(),
        "starved.json",
        r#"{"version": 1, "evolution": {"max_iters_stage1": 1, "max_iters_stage2": 1}}"#,
    );
    let image = first_image(&ds);
    let out = run_in(
        tmp.path(),
        &[
            "segment",
            "--config",
            cfg.to_str().unwrap(),
            "--image",
            image.to_str().unwrap(),
            "--model",
            "model.bin",
            "--out",
            "seg",
        ],
    );
    assert_eq!(out.status.code(), Some(4), "{}", stderr_of(&out));
    assert!(tmp.path().join("seg/mask.pgm").exists());
    assert!(
        stderr_of(&out).contains("converging"),
        "{}",
        stderr_of(&out)
    );
}

#[test]
fn invalid_requests_exit_5() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = phantom_dataset(tmp.path(), "ds", SMALL_SPEC);
    let train = run_in(
        tmp.path(),
        &[
            "train",
            "--images",
            ds.to_str().unwrap(),
            "--masks",
            ds.to_str().unwrap(),
            "--out",
            "model.bin",
        ],
    );
    assert!(train.status.success(), "{}", stderr_of(&train));
    let image = first_image(&ds);

    let bad_method = run_in(
        tmp.path(),
        &[
            "segment",
            "--image",
            image.to_str().unwrap(),
            "--model",
            "model.bin",
            "--out",
            "seg",
            "--method",
            "osmosis",
        ],
    );
    assert_eq!(
        bad_method.status.code(),
        Some(5),
        "{}",
        stderr_of(&bad_method)
    );

    let stray_key = write_spec(
        tmp.path(),
        "stray.json",
        r#"{"version": 1, "verbosity": 3}"#,
    );
    let bad_config = run_in(
        tmp.path(),
        &[
            "evaluate",
            "--config",
            stray_key.to_str().unwrap(),
            "--prediction",
            "x",
            "--truth",
            "y",
        ],
    );
    assert_eq!(
        bad_config.status.code(),
        Some(5),
        "{}",
        stderr_of(&bad_config)
    );
    assert!(stderr_of(&bad_config).contains("stray.json"));

    let empty = write_spec(tmp.path(), "empty.json", r#"{"n_shapes": 0}"#);
    let bad_spec = run_in(
        tmp.path(),
        &["phantom", "--spec", empty.to_str().unwrap(), "--out", "p"],
    );
    assert_eq!(bad_spec.status.code(), Some(5), "{}", stderr_of(&bad_spec));
}

#[test]
fn help_covers_every_subcommand_and_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let top = run_in(tmp.path(), &["--help"]);
    assert!(top.status.success());
    let text = stdout_of(&top);
    for sub in ["train", "segment", "phantom", "loo", "evaluate"] {
        assert!(text.contains(sub), "top help misses {sub}");
    }
    for (sub, flags) in [
        ("train", vec!["--images", "--masks", "--out"]),
        (
            "segment",
            vec!["--image", "--model", "--out", "--ground-truth", "--method"],
        ),
        ("phantom", vec!["--spec", "--out"]),
        ("loo", vec!["--dataset", "--methods", "--out"]),
        ("evaluate", vec!["--prediction", "--truth"]),
    ] {
        let help = run_in(tmp.path(), &[sub, "--help"]);
        assert!(help.status.success());
        let text = stdout_of(&help);
        for flag in flags.iter().chain(&["--config", "--seed", "--threads"]) {
            assert!(text.contains(flag), "{sub} help misses {flag}");
        }
        assert!(text.contains("default"), "{sub} help states no defaults");
    }
}

#[test]
fn phantom_and_train_outputs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = phantom_dataset(tmp.path(), "a", SMALL_SPEC);
    let b = phantom_dataset(tmp.path(), "b", SMALL_SPEC);
    let mut names: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(names.len() >= 7, "3 pairs plus echo files, got {names:?}");
    for name in &names {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs between identical phantom runs"
        );
    }

    for model in ["m1.bin", "m2.bin"] {
        let train = run_in(
            tmp.path(),
            &[
                "train",
                "--images",
                a.to_str().unwrap(),
                "--masks",
                a.to_str().unwrap(),
                "--out",
                model,
            ],
        );
        assert!(train.status.success(), "{}", stderr_of(&train));
    }
    assert_eq!(
        fs::read(tmp.path().join("m1.bin")).unwrap(),
        fs::read(tmp.path().join("m2.bin")).unwrap()
    );
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = phantom_dataset(tmp.path(), "ds", SMALL_SPEC);
    let train = run_in(
        tmp.path(),
        &[
            "train",
            "--images",
            ds.to_str().unwrap(),
            "--masks",
            ds.to_str().unwrap(),
            "--out",
            "model.bin",
        ],
    );
    assert!(train.status.success(), "{}", stderr_of(&train));
    let cfg = write_spec(
        tmp.path(),
        "cfg.json",
        r#"{"version": 1, "method": "data-only", "seed": 7}"#,
    );
    let image = first_image(&ds);
    let out = run_in(
        tmp.path(),
        &[
            "segment",
            "--config",
            cfg.to_str().unwrap(),
            "--image",
            image.to_str().unwrap(),
            "--model",
            "model.bin",
            "--out",
            "seg",
            "--method",
            "piecewise-constant",
            "--seed",
            "9",
        ],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    let echoed = fs::read_to_string(tmp.path().join("seg/config_used.json")).unwrap();
    assert!(echoed.contains("piecewise-constant"), "{echoed}");
    assert!(echoed.contains("\"seed\": 9"), "{echoed}");
}

#[test]
fn evaluate_prints_a_six_decimal_dice() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = phantom_dataset(tmp.path(), "ds", SMALL_SPEC);
    let mask = first_mask(&ds);
    let out = run_in(
        tmp.path(),
        &[
            "evaluate",
            "--prediction",
            mask.to_str().unwrap(),
            "--truth",
            mask.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(stdout_of(&out).contains("1.000000"), "{}", stdout_of(&out));
}

#[test]
fn segment_reports_dice_against_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = phantom_dataset(
        tmp.path(),
        "ds",
        r#"{"dims": [24, 24], "n_shapes": 3, "jitter": 1.0, "seed": 4}"#,
    );
    let train = run_in(
        tmp.path(),
        &[
            "train",
            "--images",
            ds.to_str().unwrap(),
            "--masks",
            ds.to_str().unwrap(),
            "--out",
            "model.bin",
        ],
    );
    assert!(train.status.success(), "{}", stderr_of(&train));
    let image = first_image(&ds);
    let mask = image.with_file_name(format!(
        "{}_mask.pgm",
        image.file_stem().unwrap().to_string_lossy()
    ));
    let out = run_in(
        tmp.path(),
        &[
            "segment",
            "--image",
            image.to_str().unwrap(),
            "--model",
            "model.bin",
            "--out",
            "seg",
            "--ground-truth",
            mask.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(stdout_of(&out).contains("dice"), "{}", stdout_of(&out));
    for artifact in [
        "mask.pgm",
        "phi.mhd",
        "energy_trace.csv",
        "config_used.json",
    ] {
        assert!(tmp.path().join("seg").join(artifact).exists(), "{artifact}");
    }
}
