use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdrstack"))
        .args(args)
        .output()
        .expect("spawn hdrstack")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json_file(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{path:?}: {e}"));
    serde_json::from_str(&text).expect("valid JSON")
}

/// Simulates a stack into `dir` and returns the image paths in index order.
fn simulate(dir: &Path, extra: &[&str]) -> Vec<String> {
    let out = run(&[
        &["simulate", "--out", dir.to_str().unwrap()],
        extra,
    ]
    .concat());
    assert_eq!(code(&out), 0, "simulate failed: {}", stderr(&out));
    let mut paths: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "pfm"))
        .map(|p| p.display().to_string())
        .collect();
    paths.sort();
    paths
}

fn estimate_args<'a>(images: &'a [String], meta: &'a str, out: &'a str) -> Vec<&'a str> {
    let mut args = vec!["estimate", "--stack"];
    args.extend(images.iter().map(String::as_str));
    args.extend(["--meta", meta, "--out", out]);
    args
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let flags = ["--scene", "gradient13", "--iso", "800", "--seed", "7", "--height", "48", "--width", "256"];
    simulate(&a, &flags);
    simulate(&b, &flags);

    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 6, "4 images + 2 metadata files");
    for name in names {
        let x = std::fs::read(a.join(&name)).unwrap();
        let y = std::fs::read(b.join(&name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
}

#[test]
fn estimate_then_merge_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("stack");
    // Noiseless capture, corrupted metadata: the estimate should undo the
    // corruption almost exactly. The scene is tall enough that the prior's
    // ridge pull stays well under the tolerance.
    let images = simulate(&dir, &["--scene", "log-ramp", "--height", "1024", "--width", "512", "--seed", "3"]);
    assert_eq!(images.len(), 4);
    let meta_corr = dir.join("meta_corrupted.json").display().to_string();
    let report_path = tmp.path().join("estimate.json");
    let report_str = report_path.display().to_string();

    let out = run(&estimate_args(&images, &meta_corr, &report_str));
    assert_eq!(code(&out), 0, "estimate failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("correction"), "per-exposure ratios not printed:\n{text}");

    let report = json_file(&report_path);
    assert_eq!(report["settings"]["lambda"], 10.0);
    assert_eq!(report["settings"]["tile"], 16);
    assert_eq!(report["settings"]["k"], 50);
    assert_eq!(report["gauge"], 3);
    assert_eq!(report["fallback_to_prior"], false);

    // Expected correction per exposure: the inverse corruption factor,
    // relative to the gauge exposure's.
    let truth = json_file(&dir.join("meta_true.json"));
    let corrupted = json_file(&dir.join("meta_corrupted.json"));
    let factor = |i: usize| -> f64 {
        truth[i]["exposure_time"].as_f64().unwrap()
            / corrupted[i]["exposure_time"].as_f64().unwrap()
    };
    let ratios = report["per_exposure_ratio_vs_exif"].as_array().unwrap();
    for i in 0..4 {
        let got = ratios[i].as_f64().unwrap();
        let want = factor(i) / factor(3);
        assert!(
            (got / want - 1.0).abs() < 1e-2,
            "exposure {i}: correction {got} but true factor {want}"
        );
    }

    let hdr = tmp.path().join("out").join("hdr.pfm");
    std::fs::create_dir_all(hdr.parent().unwrap()).unwrap();
    let hdr_str = hdr.display().to_string();
    let mut args = vec!["merge", "--stack"];
    args.extend(images.iter().map(String::as_str));
    args.extend(["--meta", &meta_corr, "--estimate", &report_str, "--out", &hdr_str]);
    let out = run(&args);
    assert_eq!(code(&out), 0, "merge failed: {}", stderr(&out));
    assert!(hdr.is_file());
    assert!(hdr.with_file_name("hdr_mask.pgm").is_file());

    // Same stack merged on the metadata alone still works (the comparison
    // path), with inverse-variance weighting this time.
    let hdr2 = tmp.path().join("out").join("exif.pfm");
    let hdr2_str = hdr2.display().to_string();
    let mut args = vec!["merge", "--stack"];
    args.extend(images.iter().map(String::as_str));
    args.extend([
        "--meta", &meta_corr, "--use-exif", "--mode", "inverse-variance",
        "--noise-profile", "canon-s100", "--iso", "100", "--out", &hdr2_str,
    ]);
    let out = run(&args);
    assert_eq!(code(&out), 0, "exif merge failed: {}", stderr(&out));
    assert!(hdr2.is_file());
}

#[test]
fn calibrated_weights_require_a_profile() {
    let out = run(&[
        "estimate", "--stack", "x.pfm", "--meta", "m.json", "--weights", "calibrated",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("noise-profile"));
}

#[test]
fn merge_requires_estimate_or_exif() {
    let out = run(&["merge", "--stack", "x.pfm", "--meta", "m.json", "--out", "o.pfm"]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("--use-exif"));
}

#[test]
fn unknown_iso_lists_available_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate", "--scene", "gradient13", "--iso", "999",
        "--out", tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("999") && err.contains("800"), "{err}");
}

#[test]
fn unknown_scene_lists_choices() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--scene", "nope", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("gradient13"));
}

#[test]
fn disconnected_stack_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("stack");
    // The short exposure lands entirely below the validity floor, so it
    // shares no usable pixels with the long one.
    let images = simulate(
        &dir,
        &["--scene", "gradient13", "--height", "48", "--width", "256", "--times", "0.000001,1", "--corruption", "0"],
    );
    let meta = dir.join("meta_true.json").display().to_string();
    let report = tmp.path().join("r.json").display().to_string();
    let out = run(&estimate_args(&images, &meta, &report));
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("no valid pixels"));
}

#[test]
fn all_tiles_rejected_falls_back_with_exit_5() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("stack");
    let images = simulate(
        &dir,
        &["--scene", "gradient13", "--iso", "800", "--seed", "9", "--height", "48", "--width", "256"],
    );
    let meta = dir.join("meta_corrupted.json").display().to_string();
    let report_path = tmp.path().join("r.json");
    let report_str = report_path.display().to_string();
    // Noise guarantees every tile deviates by more than this.
    let mut args = estimate_args(&images, &meta, &report_str);
    args.extend(["--outlier-threshold", "1e-10"]);
    let out = run(&args);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    let report = json_file(&report_path);
    assert_eq!(report["fallback_to_prior"], true, "report records the fallback");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("stack");
    let images = simulate(&dir, &["--scene", "log-ramp", "--height", "32", "--width", "128", "--seed", "5"]);
    let meta = dir.join("meta_corrupted.json").display().to_string();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"lambda": 99.0, "k": 7}"#).unwrap();
    let cfg_str = cfg.display().to_string();

    let report_path = tmp.path().join("a.json");
    let report_str = report_path.display().to_string();
    let mut args = estimate_args(&images, &meta, &report_str);
    args.extend(["--config", &cfg_str]);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json_file(&report_path);
    assert_eq!(report["settings"]["lambda"], 99.0);
    assert_eq!(report["settings"]["k"], 7);

    let report_path = tmp.path().join("b.json");
    let report_str = report_path.display().to_string();
    let mut args = estimate_args(&images, &meta, &report_str);
    args.extend(["--config", &cfg_str, "--lambda", "10"]);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json_file(&report_path);
    assert_eq!(report["settings"]["lambda"], 10.0);
    assert_eq!(report["settings"]["k"], 7);

    std::fs::write(&cfg, r#"{"lambdaa": 1.0}"#).unwrap();
    let out = run(&["estimate", "--stack", "x.pfm", "--meta", "m.json", "--config", &cfg_str]);
    assert_eq!(code(&out), 2, "typos in the config are refused");
}

#[test]
fn evaluate_writes_report_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let report = tmp.path().join("r.json");
    let csv = tmp.path().join("r.csv");
    let out = run(&[
        "evaluate",
        "--isos", "800",
        "--seeds", "1",
        "--scenes", "texture",
        "--size", "64",
        "--methods", "baseline,greedy-mst-wls",
        "--out", report.to_str().unwrap(),
        "--csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let doc = json_file(&report);
    assert_eq!(doc["config"]["isos"], serde_json::json!([800]));
    assert_eq!(doc["scenes"], serde_json::json!(["texture"]));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("method,iso,"));
    // 2 methods x (1 ISO row + 1 overall row).
    assert_eq!(lines.len(), 5, "{text}");
    assert!(text.contains("greedy-mst-wls,800,"));

    // An external radiance map replaces the built-in scene list.
    let dir = tmp.path().join("scene");
    simulate(&dir, &["--scene", "gradient13", "--height", "32", "--width", "64", "--corruption", "0"]);
    let ext = dir.join("exposure_03.pfm");
    let report2 = tmp.path().join("r2.json");
    let out = run(&[
        "evaluate", "--isos", "800", "--seeds", "1",
        "--scene-files", ext.to_str().unwrap(),
        "--methods", "baseline",
        "--out", report2.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(json_file(&report2)["scenes"], serde_json::json!(["exposure_03"]));
}
