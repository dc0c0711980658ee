use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use scrnet_core::imaging::{read_hfc_raw, save_image, Image};

fn scrnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scrnet"))
        .args(args)
        .env_remove("SCRNET_THREADS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn desk_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/clear")
}

fn one_line_failure(out: &Output) -> bool {
    let err = String::from_utf8_lossy(&out.stderr);
    !out.status.success() && err.trim_end().lines().count() == 1
}

#[test]
fn hfc_of_constant_image_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (input, output) = (dir.path().join("in"), dir.path().join("out"));
    fs::create_dir(&input).unwrap();
    save_image(&Image::constant(20, 30, 0.6).unwrap(), input.join("flat.png")).unwrap();
    let out = scrnet(&["hfc", "--input", s(&input), "--output", s(&output), "--radius", "5", "--sigma", "2"]);
    assert!(out.status.success());
    let raw = fs::read(output.join("flat_hfc.f32")).unwrap();
    assert_eq!(&raw[..4], b"HFC0");
    assert_eq!(raw.len(), 16 + 4 * 3 * 20 * 30);
    let hfc = read_hfc_raw(output.join("flat_hfc.f32")).unwrap();
    assert!(hfc.data().iter().all(|v| *v == 0.0));
    assert!(output.join("flat_hfc.png").exists());
    assert_eq!(fs::read_to_string(output.join("hfc_params.txt")).unwrap(), "radius = 5\nsigma = 2\n");
}

#[test]
fn bad_invocations_fail_in_one_line() {
    assert!(one_line_failure(&scrnet(&["synthesize", "--bogus"])));
    assert!(one_line_failure(&scrnet(&["train", "--data", "x"])));
    assert!(one_line_failure(&scrnet(&["frobnicate"])));
    assert!(scrnet(&["--help"]).status.success());
}

#[test]
fn invalid_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "sigma_b_min = 5\n").unwrap();
    let output = dir.path().join("out");
    let out = scrnet(&["synthesize", "--input", s(&desk_dir()), "--output", s(&output), "--config", s(&cfg)]);
    assert!(one_line_failure(&out));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[10, 30]"));
    assert!(!output.exists());

    fs::write(&cfg, "learning_rate = 1\n").unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let out = scrnet(&["train", "--data", s(&desk_dir()), "--config", s(&cfg), "--out", s(&ckpt)]);
    assert!(one_line_failure(&out));
    assert!(!ckpt.exists());

    let out = scrnet(&["hfc", "--input", s(&desk_dir()), "--output", s(&output), "--sigma", "-1"]);
    assert!(one_line_failure(&out));
    assert!(!output.exists());
}

#[test]
fn bad_threads_variable_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_scrnet"))
        .args(["hfc", "--input", "a", "--output", "b"])
        .env("SCRNET_THREADS", "many")
        .output()
        .unwrap();
    assert!(one_line_failure(&out));
}

#[test]
fn synthesize_writes_images_and_params() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    fs::copy(desk_dir().join("fundus_00.png"), input.join("eye.png")).unwrap();
    let output = dir.path().join("out");
    let out = scrnet(&["synthesize", "--input", s(&input), "--output", s(&output), "--k", "3", "--seed", "4"]);
    assert!(out.status.success());
    for i in 0..3 {
        assert!(output.join(format!("eye_cataract_{i:02}.png")).exists());
    }
    let csv = fs::read_to_string(output.join("eye_params.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "index,seed,alpha,beta,r_b,sigma_b,r_l,sigma_l,center_a,center_b,raw_panel");
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn evaluate_reports_skips_in_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fs::create_dir(&a).unwrap();
    fs::create_dir(&b).unwrap();
    save_image(&Image::constant(16, 16, 0.5).unwrap(), a.join("x_restored.png")).unwrap();
    save_image(&Image::constant(16, 16, 0.5).unwrap(), b.join("x.png")).unwrap();
    let report = dir.path().join("r.csv");
    let ok = scrnet(&["evaluate", "--restored", s(&a), "--reference", s(&b), "--report", s(&report)]);
    assert!(ok.status.success());
    assert!(fs::read_to_string(&report).unwrap().contains("x_restored.png,inf,1"));

    save_image(&Image::constant(16, 16, 0.5).unwrap(), a.join("y_restored.png")).unwrap();
    save_image(&Image::constant(12, 16, 0.5).unwrap(), b.join("y.png")).unwrap();
    let skipped = scrnet(&["evaluate", "--restored", s(&a), "--reference", s(&b), "--report", s(&report)]);
    assert!(!skipped.status.success());
    assert!(fs::read_to_string(&report).unwrap().contains("# skipped y_restored.png"));
}

fn mean_psnr(report: &Path) -> f64 {
    let text = fs::read_to_string(report).unwrap();
    let row = text.lines().find(|l| l.starts_with("MEAN,")).unwrap();
    row.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn full_pipeline_improves_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let clear = desk_dir();
    let cataract = root.join("cataract");
    let restored = root.join("restored");
    let cfg = root.join("desk.cfg");
    fs::write(&cfg, "# desk defaults\nseed = 2\n").unwrap();
    let ckpt = root.join("model.ckpt");
    let log = root.join("loss.csv");
    let before = root.join("before.csv");
    let after = root.join("after.csv");

    let steps: [Vec<&str>; 5] = [
        vec!["synthesize", "--input", s(&clear), "--output", s(&cataract), "--k", "1", "--seed", "99"],
        vec!["train", "--data", s(&clear), "--config", s(&cfg), "--out", s(&ckpt), "--log", s(&log)],
        vec!["restore", "--checkpoint", s(&ckpt), "--input", s(&cataract), "--output", s(&restored)],
        vec!["evaluate", "--restored", s(&cataract), "--reference", s(&clear), "--report", s(&before)],
        vec!["evaluate", "--restored", s(&restored), "--reference", s(&clear), "--report", s(&after)],
    ];
    for args in &steps {
        let out = scrnet(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(fs::read_to_string(&log).unwrap().starts_with("epoch,step,l_h,l_r,l_cyc,total,lr\n"));
    assert_eq!(fs::read_dir(&restored).unwrap().count(), 20);
    let (degraded, recovered) = (mean_psnr(&before), mean_psnr(&after));
    assert!(recovered > degraded, "{recovered} <= {degraded}");
}
