use std::path::Path;

use isoprior::cli::{run, EXIT_INADMISSIBLE, EXIT_IO, EXIT_OK, EXIT_USAGE};
use serde_json::Value;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn isoprior(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("isoprior").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> std::path::PathBuf {
    let out = dir.join(name);
    let mut args = vec!["gen", "--out", path_str(&out)];
    args.extend_from_slice(extra);
    let r = isoprior(&args);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    out
}

#[test]
fn gen_writes_mask_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen(dir.path(), "disk.pgm", &["--kind", "disk", "--radius", "20", "--height", "48", "--width", "48"]);
    assert!(std::fs::read(&out).unwrap().starts_with(b"P5"));
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(sidecar["spec"]["kind"], "disk");
    assert_eq!(sidecar["spec"]["height"], 48);
    assert_eq!(sidecar["analytic_mu_filled"].as_f64(), Some(1.0));
}

#[test]
fn ratio_reports_disk_admissible() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen(dir.path(), "disk.pgm", &["--kind", "disk", "--radius", "20", "--height", "48", "--width", "48"]);
    let r = isoprior(&["ratio", path_str(&out), "--assert-admissible"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let report: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(report["admissible"], true);
    assert_eq!(report["estimator"], "crofton");
    assert_eq!(report["components"].as_array().unwrap().len(), 1);
    assert!(report["aggregate_mu"].as_f64().unwrap() >= 0.95);
}

#[test]
fn ratio_flags_broken_ring() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen(
        dir.path(),
        "ring.pgm",
        &["--kind", "broken-annulus", "--outer", "30", "--inner", "24", "--gap", "60", "--height", "68", "--width", "68"],
    );
    let r = isoprior(&["ratio", path_str(&out), "--assert-admissible"]);
    assert_eq!(r.code, EXIT_INADMISSIBLE);
    let report: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(report["admissible"], false);
    assert!(report["penalty"].as_f64().unwrap() > 0.1);
}

#[test]
fn ratio_csv_lists_components() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen(
        dir.path(),
        "two.pgm",
        &["--kind", "multi-disk", "--disk", "24,25,20", "--disk", "24,75,20", "--height", "48", "--width", "100"],
    );
    let r = isoprior(&["ratio", path_str(&out), "--csv"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let lines: Vec<&str> = r.stdout.lines().collect();
    assert_eq!(lines[0], "label,area,perimeter,mu");
    assert_eq!(lines.len(), 3);
}

#[test]
fn eval_identical_masks() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen(dir.path(), "disk.pgm", &["--kind", "disk", "--radius", "10", "--height", "32", "--width", "32"]);
    let r = isoprior(&["eval", "--pred", path_str(&out), "--gt", path_str(&out)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let report: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(report["dice"].as_f64(), Some(1.0));
    assert_eq!(report["hausdorff"].as_f64(), Some(0.0));
}

#[test]
fn eval_manifest_skips_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.pgm", &["--kind", "disk", "--radius", "10", "--height", "32", "--width", "32"]);
    let b = gen(dir.path(), "b.pgm", &["--kind", "disk", "--radius", "8", "--height", "32", "--width", "32"]);
    let manifest = dir.path().join("pairs.txt");
    std::fs::write(&manifest, format!("{} {}\nmissing.pgm {}\n", a.display(), b.display(), b.display())).unwrap();
    let r = isoprior(&["eval", "--manifest", path_str(&manifest), "--sequential"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.stdout.lines().count(), 2);
    assert!(r.stderr.contains("skipped"));
}

#[test]
fn grad_check_reports_json() {
    let r = isoprior(&["grad-check", "--op", "soft_dice_loss", "--size", "8"]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let report: Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(report["op"], "soft_dice_loss");
    assert_eq!(report["pass"], true);
    assert_eq!(report["n"], 64);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(isoprior(&["grad-check", "--op", "nope"]).code, EXIT_USAGE);
    assert_eq!(isoprior(&["gen", "--kind", "disk"]).code, EXIT_USAGE);
    assert_eq!(isoprior(&["ratio", "x.pgm", "--tau", "1.5"]).code, EXIT_USAGE);
    assert_eq!(isoprior(&["frobnicate"]).code, EXIT_USAGE);
}

#[test]
fn missing_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let r = isoprior(&["ratio", path_str(&dir.path().join("absent.pgm"))]);
    assert_eq!(r.code, EXIT_IO);
    assert!(r.stderr.starts_with("error:"));
}

#[test]
fn repair_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen(dir.path(), "demo.pgm", &["--kind", "repair-demo", "--seed", "3"]);
    let prefix = dir.path().join("fixed");
    let r = isoprior(&["repair", "--in", path_str(&input), "--steps", "5", "--out", path_str(&prefix)]);
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    for suffix in ["_field.pgm", "_mask.pgm", "_trace.csv"] {
        let p = dir.path().join(format!("fixed{suffix}"));
        assert!(p.exists(), "{} missing", p.display());
    }
    let trace = std::fs::read_to_string(dir.path().join("fixed_trace.csv")).unwrap();
    assert!(trace.starts_with("iter,total,dice,ce,penalty,mu\n"));
}
