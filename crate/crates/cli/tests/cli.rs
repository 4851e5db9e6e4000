use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hjhom(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hjhom"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("HJHOM_OUT")
        .output()
        .expect("binary runs")
}

#[test]
fn example11_prints_the_lower_bound_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = hjhom(&["example11", "--eps", "0.1", "--t", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("all bounds hold: true"));
    for f in ["example11.csv", "manifest.toml", "summary.txt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn stationary_rejects_lambda_below_theta() {
    let dir = tempfile::tempdir().unwrap();
    let o = hjhom(&["stationary", "--lambda", "1", "--eps", "0.5", "--theta", "1.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert!(stderr.contains("lambda > theta"), "{stderr}");
    assert_eq!(stderr.lines().count(), 1);
}

#[test]
fn unknown_settings_are_rejected_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let o = hjhom(&["rate", "--set", "nope.key=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("manifest.toml").exists());
}

#[test]
fn malformed_numbers_are_precondition_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = hjhom(&["solve", "--eps", "zero"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn manifest_echoes_overrides_with_their_origin() {
    let dir = tempfile::tempdir().unwrap();
    let o = hjhom(&["solve", "--problem", "eikonal-1d", "--eps", "0.25", "--t-end", "0.1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
    assert!(manifest.contains("override.solve.eps"), "{manifest}");
    assert!(manifest.contains("0.25 (flag)"), "{manifest}");
    assert!(manifest.contains("override.solve.t_end"));
}

#[test]
fn identical_runs_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["solve", "--problem", "linear-coupling-2sys", "--eps", "0.25", "--t-end", "0.2", "--threads", "2"];
    let files = ["solution.csv", "summary.txt", "manifest.toml"];
    assert_eq!(hjhom(&args, dir.path()).status.code(), Some(0));
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect();
    assert_eq!(hjhom(&args, dir.path()).status.code(), Some(0));
    for (f, before) in files.iter().zip(&first) {
        assert!(fs::read(dir.path().join(f)).unwrap() == *before, "{f} differs between runs");
    }
}

#[test]
fn config_file_settings_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[run]\nproblem = \"eikonal-1d\"\n\n[solve]\neps = 0.5\nt_end = 0.1\n").unwrap();
    let out = dir.path().join("out");
    let o = hjhom(&["solve", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("solve eikonal-1d: eps 0.5"), "{summary}");
}

#[test]
fn defaults_table_lists_every_section() {
    let dir = tempfile::tempdir().unwrap();
    let o = hjhom(&["defaults"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let table = String::from_utf8(o.stdout).unwrap();
    for key in ["solve.eps_list", "grid.per_eps", "cache.p_points", "action.v_bound"] {
        assert!(table.contains(key), "{key} missing");
    }
}
