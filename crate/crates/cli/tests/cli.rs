use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn carpet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carpet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn build(dir: &Path, n: u32) -> String {
    let path = dir.join(format!("g{n}.txt"));
    let p = path.to_str().unwrap().to_string();
    let out = carpet(&["build", "--n", &n.to_string(), "--out", &p]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn help_and_version_succeed() {
    let v = carpet(&["--version"]);
    assert_eq!(code(&v), 0);
    assert!(String::from_utf8_lossy(&v.stdout).starts_with("carpet "));
    for sub in ["build", "harnack", "hitting", "heat", "couple", "resist", "suite", "report"] {
        assert_eq!(code(&carpet(&[sub, "--help"])), 0, "{sub} --help");
    }
    assert_eq!(code(&carpet(&["heat", "diag", "--help"])), 0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&carpet(&[])), 2);
    assert_eq!(code(&carpet(&["nonsense"])), 2);
    assert_eq!(code(&carpet(&["build"])), 2);
    assert_eq!(code(&carpet(&["build", "--n", "2", "--k", "4"])), 2);
    assert_eq!(code(&carpet(&["harnack", "--graph", "/no/such/file", "--level", "2"])), 2);
    assert_eq!(code(&carpet(&["suite", "--set", "no_such_key=1"])), 2);
}

#[test]
fn oversized_build_is_a_capacity_error() {
    let out = carpet(&["build", "--n", "12"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("capacity"));
    assert_eq!(code(&carpet(&["build", "--n", "3", "--budget", "100"])), 3);
}

#[test]
fn graph_export_format() {
    let out = carpet(&["build", "--n", "1"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "carpet 2 3 1 1 8 8");
    assert_eq!(lines[1], "v 0 0 0");
    assert_eq!(lines[4], "v 3 1 0");
    let edges: Vec<(usize, usize)> = lines
        .iter()
        .filter(|l| l.starts_with("e "))
        .map(|l| {
            let f: Vec<usize> = l[2..].split(' ').map(|x| x.parse().unwrap()).collect();
            (f[0], f[1])
        })
        .collect();
    assert_eq!(edges.len(), 8);
    assert!(edges.iter().all(|(a, b)| a < b));
    assert!(edges.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn harnack_report_fields() {
    let dir = tempfile::tempdir().unwrap();
    let g = build(dir.path(), 3);
    let out_file = dir.path().join("report.json");
    let out = carpet(&["harnack", "--graph", &g, "--level", "2", "--tol", "1e-10", "--out", out_file.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_str(&fs::read_to_string(out_file).unwrap()).unwrap();
    assert_eq!(v["level"], 2);
    assert!(v["constant"].as_f64().unwrap() > 1.0);
    assert!(v["rho"].as_f64().unwrap() < 1.0);
    assert_eq!(v["witness"].as_array().unwrap().len(), 3);
    assert!(v["max_residual"].as_f64().unwrap() < 1e-8);
    assert_eq!(code(&carpet(&["harnack", "--graph", &g, "--level", "9"])), 2);
}

#[test]
fn hitting_probabilities_are_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let g = build(dir.path(), 4);
    // (20, 40) survives and sits well inside the level-4 box.
    let text = fs::read_to_string(&g).unwrap();
    let id = text
        .lines()
        .find(|l| l.starts_with("v ") && l.ends_with(" 20 40"))
        .map(|l| l.split(' ').nth(1).unwrap().to_string())
        .unwrap();
    let out = carpet(&["hitting", "--graph", &g, "--x", &id, "--r", "3", "--c1", "2", "--c2", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let (min, max) = (v["min"].as_f64().unwrap(), v["max"].as_f64().unwrap());
    assert!(0.0 < min && min <= max && max <= 1.0 + 1e-12);
}

#[test]
fn heat_diag_csv() {
    let dir = tempfile::tempdir().unwrap();
    let g = build(dir.path(), 3);
    let out = carpet(&["heat", "diag", "--graph", &g, "--tmax", "64"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<(u64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let (t, p) = l.split_once(',').unwrap();
            (t.parse().unwrap(), p.parse().unwrap())
        })
        .collect();
    assert!(text.starts_with("t,p_tt\n"));
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2, 4, 8, 16, 32, 64]);
    assert_eq!(rows[0].1, 0.5);
    assert!(rows.windows(2).all(|w| w[1].1 < w[0].1));
}

#[test]
fn heat_regime_with_given_exponents() {
    let dir = tempfile::tempdir().unwrap();
    let g = build(dir.path(), 3);
    let pairs = dir.path().join("pairs.csv");
    fs::write(&pairs, "y,steps\n# comment\n100,64\n200,64\n300,128\n10,128\n5,16\n400,16\n").unwrap();
    let out = carpet(&[
        "heat", "regime", "--graph", &g, "--pairs", pairs.to_str().unwrap(), "--ds", "1.8", "--dw", "2.1",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let fit = &v["fit"];
    let total = fit["sub_gaussian_pairs"].as_u64().unwrap()
        + fit["gaussian_pairs"].as_u64().unwrap()
        + fit["excluded"].as_u64().unwrap();
    assert_eq!(total, 6);
    fs::write(&pairs, "y,steps\nfoo,1\n").unwrap();
    let bad = carpet(&["heat", "regime", "--graph", &g, "--pairs", pairs.to_str().unwrap(), "--ds", "1.8", "--dw", "2.1"]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn couple_run_is_reproducible_and_audited() {
    let dir = tempfile::tempdir().unwrap();
    let g = build(dir.path(), 3);
    let args = ["couple", "run", "--graph", &g, "--n", "2", "--trials", "300", "--seed", "42", "--audit"];
    let a = carpet(&args);
    let b = carpet(&args);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(v["digests"].as_array().unwrap().len(), 300);
    let p = v["probability"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    let plain = json(&carpet(&args[..args.len() - 1]));
    assert!(plain["digests"].is_null());
    assert_eq!(plain["probability"], v["probability"]);
}

#[test]
fn couple_upgrade_runs() {
    let dir = tempfile::tempdir().unwrap();
    let g = build(dir.path(), 3);
    let out = carpet(&["couple", "upgrade", "--graph", &g, "--n", "2", "--m", "0", "--j", "8", "--trials", "200"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["renewals"], 8);
    assert!(v["probability"].as_f64().unwrap() > 0.5);
    // m + 1 must not exceed the box level.
    assert_eq!(code(&carpet(&["couple", "upgrade", "--graph", &g, "--n", "2", "--m", "2", "--trials", "10"])), 2);
}

#[test]
fn resist_face_and_infinity() {
    let dir = tempfile::tempdir().unwrap();
    let g = build(dir.path(), 3);
    let face = json(&carpet(&["resist", "face", "--graph", &g, "--n", "1"]));
    assert!((face["value"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let sets = dir.path().join("sets.txt");
    fs::write(&sets, "0\n\n0\n1\n3\n").unwrap();
    let out = carpet(&["resist", "infinity", "--graph", &g, "--set", sets.to_str().unwrap(), "--levels", "1,2,3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let reports = json(&out);
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        let rs: Vec<f64> = r["resistances"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!(rs.windows(2).all(|w| w[1] > w[0]));
    }
    // A bigger target has a smaller resistance.
    assert!(reports[1]["resistances"][2].as_f64().unwrap() < reports[0]["resistances"][2].as_f64().unwrap());
    assert_eq!(reports[0]["extrapolation"]["status"], "divergent");
}

#[test]
fn suite_report_and_config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "experiments = harnack\nharnack_levels = 2,3\nseed = 7\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = carpet(&[
        "suite", "--config", cfg.to_str().unwrap(), "--set", "seed=9", "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], "9");
    assert_eq!(manifest["config"]["harnack_levels"], "2,3");

    let report_dir = dir.path().join("report");
    let rep = carpet(&["report", "--manifest", out_dir.to_str().unwrap(), "--out", report_dir.to_str().unwrap()]);
    assert_eq!(code(&rep), 0);
    assert!(String::from_utf8_lossy(&rep.stdout).contains("C_H(n)"));
    assert!(report_dir.join("report.txt").is_file());

    fs::remove_file(out_dir.join("harnack.json")).unwrap();
    assert_eq!(code(&carpet(&["report", "--manifest", out_dir.to_str().unwrap()])), 1);
}

#[test]
fn empty_selection_reports_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("empty");
    let out = carpet(&["suite", "--experiments", "", "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let rep = carpet(&["report", "--manifest", out_dir.to_str().unwrap()]);
    assert_eq!(code(&rep), 4);
}
