use std::fs;
use std::path::Path;

use carpet_core::harness::{
    artifact_names, export_report, run_suite, Experiment, ExperimentConfig, Status, Verdict, MANIFEST_FILE,
};

fn small(dir: &Path, experiments: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(&format!(
        "experiments = {experiments}\nharnack_levels = 2,3\nface_levels = 1,2,3\ncount_level = 3\ncapacity_count_level = 2\n"
    ))
    .unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn read_all(dir: &Path, names: &[String]) -> Vec<Vec<u8>> {
    names.iter().map(|n| fs::read(dir.join(n)).unwrap()).collect()
}

#[test]
fn manifest_lists_every_file_written() {
    let tmp = tempfile::tempdir().unwrap();
    let m = run_suite(&small(tmp.path(), "combinatorics,oracles,harnack,resistance")).unwrap();
    assert!(m.experiments.iter().all(|e| e.status == Status::Ok));
    let mut listed = artifact_names(&m);
    listed.push(MANIFEST_FILE.into());
    listed.sort();
    let mut on_disk: Vec<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    let ids: Vec<u32> = m.criteria.iter().map(|c| c.id).collect();
    assert_eq!(ids, vec![1, 2, 3, 9]);
    assert!(m.criteria.iter().take(3).all(|c| c.verdict == Verdict::Pass));
}

#[test]
fn artifacts_embed_the_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path(), "harnack");
    let m = run_suite(&cfg).unwrap();
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("harnack.json")).unwrap()).unwrap();
    assert_eq!(json["config_hash"], m.config_hash);
    assert_eq!(json["config"]["harnack_levels"], "2,3");
    let csv = fs::read_to_string(tmp.path().join("harnack.csv")).unwrap();
    assert!(csv.starts_with(&format!("# carpet {} config_hash={}", m.tool_version, m.config_hash)));
    assert!(csv.contains("# seed = 42\n"));
}

#[test]
fn identical_runs_are_byte_identical_across_pools() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let list = "combinatorics,oracles,harnack,resistance";
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let ma = one.install(|| run_suite(&small(a.path(), list))).unwrap();
    let mb = three.install(|| run_suite(&small(b.path(), list))).unwrap();
    let names = artifact_names(&ma);
    assert_eq!(names, artifact_names(&mb));
    assert_eq!(read_all(a.path(), &names), read_all(b.path(), &names));
    assert_eq!(ma.config_hash, mb.config_hash);
}

#[test]
fn seed_does_not_affect_deterministic_solves() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = small(a.path(), "harnack");
    let mut cb = small(b.path(), "harnack");
    ca.seed = 1;
    cb.seed = 2;
    run_suite(&ca).unwrap();
    run_suite(&cb).unwrap();
    let result = |dir: &Path| {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("harnack.json")).unwrap()).unwrap();
        v["result"].clone()
    };
    // Harnack sweeps are deterministic solves: the seed only enters the echo.
    assert_eq!(result(a.path()), result(b.path()));
}

#[test]
fn failures_are_recorded_and_the_suite_continues() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path(), "harnack,oracles");
    // Level 9 does not fit in the graph built for the sweep.
    cfg.harnack_levels = vec![2, 9];
    let m = run_suite(&cfg).unwrap();
    assert_eq!(m.experiments.len(), 2);
    assert_eq!(m.experiments[0].experiment, Experiment::Oracles);
    assert_eq!(m.experiments[0].status, Status::Ok);
    assert_eq!(m.experiments[1].status, Status::Failed);
    assert!(m.failed());

    let tmp2 = tempfile::tempdir().unwrap();
    let mut ff = small(tmp2.path(), "harnack,hitting");
    ff.harnack_levels = vec![2, 9];
    ff.fail_fast = true;
    let m = run_suite(&ff).unwrap();
    assert_eq!(m.experiments.len(), 1);
}

#[test]
fn report_from_a_harnack_only_run() {
    let tmp = tempfile::tempdir().unwrap();
    let m = run_suite(&small(tmp.path(), "harnack")).unwrap();
    let out = tmp.path().join("report");
    let report = export_report(&m, &out).unwrap();
    assert!(!report.empty);
    assert!(report.gaps.is_empty());
    assert!(report.text.contains("C_H(n)"));
    assert!(report.plot_files.iter().all(|f| out.join(f).is_file()));
    assert!(out.join("report.txt").is_file());
}

#[test]
fn report_lists_missing_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let m = run_suite(&small(tmp.path(), "harnack,resistance")).unwrap();
    fs::remove_file(tmp.path().join("face_resistance.csv")).unwrap();
    let report = export_report(&m, &tmp.path().join("r")).unwrap();
    assert_eq!(report.gaps, vec!["face_resistance.csv".to_string()]);
}

#[test]
fn empty_selection_gives_an_empty_manifest_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let m = run_suite(&small(tmp.path(), "")).unwrap();
    assert!(m.experiments.is_empty());
    assert!(m.criteria.is_empty());
    assert_eq!(m.config["seed"], "42");
    let report = export_report(&m, &tmp.path().join("r")).unwrap();
    assert!(report.empty);
}
