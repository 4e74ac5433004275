use geopose::cli::{cmd_estimate, cmd_evaluate, cmd_generate, cmd_selftest};
use geopose::pipeline::store::pose_to_matrix;
use geopose::pipeline::{EstimateRecord, RunConfig, SceneSource, Stage};
use geopose::Error;

fn small_config(stage: Stage) -> RunConfig {
    let mut cfg = RunConfig {
        seed: 11,
        stage,
        ..RunConfig::default()
    };
    cfg.scene.objects = 1;
    cfg.scene.poses_per_object = 2;
    cfg.coarse.n_templates = 32;
    cfg.refine.m_iterations = 2;
    cfg
}

fn write_records(path: &std::path::Path, records: &[EstimateRecord]) {
    std::fs::write(path, serde_json::to_string(records).unwrap()).unwrap();
}

#[test]
fn ground_truth_estimates_score_full_recall() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(Stage::Coarse);
    let scene = cmd_generate(&cfg, &dir.path().join("scene")).unwrap();
    let records: Vec<_> = scene
        .entries()
        .iter()
        .map(|e| EstimateRecord {
            entry: e.id,
            object: e.object,
            pose: Some(pose_to_matrix(&e.gt)),
            error: None,
        })
        .collect();
    let est = dir.path().join("gt.json");
    write_records(&est, &records);
    let summary = cmd_evaluate(&cfg, &scene, &est, &dir.path().join("eval")).unwrap();
    assert_eq!(summary.recall.ar, 1.0);
    assert!(summary.failures.is_empty());
    assert!(dir.path().join("eval/records.csv").exists());
}

#[test]
fn missing_estimates_fail_the_record_not_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(Stage::Coarse);
    let scene = cmd_generate(&cfg, &dir.path().join("scene")).unwrap();
    let records: Vec<_> = scene
        .entries()
        .iter()
        .map(|e| EstimateRecord {
            entry: e.id,
            object: e.object,
            pose: None,
            error: Some("lost".into()),
        })
        .collect();
    let est = dir.path().join("none.json");
    write_records(&est, &records);
    let summary = cmd_evaluate(&cfg, &scene, &est, &dir.path().join("eval")).unwrap();
    assert_eq!(summary.recall.ar, 0.0);
    assert_eq!(summary.failures.len(), records.len());

    write_records(&est, &records[..1]);
    let err = cmd_evaluate(&cfg, &scene, &est, &dir.path().join("eval")).unwrap_err();
    assert!(matches!(err, Error::ManifestMismatch(_)), "{err}");
}

#[test]
fn coarse_stage_writes_no_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(Stage::Coarse);
    let scene = cmd_generate(&cfg, &dir.path().join("scene")).unwrap();
    let out = dir.path().join("run");
    let summary = cmd_estimate(&cfg, &scene, &out).unwrap();
    assert_eq!(summary.entries, 2);
    assert_eq!(std::fs::read_dir(out.join("traces")).unwrap().count(), 0);
    assert_eq!(std::fs::read_dir(out.join("overlays")).unwrap().count(), 2);
    let records: Vec<EstimateRecord> =
        serde_json::from_str(&std::fs::read_to_string(out.join("estimates.json")).unwrap()).unwrap();
    assert!(records.iter().all(|r| r.pose.is_some()));
}

#[test]
fn selftest_passes() {
    assert!(cmd_selftest(3).unwrap().is_empty());
}
