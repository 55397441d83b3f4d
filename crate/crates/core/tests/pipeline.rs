use std::fs;
use std::path::Path;

use shortcut_audit::pipeline::{config_for_manifest, run_pipeline, PipelineError, Stage, StageRecord, StageStatus};
use shortcut_audit::synthgen::{write_synthetic_dataset, Shortcut, SynthSpec};

fn dataset(dir: &Path) -> std::path::PathBuf {
    let spec = SynthSpec::new(3, 30, 5).with_shortcut(Shortcut::SiiBijection);
    write_synthetic_dataset(&spec, &dir.join("data")).unwrap();
    dir.join("data/manifest.json")
}

fn config(dir: &Path) -> shortcut_audit::PipelineConfig {
    let mut cfg = config_for_manifest(&dataset(dir), 7).unwrap();
    cfg.output_dir = dir.join("out");
    cfg.evaluate.min_flows_per_class = 10;
    cfg
}

#[test]
fn full_run_writes_every_artifact_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let run = run_pipeline(&cfg, &Stage::ALL, false).unwrap();
    assert!(run.stages.iter().all(|(_, s)| *s == StageStatus::Ran));
    let out = &cfg.output_dir;
    for f in [
        "extract/extract.json",
        "encode/encode.json",
        "rank/ami_report.json",
        "rank/top_k.svg",
        "categorize/categories.json",
        "validate/validation.json",
        "occlude/occlusion.json",
        "evaluate/accuracy.json",
        "evaluate/split_audit.csv",
        "report/summary.json",
        "report/summary.md",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let ami: serde_json::Value = serde_json::from_slice(&fs::read(out.join("rank/ami_report.json")).unwrap()).unwrap();
    assert_eq!(ami["provenance"]["seed"], 7);
    assert_eq!(ami["provenance"]["config_hash"], run.config_hash.as_str());
    assert_eq!(ami["provenance"]["version"], shortcut_audit::VERSION);
    assert_eq!(ami["entries"][0]["field"], "ip.src");
    assert!(!out.join(".staging").exists());

    let before = fs::read(out.join("report/stage.json")).unwrap();
    let again = run_pipeline(&cfg, &Stage::ALL, false).unwrap();
    assert!(again.stages.iter().all(|(_, s)| *s == StageStatus::Cached));
    assert_eq!(before, fs::read(out.join("report/stage.json")).unwrap());

    let mut changed = cfg.clone();
    changed.rank.k = 5;
    match run_pipeline(&changed, &[Stage::Rank], false) {
        Err(e @ PipelineError::ConfigMismatch { stage: Stage::Rank }) => assert_eq!(e.exit_code(), 2),
        other => panic!("{other:?}"),
    }
    run_pipeline(&changed, &[Stage::Rank], true).unwrap();
    assert_eq!(StageRecord::load(out, Stage::Rank).unwrap().provenance.stage_hash, changed.stage_hash(Stage::Rank).unwrap());
    // upstream of categorize changed, so its cache is stale for the new config
    assert!(matches!(
        run_pipeline(&changed, &[Stage::Validate], false),
        Err(PipelineError::ConfigMismatch { stage: Stage::Categorize })
    ));
}

#[test]
fn missing_dependency_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    run_pipeline(&cfg, &[Stage::Extract, Stage::Encode], false).unwrap();
    match run_pipeline(&cfg, &[Stage::Validate], false) {
        Err(e @ PipelineError::MissingDependency { stage: Stage::Validate, missing: Stage::Rank }) => {
            assert_eq!(e.exit_code(), 1);
            assert!(e.to_string().contains("rank"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn rank_on_cached_matrix_writes_only_its_own_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    run_pipeline(&cfg, &[Stage::Extract, Stage::Encode], false).unwrap();
    run_pipeline(&cfg, &[Stage::Rank], false).unwrap();
    let mut names: Vec<String> =
        fs::read_dir(cfg.output_dir.join("rank")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["ami_report.csv", "ami_report.json", "stage.json", "top_k.svg"]);
    assert!(!cfg.output_dir.join("categorize").exists());
}

#[test]
fn failing_stage_keeps_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.evaluate.min_flows_per_class = 1000;
    let err = run_pipeline(&cfg, &Stage::ALL, false).unwrap_err();
    assert!(matches!(err, PipelineError::Stage { stage: "evaluate", .. }), "{err}");
    assert_eq!(err.exit_code(), 1);
    assert!(cfg.output_dir.join("occlude/stage.json").exists());
    assert!(!cfg.output_dir.join("evaluate").exists());
}

#[test]
fn field_table_inputs_stop_at_occlusion() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.ndjson");
    let mut text = String::new();
    for i in 0..40 {
        let src = if i % 2 == 0 { "10.0.0.1" } else { "10.0.0.2" };
        text += &format!(
            "{{\"frame.time_relative\":\"{}\",\"ip.src\":\"{src}\",\"ip.dst\":\"10.9.9.9\",\"tcp.srcport\":\"{}\",\"tcp.dstport\":\"443\",\"ip.ttl\":\"64\"}}\n",
            i as f64 * 0.1,
            1000 + i
        );
    }
    fs::write(&path, text).unwrap();
    let toml = format!(
        "seed = 1\noutput_dir = {:?}\n[[inputs]]\npath = {:?}\nlabel = \"a\"\n",
        dir.path().join("out"),
        path
    );
    let cfg = shortcut_audit::PipelineConfig::from_toml_str(&toml, &[]).unwrap();
    run_pipeline(&cfg, &[Stage::Extract, Stage::Encode], false).unwrap();
    let err = run_pipeline(&cfg, &[Stage::Occlude], false).unwrap_err();
    assert!(err.to_string().contains("capture inputs"), "{err}");
}
