use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shortcut-audit")).args(args).output().unwrap()
}

fn synth(dir: &Path) -> String {
    let data = dir.join("data");
    let out = bin(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--classes",
        "3",
        "--flows",
        "20",
        "--seed",
        "4",
        "--shortcut",
        "sii",
        "--emit-config",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data.join("manifest.json").to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn full_run_then_cached_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let out = dir.path().join("out");
    let args = [
        "run",
        "--manifest",
        &manifest,
        "--out",
        out.to_str().unwrap(),
        "--set",
        "evaluate.min_flows_per_class=5",
        "-j",
        "2",
    ];
    let first = bin(&args);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert!(out.join("report/summary.md").exists());
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("report/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["top_k"][0][0], "ip.src");

    let second = bin(&args);
    assert_eq!(second.status.code(), Some(0));
    let text = String::from_utf8_lossy(&second.stdout);
    assert_eq!(text.matches("cached").count(), 8, "{text}");
}

#[test]
fn emitted_config_drives_single_stages() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let cfg = dir.path().join("data/pipeline.toml");
    let out = dir.path().join("staged");
    let common = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    for stage in ["extract", "encode", "rank"] {
        let o = bin(&[&[stage][..], &common[..]].concat());
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", stderr(&o));
    }
    assert!(out.join("rank/top_k.svg").exists());
    assert!(!out.join("categorize").exists());
}

#[test]
fn missing_dependency_exits_1_and_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let out = dir.path().join("out");
    let o = bin(&["validate", "--manifest", &manifest, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`extract`"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    for bad in ["rank.k=0", "rank.nonsense=1", "evaluate.train_fraction=2.0"] {
        let o = bin(&["rank", "--manifest", &manifest, "--set", bad]);
        assert_eq!(o.status.code(), Some(2), "{bad}: {}", stderr(&o));
    }
    let o = bin(&["config", "--config", "/nonexistent/pipeline.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin(&["synth", "--out", dir.path().join("x").to_str().unwrap(), "--shortcut", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn changed_config_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    assert!(bin(&["run", "--manifest", &manifest, "--out", out, "--stages", "extract,encode,rank"]).status.success());
    let changed = ["rank", "--manifest", &manifest, "--out", out, "--set", "rank.k=3"];
    let o = bin(&changed);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"));
    let o = bin(&[&changed[..], &["--force"]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn config_prints_resolved_toml() {
    let o = bin(&["config", "--seed", "9", "--set", "rank.k=4"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("seed = 9"));
    assert!(text.contains("k = 4"));
}
