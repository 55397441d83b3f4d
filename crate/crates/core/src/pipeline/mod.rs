//! Stage orchestration. Every stage reads the artifacts of its dependencies
//! from the output directory and writes its own into `<out>/<stage>/`,
//! together with a `stage.json` cache record.

mod config;
mod stages;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    apply_override, DissectorMode, DissectorSection, EncodeSection, EvaluateSection, InputConfig, InputFormat,
    OcclusionSection, PipelineConfig, RankSection, TaxonomySection, ValidateSection,
};
pub use stages::{AccuracyLine, ExtractSummary, InputStats, OcclusionSummary, Summary};

use crate::synthgen::Manifest;
use crate::VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Extract,
    Encode,
    Rank,
    Categorize,
    Validate,
    Occlude,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Extract,
        Stage::Encode,
        Stage::Rank,
        Stage::Categorize,
        Stage::Validate,
        Stage::Occlude,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Encode => "encode",
            Stage::Rank => "rank",
            Stage::Categorize => "categorize",
            Stage::Validate => "validate",
            Stage::Occlude => "occlude",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Extract => &[],
            Stage::Encode => &[Stage::Extract],
            Stage::Rank => &[Stage::Encode],
            Stage::Categorize => &[Stage::Rank],
            Stage::Validate => &[Stage::Encode, Stage::Categorize],
            Stage::Occlude => &[Stage::Extract],
            Stage::Evaluate => &[Stage::Extract, Stage::Occlude],
            Stage::Report => &[Stage::Rank, Stage::Categorize, Stage::Validate, Stage::Evaluate],
        }
    }

    /// Transitive dependencies plus the stage itself, in pipeline order.
    pub fn upstream_and_self(self) -> Vec<Stage> {
        let mut seen = vec![self];
        let mut i = 0;
        while i < seen.len() {
            for d in seen[i].dependencies() {
                if !seen.contains(d) {
                    seen.push(*d);
                }
            }
            i += 1;
        }
        seen.sort();
        seen
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("cached `{stage}` artifacts were produced with a different config; rerun with --force")]
    ConfigMismatch { stage: Stage },
    #[error("input: {0}")]
    Input(String),
    #[error("stage `{stage}` needs `{missing}` output, which is missing; run `{missing}` first")]
    MissingDependency { stage: Stage, missing: Stage },
    #[error("stage `{stage}` failed: {reason}")]
    Stage { stage: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::ConfigMismatch { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub stage_hash: String,
    pub seed: u64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Cache record written next to a stage's artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub provenance: Provenance,
    pub outputs: Vec<OutputFile>,
}

impl StageRecord {
    pub fn load(out_dir: &Path, stage: Stage) -> Option<StageRecord> {
        let bytes = fs::read(out_dir.join(stage.name()).join("stage.json")).ok()?;
        serde_json::from_slice(&bytes).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    /// Cached artifacts with a matching hash were reused.
    Cached,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub config_hash: String,
    pub stages: Vec<(Stage, StageStatus)>,
}

fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn inject_provenance(path: &Path, p: &Provenance) -> Result<(), PipelineError> {
    let mut v: serde_json::Value = serde_json::from_slice(&fs::read(path)?)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    if let Some(obj) = v.as_object_mut() {
        obj.insert("provenance".into(), serde_json::to_value(p).expect("json"));
        stages::write_json(path, &v)?;
    }
    Ok(())
}

fn list_files(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            list_files(&p, base, out)?;
        } else {
            out.push(p.strip_prefix(base).expect("prefix").to_path_buf());
        }
    }
    Ok(())
}

fn run_stage(cfg: &PipelineConfig, stage: Stage, root: &Path, staging: &Path) -> Result<Vec<&'static str>, PipelineError> {
    match stage {
        Stage::Extract => stages::extract(cfg, staging),
        Stage::Encode => stages::encode(cfg, root, staging),
        Stage::Rank => stages::rank(cfg, root, staging),
        Stage::Categorize => stages::categorize(cfg, root, staging),
        Stage::Validate => stages::validate_stage(cfg, root, staging),
        Stage::Occlude => stages::occlude(cfg, root, staging),
        Stage::Evaluate => stages::evaluate(cfg, root, staging),
        Stage::Report => stages::report(root, staging),
    }
}

fn execute(cfg: &PipelineConfig, requested: &[Stage], force: bool) -> Result<RunSummary, PipelineError> {
    let root = cfg.output_dir.clone();
    fs::create_dir_all(&root)?;
    let hashes = cfg.stage_hashes()?;
    let config_hash = hashes[&Stage::Report].clone();
    let mut order: Vec<Stage> = requested.to_vec();
    order.sort();
    order.dedup();
    let mut summary = RunSummary { output_dir: root.clone(), config_hash: config_hash.clone(), stages: vec![] };

    for stage in order {
        for dep in stage.upstream_and_self().into_iter().filter(|&d| d != stage) {
            match StageRecord::load(&root, dep) {
                None => return Err(PipelineError::MissingDependency { stage, missing: dep }),
                Some(r) if r.provenance.stage_hash != hashes[&dep] => {
                    return Err(PipelineError::ConfigMismatch { stage: dep })
                }
                Some(_) => {}
            }
        }
        let stage_hash = hashes[&stage].clone();
        if let Some(r) = StageRecord::load(&root, stage) {
            if r.provenance.stage_hash == stage_hash && !force {
                info!("{stage}: cached");
                summary.stages.push((stage, StageStatus::Cached));
                continue;
            }
            if r.provenance.stage_hash != stage_hash && !force {
                return Err(PipelineError::ConfigMismatch { stage });
            }
        }

        info!("{stage}: running");
        let staging = root.join(".staging").join(stage.name());
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging)?;
        let reports = run_stage(cfg, stage, &root, &staging)?;
        let provenance =
            Provenance { config_hash: config_hash.clone(), stage_hash, seed: cfg.seed, version: VERSION.to_string() };
        for r in reports {
            inject_provenance(&staging.join(r), &provenance)?;
        }
        let mut files = Vec::new();
        list_files(&staging, &staging, &mut files)?;
        files.sort();
        let outputs = files
            .iter()
            .map(|f| {
                Ok(OutputFile {
                    path: f.to_string_lossy().replace('\\', "/"),
                    sha256: sha256_file(&staging.join(f))?,
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        stages::write_json(&staging.join("stage.json"), &StageRecord { stage, provenance, outputs })?;
        let dest = root.join(stage.name());
        if dest.exists() {
            fs::remove_dir_all(&dest)?;
        }
        fs::rename(&staging, &dest)?;
        summary.stages.push((stage, StageStatus::Ran));
    }
    let _ = fs::remove_dir(root.join(".staging"));
    Ok(summary)
}

/// Runs the requested stages in pipeline order. A stage whose cached record
/// matches the current config is skipped; a mismatching cache is an error
/// unless `force`. A failing stage leaves earlier artifacts untouched.
pub fn run_pipeline(cfg: &PipelineConfig, stages: &[Stage], force: bool) -> Result<RunSummary, PipelineError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    pool.install(|| execute(cfg, stages, force))
}

/// Pipeline config over the captures of a synthetic dataset manifest: one
/// input per file, labelled by class and tagged by environment.
pub fn config_for_manifest(manifest_path: &Path, seed: u64) -> Result<PipelineConfig, PipelineError> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Input(format!("{}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut cfg = PipelineConfig::new(seed);
    cfg.inputs = manifest
        .files
        .iter()
        .map(|f| InputConfig {
            path: base.join(&f.path),
            label: f.class.clone(),
            dataset_tag: f.env.clone(),
            format: Some(InputFormat::Capture),
            flow_labels: None,
        })
        .collect();
    Ok(cfg)
}
