use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{DissectorMode, InputFormat, PipelineConfig};
use super::PipelineError;
use crate::encode::{build_feature_matrix, filter_low_quality, infer_schema, read_matrix, write_matrix, DomainDict};
use crate::evaluator::{evaluate_tensors, strategy_name, write_accuracy_reports, AccuracyReport};
use crate::ingest::{
    assemble_sessions, dissect_capture, load_flow_labels, load_records, read_capture, run_external_dissector,
    AssemblyStats, DissectStats, DissectorConfig, LabelingRule, PacketRecord, ParsedPacket, RecordFormat, Session,
};
use crate::occlusion::{
    apply_occlusion, build_session_tensor, read_tensors, write_tensors, write_tensors_pcap, OcclusionError,
    SessionTensor,
};
use crate::ranker::{rank_top_k, write_ami_report, AmiReport};
use crate::taxonomy::{apply_assignment, load_assignment_file, CategorizedReport, Category};
use crate::validators::{validate, write_validation_report, ValidationReport};

pub(crate) const TENSORS: &str = "tensors";

fn stage_err(stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |reason| PipelineError::Stage { stage, reason }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Input(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InputStats {
    pub path: String,
    pub label: String,
    pub dataset_tag: String,
    pub format: String,
    pub records: usize,
    pub warnings: usize,
    pub dissect: Option<DissectStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub inputs: Vec<InputStats>,
    pub assembly: AssemblyStats,
    pub tensors: usize,
    /// Sessions without inline-parsed packets (field-table inputs).
    pub sessions_without_bytes: usize,
}

#[derive(Serialize, Deserialize)]
struct SessionsFile {
    sessions: Vec<Session>,
}

pub(crate) fn extract(cfg: &PipelineConfig, out: &Path) -> Result<Vec<&'static str>, PipelineError> {
    let err = stage_err("extract");
    if cfg.inputs.is_empty() {
        return Err(PipelineError::Config("no inputs configured".into()));
    }
    let mut rule = LabelingRule::default();
    let mut tags = BTreeMap::new();
    let mut packets: Vec<(PacketRecord, Option<ParsedPacket>)> = Vec::new();
    let mut inputs = Vec::new();
    for (i, input) in cfg.inputs.iter().enumerate() {
        let source = i as u32;
        rule.per_source.insert(source, input.label.clone());
        tags.insert(source, input.dataset_tag.clone());
        if let Some(f) = &input.flow_labels {
            rule.flow_overrides.extend(load_flow_labels(f).map_err(|e| err(e.to_string()))?);
        }
        let format = input.resolved_format();
        let mut stats = InputStats {
            path: input.path.display().to_string(),
            label: input.label.clone(),
            dataset_tag: input.dataset_tag.clone(),
            format: format!("{format:?}").to_lowercase(),
            ..Default::default()
        };
        let pairs: Vec<(PacketRecord, Option<ParsedPacket>)> = match format {
            InputFormat::Capture => {
                let cap = read_capture(&input.path).map_err(|e| err(e.to_string()))?;
                let (parsed, ds) = dissect_capture(&cap, source);
                stats.dissect = Some(ds);
                match cfg.dissector.mode {
                    DissectorMode::Builtin => parsed,
                    DissectorMode::External => {
                        let dc = DissectorConfig {
                            binary: cfg.dissector.binary.clone(),
                            extra_args: cfg.dissector.extra_args.clone(),
                        };
                        let o = run_external_dissector(&input.path, &cfg.dissector.fields, &dc, source)
                            .map_err(|e| err(e.to_string()))?;
                        stats.warnings = o.warnings;
                        let mut by_index: HashMap<u64, ParsedPacket> =
                            parsed.into_iter().filter_map(|(r, p)| p.map(|p| (r.capture_index, p))).collect();
                        o.records
                            .into_iter()
                            .map(|r| {
                                let p = by_index.remove(&r.capture_index);
                                (r, p)
                            })
                            .collect()
                    }
                }
            }
            InputFormat::Ndjson | InputFormat::Csv => {
                let f = if format == InputFormat::Csv { RecordFormat::Csv } else { RecordFormat::Ndjson };
                let o = load_records(&input.path, f, source).map_err(|e| err(e.to_string()))?;
                stats.warnings = o.warnings;
                o.records.into_iter().map(|r| (r, None)).collect()
            }
        };
        stats.records = pairs.len();
        info!("{}: {} records", stats.path, stats.records);
        inputs.push(stats);
        packets.extend(pairs);
    }

    let (records, parsed): (Vec<PacketRecord>, Vec<Option<ParsedPacket>>) = packets.into_iter().unzip();
    let (sessions, assembly) = assemble_sessions(records.iter().zip(parsed), &rule, &tags);
    let mut tensors = Vec::new();
    let mut without = 0;
    for s in &sessions {
        match build_session_tensor(s) {
            Ok(t) => tensors.push(t),
            Err(OcclusionError::NotParsed(_)) => without += 1,
            Err(e) => return Err(err(e.to_string())),
        }
    }

    let mut w = BufWriter::new(fs::File::create(out.join("records.jsonl"))?);
    for r in &records {
        serde_json::to_writer(&mut w, r).map_err(|e| err(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    write_json(&out.join("sessions.json"), &SessionsFile { sessions })?;
    write_tensors(out, TENSORS, &tensors).map_err(|e| err(e.to_string()))?;
    write_json(
        &out.join("extract.json"),
        &ExtractSummary { inputs, assembly, tensors: tensors.len(), sessions_without_bytes: without },
    )?;
    Ok(vec!["extract.json"])
}

fn read_records(path: &Path) -> Result<Vec<PacketRecord>, PipelineError> {
    let f = fs::File::open(path).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Input(format!("{}: {e}", path.display())))?);
        }
    }
    Ok(out)
}

pub(crate) fn encode(cfg: &PipelineConfig, root: &Path, out: &Path) -> Result<Vec<&'static str>, PipelineError> {
    let err = stage_err("encode");
    let records = read_records(&root.join("extract/records.jsonl"))?;
    let sessions: SessionsFile = read_json(&root.join("extract/sessions.json"))?;
    let schema = infer_schema(&records);
    let (kept, quality) = filter_low_quality(records, &schema, cfg.encode.min_valid_fraction);
    let mut dict = DomainDict::default();
    let (matrix, build) = build_feature_matrix(&sessions.sessions, &kept, &schema, &mut dict);
    if matrix.n_rows() == 0 {
        return Err(err("no rows survived encoding".into()));
    }
    write_matrix(&matrix, out).map_err(|e| err(e.to_string()))?;
    write_json(
        &out.join("encode.json"),
        &serde_json::json!({ "quality": quality, "build": build, "fields": schema, "domains": dict.len() }),
    )?;
    Ok(vec!["encode.json", "matrix.json"])
}

pub(crate) fn rank(cfg: &PipelineConfig, root: &Path, out: &Path) -> Result<Vec<&'static str>, PipelineError> {
    let err = stage_err("rank");
    let matrix = read_matrix(&root.join("encode")).map_err(|e| err(e.to_string()))?;
    let report = rank_top_k(&matrix, &cfg.rank_config()).map_err(|e| err(e.to_string()))?;
    write_ami_report(&report, out).map_err(|e| err(e.to_string()))?;
    Ok(vec!["ami_report.json"])
}

#[derive(Serialize)]
struct CategoryRow<'a> {
    field: &'a str,
    rank: usize,
    ami: f64,
    category: String,
    provenance: String,
    needs_review: bool,
}

pub(crate) fn categorize(cfg: &PipelineConfig, root: &Path, out: &Path) -> Result<Vec<&'static str>, PipelineError> {
    let err = stage_err("categorize");
    let report: AmiReport = read_json(&root.join("rank/ami_report.json"))?;
    let human = match &cfg.taxonomy.assignment {
        Some(p) => load_assignment_file(p).map_err(|e| err(e.to_string()))?,
        None => vec![],
    };
    let cat = apply_assignment(&report, &human);
    for f in &cat.needs_review {
        warn!("`{f}` has no category rule and no reviewed assignment; kept as Benign");
    }
    write_json(&out.join("categories.json"), &cat)?;
    let mut w = csv::Writer::from_path(out.join("categories.csv")).map_err(|e| err(e.to_string()))?;
    for e in &cat.entries {
        w.serialize(CategoryRow {
            field: &e.field,
            rank: e.rank,
            ami: e.ami,
            category: e.category.to_string(),
            provenance: format!("{:?}", e.provenance).to_lowercase(),
            needs_review: e.needs_review,
        })
        .map_err(|e| err(e.to_string()))?;
    }
    w.flush()?;
    Ok(vec!["categories.json"])
}

pub(crate) fn validate_stage(
    cfg: &PipelineConfig,
    root: &Path,
    out: &Path,
) -> Result<Vec<&'static str>, PipelineError> {
    let err = stage_err("validate");
    let cat: CategorizedReport = read_json(&root.join("categorize/categories.json"))?;
    let matrix = read_matrix(&root.join("encode")).map_err(|e| err(e.to_string()))?;
    let report = validate(&cat, &matrix, &cfg.validate_config());
    for s in &report.skipped {
        warn!("validation skipped: {s:?}");
    }
    write_validation_report(&report, out).map_err(|e| err(e.to_string()))?;
    Ok(vec!["validation.json"])
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSummary {
    pub name: String,
    pub strategy: String,
    pub targets: Vec<String>,
    pub seed: u64,
    pub sessions: usize,
    /// Sessions in which each target was located.
    pub applied: BTreeMap<String, usize>,
    pub ip_checksums_updated: usize,
    pub transport_checksums_updated: usize,
    pub transport_checksums_zeroed: usize,
}

#[derive(Serialize, Deserialize)]
struct OcclusionFile {
    occlusions: Vec<OcclusionSummary>,
}

fn tensors_or_error(root: &Path, stage: &'static str) -> Result<Vec<SessionTensor>, PipelineError> {
    let t = read_tensors(&root.join("extract"), TENSORS).map_err(|e| PipelineError::Stage { stage, reason: e.to_string() })?;
    if t.is_empty() {
        return Err(PipelineError::Stage {
            stage,
            reason: "no session tensors; occlusion needs capture inputs".into(),
        });
    }
    Ok(t)
}

pub(crate) fn occlude(cfg: &PipelineConfig, root: &Path, out: &Path) -> Result<Vec<&'static str>, PipelineError> {
    let err = stage_err("occlude");
    let tensors = tensors_or_error(root, "occlude")?;
    let mut summaries = Vec::new();
    for (i, spec) in cfg.occlusion_specs().iter().enumerate() {
        let targets = spec.validate().map_err(|e| err(e.to_string()))?;
        let name = format!("{i:02}_{}", strategy_name(spec));
        let mut s = OcclusionSummary {
            name: name.clone(),
            strategy: strategy_name(spec),
            targets,
            seed: spec.seed,
            sessions: tensors.len(),
            ..Default::default()
        };
        let mut occluded = Vec::with_capacity(tensors.len());
        for t in &tensors {
            let (o, log) = apply_occlusion(t, spec).map_err(|e| err(e.to_string()))?;
            for f in log.fields_applied {
                *s.applied.entry(f).or_default() += 1;
            }
            for c in log.checksums {
                s.ip_checksums_updated += c.ip_updated as usize;
                s.transport_checksums_updated += c.transport_updated as usize;
                s.transport_checksums_zeroed += c.transport_zeroed as usize;
            }
            occluded.push(o);
        }
        write_tensors(out, &name, &occluded).map_err(|e| err(e.to_string()))?;
        write_tensors_pcap(&out.join(format!("{name}.pcap")), &occluded).map_err(|e| err(e.to_string()))?;
        summaries.push(s);
    }
    write_json(&out.join("occlusion.json"), &OcclusionFile { occlusions: summaries })?;
    Ok(vec!["occlusion.json"])
}

fn by_tag(tensors: &[SessionTensor]) -> BTreeMap<String, Vec<SessionTensor>> {
    let mut m: BTreeMap<String, Vec<SessionTensor>> = BTreeMap::new();
    for t in tensors {
        let tag = if t.dataset_tag.is_empty() { "all".to_string() } else { t.dataset_tag.clone() };
        m.entry(tag).or_default().push(t.clone());
    }
    m
}

pub(crate) fn evaluate(cfg: &PipelineConfig, root: &Path, out: &Path) -> Result<Vec<&'static str>, PipelineError> {
    let err = stage_err("evaluate");
    let protocol = cfg.protocol();
    let original = tensors_or_error(root, "evaluate")?;
    let occl: OcclusionFile = read_json(&root.join("occlude/occlusion.json"))?;
    let mut variants = vec![("none".to_string(), Vec::new(), original)];
    for o in &occl.occlusions {
        let t = read_tensors(&root.join("occlude"), &o.name).map_err(|e| err(e.to_string()))?;
        variants.push((o.strategy.clone(), o.targets.clone(), t));
    }
    let mut reports: Vec<AccuracyReport> = Vec::new();
    let mut skipped = Vec::new();
    for (strategy, targets, tensors) in &variants {
        for (tag, subset) in by_tag(tensors) {
            match evaluate_tensors(&subset, strategy, targets, &protocol, &tag) {
                Ok(r) => reports.push(r),
                Err(crate::evaluator::EvalError::TooFewClasses(n)) => {
                    warn!("dataset `{tag}`: {n} usable classes, skipped");
                    skipped.push(format!("{tag}/{strategy}"));
                }
                Err(e) => return Err(err(e.to_string())),
            }
        }
    }
    if reports.is_empty() {
        return Err(err("no dataset had two classes with enough flows".into()));
    }
    write_accuracy_reports(&reports, out).map_err(|e| err(e.to_string()))?;
    write_json(&out.join("evaluate.json"), &serde_json::json!({ "protocol": protocol, "skipped": skipped }))?;
    Ok(vec!["accuracy.json", "evaluate.json"])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyLine {
    pub dataset: String,
    pub strategy: String,
    pub targets: Vec<String>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub chance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub top_k: Vec<(String, f64)>,
    pub categories: BTreeMap<String, Vec<String>>,
    pub needs_review: Vec<String>,
    pub delta_ami: Vec<(String, f64)>,
    pub kl_avg: Vec<(String, f64)>,
    pub accuracy: Vec<AccuracyLine>,
}

#[derive(Deserialize)]
struct AccuracyFile {
    reports: Vec<AccuracyReport>,
}

pub(crate) fn report(root: &Path, out: &Path) -> Result<Vec<&'static str>, PipelineError> {
    let ami: AmiReport = read_json(&root.join("rank/ami_report.json"))?;
    let cat: CategorizedReport = read_json(&root.join("categorize/categories.json"))?;
    let val: ValidationReport = read_json(&root.join("validate/validation.json"))?;
    let acc: AccuracyFile = read_json(&root.join("evaluate/accuracy.json"))?;
    let mut categories = BTreeMap::new();
    for c in [Category::DataLeakage, Category::RelativeArtifact, Category::TaskAgnostic, Category::Benign] {
        categories.insert(c.to_string(), cat.fields_in(c));
    }
    let summary = Summary {
        top_k: ami.candidates().map(|e| (e.field.clone(), e.ami)).collect(),
        categories,
        needs_review: cat.needs_review.clone(),
        delta_ami: val.relative.iter().map(|r| (r.field.clone(), r.delta_ami)).collect(),
        kl_avg: val.task_agnostic.iter().map(|r| (r.field.clone(), r.kl_avg)).collect(),
        accuracy: acc
            .reports
            .iter()
            .map(|r| AccuracyLine {
                dataset: r.dataset.clone(),
                strategy: r.strategy.clone(),
                targets: r.targets.clone(),
                mean_accuracy: r.mean_accuracy,
                std_accuracy: r.std_accuracy,
                chance: r.chance,
            })
            .collect(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    fs::write(out.join("summary.md"), markdown(&summary))?;
    Ok(vec!["summary.json"])
}

fn markdown(s: &Summary) -> String {
    let mut m = String::from("# Shortcut audit\n\n## Top fields by AMI\n\n| rank | field | AMI |\n|---|---|---|\n");
    for (i, (f, a)) in s.top_k.iter().enumerate() {
        m += &format!("| {} | {f} | {a:.4} |\n", i + 1);
    }
    m += "\n## Categories\n\n";
    for (c, fields) in &s.categories {
        m += &format!("- {c}: {}\n", if fields.is_empty() { "none".to_string() } else { fields.join(", ") });
    }
    if !s.needs_review.is_empty() {
        m += &format!("\nNeeds review: {}\n", s.needs_review.join(", "));
    }
    m += "\n## Validation\n\n| field | check | value |\n|---|---|---|\n";
    for (f, d) in &s.delta_ami {
        m += &format!("| {f} | delta AMI | {d:.4} |\n");
    }
    for (f, k) in &s.kl_avg {
        m += &format!("| {f} | KL avg | {k:.4} |\n");
    }
    m += "\n## Accuracy\n\n| dataset | strategy | targets | mean | std | chance |\n|---|---|---|---|---|---|\n";
    for a in &s.accuracy {
        m += &format!(
            "| {} | {} | {} | {:.4} | {:.4} | {:.4} |\n",
            a.dataset,
            a.strategy,
            a.targets.join(" "),
            a.mean_accuracy,
            a.std_accuracy,
            a.chance
        );
    }
    m
}
