use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, Stage};
use crate::evaluator::{EvalProtocol, FlowCap};
use crate::ingest::DissectorConfig;
use crate::occlusion::{OcclusionSpec, Strategy};
use crate::ranker::{EmiSettings, PrefilterConfig, RankConfig};
use crate::validators::{BinPolicy, DeltaAmiConfig, KlConfig, RelativeKind, ValidateConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// pcap or pcapng.
    Capture,
    Ndjson,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    /// Class of every flow in the input unless `flow_labels` overrides it.
    pub label: String,
    #[serde(default)]
    pub dataset_tag: String,
    /// Inferred from the extension when absent.
    #[serde(default)]
    pub format: Option<InputFormat>,
    /// CSV `src_ip,src_port,dst_ip,dst_port,transport,label`.
    #[serde(default)]
    pub flow_labels: Option<PathBuf>,
}

impl InputConfig {
    pub fn resolved_format(&self) -> InputFormat {
        self.format.unwrap_or_else(|| match self.path.extension().and_then(|e| e.to_str()) {
            Some("ndjson" | "jsonl" | "json") => InputFormat::Ndjson,
            Some("csv") => InputFormat::Csv,
            _ => InputFormat::Capture,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DissectorMode {
    /// The inline parser supplies both the records and the byte offsets.
    #[default]
    Builtin,
    /// A tshark-compatible tool supplies the records.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DissectorSection {
    pub mode: DissectorMode,
    pub binary: PathBuf,
    pub extra_args: Vec<String>,
    /// Empty selects every field.
    pub fields: Vec<String>,
}

impl Default for DissectorSection {
    fn default() -> Self {
        let d = DissectorConfig::default();
        Self { mode: DissectorMode::Builtin, binary: d.binary, extra_args: d.extra_args, fields: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeSection {
    pub min_valid_fraction: f64,
}

impl Default for EncodeSection {
    fn default() -> Self {
        Self { min_valid_fraction: crate::encode::MIN_VALID_FRACTION }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankSection {
    pub k: usize,
    pub min_entropy: f64,
    pub min_valid_fraction: f64,
    pub bins: usize,
    /// Appended to the built-in denylist.
    pub denylist: Vec<String>,
    pub use_builtin_denylist: bool,
    pub emi_cost_bound: f64,
    pub emi_permutations: usize,
}

impl Default for RankSection {
    fn default() -> Self {
        let p = PrefilterConfig::default();
        let e = EmiSettings::default();
        Self {
            k: 10,
            min_entropy: p.min_entropy,
            min_valid_fraction: p.min_valid_fraction,
            bins: p.bins,
            denylist: vec![],
            use_builtin_denylist: true,
            emi_cost_bound: e.cost_bound,
            emi_permutations: e.permutations,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaxonomySection {
    /// CSV `field,category`; rule output alone when absent.
    pub assignment: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub relative_kind: RelativeKind,
    /// 0 uses one bin per label class.
    pub delta_bins: usize,
    pub kl_min_class_samples: usize,
    pub kl_grid_points: usize,
    pub kl_pad_bandwidths: f64,
    pub kl_symmetric: bool,
    /// Two dataset tags; the first two tags in sorted order when empty.
    pub dataset_pair: Vec<String>,
}

impl Default for ValidateSection {
    fn default() -> Self {
        let k = KlConfig::default();
        Self {
            relative_kind: RelativeKind::AdjacentDiff,
            delta_bins: 0,
            kl_min_class_samples: k.min_class_samples,
            kl_grid_points: k.grid_points,
            kl_pad_bandwidths: k.pad_bandwidths,
            kl_symmetric: k.symmetric,
            dataset_pair: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionSection {
    pub strategy: Strategy,
    pub targets: Vec<String>,
    /// Defaults to the global seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub max_flows: usize,
    pub cap: FlowCap,
    pub repeats: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// 0 is the unbounded depth.
    pub depth_grid: Vec<usize>,
    pub min_flows_per_class: usize,
    pub min_samples_leaf: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        let p = EvalProtocol::default();
        Self {
            max_flows: p.max_flows,
            cap: p.cap,
            repeats: p.repeats,
            train_fraction: p.train_fraction,
            val_fraction: p.val_fraction,
            depth_grid: p.depth_grid.iter().map(|d| d.unwrap_or(0)).collect(),
            min_flows_per_class: p.min_flows_per_class,
            min_samples_leaf: p.min_samples_leaf,
        }
    }
}

fn default_occlusions() -> Vec<OcclusionSection> {
    vec![
        OcclusionSection { strategy: Strategy::Zero, targets: vec!["@sii".into()], seed: None },
        OcclusionSection { strategy: Strategy::Random, targets: vec!["@sii".into()], seed: None },
    ]
}

fn default_output() -> PathBuf {
    PathBuf::from("audit-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 picks the machine default. Not part of the hash.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub inputs: Vec<InputConfig>,
    #[serde(default)]
    pub dissector: DissectorSection,
    #[serde(default)]
    pub encode: EncodeSection,
    #[serde(default)]
    pub rank: RankSection,
    #[serde(default)]
    pub taxonomy: TaxonomySection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default = "default_occlusions")]
    pub occlusion: Vec<OcclusionSection>,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

fn config_err(m: impl Into<String>) -> PipelineError {
    PipelineError::Config(m.into())
}

/// Sets `a.b.c = value` in a TOML table. The value is parsed as TOML and
/// taken as a plain string when that fails.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), PipelineError> {
    let (key, raw) =
        assignment.split_once('=').ok_or_else(|| config_err(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| config_err(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl PipelineConfig {
    /// A config with defaults everywhere, for the given seed.
    pub fn new(seed: u64) -> Self {
        toml::from_str(&format!("seed = {seed}")).expect("defaults deserialize")
    }

    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, PipelineError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative input and assignment paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for i in &mut cfg.inputs {
            rebase(&mut i.path);
            if let Some(f) = &mut i.flow_labels {
                rebase(f);
            }
        }
        if let Some(a) = &mut cfg.taxonomy.assignment {
            rebase(a);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut tags = std::collections::BTreeSet::new();
        for (i, input) in self.inputs.iter().enumerate() {
            if input.label.trim().is_empty() {
                return Err(config_err(format!("inputs[{i}]: empty label")));
            }
            tags.insert(input.dataset_tag.as_str());
        }
        if self.rank.k == 0 {
            return Err(config_err("rank.k must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.rank.min_valid_fraction) || !(0.0..=1.0).contains(&self.encode.min_valid_fraction)
        {
            return Err(config_err("valid fractions must be in [0, 1]"));
        }
        if self.rank.bins < 2 {
            return Err(config_err("rank.bins must be at least 2"));
        }
        if !(self.rank.emi_cost_bound > 0.0) || self.rank.emi_permutations == 0 {
            return Err(config_err("rank.emi_cost_bound and rank.emi_permutations must be positive"));
        }
        if self.validate.kl_grid_points < 2 {
            return Err(config_err("validate.kl_grid_points must be at least 2"));
        }
        match self.validate.dataset_pair.len() {
            0 => {}
            2 => {
                if !self.inputs.is_empty() {
                    for t in &self.validate.dataset_pair {
                        if !tags.contains(t.as_str()) {
                            return Err(config_err(format!("validate.dataset_pair names unknown tag `{t}`")));
                        }
                    }
                }
            }
            n => return Err(config_err(format!("validate.dataset_pair needs 2 tags, got {n}"))),
        }
        for (i, o) in self.occlusion.iter().enumerate() {
            self.occlusion_spec(o).validate().map_err(|e| config_err(format!("occlusion[{i}]: {e}")))?;
        }
        self.protocol().validate().map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    pub fn rank_config(&self) -> RankConfig {
        let r = &self.rank;
        let mut denylist = if r.use_builtin_denylist { crate::ranker::builtin_denylist() } else { vec![] };
        denylist.extend(r.denylist.iter().cloned());
        RankConfig {
            k: r.k,
            prefilter: PrefilterConfig {
                min_entropy: r.min_entropy,
                min_valid_fraction: r.min_valid_fraction,
                denylist,
                bins: r.bins,
            },
            emi: EmiSettings { cost_bound: r.emi_cost_bound, permutations: r.emi_permutations, seed: self.seed },
        }
    }

    pub fn validate_config(&self) -> ValidateConfig {
        let v = &self.validate;
        ValidateConfig {
            relative_kind: v.relative_kind,
            delta: DeltaAmiConfig {
                bins: if v.delta_bins == 0 { BinPolicy::LabelCardinality } else { BinPolicy::Fixed(v.delta_bins) },
                emi: EmiSettings {
                    cost_bound: self.rank.emi_cost_bound,
                    permutations: self.rank.emi_permutations,
                    seed: self.seed,
                },
            },
            kl: KlConfig {
                min_class_samples: v.kl_min_class_samples,
                grid_points: v.kl_grid_points,
                pad_bandwidths: v.kl_pad_bandwidths,
                symmetric: v.kl_symmetric,
                bandwidth: None,
            },
            dataset_pair: match v.dataset_pair.as_slice() {
                [a, b] => Some((a.clone(), b.clone())),
                _ => None,
            },
        }
    }

    pub fn occlusion_spec(&self, o: &OcclusionSection) -> OcclusionSpec {
        OcclusionSpec { strategy: o.strategy, targets: o.targets.clone(), seed: o.seed.unwrap_or(self.seed) }
    }

    pub fn occlusion_specs(&self) -> Vec<OcclusionSpec> {
        self.occlusion.iter().map(|o| self.occlusion_spec(o)).collect()
    }

    pub fn protocol(&self) -> EvalProtocol {
        let e = &self.evaluate;
        EvalProtocol {
            max_flows: e.max_flows,
            cap: e.cap,
            repeats: e.repeats,
            train_fraction: e.train_fraction,
            val_fraction: e.val_fraction,
            depth_grid: e.depth_grid.iter().map(|&d| (d > 0).then_some(d)).collect(),
            min_flows_per_class: e.min_flows_per_class,
            min_samples_leaf: e.min_samples_leaf,
            seed: self.seed,
        }
    }

    fn sections(&self, stage: Stage) -> serde_json::Value {
        use serde_json::json;
        let extract = json!({ "inputs": self.inputs, "dissector": self.dissector });
        let mut v = json!({ "seed": self.seed, "extract": extract });
        let obj = v.as_object_mut().expect("object");
        let put = |o: &mut serde_json::Map<String, serde_json::Value>, k: &str, x: serde_json::Value| {
            o.insert(k.to_string(), x);
        };
        let chain = stage.upstream_and_self();
        for s in chain {
            match s {
                Stage::Extract => {}
                Stage::Encode => put(obj, "encode", json!(self.encode)),
                Stage::Rank => put(obj, "rank", json!(self.rank)),
                Stage::Categorize => put(obj, "taxonomy", json!(self.taxonomy)),
                Stage::Validate => put(obj, "validate", json!(self.validate)),
                Stage::Occlude => put(obj, "occlusion", json!(self.occlusion)),
                Stage::Evaluate => put(obj, "evaluate", json!(self.evaluate)),
                Stage::Report => {}
            }
        }
        v
    }

    /// SHA-256 over the canonical JSON of every setting `stage` and its
    /// upstream stages depend on, plus the contents of referenced files.
    /// Output directory and thread count are excluded.
    pub fn stage_hash(&self, stage: Stage) -> Result<String, PipelineError> {
        Ok(self.stage_hashes()?.remove(&stage).expect("every stage"))
    }

    /// `stage_hash` for every stage, reading each referenced file once.
    pub fn stage_hashes(&self) -> Result<BTreeMap<Stage, String>, PipelineError> {
        let mut digests: BTreeMap<&Path, Vec<u8>> = BTreeMap::new();
        let mut files: Vec<&Path> = self.inputs.iter().map(|i| i.path.as_path()).collect();
        files.extend(self.inputs.iter().filter_map(|i| i.flow_labels.as_deref()));
        files.extend(self.taxonomy.assignment.as_deref());
        for f in files {
            if !digests.contains_key(f) {
                let bytes = std::fs::read(f).map_err(|e| PipelineError::Input(format!("{}: {e}", f.display())))?;
                digests.insert(f, Sha256::digest(&bytes).to_vec());
            }
        }
        let mut out = BTreeMap::new();
        for stage in Stage::ALL {
            let mut h = Sha256::new();
            h.update(serde_json::to_vec(&self.sections(stage)).expect("json"));
            let mut used: Vec<&Path> = self.inputs.iter().map(|i| i.path.as_path()).collect();
            used.extend(self.inputs.iter().filter_map(|i| i.flow_labels.as_deref()));
            if stage.upstream_and_self().contains(&Stage::Categorize) {
                used.extend(self.taxonomy.assignment.as_deref());
            }
            for f in used {
                h.update(&digests[f]);
            }
            out.insert(stage, hex::encode(h.finalize()));
        }
        Ok(out)
    }

    /// Hash of the whole resolved config, as embedded in reports.
    pub fn config_hash(&self) -> Result<String, PipelineError> {
        self.stage_hash(Stage::Report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = PipelineConfig::from_toml_str("seed = 3", &[]).unwrap();
        assert_eq!(c.rank.k, 10);
        assert_eq!(c.evaluate.depth_grid, vec![5, 10, 20, 0]);
        assert_eq!(c.protocol().depth_grid, vec![Some(5), Some(10), Some(20), None]);
        assert_eq!(c.occlusion.len(), 2);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = PipelineConfig::from_toml_str(
            "seed = 1",
            &["rank.k=5".into(), "validate.relative_kind=anchor_first".into(), "output_dir=x/y".into()],
        )
        .unwrap();
        assert_eq!(c.rank.k, 5);
        assert_eq!(c.validate.relative_kind, RelativeKind::AnchorFirst);
        assert_eq!(c.output_dir, PathBuf::from("x/y"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for (text, o) in [
            ("seed = 1\n[rank]\nkk = 3", vec![]),
            ("seed = 1", vec!["rank.k=0".to_string()]),
            ("seed = 1", vec!["nonsense".to_string()]),
            ("seed = 1\n[[occlusion]]\nstrategy = \"zero\"\ntargets = [\"ip.nope\"]", vec![]),
            ("rank = 3", vec![]),
        ] {
            assert!(matches!(PipelineConfig::from_toml_str(text, &o), Err(PipelineError::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_ignores_output_and_threads_but_tracks_settings() {
        let a = PipelineConfig::new(1);
        let b = PipelineConfig { output_dir: "elsewhere".into(), threads: 8, ..a.clone() };
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        let mut c = a.clone();
        c.evaluate.repeats = 5;
        assert_ne!(a.config_hash().unwrap(), c.config_hash().unwrap());
        // upstream stages do not see downstream settings
        assert_eq!(a.stage_hash(Stage::Rank).unwrap(), c.stage_hash(Stage::Rank).unwrap());
        let d = PipelineConfig::new(2);
        assert_ne!(a.stage_hash(Stage::Extract).unwrap(), d.stage_hash(Stage::Extract).unwrap());
    }

    #[test]
    fn toml_round_trip() {
        let a = PipelineConfig::new(9);
        assert_eq!(PipelineConfig::from_toml_str(&a.to_toml_string(), &[]).unwrap(), a);
    }
}
