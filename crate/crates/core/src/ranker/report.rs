use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::emi::{adjusted_mi_codes, EmiMethod, EmiSettings};
use super::prefilter::{check_column, Exclusion, PrefilterConfig};
use super::RankError;
use crate::encode::FeatureMatrix;
use crate::plot;
use crate::rng::name_key;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankConfig {
    pub k: usize,
    pub prefilter: PrefilterConfig,
    pub emi: EmiSettings,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self { k: 10, prefilter: PrefilterConfig::default(), emi: EmiSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmiEntry {
    pub rank: usize,
    pub field: String,
    pub entropy_feature: f64,
    pub entropy_label: f64,
    pub entropy_feature_bits: f64,
    pub mi: f64,
    pub expected_mi: f64,
    pub ami: f64,
    /// `ami` clamped to `[0, 1]` for display.
    pub ami_reported: f64,
    pub out_of_range: bool,
    pub n_valid: usize,
    pub n_codes: usize,
    pub discretized: bool,
    pub emi_method: EmiMethod,
    pub candidate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmiReport {
    pub n_rows: usize,
    pub n_classes: usize,
    pub k: usize,
    pub entries: Vec<AmiEntry>,
    pub excluded: Vec<Exclusion>,
}

impl AmiReport {
    pub fn candidates(&self) -> impl Iterator<Item = &AmiEntry> {
        self.entries.iter().filter(|e| e.candidate)
    }

    pub fn entry(&self, field: &str) -> Option<&AmiEntry> {
        self.entries.iter().find(|e| e.field == field)
    }
}

/// Label codes compacted to the classes actually present, with their count.
pub fn label_codes(labels: &[u32]) -> (Vec<u32>, usize) {
    let mut present: Vec<u32> = labels.to_vec();
    present.sort_unstable();
    present.dedup();
    let codes = labels.iter().map(|l| present.binary_search(l).unwrap() as u32).collect();
    (codes, present.len())
}

/// Prefilters, scores every retained field, and marks the top `k`.
/// Ordering is AMI descending, then field name ascending.
pub fn rank_top_k(matrix: &FeatureMatrix, cfg: &RankConfig) -> Result<AmiReport, RankError> {
    if matrix.n_rows() == 0 {
        return Err(RankError::EmptyMatrix);
    }
    let (y, ny) = label_codes(&matrix.labels);
    if ny < 2 {
        return Err(RankError::TooFewClasses(ny));
    }
    let results: Vec<Result<AmiEntry, Exclusion>> = matrix
        .columns
        .par_iter()
        .map(|col| {
            let codes = check_column(col, &cfg.prefilter)?;
            let settings = EmiSettings { seed: cfg.emi.seed ^ name_key(&col.name), ..cfg.emi };
            let s = adjusted_mi_codes(&codes.codes, codes.n_codes, &y, ny, &settings)
                .expect("codes and labels have equal length");
            Ok(AmiEntry {
                rank: 0,
                field: col.name.clone(),
                entropy_feature: s.entropy_x,
                entropy_label: s.entropy_y,
                entropy_feature_bits: s.entropy_x / std::f64::consts::LN_2,
                mi: s.mi,
                expected_mi: s.expected_mi,
                ami: s.ami,
                ami_reported: s.ami.clamp(0.0, 1.0),
                out_of_range: !(0.0..=1.0).contains(&s.ami),
                n_valid: col.n_valid(),
                n_codes: codes.n_codes,
                discretized: codes.discretized,
                emi_method: s.method,
                candidate: false,
            })
        })
        .collect();
    let mut entries = Vec::new();
    let mut excluded = Vec::new();
    for r in results {
        match r {
            Ok(e) => entries.push(e),
            Err(x) => excluded.push(x),
        }
    }
    entries.sort_by(|a, b| b.ami.total_cmp(&a.ami).then_with(|| a.field.cmp(&b.field)));
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
        e.candidate = i < cfg.k;
    }
    Ok(AmiReport { n_rows: matrix.n_rows(), n_classes: ny, k: cfg.k, entries, excluded })
}

/// Writes `ami_report.json`, `ami_report.csv` and `top_k.svg`.
pub fn write_ami_report(report: &AmiReport, dir: &Path) -> Result<(), RankError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| RankError::Domain(e.to_string()))?;
    fs::write(dir.join("ami_report.json"), json)?;
    let mut w = csv::Writer::from_path(dir.join("ami_report.csv")).map_err(|e| RankError::Domain(e.to_string()))?;
    for e in &report.entries {
        w.serialize(e).map_err(|e| RankError::Domain(e.to_string()))?;
    }
    w.flush()?;
    let bars: Vec<(String, f64)> = report.candidates().map(|e| (e.field.clone(), e.ami_reported)).collect();
    fs::write(dir.join("top_k.svg"), plot::bar_chart(&format!("Top-{} AMI fields", report.k), &bars, 1.0))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{Column, ColumnValues, DomainDict, FieldKind};

    fn matrix() -> FeatureMatrix {
        let n = 200;
        let labels: Vec<u32> = (0..n).map(|i| (i % 4) as u32).collect();
        let col = |name: &str, v: Vec<i64>| Column {
            name: name.into(),
            kind: FieldKind::HexOrInt,
            values: ColumnValues::Int(v),
            valid: vec![true; n],
            categories: vec![],
        };
        FeatureMatrix {
            columns: vec![
                col("z.copy", labels.iter().map(|&l| l as i64 * 10).collect()),
                col("a.copy", labels.iter().map(|&l| 100 - l as i64).collect()),
                col("m.noise", (0..n).map(|i| ((i * 7919) % 13) as i64).collect()),
                col("frame.number", (0..n as i64).collect()),
            ],
            labels,
            class_names: (0..4).map(|c| c.to_string()).collect(),
            dataset_tags: vec![String::new(); n],
            session_ids: (0..n as u64).collect(),
            packet_ids: vec![],
            domain_dict: DomainDict::default(),
        }
    }

    #[test]
    fn ties_break_by_name_and_top_k_is_marked() {
        let r = rank_top_k(&matrix(), &RankConfig { k: 1, ..Default::default() }).unwrap();
        let names: Vec<&str> = r.entries.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(names, vec!["a.copy", "z.copy", "m.noise"]);
        assert!((r.entries[0].ami - 1.0).abs() < 1e-12);
        assert_eq!(r.candidates().count(), 1);
        assert_eq!(r.excluded.len(), 1);
    }

    #[test]
    fn single_class_is_rejected() {
        let mut m = matrix();
        m.labels = vec![0; m.n_rows()];
        assert!(matches!(rank_top_k(&m, &RankConfig::default()), Err(RankError::TooFewClasses(1))));
    }

    #[test]
    fn report_files_are_written() {
        let r = rank_top_k(&matrix(), &RankConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_ami_report(&r, dir.path()).unwrap();
        let back: AmiReport =
            serde_json::from_slice(&std::fs::read(dir.path().join("ami_report.json")).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(dir.path().join("top_k.svg").exists());
    }
}
