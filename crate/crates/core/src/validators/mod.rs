//! Category-specific checks: ΔAMI for relative artifacts and
//! class-conditional KL divergence across environments for task-agnostic
//! fields.

mod conditional;
mod delta_ami;
mod kde;
mod kl;
mod relative;

pub use conditional::{class_conditional_kl, ClassCurves, KlConfig, KlRecord};
pub use delta_ami::{delta_ami, BinPolicy, DeltaAmiConfig, DeltaAmiRecord};
pub use kde::{kde_density, silverman_bandwidth, trapezoid, uniform_grid, Density};
pub use kl::{kl_divergence, KL_FLOOR};
pub use relative::{relative_transform_values, RelValue, RelativeKind};

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encode::FeatureMatrix;
use crate::plot;
use crate::ranker::RankError;
use crate::taxonomy::{CategorizedReport, Category};

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("field `{0}` is not in the matrix")]
    MissingField(String),
    #[error("field `{0}`: no class has enough samples in both datasets")]
    NoSharedClass(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateConfig {
    pub relative_kind: RelativeKind,
    pub delta: DeltaAmiConfig,
    pub kl: KlConfig,
    /// Environments compared by the KL check; defaults to the first two
    /// dataset tags in sorted order.
    pub dataset_pair: Option<(String, String)>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            relative_kind: RelativeKind::AdjacentDiff,
            delta: DeltaAmiConfig::default(),
            kl: KlConfig::default(),
            dataset_pair: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCheck {
    pub field: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub relative: Vec<DeltaAmiRecord>,
    pub task_agnostic: Vec<KlRecord>,
    pub skipped: Vec<SkippedCheck>,
}

enum Outcome {
    Delta(DeltaAmiRecord),
    Kl(KlRecord),
    Skip(SkippedCheck),
}

/// Runs the check matching each candidate's category. Other categories are
/// not validated statistically.
pub fn validate(categorized: &CategorizedReport, matrix: &FeatureMatrix, cfg: &ValidateConfig) -> ValidationReport {
    let pair = cfg.dataset_pair.clone().or_else(|| {
        let tags = matrix.tags();
        (tags.len() >= 2).then(|| (tags[0].clone(), tags[1].clone()))
    });
    let split = pair.as_ref().map(|(a, b)| (matrix.with_tag(a), matrix.with_tag(b)));
    let outcomes: Vec<Outcome> = categorized
        .entries
        .par_iter()
        .filter_map(|e| {
            let skip = |reason: String| Outcome::Skip(SkippedCheck { field: e.field.clone(), reason });
            match e.category {
                Category::RelativeArtifact => {
                    let kind = if e.field.contains("tsval") && cfg.relative_kind == RelativeKind::TsvalMinusTsecr {
                        RelativeKind::TsvalMinusTsecr
                    } else if cfg.relative_kind == RelativeKind::TsvalMinusTsecr {
                        RelativeKind::AdjacentDiff
                    } else {
                        cfg.relative_kind
                    };
                    Some(match delta_ami(matrix, &e.field, kind, &cfg.delta) {
                        Ok(r) => Outcome::Delta(r),
                        Err(err) => skip(err.to_string()),
                    })
                }
                Category::TaskAgnostic => Some(match (&pair, &split) {
                    (Some((t1, t2)), Some((m1, m2))) => {
                        match class_conditional_kl(&e.field, m1, m2, (t1, t2), &cfg.kl) {
                            Ok(r) => Outcome::Kl(r),
                            Err(err) => skip(err.to_string()),
                        }
                    }
                    _ => skip("needs two dataset tags".into()),
                }),
                _ => None,
            }
        })
        .collect();
    let mut report = ValidationReport { relative: vec![], task_agnostic: vec![], skipped: vec![] };
    for o in outcomes {
        match o {
            Outcome::Delta(r) => report.relative.push(r),
            Outcome::Kl(r) => report.task_agnostic.push(r),
            Outcome::Skip(s) => report.skipped.push(s),
        }
    }
    report
}

fn file_stem(field: &str) -> String {
    field.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

/// Writes `validation.json`, `kde_curves.csv` and one density plot per
/// KL-checked field.
pub fn write_validation_report(report: &ValidationReport, dir: &Path) -> Result<(), ValidateError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| ValidateError::Invalid(e.to_string()))?;
    fs::write(dir.join("validation.json"), json)?;
    let mut w = csv::Writer::from_path(dir.join("kde_curves.csv")).map_err(|e| ValidateError::Invalid(e.to_string()))?;
    w.write_record(["field", "class", "x", "density_d1", "density_d2"])
        .map_err(|e| ValidateError::Invalid(e.to_string()))?;
    for rec in &report.task_agnostic {
        let mut series = Vec::new();
        for (class, c) in &rec.curves {
            for i in 0..c.grid.len() {
                w.write_record([
                    rec.field.clone(),
                    class.clone(),
                    c.grid[i].to_string(),
                    c.d1[i].to_string(),
                    c.d2[i].to_string(),
                ])
                .map_err(|e| ValidateError::Invalid(e.to_string()))?;
            }
            series.push((format!("{class} / {}", rec.dataset_pair.0), c.grid.clone(), c.d1.clone()));
            series.push((format!("{class} / {}", rec.dataset_pair.1), c.grid.clone(), c.d2.clone()));
        }
        let title = format!("{} (KL avg {:.3})", rec.field, rec.kl_avg);
        fs::write(dir.join(format!("kde_{}.svg", file_stem(&rec.field))), plot::line_chart(&title, &series))?;
    }
    w.flush()?;
    Ok(())
}
