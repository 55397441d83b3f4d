//! Shortcut categories for ranked fields: built-in rules plus a reviewed
//! assignment table that overrides them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::SNI_FIELD;
use crate::ranker::AmiReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    DataLeakage,
    RelativeArtifact,
    TaskAgnostic,
    Benign,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::DataLeakage => "DataLeakage",
            Category::RelativeArtifact => "RelativeArtifact",
            Category::TaskAgnostic => "TaskAgnostic",
            Category::Benign => "Benign",
        })
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.trim().chars().filter(|c| *c != '_' && *c != '-' && *c != ' ').collect();
        match norm.to_ascii_lowercase().as_str() {
            "dataleakage" => Ok(Category::DataLeakage),
            "relativeartifact" => Ok(Category::RelativeArtifact),
            "taskagnostic" => Ok(Category::TaskAgnostic),
            "benign" => Ok(Category::Benign),
            _ => Err(format!("unknown category `{}`", s.trim())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Rule,
    Human,
}

pub const SII_FIELDS: &[&str] = &[
    "ip.src",
    "ip.dst",
    "ip.addr",
    "tcp.srcport",
    "tcp.dstport",
    "tcp.port",
    "udp.srcport",
    "udp.dstport",
    "udp.port",
];

pub const RELATIVE_FIELDS: &[&str] = &[
    "tcp.seq_raw",
    "tcp.ack_raw",
    "tcp.seq",
    "tcp.ack",
    "tcp.nxtseq",
    "tcp.options.timestamp.tsval",
    "tcp.options.timestamp.tsecr",
];

pub const TASK_AGNOSTIC_FIELDS: &[&str] = &[
    "tcp.window_size",
    "tcp.window_size_value",
    "ip.checksum",
    "tcp.checksum",
    "udp.checksum",
    "ip.ttl",
];

/// Built-in category for a field, `None` when no rule applies.
pub fn rule_category(field: &str) -> Option<Category> {
    if SII_FIELDS.contains(&field) || field == SNI_FIELD || field.ends_with("server_name") {
        Some(Category::DataLeakage)
    } else if RELATIVE_FIELDS.contains(&field) {
        Some(Category::RelativeArtifact)
    } else if TASK_AGNOSTIC_FIELDS.contains(&field) {
        Some(Category::TaskAgnostic)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assigned {
    pub category: Category,
    pub provenance: Provenance,
    pub needs_review: bool,
}

pub type CategoryAssignment = BTreeMap<String, Assigned>;

/// Rule-based categories for the report's candidates. Fields without a rule
/// become Benign and are marked for review.
pub fn suggest_categories(report: &AmiReport) -> CategoryAssignment {
    report
        .candidates()
        .map(|e| {
            let rule = rule_category(&e.field);
            (
                e.field.clone(),
                Assigned {
                    category: rule.unwrap_or(Category::Benign),
                    provenance: Provenance::Rule,
                    needs_review: rule.is_none(),
                },
            )
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("{path}:{line}: {reason}")]
    Invalid { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

/// Reads an assignment table with columns `field,category`.
pub fn load_assignment_file(path: &Path) -> Result<Vec<(String, Category)>, TaxonomyError> {
    let fmt_err = |reason: String| TaxonomyError::Format { path: path.to_path_buf(), reason };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| fmt_err(e.to_string()))?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| fmt_err(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = row.get(0).unwrap_or("").to_string();
        let category = row.get(1).unwrap_or("").parse::<Category>().map_err(|reason| TaxonomyError::Invalid {
            path: path.to_path_buf(),
            line,
            reason,
        })?;
        out.push((field, category));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizedEntry {
    pub field: String,
    pub rank: usize,
    pub ami: f64,
    pub category: Category,
    pub provenance: Provenance,
    pub needs_review: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizedReport {
    pub entries: Vec<CategorizedEntry>,
    /// Fields still carrying the rule default with no reviewed decision.
    pub needs_review: Vec<String>,
    /// Assignment rows naming fields that are not candidates.
    pub unmatched: Vec<String>,
}

impl CategorizedReport {
    pub fn fields_in(&self, category: Category) -> Vec<String> {
        self.entries.iter().filter(|e| e.category == category).map(|e| e.field.clone()).collect()
    }

    pub fn category_of(&self, field: &str) -> Option<Category> {
        self.entries.iter().find(|e| e.field == field).map(|e| e.category)
    }
}

/// Merges reviewed assignments over the rule output; human rows win.
pub fn apply_assignment(report: &AmiReport, human: &[(String, Category)]) -> CategorizedReport {
    let mut assignment = suggest_categories(report);
    let mut unmatched = Vec::new();
    for (field, category) in human {
        match assignment.get_mut(field) {
            Some(a) => {
                *a = Assigned { category: *category, provenance: Provenance::Human, needs_review: false };
            }
            None => {
                warn!("assignment names `{field}`, which is not a ranked candidate");
                unmatched.push(field.clone());
            }
        }
    }
    let entries: Vec<CategorizedEntry> = report
        .candidates()
        .map(|e| {
            let a = &assignment[&e.field];
            CategorizedEntry {
                field: e.field.clone(),
                rank: e.rank,
                ami: e.ami,
                category: a.category,
                provenance: a.provenance,
                needs_review: a.needs_review,
            }
        })
        .collect();
    let needs_review = entries.iter().filter(|e| e.needs_review).map(|e| e.field.clone()).collect();
    CategorizedReport { entries, needs_review, unmatched }
}
