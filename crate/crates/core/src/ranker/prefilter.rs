use serde::{Deserialize, Serialize};

use super::discretize::{column_codes, Codes};
use super::info::entropy;
use crate::encode::{Column, FeatureMatrix};

const BUILTIN_DENYLIST: &str = include_str!("../../data/denylist.txt");

/// Field names (or `prefix*` patterns) shipped as structurally trivial.
pub fn builtin_denylist() -> Vec<String> {
    parse_denylist(BUILTIN_DENYLIST)
}

pub fn parse_denylist(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

pub fn denylisted(field: &str, denylist: &[String]) -> bool {
    denylist.iter().any(|p| match p.strip_suffix('*') {
        Some(prefix) => field.starts_with(prefix),
        None => field == p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    Denylist,
    Sparsity,
    Constant,
    LowEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub field: String,
    pub reason: ExclusionReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefilterConfig {
    pub min_entropy: f64,
    pub min_valid_fraction: f64,
    pub denylist: Vec<String>,
    pub bins: usize,
}

impl Default for PrefilterConfig {
    fn default() -> Self {
        Self {
            min_entropy: 0.05,
            min_valid_fraction: 0.01,
            denylist: builtin_denylist(),
            bins: super::discretize::DEFAULT_BINS,
        }
    }
}

pub(crate) fn check_column(column: &Column, cfg: &PrefilterConfig) -> Result<Codes, Exclusion> {
    let exclude = |reason, detail: String| Exclusion { field: column.name.clone(), reason, detail };
    if denylisted(&column.name, &cfg.denylist) {
        return Err(exclude(ExclusionReason::Denylist, String::new()));
    }
    let n = column.len().max(1);
    let frac = column.n_valid() as f64 / n as f64;
    if frac < cfg.min_valid_fraction {
        return Err(exclude(ExclusionReason::Sparsity, format!("valid in {}/{}", column.n_valid(), column.len())));
    }
    let codes = column_codes(column, cfg.bins);
    let mut counts = vec![0u64; codes.n_codes];
    for &c in &codes.codes {
        counts[c as usize] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(exclude(ExclusionReason::Constant, String::new()));
    }
    let h = entropy(&counts).unwrap_or(0.0);
    if h < cfg.min_entropy {
        return Err(exclude(ExclusionReason::LowEntropy, format!("{h:.4} nats")));
    }
    Ok(codes)
}

/// Splits fields into retained names and an exclusion log.
pub fn prefilter_fields(matrix: &FeatureMatrix, cfg: &PrefilterConfig) -> (Vec<String>, Vec<Exclusion>) {
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for c in &matrix.columns {
        match check_column(c, cfg) {
            Ok(_) => kept.push(c.name.clone()),
            Err(e) => excluded.push(e),
        }
    }
    (kept, excluded)
}
