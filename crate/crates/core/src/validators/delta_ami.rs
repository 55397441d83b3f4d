use serde::{Deserialize, Serialize};

use super::relative::{relative_transform_values, RelValue, RelativeKind};
use super::ValidateError;
use crate::encode::{ColumnValues, FeatureMatrix};
use crate::ranker::{adjusted_mi_codes, discretize_floats, discretize_ints, EmiSettings};

/// Bin budget shared by the absolute and relative codings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinPolicy {
    /// As many bins as there are label classes.
    LabelCardinality,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaAmiConfig {
    pub bins: BinPolicy,
    pub emi: EmiSettings,
}

impl Default for DeltaAmiConfig {
    fn default() -> Self {
        Self { bins: BinPolicy::LabelCardinality, emi: EmiSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaAmiRecord {
    pub field: String,
    pub kind: RelativeKind,
    pub bins: usize,
    pub ami_absolute: f64,
    pub ami_relative: f64,
    pub delta_ami: f64,
}

pub(crate) fn option_codes<T: Copy>(
    values: &[Option<T>],
    bins: usize,
    code: impl Fn(&[T], usize) -> (Vec<u32>, usize, bool),
) -> (Vec<u32>, usize) {
    let present: Vec<T> = values.iter().flatten().copied().collect();
    let (valid_codes, n, _) = code(&present, bins);
    let mut it = valid_codes.into_iter();
    let missing = n as u32;
    let codes: Vec<u32> = values.iter().map(|v| if v.is_some() { it.next().unwrap() } else { missing }).collect();
    let has_missing = present.len() < values.len();
    (codes, n + has_missing as usize)
}

fn grouped<T: Copy>(m: &FeatureMatrix, v: &[T], valid: &[bool]) -> Vec<Vec<Option<T>>> {
    m.session_groups()
        .into_iter()
        .map(|g| g.map(|r| valid[r].then_some(v[r])).collect())
        .collect()
}

fn secondary_field(field: &str) -> String {
    field.replace("tsval", "tsecr")
}

fn score<T: RelValue>(
    m: &FeatureMatrix,
    absolute: Vec<Vec<Option<T>>>,
    secondary: Option<Vec<Vec<Option<T>>>>,
    kind: RelativeKind,
    bins: usize,
    emi: &EmiSettings,
    code: impl Fn(&[T], usize) -> (Vec<u32>, usize, bool) + Copy,
) -> Result<(f64, f64), ValidateError> {
    let relative = relative_transform_values(&absolute, kind, secondary.as_deref())?;
    let (y, ny) = crate::ranker::label_codes(&m.labels);
    let flat = |s: Vec<Vec<Option<T>>>| s.into_iter().flatten().collect::<Vec<_>>();
    let (xa, na) = option_codes(&flat(absolute), bins, code);
    let (xr, nr) = option_codes(&flat(relative), bins, code);
    let a = adjusted_mi_codes(&xa, na, &y, ny, emi)?.ami;
    let r = adjusted_mi_codes(&xr, nr, &y, ny, emi)?.ami;
    Ok((a, r))
}

/// AMI of a field before and after a per-session relative transform, both
/// coded with the same bin budget.
pub fn delta_ami(
    matrix: &FeatureMatrix,
    field: &str,
    kind: RelativeKind,
    cfg: &DeltaAmiConfig,
) -> Result<DeltaAmiRecord, ValidateError> {
    let col = matrix.column(field).ok_or_else(|| ValidateError::MissingField(field.to_string()))?;
    if matrix.n_rows() == 0 {
        return Err(ValidateError::Invalid("empty matrix".into()));
    }
    let n_classes = crate::ranker::label_codes(&matrix.labels).1;
    let bins = match cfg.bins {
        BinPolicy::LabelCardinality => n_classes.max(2),
        BinPolicy::Fixed(b) => b.max(1),
    };
    let sec_col = if kind == RelativeKind::TsvalMinusTsecr {
        let name = secondary_field(field);
        Some(matrix.column(&name).ok_or(ValidateError::MissingField(name))?)
    } else {
        None
    };
    let settings = EmiSettings { seed: cfg.emi.seed ^ crate::rng::name_key(field), ..cfg.emi };
    let (a, r) = match &col.values {
        ColumnValues::Int(v) => {
            let sec = match sec_col.map(|c| (&c.values, &c.valid)) {
                Some((ColumnValues::Int(s), valid)) => Some(grouped(matrix, s, valid)),
                Some(_) => return Err(ValidateError::Invalid("echo field has a different kind".into())),
                None => None,
            };
            score(matrix, grouped(matrix, v, &col.valid), sec, kind, bins, &settings, discretize_ints)?
        }
        ColumnValues::Float(v) => {
            let sec = match sec_col.map(|c| (&c.values, &c.valid)) {
                Some((ColumnValues::Float(s), valid)) => Some(grouped(matrix, s, valid)),
                Some(_) => return Err(ValidateError::Invalid("echo field has a different kind".into())),
                None => None,
            };
            score(matrix, grouped(matrix, v, &col.valid), sec, kind, bins, &settings, discretize_floats)?
        }
    };
    Ok(DeltaAmiRecord { field: field.to_string(), kind, bins, ami_absolute: a, ami_relative: r, delta_ami: a - r })
}
