use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};

use super::kde::{kde_density, silverman_bandwidth, uniform_grid};
use super::kl::kl_divergence;
use super::ValidateError;
use crate::encode::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlConfig {
    pub min_class_samples: usize,
    pub grid_points: usize,
    /// Grid padding on each side, in multiples of the larger bandwidth.
    pub pad_bandwidths: f64,
    /// Average both directions instead of D1‖D2 only.
    pub symmetric: bool,
    pub bandwidth: Option<f64>,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self { min_class_samples: 30, grid_points: 512, pad_bandwidths: 3.0, symmetric: false, bandwidth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCurves {
    pub grid: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlRecord {
    pub field: String,
    pub dataset_pair: (String, String),
    pub kl_avg: f64,
    pub per_class_kl: BTreeMap<String, f64>,
    pub skipped_classes: Vec<String>,
    pub symmetric: bool,
    #[serde(skip)]
    pub curves: BTreeMap<String, ClassCurves>,
}

fn class_values(m: &FeatureMatrix, field: &str) -> Result<BTreeMap<String, Vec<f64>>, ValidateError> {
    let col = m.column(field).ok_or_else(|| ValidateError::MissingField(field.to_string()))?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in 0..m.n_rows() {
        if let Some(v) = col.numeric(r) {
            out.entry(m.class_names[m.labels[r] as usize].clone()).or_default().push(v);
        }
    }
    Ok(out)
}

/// Mean over shared classes of KL(P_D1(field | class) ‖ P_D2(field | class)),
/// each conditional estimated by KDE on a grid shared by the pair.
pub fn class_conditional_kl(
    field: &str,
    d1: &FeatureMatrix,
    d2: &FeatureMatrix,
    tags: (&str, &str),
    cfg: &KlConfig,
) -> Result<KlRecord, ValidateError> {
    let v1 = class_values(d1, field)?;
    let v2 = class_values(d2, field)?;
    let mut per_class = BTreeMap::new();
    let mut curves = BTreeMap::new();
    let mut skipped = Vec::new();
    let classes: std::collections::BTreeSet<&String> = v1.keys().chain(v2.keys()).collect();
    for class in classes {
        let (Some(a), Some(b)) = (v1.get(class), v2.get(class)) else {
            skipped.push(class.clone());
            continue;
        };
        if a.len() < cfg.min_class_samples || b.len() < cfg.min_class_samples {
            info!("{field}: class {class} skipped ({} / {} samples)", a.len(), b.len());
            skipped.push(class.clone());
            continue;
        }
        let h1 = cfg.bandwidth.unwrap_or_else(|| silverman_bandwidth(a));
        let h2 = cfg.bandwidth.unwrap_or_else(|| silverman_bandwidth(b));
        let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
        let mut pad = cfg.pad_bandwidths * h1.max(h2);
        if hi - lo + 2.0 * pad <= 0.0 {
            pad = 1.0;
        }
        let grid = uniform_grid(lo - pad, hi + pad, cfg.grid_points);
        let p = kde_density(a, &grid, Some(h1))?;
        let q = kde_density(b, &grid, Some(h2))?;
        let forward = kl_divergence(&p.values, &q.values, &grid)?;
        let kl = if cfg.symmetric {
            (forward + kl_divergence(&q.values, &p.values, &grid)?) / 2.0
        } else {
            forward
        };
        per_class.insert(class.clone(), kl);
        curves.insert(class.clone(), ClassCurves { grid, d1: p.values, d2: q.values });
    }
    if per_class.is_empty() {
        return Err(ValidateError::NoSharedClass(field.to_string()));
    }
    let kl_avg = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(KlRecord {
        field: field.to_string(),
        dataset_pair: (tags.0.to_string(), tags.1.to_string()),
        kl_avg,
        per_class_kl: per_class,
        skipped_classes: skipped,
        symmetric: cfg.symmetric,
        curves,
    })
}
