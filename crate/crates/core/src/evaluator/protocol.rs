use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{train_decision_tree, ByteMatrix, TreeParams};
use super::EvalError;
use crate::occlusion::{apply_occlusion, OcclusionSpec, SessionTensor, TENSOR_LEN};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowCap {
    PerClass,
    PerDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub max_flows: usize,
    pub cap: FlowCap,
    pub repeats: usize,
    /// Train and validation fractions; the test partition takes the rest.
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// `None` is unbounded.
    pub depth_grid: Vec<Option<usize>>,
    pub min_flows_per_class: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            max_flows: 500,
            cap: FlowCap::PerClass,
            repeats: 3,
            train_fraction: 0.8,
            val_fraction: 0.1,
            depth_grid: vec![Some(5), Some(10), Some(20), None],
            min_flows_per_class: 10,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<(), EvalError> {
        let f = (self.train_fraction, self.val_fraction);
        if !(f.0 > 0.0 && f.1 >= 0.0 && f.0 + f.1 < 1.0) {
            return Err(EvalError::Protocol(format!("split fractions {f:?} must be positive and sum below 1")));
        }
        if self.repeats == 0 || self.max_flows == 0 || self.depth_grid.is_empty() {
            return Err(EvalError::Protocol("repeats, max_flows and depth_grid must be non-empty".into()));
        }
        if self.depth_grid.contains(&Some(0)) {
            return Err(EvalError::Protocol("depth 0 is not a valid grid point".into()));
        }
        Ok(())
    }
}

fn depth_label(d: Option<usize>) -> String {
    d.map_or_else(|| "unbounded".to_string(), |d| d.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAudit {
    pub repeat: usize,
    pub class: String,
    pub available: usize,
    pub sampled: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub selected_depth: Option<usize>,
    pub val_accuracy: BTreeMap<String, f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub tree_depth: usize,
    pub tree_leaves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub dataset: String,
    pub strategy: String,
    pub targets: Vec<String>,
    pub classes: Vec<String>,
    /// Classes below the flow minimum, with their flow count.
    pub dropped_classes: Vec<(String, usize)>,
    pub chance: f64,
    pub repeats: Vec<RepeatResult>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub split_audit: Vec<SplitAudit>,
}

/// Per-class partition sizes: `round(train·n)`, `round(val·n)`, rest.
pub fn partition_sizes(n: usize, train: f64, val: f64) -> (usize, usize, usize) {
    let tr = ((train * n as f64).round() as usize).min(n);
    let va = ((val * n as f64).round() as usize).min(n - tr);
    (tr, va, n - tr - va)
}

struct Partition {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
    audit: Vec<SplitAudit>,
}

fn sample_and_split(by_class: &[(String, Vec<usize>)], p: &EvalProtocol, repeat: usize) -> Partition {
    let mut rng = rng::stream(p.seed, repeat as u64);
    let mut shuffled: Vec<(String, Vec<usize>)> = by_class
        .iter()
        .map(|(c, idx)| {
            let mut v = idx.clone();
            v.shuffle(&mut rng);
            (c.clone(), v)
        })
        .collect();
    let available: Vec<usize> = shuffled.iter().map(|(_, v)| v.len()).collect();
    match p.cap {
        FlowCap::PerClass => shuffled.iter_mut().for_each(|(_, v)| v.truncate(p.max_flows)),
        FlowCap::PerDataset => {
            let mut pool: Vec<(usize, usize)> =
                shuffled.iter().enumerate().flat_map(|(c, (_, v))| v.iter().map(move |&i| (c, i))).collect();
            pool.shuffle(&mut rng);
            pool.truncate(p.max_flows);
            let keep: HashSet<usize> = pool.into_iter().map(|(_, i)| i).collect();
            for (_, v) in shuffled.iter_mut() {
                v.retain(|i| keep.contains(i));
            }
        }
    }
    let mut out = Partition { train: vec![], val: vec![], test: vec![], audit: vec![] };
    for ((class, v), avail) in shuffled.iter().zip(available) {
        let (tr, va, te) = partition_sizes(v.len(), p.train_fraction, p.val_fraction);
        out.train.extend(&v[..tr]);
        out.val.extend(&v[tr..tr + va]);
        out.test.extend(&v[tr + va..]);
        out.audit.push(SplitAudit {
            repeat,
            class: class.clone(),
            available: avail,
            sampled: v.len(),
            train: tr,
            val: va,
            test: te,
        });
    }
    out
}

fn gather(tensors: &[SessionTensor], rows: &[usize]) -> ByteMatrix {
    let mut data = Vec::with_capacity(rows.len() * TENSOR_LEN);
    for &i in rows {
        data.extend_from_slice(&tensors[i].bytes);
    }
    ByteMatrix { n_features: TENSOR_LEN, data }
}

/// Occludes every session with `spec` (none: unmodified) and evaluates the
/// result with [`evaluate_tensors`].
pub fn evaluate_strategy(
    tensors: &[SessionTensor],
    spec: Option<&OcclusionSpec>,
    protocol: &EvalProtocol,
    dataset: &str,
) -> Result<AccuracyReport, EvalError> {
    match spec {
        Some(s) => {
            let targets = s.validate()?;
            let occluded = tensors
                .par_iter()
                .map(|t| apply_occlusion(t, s).map(|(o, _)| o))
                .collect::<Result<Vec<_>, _>>()?;
            evaluate_tensors(&occluded, &strategy_name(s), &targets, protocol, dataset)
        }
        None => evaluate_tensors(tensors, "none", &[], protocol, dataset),
    }
}

pub fn strategy_name(spec: &OcclusionSpec) -> String {
    format!("{:?}", spec.strategy).to_lowercase()
}

/// Per repeat: samples flows, splits them stratified by class, trains on
/// train, picks the depth with the best validation accuracy (ties to the
/// shallower) and scores test.
pub fn evaluate_tensors(
    occluded: &[SessionTensor],
    strategy: &str,
    targets: &[String],
    protocol: &EvalProtocol,
    dataset: &str,
) -> Result<AccuracyReport, EvalError> {
    protocol.validate()?;
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, t) in occluded.iter().enumerate() {
        groups.entry(t.label.as_str()).or_default().push(i);
    }
    let mut by_class = Vec::new();
    let mut dropped = Vec::new();
    for (c, idx) in groups {
        if idx.len() < protocol.min_flows_per_class {
            warn!("class `{c}` has {} flows, below the minimum {}; dropped", idx.len(), protocol.min_flows_per_class);
            dropped.push((c.to_string(), idx.len()));
        } else {
            by_class.push((c.to_string(), idx));
        }
    }
    if by_class.len() < 2 {
        return Err(EvalError::TooFewClasses(by_class.len()));
    }
    let class_code: BTreeMap<&str, u32> =
        by_class.iter().enumerate().map(|(k, (c, _))| (c.as_str(), k as u32)).collect();
    let labels: Vec<u32> = occluded.iter().map(|t| class_code.get(t.label.as_str()).copied().unwrap_or(0)).collect();
    let k = by_class.len();
    let params = TreeParams { min_samples_leaf: protocol.min_samples_leaf, ..Default::default() };

    let results: Vec<(RepeatResult, Vec<SplitAudit>)> = (0..protocol.repeats)
        .into_par_iter()
        .map(|r| {
            let part = sample_and_split(&by_class, protocol, r);
            let y = |rows: &[usize]| rows.iter().map(|&i| labels[i]).collect::<Vec<u32>>();
            let (xtr, ytr) = (gather(occluded, &part.train), y(&part.train));
            let (xva, yva) = (gather(occluded, &part.val), y(&part.val));
            let (xte, yte) = (gather(occluded, &part.test), y(&part.test));
            let tree = train_decision_tree(&xtr, &ytr, k, &params)?;
            let mut best: Option<(Option<usize>, f64)> = None;
            let mut val_accuracy = BTreeMap::new();
            let mut grid = protocol.depth_grid.clone();
            grid.sort_by_key(|d| d.unwrap_or(usize::MAX));
            grid.dedup();
            for d in grid {
                let acc = tree.accuracy(&xva, &yva, d)?;
                val_accuracy.insert(depth_label(d), acc);
                if best.is_none_or(|(_, b)| acc > b) {
                    best = Some((d, acc));
                }
            }
            let depth = best.expect("grid is non-empty").0;
            Ok((
                RepeatResult {
                    repeat: r,
                    selected_depth: depth,
                    val_accuracy,
                    train_accuracy: tree.accuracy(&xtr, &ytr, depth)?,
                    test_accuracy: tree.accuracy(&xte, &yte, depth)?,
                    tree_depth: tree.depth(),
                    tree_leaves: tree.n_leaves(),
                },
                part.audit,
            ))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;

    let accs: Vec<f64> = results.iter().map(|(r, _)| r.test_accuracy).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
    let (repeats, audits): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(AccuracyReport {
        dataset: dataset.to_string(),
        strategy: strategy.to_string(),
        targets: targets.to_vec(),
        classes: by_class.iter().map(|(c, _)| c.clone()).collect(),
        dropped_classes: dropped,
        chance: 1.0 / k as f64,
        repeats,
        mean_accuracy: mean,
        std_accuracy: var.sqrt(),
        split_audit: audits.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Serialize)]
struct AccuracyRow<'a> {
    dataset: &'a str,
    strategy: &'a str,
    targets: String,
    mean_accuracy: f64,
    std_accuracy: f64,
    chance: f64,
    n_classes: usize,
    repeats: usize,
}

/// Writes `accuracy.json`, `accuracy.csv` (one row per strategy) and
/// `split_audit.csv`.
pub fn write_accuracy_reports(reports: &[AccuracyReport], dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&serde_json::json!({ "reports": reports }))
        .map_err(|e| EvalError::Protocol(e.to_string()))?;
    fs::write(dir.join("accuracy.json"), json)?;
    let csv_err = |e: csv::Error| EvalError::Protocol(e.to_string());
    let mut w = csv::Writer::from_path(dir.join("accuracy.csv")).map_err(csv_err)?;
    for r in reports {
        w.serialize(AccuracyRow {
            dataset: &r.dataset,
            strategy: &r.strategy,
            targets: r.targets.join(" "),
            mean_accuracy: r.mean_accuracy,
            std_accuracy: r.std_accuracy,
            chance: r.chance,
            n_classes: r.classes.len(),
            repeats: r.repeats.len(),
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("split_audit.csv")).map_err(csv_err)?;
    w.write_record(["dataset", "strategy", "repeat", "class", "available", "sampled", "train", "val", "test"])
        .map_err(csv_err)?;
    for r in reports {
        for a in &r.split_audit {
            w.write_record([
                r.dataset.clone(),
                r.strategy.clone(),
                a.repeat.to_string(),
                a.class.clone(),
                a.available.to_string(),
                a.sampled.to_string(),
                a.train.to_string(),
                a.val.to_string(),
                a.test.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
