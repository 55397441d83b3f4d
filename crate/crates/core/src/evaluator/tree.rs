use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Row-major `n_samples × n_features` byte matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteMatrix {
    pub n_features: usize,
    pub data: Vec<u8>,
}

impl ByteMatrix {
    pub fn new(n_features: usize, data: Vec<u8>) -> Result<Self, EvalError> {
        if n_features == 0 || data.len() % n_features != 0 {
            return Err(EvalError::Shape(format!("{} bytes do not form rows of {n_features}", data.len())));
        }
        Ok(Self { n_features, data })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self, EvalError> {
        let n_features = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_features) {
            return Err(EvalError::Shape("rows differ in length".into()));
        }
        Self::new(n_features, rows.concat())
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.n_features
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: None, min_samples_split: 2, min_samples_leaf: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    /// Samples with `x[feature] <= threshold` go left.
    pub threshold: u8,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub counts: Vec<u32>,
    /// Majority class, ties to the lowest code.
    pub prediction: u32,
    pub depth: usize,
    pub split: Option<Split>,
}

/// Binary CART tree over byte features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tree {
    pub n_features: usize,
    pub n_classes: usize,
    pub nodes: Vec<Node>,
}

fn majority(counts: &[u32]) -> u32 {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best as u32
}

/// `Σ_k L_k² / n_L + Σ_k R_k² / n_R` as an exact fraction; larger means a
/// larger Gini decrease.
#[derive(Debug, Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn new(left: &[u32], right: &[u32], nl: u64, nr: u64) -> Self {
        let sq = |c: &[u32]| c.iter().map(|&x| (x as u128) * (x as u128)).sum::<u128>();
        Score { num: sq(left) * nr as u128 + sq(right) * nl as u128, den: nl as u128 * nr as u128 }
    }

    fn cmp(&self, other: &Score) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: u8,
    score: Score,
}

/// Prefers the higher score, then the lower feature, then the lower threshold.
fn better(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => match a.score.cmp(&b.score) {
            Ordering::Greater => Some(a),
            Ordering::Less => Some(b),
            Ordering::Equal => {
                if (a.feature, a.threshold) <= (b.feature, b.threshold) {
                    Some(a)
                } else {
                    Some(b)
                }
            }
        },
    }
}

const HISTOGRAM_MIN: usize = 256;

struct Builder<'a> {
    /// Column-major copy: `xt[f * n + i]`.
    xt: Vec<u8>,
    n: usize,
    n_features: usize,
    y: &'a [u32],
    k: usize,
    params: TreeParams,
    histogram_min: usize,
}

impl Builder<'_> {
    fn col(&self, f: usize) -> &[u8] {
        &self.xt[f * self.n..(f + 1) * self.n]
    }

    /// Scans thresholds of a per-value class histogram in ascending order.
    fn scan(&self, f: usize, values: &[(u8, Vec<u32>)], total: &[u32], m: usize) -> Option<Candidate> {
        let leaf = self.params.min_samples_leaf.max(1);
        let mut left = vec![0u32; self.k];
        let mut nl = 0usize;
        let mut best = None;
        for (v, counts) in &values[..values.len().saturating_sub(1)] {
            for (l, c) in left.iter_mut().zip(counts) {
                *l += c;
            }
            nl += counts.iter().sum::<u32>() as usize;
            let nr = m - nl;
            if nl < leaf || nr < leaf {
                continue;
            }
            let right: Vec<u32> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
            let cand = Candidate { feature: f, threshold: *v, score: Score::new(&left, &right, nl as u64, nr as u64) };
            best = better(best, Some(cand));
        }
        best
    }

    fn feature_values(&self, f: usize, idx: &[u32]) -> Vec<(u8, Vec<u32>)> {
        let col = self.col(f);
        if idx.len() >= self.histogram_min {
            let mut hist = vec![0u32; 256 * self.k];
            for &i in idx {
                hist[col[i as usize] as usize * self.k + self.y[i as usize] as usize] += 1;
            }
            hist.chunks(self.k)
                .enumerate()
                .filter(|(_, c)| c.iter().any(|&x| x > 0))
                .map(|(v, c)| (v as u8, c.to_vec()))
                .collect()
        } else {
            let mut pairs: Vec<(u8, u32)> = idx.iter().map(|&i| (col[i as usize], self.y[i as usize])).collect();
            pairs.sort_unstable();
            let mut out: Vec<(u8, Vec<u32>)> = Vec::new();
            for (v, c) in pairs {
                match out.last_mut() {
                    Some((lv, counts)) if *lv == v => counts[c as usize] += 1,
                    _ => {
                        let mut counts = vec![0; self.k];
                        counts[c as usize] = 1;
                        out.push((v, counts));
                    }
                }
            }
            out
        }
    }

    fn best_split(&self, idx: &[u32], total: &[u32]) -> Option<Candidate> {
        (0..self.n_features)
            .into_par_iter()
            .map(|f| {
                let values = self.feature_values(f, idx);
                if values.len() < 2 {
                    None
                } else {
                    self.scan(f, &values, total, idx.len())
                }
            })
            .reduce(|| None, better)
    }

    fn grow(&self, nodes: &mut Vec<Node>, idx: &mut [u32], depth: usize) -> usize {
        let mut counts = vec![0u32; self.k];
        for &i in idx.iter() {
            counts[self.y[i as usize] as usize] += 1;
        }
        let id = nodes.len();
        nodes.push(Node { prediction: majority(&counts), counts: counts.clone(), depth, split: None });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        if pure || !depth_ok || idx.len() < self.params.min_samples_split.max(2) {
            return id;
        }
        // zero-gain splits are kept: XOR-like data needs them
        let Some(c) = self.best_split(idx, &counts) else {
            return id;
        };
        let col = self.col(c.feature);
        let mut mid = 0;
        for j in 0..idx.len() {
            if col[idx[j] as usize] <= c.threshold {
                idx.swap(mid, j);
                mid += 1;
            }
        }
        let (l, r) = idx.split_at_mut(mid);
        let left = self.grow(nodes, l, depth + 1);
        let right = self.grow(nodes, r, depth + 1);
        nodes[id].split = Some(Split { feature: c.feature, threshold: c.threshold, left, right });
        id
    }
}

/// Trains a CART tree maximizing the Gini decrease. Split scores are compared
/// exactly; ties go to the lowest feature, then the lowest threshold.
pub fn train_decision_tree(
    x: &ByteMatrix,
    y: &[u32],
    n_classes: usize,
    params: &TreeParams,
) -> Result<Tree, EvalError> {
    train_with(x, y, n_classes, params, HISTOGRAM_MIN)
}

fn train_with(
    x: &ByteMatrix,
    y: &[u32],
    n_classes: usize,
    params: &TreeParams,
    histogram_min: usize,
) -> Result<Tree, EvalError> {
    let n = x.n_samples();
    if n == 0 {
        return Err(EvalError::Shape("no training samples".into()));
    }
    if y.len() != n {
        return Err(EvalError::Shape(format!("{n} samples but {} labels", y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c as usize >= n_classes) {
        return Err(EvalError::Shape(format!("label {bad} out of range for {n_classes} classes")));
    }
    let nf = x.n_features;
    let mut xt = vec![0u8; n * nf];
    for i in 0..n {
        for (f, &v) in x.row(i).iter().enumerate() {
            xt[f * n + i] = v;
        }
    }
    let b = Builder { xt, n, n_features: nf, y, k: n_classes, params: *params, histogram_min };
    let mut nodes = Vec::new();
    let mut idx: Vec<u32> = (0..n as u32).collect();
    b.grow(&mut nodes, &mut idx, 0);
    Ok(Tree { n_features: nf, n_classes, nodes })
}

impl Tree {
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.split.is_none()).count()
    }

    /// Prediction of the tree cut at `max_depth`: the walk stops at that
    /// depth and answers with the node's majority. Equals the prediction of
    /// a tree grown with that depth limit.
    pub fn predict_at_depth(&self, x: &[u8], max_depth: Option<usize>) -> Result<u32, EvalError> {
        if x.len() != self.n_features {
            return Err(EvalError::Shape(format!("expected {} features, got {}", self.n_features, x.len())));
        }
        let mut node = &self.nodes[0];
        while let Some(s) = node.split {
            if max_depth.is_some_and(|d| node.depth >= d) {
                break;
            }
            node = &self.nodes[if x[s.feature] <= s.threshold { s.left } else { s.right }];
        }
        Ok(node.prediction)
    }

    pub fn predict(&self, x: &[u8]) -> Result<u32, EvalError> {
        self.predict_at_depth(x, None)
    }

    pub fn accuracy(&self, x: &ByteMatrix, y: &[u32], max_depth: Option<usize>) -> Result<f64, EvalError> {
        if y.is_empty() {
            return Ok(0.0);
        }
        let mut hit = 0usize;
        for (i, &label) in y.iter().enumerate() {
            hit += (self.predict_at_depth(x.row(i), max_depth)? == label) as usize;
        }
        Ok(hit as f64 / y.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn fit(rows: &[Vec<u8>], y: &[u32], k: usize) -> Tree {
        train_decision_tree(&ByteMatrix::from_rows(rows).unwrap(), y, k, &TreeParams::default()).unwrap()
    }

    #[test]
    fn separable_feature_gives_one_split() {
        let rows: Vec<Vec<u8>> = (0..40u8).map(|i| vec![i * 5]).collect();
        let y: Vec<u32> = rows.iter().map(|r| (r[0] > 100) as u32).collect();
        let t = fit(&rows, &y, 2);
        assert_eq!(t.depth(), 1);
        assert_eq!(t.nodes[0].split.unwrap().threshold, 100);
        assert_eq!(t.accuracy(&ByteMatrix::from_rows(&rows).unwrap(), &y, None).unwrap(), 1.0);
    }

    #[test]
    fn single_class_is_a_root_leaf() {
        let t = fit(&[vec![1, 2], vec![3, 4], vec![5, 6]], &[1, 1, 1], 2);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(&[9, 9]).unwrap(), 1);
    }

    #[test]
    fn single_sample_is_depth_zero() {
        let t = fit(&[vec![7]], &[0], 3);
        assert_eq!(t.depth(), 0);
        assert_eq!(t.predict(&[200]).unwrap(), 0);
    }

    #[test]
    fn xor_needs_two_levels() {
        let rows = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
        let y = [0, 1, 1, 0];
        let t = fit(&rows, &y, 2);
        assert_eq!(t.depth(), 2);
        assert_eq!(t.predict(&[1, 0]).unwrap(), 1);
        for (r, &c) in rows.iter().zip(&y) {
            assert_eq!(t.predict(r).unwrap(), c);
        }
        // a depth-1 cut is no better than chance
        let x = ByteMatrix::from_rows(&rows).unwrap();
        assert_eq!(t.accuracy(&x, &y, Some(1)).unwrap(), 0.5);
    }

    /// Exhaustive depth-2 search over every feature/threshold triple.
    #[test]
    fn xor_oracle_confirms_perfect_depth_two_tree_exists() {
        let rows = [[0u8, 0], [0, 1], [1, 0], [1, 1]];
        let y = [0u32, 1, 1, 0];
        let mut found = false;
        for f0 in 0..2 {
            for f1 in 0..2 {
                for f2 in 0..2 {
                    let leaf = |pred: &dyn Fn(&[u8; 2]) -> bool| {
                        let part: Vec<u32> = rows.iter().zip(&y).filter(|(r, _)| pred(r)).map(|(_, &c)| c).collect();
                        part.iter().all(|&c| c == part[0])
                    };
                    let ok = leaf(&|r| r[f0] == 0 && r[f1] == 0)
                        && leaf(&|r| r[f0] == 0 && r[f1] == 1)
                        && leaf(&|r| r[f0] == 1 && r[f2] == 0)
                        && leaf(&|r| r[f0] == 1 && r[f2] == 1);
                    found |= ok;
                }
            }
        }
        assert!(found);
    }

    #[test]
    fn leaf_ties_go_to_lowest_class() {
        let t = fit(&[vec![5], vec![5]], &[1, 0], 2);
        assert_eq!(t.predict(&[5]).unwrap(), 0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let t = fit(&[vec![1, 2]], &[0], 1);
        assert!(matches!(t.predict(&[1]), Err(EvalError::Shape(_))));
    }

    #[test]
    fn histogram_and_sorted_paths_agree() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<u8>> = (0..600).map(|_| (0..6).map(|_| rng.gen_range(0..20)).collect()).collect();
        let y: Vec<u32> = rows.iter().map(|r| ((r[1] as u32 + r[4] as u32) / 10) % 3).collect();
        let x = ByteMatrix::from_rows(&rows).unwrap();
        let p = TreeParams::default();
        let hist = train_with(&x, &y, 3, &p, 0).unwrap();
        let sorted = train_with(&x, &y, 3, &p, usize::MAX).unwrap();
        assert_eq!(hist, sorted);
        assert_eq!(hist.accuracy(&x, &y, None).unwrap(), 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn unbounded_tree_fits_consistent_data(
            rows in proptest::collection::vec(proptest::collection::vec(0u8..4, 3), 1..60),
            seed in 0u32..1000,
        ) {
            // labels as a function of the row keep the data consistent
            let y: Vec<u32> = rows.iter().map(|r| (r.iter().map(|&v| v as u32).sum::<u32>() * 7 + seed) % 3).collect();
            let t = fit(&rows, &y, 3);
            let x = ByteMatrix::from_rows(&rows).unwrap();
            prop_assert_eq!(t.accuracy(&x, &y, None).unwrap(), 1.0);
        }

        #[test]
        fn truncation_matches_depth_limited_training(
            rows in proptest::collection::vec(proptest::collection::vec(0u8..6, 4), 2..80),
            depth in 0usize..4,
        ) {
            let y: Vec<u32> = rows.iter().map(|r| ((r[0] ^ r[2]) as u32 + r[3] as u32 / 3) % 3).collect();
            let x = ByteMatrix::from_rows(&rows).unwrap();
            let full = train_decision_tree(&x, &y, 3, &TreeParams::default()).unwrap();
            let limited =
                train_decision_tree(&x, &y, 3, &TreeParams { max_depth: Some(depth), ..Default::default() }).unwrap();
            for r in &rows {
                prop_assert_eq!(full.predict_at_depth(r, Some(depth)).unwrap(), limited.predict(r).unwrap());
            }
        }
    }
}
