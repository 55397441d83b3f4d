use serde::{Deserialize, Serialize};

use crate::encode::{Column, ColumnValues};

pub const DEFAULT_BINS: usize = 256;

/// Codes for one column. Invalid cells share the extra code `n_codes - 1`
/// when `has_missing` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codes {
    pub codes: Vec<u32>,
    pub n_codes: usize,
    pub discretized: bool,
    pub has_missing: bool,
}

fn quantile_edges<T: Copy + PartialOrd>(sorted: &[T], bins: usize) -> Vec<T> {
    let n = sorted.len();
    let mut edges: Vec<T> = (1..bins).map(|k| sorted[k * n / bins]).collect();
    edges.dedup_by(|a, b| a == b);
    edges
}

/// Order-preserving codes for integers: identity codebook when at most
/// `bins` distinct values, otherwise quantile bins with merged edges.
pub fn discretize_ints(values: &[i64], bins: usize) -> (Vec<u32>, usize, bool) {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= bins {
        let codes = values.iter().map(|v| distinct.binary_search(v).unwrap() as u32).collect();
        return (codes, distinct.len().max(1), false);
    }
    let edges = quantile_edges(&sorted, bins);
    let codes = values.iter().map(|v| edges.partition_point(|e| e <= v) as u32).collect();
    (codes, edges.len() + 1, true)
}

/// Quantile bins for floats (always binned). Fewer than `bins` codes result
/// when quantile edges coincide.
pub fn discretize_floats(values: &[f64], bins: usize) -> (Vec<u32>, usize, bool) {
    if values.is_empty() {
        return (Vec::new(), 1, true);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let edges = quantile_edges(&sorted, bins.max(1));
    let codes = values.iter().map(|v| edges.partition_point(|e| e <= v) as u32).collect();
    (codes, edges.len() + 1, true)
}

/// Codes every row of a column; invalid rows form their own category.
pub fn column_codes(column: &Column, bins: usize) -> Codes {
    let rows: Vec<usize> = (0..column.len()).filter(|&r| column.valid[r]).collect();
    let (valid_codes, n_valid_codes, discretized) = match &column.values {
        ColumnValues::Int(v) => discretize_ints(&rows.iter().map(|&r| v[r]).collect::<Vec<_>>(), bins),
        ColumnValues::Float(v) => discretize_floats(&rows.iter().map(|&r| v[r]).collect::<Vec<_>>(), bins),
    };
    let has_missing = rows.len() < column.len();
    let missing = n_valid_codes as u32;
    let mut codes = vec![missing; column.len()];
    for (&r, &c) in rows.iter().zip(&valid_codes) {
        codes[r] = c;
    }
    Codes { codes, n_codes: n_valid_codes + has_missing as usize, discretized, has_missing }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;

    #[test]
    fn few_distinct_values_keep_identity_order() {
        let (codes, n, binned) = discretize_ints(&[9, 1, 5, 1], DEFAULT_BINS);
        assert_eq!(codes, vec![2, 0, 1, 0]);
        assert_eq!(n, 3);
        assert!(!binned);
    }

    #[test]
    fn constant_vector_is_one_code() {
        let (codes, n, _) = discretize_ints(&[4; 10], DEFAULT_BINS);
        assert_eq!(codes, vec![0; 10]);
        assert_eq!(n, 1);
    }

    #[test]
    fn uniform_floats_fill_bins_evenly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>()).collect();
        let (codes, n, _) = discretize_floats(&v, 256);
        assert_eq!(n, 256);
        let mut counts = vec![0usize; n];
        for c in codes {
            counts[c as usize] += 1;
        }
        let expect = 10_000.0 / 256.0;
        assert!(counts.iter().all(|&c| (c as f64 - expect).abs() <= 0.2 * expect));
    }

    #[test]
    fn many_ints_are_binned_in_order() {
        let v: Vec<i64> = (0..1000).rev().collect();
        let (codes, n, binned) = discretize_ints(&v, 10);
        assert!(binned);
        assert_eq!(n, 10);
        assert_eq!(codes[0], 9);
        assert_eq!(codes[999], 0);
    }

    #[test]
    fn heavy_ties_merge_edges() {
        let mut v = vec![0.0; 900];
        v.extend((0..100).map(|i| i as f64));
        let (_, n, _) = discretize_floats(&v, 10);
        assert_eq!(n, 2);
    }
}
