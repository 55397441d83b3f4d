use serde::{Deserialize, Serialize};

use super::RankError;

/// Dense r×c table of co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
}

impl ContingencyTable {
    pub fn from_counts(counts: &[Vec<u64>]) -> Result<Self, RankError> {
        let rows = counts.len();
        let cols = counts.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || counts.iter().any(|r| r.len() != cols) {
            return Err(RankError::Domain("table must be a non-empty rectangle".into()));
        }
        Ok(Self { rows, cols, counts: counts.concat() })
    }

    /// Cross-tabulates two code vectors; codes must be below `nx` and `ny`.
    pub fn from_codes(x: &[u32], nx: usize, y: &[u32], ny: usize) -> Result<Self, RankError> {
        if x.len() != y.len() {
            return Err(RankError::Domain(format!("length mismatch: {} vs {}", x.len(), y.len())));
        }
        let mut counts = vec![0u64; nx * ny];
        for (&a, &b) in x.iter().zip(y) {
            counts[a as usize * ny + b as usize] += 1;
        }
        Ok(Self { rows: nx, cols: ny, counts })
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.cols + j]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_margins(&self) -> Vec<u64> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| self.get(i, j)).sum()).collect()
    }

    pub fn col_margins(&self) -> Vec<u64> {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self.get(i, j)).sum()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Shannon entropy in nats. Zero counts contribute nothing.
pub fn entropy(counts: &[u64]) -> Result<f64, RankError> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(RankError::Domain("entropy of an all-zero vector".into()));
    }
    let n = n as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0))
}

pub fn mutual_information(table: &ContingencyTable) -> Result<f64, RankError> {
    let n = table.total();
    if n == 0 {
        return Err(RankError::Domain("mutual information of an empty table".into()));
    }
    let a = table.row_margins();
    let b = table.col_margins();
    let n = n as f64;
    let mut mi = 0.0;
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            let nij = table.get(i, j);
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (ai as f64 * bj as f64)).ln();
            }
        }
    }
    Ok(mi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[5, 5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(entropy(&[7]).unwrap(), 0.0);
        // ln 6 - (2 ln 2 + 3 ln 3) / 6
        let oracle = 6f64.ln() - (2.0 * 2f64.ln() + 3.0 * 3f64.ln()) / 6.0;
        assert!((entropy(&[1, 2, 3]).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 1.011404).abs() < 5e-7);
        assert!(entropy(&[0, 0]).is_err());
    }

    #[test]
    fn mutual_information_examples() {
        let t = |c: &[Vec<u64>]| mutual_information(&ContingencyTable::from_counts(c).unwrap()).unwrap();
        assert!((t(&[vec![5, 0], vec![0, 5]]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(t(&[vec![4, 4], vec![4, 4]]).abs() < 1e-12);
        // four cells: 2 × (2/6) ln(4/3) + 2 × (1/6) ln(2/3)
        let oracle = 2.0 * (2.0 / 6.0) * (4.0f64 / 3.0).ln() + 2.0 * (1.0 / 6.0) * (2.0f64 / 3.0).ln();
        let got = t(&[vec![2, 1], vec![1, 2]]);
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.056633).abs() < 5e-7);
    }

    #[test]
    fn from_codes_cross_tabulates() {
        let t = ContingencyTable::from_codes(&[0, 0, 1, 2], 3, &[1, 1, 0, 0], 2).unwrap();
        assert_eq!(t.get(0, 1), 2);
        assert_eq!(t.row_margins(), vec![2, 1, 1]);
        assert_eq!(t.col_margins(), vec![2, 2]);
        assert_eq!(t.total(), 4);
    }
}
