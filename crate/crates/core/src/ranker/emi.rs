use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::info::{entropy, mutual_information, ContingencyTable};
use super::RankError;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmiSettings {
    /// Tables with `r·c·N` above this use the Monte-Carlo estimate.
    pub cost_bound: f64,
    pub permutations: usize,
    pub seed: u64,
}

impl Default for EmiSettings {
    fn default() -> Self {
        Self { cost_bound: 1e10, permutations: 10_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmiMethod {
    Exact,
    MonteCarlo,
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n + 1);
    t.push(0.0);
    let mut acc = 0.0f64;
    for k in 1..=n {
        acc += (k as f64).ln();
        t.push(acc);
    }
    t
}

/// Expected mutual information under the permutation model with fixed
/// margins, via the hypergeometric triple sum.
pub fn expected_mi(row_margins: &[u64], col_margins: &[u64]) -> Result<f64, RankError> {
    let n: u64 = row_margins.iter().sum();
    if n == 0 || col_margins.iter().sum::<u64>() != n {
        return Err(RankError::Domain("margins must share a positive total".into()));
    }
    let lf = ln_factorials(n as usize);
    let nf = n as f64;
    let ln_n = nf.ln();
    let mut emi = 0.0;
    for &a in row_margins.iter().filter(|&&a| a > 0) {
        for &b in col_margins.iter().filter(|&&b| b > 0) {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            let fixed = lf[a as usize] + lf[b as usize] + lf[(n - a) as usize] + lf[(n - b) as usize]
                - lf[n as usize];
            let ln_ab = (a as f64).ln() + (b as f64).ln();
            for k in lo..=hi {
                let ln_p = fixed
                    - lf[k as usize]
                    - lf[(a - k) as usize]
                    - lf[(b - k) as usize]
                    - lf[(n + k - a - b) as usize];
                let kf = k as f64;
                emi += kf / nf * (ln_n + kf.ln() - ln_ab) * ln_p.exp();
            }
        }
    }
    Ok(emi)
}

/// Mean MI over seeded random permutations of `y` against fixed `x`.
pub fn expected_mi_monte_carlo(
    x: &[u32],
    nx: usize,
    y: &[u32],
    ny: usize,
    permutations: usize,
    seed: u64,
) -> Result<f64, RankError> {
    let mut rng = rng::stream(seed, 0x0045_4d49);
    let mut shuffled = y.to_vec();
    let mut total = 0.0;
    for _ in 0..permutations.max(1) {
        shuffled.shuffle(&mut rng);
        total += mutual_information(&ContingencyTable::from_codes(x, nx, &shuffled, ny)?)?;
    }
    Ok(total / permutations.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmiScore {
    pub entropy_x: f64,
    pub entropy_y: f64,
    pub mi: f64,
    pub expected_mi: f64,
    pub ami: f64,
    pub method: EmiMethod,
    /// Either partition has a single block; `ami` is 0 by convention.
    pub constant: bool,
}

const GUARD: f64 = 1e-12;

/// `(mi − emi) / (max(Hx, Hy) − emi)` with a guarded denominator.
pub fn ami_from_parts(mi: f64, emi: f64, hx: f64, hy: f64) -> f64 {
    let num = mi - emi;
    let den = hx.max(hy) - emi;
    if den.abs() <= GUARD {
        if num.abs() <= GUARD {
            1.0
        } else {
            num / if den < 0.0 { -GUARD } else { GUARD }
        }
    } else {
        num / den
    }
}

/// AMI of two code vectors (`x` codes below `nx`, `y` codes below `ny`).
pub fn adjusted_mi_codes(
    x: &[u32],
    nx: usize,
    y: &[u32],
    ny: usize,
    settings: &EmiSettings,
) -> Result<AmiScore, RankError> {
    if x.is_empty() {
        return Err(RankError::Domain("adjusted mutual information of empty vectors".into()));
    }
    let table = ContingencyTable::from_codes(x, nx, y, ny)?;
    let a = table.row_margins();
    let b = table.col_margins();
    let hx = entropy(&a)?;
    let hy = entropy(&b)?;
    let constant = a.iter().filter(|&&v| v > 0).count() < 2 || b.iter().filter(|&&v| v > 0).count() < 2;
    if constant {
        return Ok(AmiScore {
            entropy_x: hx,
            entropy_y: hy,
            mi: 0.0,
            expected_mi: 0.0,
            ami: 0.0,
            method: EmiMethod::Exact,
            constant,
        });
    }
    let mi = mutual_information(&table)?;
    let nonempty_r = a.iter().filter(|&&v| v > 0).count() as f64;
    let nonempty_c = b.iter().filter(|&&v| v > 0).count() as f64;
    let cost = nonempty_r * nonempty_c * x.len() as f64;
    let (emi, method) = if cost > settings.cost_bound {
        (
            expected_mi_monte_carlo(x, nx, y, ny, settings.permutations, settings.seed)?,
            EmiMethod::MonteCarlo,
        )
    } else {
        (expected_mi(&a, &b)?, EmiMethod::Exact)
    };
    Ok(AmiScore {
        entropy_x: hx,
        entropy_y: hy,
        mi,
        expected_mi: emi,
        ami: ami_from_parts(mi, emi, hx, hy),
        method,
        constant,
    })
}

fn compact(v: &[u32]) -> (Vec<u32>, usize) {
    let mut distinct: Vec<u32> = v.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let codes = v.iter().map(|c| distinct.binary_search(c).unwrap() as u32).collect();
    (codes, distinct.len())
}

/// AMI of two arbitrary integer labelings.
pub fn adjusted_mi(x: &[u32], y: &[u32]) -> Result<AmiScore, RankError> {
    if x.len() != y.len() {
        return Err(RankError::Domain(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    let (xc, nx) = compact(x);
    let (yc, ny) = compact(y);
    adjusted_mi_codes(&xc, nx, &yc, ny, &EmiSettings::default())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;

    /// Average MI over every permutation of `y`, enumerated literally.
    fn permutation_oracle(x: &[u32], y: &[u32]) -> f64 {
        fn heap(k: usize, y: &mut Vec<u32>, x: &[u32], acc: &mut (f64, u64)) {
            if k == 1 {
                let nx = *x.iter().max().unwrap() as usize + 1;
                let ny = *y.iter().max().unwrap() as usize + 1;
                acc.0 += mutual_information(&ContingencyTable::from_codes(x, nx, y, ny).unwrap()).unwrap();
                acc.1 += 1;
                return;
            }
            for i in 0..k {
                heap(k - 1, y, x, acc);
                let j = if k % 2 == 0 { i } else { 0 };
                y.swap(j, k - 1);
            }
        }
        let mut acc = (0.0, 0);
        heap(y.len(), &mut y.to_vec(), x, &mut acc);
        acc.0 / acc.1 as f64
    }

    #[test]
    fn constant_margin_has_zero_expectation() {
        assert_eq!(expected_mi(&[6], &[2, 4]).unwrap(), 0.0);
    }

    #[test]
    fn two_singletons_expect_ln2() {
        let got = expected_mi(&[1, 1], &[1, 1]).unwrap();
        assert!((got - permutation_oracle(&[0, 1], &[0, 1])).abs() < 1e-12);
        assert!((got - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn balanced_2x2_matches_all_24_permutations() {
        let got = expected_mi(&[2, 2], &[2, 2]).unwrap();
        let oracle = permutation_oracle(&[0, 0, 1, 1], &[0, 0, 1, 1]);
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn small_tables_match_literal_permutations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let n = rng.gen_range(2..=8);
            let x: Vec<u32> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let y: Vec<u32> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let (xc, _) = compact(&x);
            let (yc, _) = compact(&y);
            let nx = *xc.iter().max().unwrap() as usize + 1;
            let ny = *yc.iter().max().unwrap() as usize + 1;
            let t = ContingencyTable::from_codes(&xc, nx, &yc, ny).unwrap();
            let got = expected_mi(&t.row_margins(), &t.col_margins()).unwrap();
            assert!((got - permutation_oracle(&xc, &yc)).abs() < 1e-12);
        }
    }

    #[test]
    fn inconsistent_margins_are_rejected() {
        assert!(expected_mi(&[2, 2], &[3]).is_err());
    }

    #[test]
    fn identical_partitions_score_one() {
        let y: Vec<u32> = (0..40).map(|i| i % 4).collect();
        let s = adjusted_mi(&y, &y).unwrap();
        assert!((s.ami - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_scores_zero() {
        let y: Vec<u32> = (0..40).map(|i| i % 4).collect();
        let s = adjusted_mi(&[3; 40], &y).unwrap();
        assert_eq!(s.ami, 0.0);
        assert!(s.constant);
    }

    #[test]
    fn independent_binaries_average_near_zero() {
        let mut total = 0.0;
        for seed in 0..20 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<u32> = (0..100).map(|_| rng.gen_range(0..2)).collect();
            let mut y: Vec<u32> = (0..100).map(|i| i % 2).collect();
            y.shuffle(&mut rng);
            total += adjusted_mi(&x, &y).unwrap().ami;
        }
        assert!((total / 20.0).abs() <= 0.05);
    }

    #[test]
    fn monte_carlo_tracks_exact_value() {
        let x: Vec<u32> = (0..60).map(|i| i % 5).collect();
        let y: Vec<u32> = (0..60).map(|i| (i / 7) % 3).collect();
        let exact = adjusted_mi_codes(&x, 5, &y, 3, &EmiSettings::default()).unwrap();
        let mc = adjusted_mi_codes(&x, 5, &y, 3, &EmiSettings { cost_bound: 0.0, permutations: 4000, seed: 1 })
            .unwrap();
        assert_eq!(mc.method, EmiMethod::MonteCarlo);
        assert!((exact.expected_mi - mc.expected_mi).abs() < 0.01);
    }

    #[test]
    fn saturated_tiny_table_uses_guard() {
        let s = adjusted_mi(&[0, 1], &[0, 1]).unwrap();
        assert_eq!(s.ami, 1.0);
    }
}
