use serde::{Deserialize, Serialize};

use super::ValidateError;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule, `0.9 · min(sd, IQR/1.34) · n^(-1/5)`; falls back to the
/// standard deviation when the IQR is zero. Zero for zero-spread samples.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 || samples.iter().all(|&x| x == samples[0]) {
        return 0.0;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (n as f64).powf(-0.2)
}

/// Trapezoid-rule integral of `f` over `grid`.
pub fn trapezoid(grid: &[f64], f: &[f64]) -> f64 {
    grid.windows(2).zip(f.windows(2)).map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0).sum()
}

pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    pub values: Vec<f64>,
    pub bandwidth: f64,
    /// Zero-spread input: all mass sits on the grid point nearest the value.
    pub degenerate: bool,
}

/// Gaussian KDE evaluated on `grid` and renormalized to unit trapezoid mass.
/// `bandwidth = None` selects Silverman's rule.
pub fn kde_density(samples: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<Density, ValidateError> {
    if samples.is_empty() {
        return Err(ValidateError::Invalid("density of an empty sample".into()));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ValidateError::Invalid("grid must be strictly increasing with ≥ 2 points".into()));
    }
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    if !(h > 0.0) {
        let v = samples[0];
        let i = grid.partition_point(|&g| g < v).min(grid.len() - 1);
        let i = if i > 0 && (v - grid[i - 1]).abs() < (grid[i] - v).abs() { i - 1 } else { i };
        let mut values = vec![0.0; grid.len()];
        values[i] = 1.0;
        let mass = trapezoid(grid, &values);
        values[i] /= mass;
        return Ok(Density { values, bandwidth: 0.0, degenerate: true });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let reach = 8.0 * h;
    let norm = INV_SQRT_2PI / (h * sorted.len() as f64);
    let mut values: Vec<f64> = grid
        .iter()
        .map(|&g| {
            let lo = sorted.partition_point(|&x| x < g - reach);
            let hi = sorted.partition_point(|&x| x <= g + reach);
            sorted[lo..hi].iter().map(|&x| (-0.5 * ((g - x) / h).powi(2)).exp()).sum::<f64>() * norm
        })
        .collect();
    let mass = trapezoid(grid, &values);
    if mass > 0.0 {
        values.iter_mut().for_each(|v| *v /= mass);
    }
    Ok(Density { values, bandwidth: h, degenerate: false })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    #[test]
    fn standard_normal_peak() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let s: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let grid = uniform_grid(-6.0, 6.0, 513);
        let d = kde_density(&s, &grid, None).unwrap();
        // analytic pdf at 0 is 1/sqrt(2π)
        let at0 = d.values[256];
        assert!((at0 - INV_SQRT_2PI).abs() <= 0.15 * INV_SQRT_2PI, "{at0}");
        assert!((trapezoid(&grid, &d.values) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_spread_is_a_flagged_spike() {
        let grid = uniform_grid(0.0, 10.0, 11);
        let d = kde_density(&[4.2; 50], &grid, None).unwrap();
        assert!(d.degenerate);
        assert!(d.values[4] > 0.0);
        assert!((trapezoid(&grid, &d.values) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn silverman_uses_sd_when_iqr_vanishes() {
        let mut s = vec![0.0; 90];
        s.extend([10.0; 10]);
        assert!(silverman_bandwidth(&s) > 0.0);
    }
}
