use super::kde::trapezoid;
use super::ValidateError;

pub const KL_FLOOR: f64 = 1e-10;

/// `∫ p ln(p / q)` by the trapezoid rule. `q` is floored at 1e-10, points
/// where `p` is below the floor contribute nothing, and the result is
/// clamped at zero.
pub fn kl_divergence(p: &[f64], q: &[f64], grid: &[f64]) -> Result<f64, ValidateError> {
    if p.len() != grid.len() || q.len() != grid.len() {
        return Err(ValidateError::Invalid(format!(
            "grid mismatch: p {}, q {}, grid {}",
            p.len(),
            q.len(),
            grid.len()
        )));
    }
    let f: Vec<f64> = p
        .iter()
        .zip(q)
        .map(|(&p, &q)| if p < KL_FLOOR { 0.0 } else { p * (p / q.max(KL_FLOOR)).ln() })
        .collect();
    Ok(trapezoid(grid, &f).max(0.0))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    use super::super::kde::{kde_density, uniform_grid};
    use super::*;

    #[test]
    fn identical_densities_have_zero_divergence() {
        let grid = uniform_grid(-1.0, 1.0, 5);
        let p = [0.1, 0.4, 0.6, 0.4, 0.1];
        assert!(kl_divergence(&p, &p, &grid).unwrap().abs() < 1e-9);
    }

    #[test]
    fn unit_shift_of_a_normal_is_one_half() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a: Vec<f64> = (0..10_000).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
        let b: Vec<f64> = (0..10_000).map(|_| Normal::new(1.0, 1.0).unwrap().sample(&mut rng)).collect();
        let grid = uniform_grid(-6.0, 7.0, 512);
        let p = kde_density(&a, &grid, None).unwrap();
        let q = kde_density(&b, &grid, None).unwrap();
        // closed form for equal variances: (μ1 − μ2)² / 2σ² = 0.5
        let kl = kl_divergence(&p.values, &q.values, &grid).unwrap();
        assert!((kl - 0.5).abs() <= 0.1, "{kl}");
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(kl_divergence(&[1.0], &[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn never_negative() {
        let grid = uniform_grid(0.0, 1.0, 3);
        assert!(kl_divergence(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &grid).unwrap() >= 0.0);
    }
}
