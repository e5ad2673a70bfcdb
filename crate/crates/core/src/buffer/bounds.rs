//! Monte-Carlo checks of the without-replacement concentration bounds that
//! justify drawing only `r` candidates per sample.

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// `√((1/r − 1/n)·ln(2/δ))`
pub fn mean_bound_rhs(n: usize, r: usize, delta: f64) -> f64 {
    ((1.0 / r as f64 - 1.0 / n as f64).max(0.0) * (2.0 / delta).ln()).sqrt()
}

/// `√(ln(3/δ) / (2r))`
pub fn std_bound_rhs(r: usize, delta: f64) -> f64 {
    ((3.0 / delta).ln() / (2.0 * r as f64)).sqrt()
}

fn check(population: &[f64], r: usize, delta: f64) -> Result<()> {
    let n = population.len();
    if r == 0 || r > n {
        return Err(Error::InvalidInput(format!("sample size r={r} outside 1..={n}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("delta={delta} outside (0, 1)")));
    }
    if population.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("population values must lie in [0, 1]".into()));
    }
    Ok(())
}

// Both statistics are computed over ascending-sorted values so that a draw of
// the whole population reproduces the population statistic bit for bit.

fn mean(sorted: &[f64]) -> f64 {
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

fn std_dev(sorted: &[f64]) -> f64 {
    let m = mean(sorted);
    (sorted.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / sorted.len() as f64).sqrt()
}

fn violation_rate(
    population: &[f64],
    r: usize,
    trials: usize,
    seed: u64,
    statistic: fn(&[f64]) -> f64,
    rhs: f64,
) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let mut sorted = population.to_vec();
    sorted.sort_by(f64::total_cmp);
    let target = statistic(&sorted);
    let violations: usize = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, stream::TRIAL, t as u64);
            let mut draw: Vec<f64> = index::sample(&mut rng, population.len(), r)
                .into_iter()
                .map(|i| population[i])
                .collect();
            draw.sort_by(f64::total_cmp);
            usize::from((statistic(&draw) - target).abs() > rhs)
        })
        .sum();
    violations as f64 / trials as f64
}

/// Fraction of `trials` size-`r` draws whose mean misses the population mean
/// by more than [`mean_bound_rhs`].
pub fn verify_mean_bound(population: &[f64], r: usize, delta: f64, trials: usize, seed: u64) -> Result<f64> {
    check(population, r, delta)?;
    let rhs = mean_bound_rhs(population.len(), r, delta);
    Ok(violation_rate(population, r, trials, seed, mean, rhs))
}

/// Fraction of `trials` size-`r` draws whose standard deviation misses the
/// population standard deviation by more than [`std_bound_rhs`]. The
/// corresponding bound holds with probability `1 − 2δ`.
pub fn verify_std_bound(population: &[f64], r: usize, delta: f64, trials: usize, seed: u64) -> Result<f64> {
    check(population, r, delta)?;
    let rhs = std_bound_rhs(r, delta);
    Ok(violation_rate(population, r, trials, seed, std_dev, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn uniform(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, 1, 0);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn full_draw_never_violates() {
        let pop = uniform(500, 3);
        assert_eq!(verify_mean_bound(&pop, 500, 0.05, 50, 1).unwrap(), 0.0);
        assert_eq!(verify_std_bound(&pop, 500, 0.05, 50, 1).unwrap(), 0.0);
    }

    #[test]
    fn constant_population_never_violates() {
        let pop = vec![0.3; 200];
        assert_eq!(verify_mean_bound(&pop, 10, 0.05, 200, 2).unwrap(), 0.0);
        assert_eq!(verify_std_bound(&pop, 10, 0.05, 200, 2).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let pop = uniform(10, 0);
        assert!(verify_mean_bound(&pop, 0, 0.05, 1, 0).is_err());
        assert!(verify_mean_bound(&pop, 11, 0.05, 1, 0).is_err());
        assert!(verify_std_bound(&pop, 5, 1.0, 1, 0).is_err());
        assert!(verify_mean_bound(&[1.5], 1, 0.5, 1, 0).is_err());
    }

    #[test]
    fn rhs_values() {
        assert_eq!(mean_bound_rhs(100, 100, 0.05), 0.0);
        let expected = ((0.01f64 - 0.0001) * 40f64.ln()).sqrt();
        assert!((mean_bound_rhs(10_000, 100, 0.05) - expected).abs() < 1e-15);
        assert!((std_bound_rhs(400, 0.05) - (60f64.ln() / 800.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn uniform_population_meets_delta() {
        let pop = uniform(10_000, 5);
        assert!(verify_mean_bound(&pop, 100, 0.05, 2000, 6).unwrap() <= 0.05);
        assert!(verify_std_bound(&pop, 400, 0.05, 2000, 6).unwrap() <= 0.10);
    }
}
