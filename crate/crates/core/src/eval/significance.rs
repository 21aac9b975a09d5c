//! Paired sign-flip permutation test on per-query score differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EvalError;

pub const DEFAULT_RESAMPLES: usize = 10_000;

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

fn at_least(candidate: f64, observed: f64) -> bool {
    candidate.abs() >= observed.abs() - 1e-9 * (1.0 + observed.abs())
}

/// Two-sided Monte Carlo p-value `(1 + hits) / (resamples + 1)`, where a hit
/// is a random sign assignment whose summed difference is at least as far
/// from zero as the observed one. A single query yields 1.
pub fn sign_flip_test(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<f64, EvalError> {
    let d = differences(a, b)?;
    if d.len() < 2 {
        return Ok(1.0);
    }
    let observed: f64 = d.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..resamples {
        let s: f64 = d.iter().map(|x| if rng.random::<bool>() { *x } else { -*x }).sum();
        if at_least(s, observed) {
            hits += 1;
        }
    }
    Ok((1 + hits) as f64 / (resamples + 1) as f64)
}

/// Exact p-value over all `2^n` sign assignments; `n` must be at most 24.
pub fn sign_flip_exact(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    let d = differences(a, b)?;
    assert!(d.len() <= 24, "exhaustive sign flips limited to 24 queries");
    if d.len() < 2 {
        return Ok(1.0);
    }
    let observed: f64 = d.iter().sum();
    let total = 1usize << d.len();
    let hits = (0..total)
        .filter(|mask| {
            let s: f64 = d.iter().enumerate().map(|(i, x)| if mask >> i & 1 == 1 { -*x } else { *x }).sum();
            at_least(s, observed)
        })
        .count();
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_cases() {
        assert_eq!(sign_flip_test(&[0.3, 0.5, 0.1], &[0.3, 0.5, 0.1], 500, 1).unwrap(), 1.0);
        assert_eq!(sign_flip_test(&[1.0], &[0.0], 500, 1).unwrap(), 1.0);
        assert!(matches!(sign_flip_test(&[1.0], &[0.0, 1.0], 10, 1), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(sign_flip_test(&[], &[], 10, 1), Err(EvalError::Empty)));
    }

    #[test]
    fn constant_shift_is_significant() {
        let b: Vec<f64> = (0..50).map(|i| (i % 7) as f64 / 7.0).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 1.0).collect();
        let p = sign_flip_test(&a, &b, DEFAULT_RESAMPLES, 3).unwrap();
        assert!(p < 0.01);
        assert_eq!(p, 1.0 / 10_001.0);
    }

    #[test]
    fn monte_carlo_tracks_exact_value() {
        let a = [0.9, 0.2, 0.6, 0.4, 0.8, 0.5, 0.7, 0.1];
        let b = [0.5, 0.3, 0.2, 0.4, 0.6, 0.1, 0.9, 0.0];
        let exact = sign_flip_exact(&a, &b).unwrap();
        let mc = sign_flip_test(&a, &b, 20_000, 9).unwrap();
        // binomial standard error at 20k draws is below 0.004
        assert!((exact - mc).abs() < 0.015, "exact {exact} mc {mc}");
        assert_eq!(sign_flip_test(&a, &b, 2000, 4).unwrap(), sign_flip_test(&a, &b, 2000, 4).unwrap());
    }
}
