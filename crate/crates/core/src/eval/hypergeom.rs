//! Chance baseline for shortlist hits: hypergeometric probabilities.

use crate::error::{DasError, Result};

/// Largest integer every f64 represents exactly.
const EXACT_LIMIT: u128 = 1 << 53;

fn exact_binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
        if acc > EXACT_LIMIT {
            return None;
        }
    }
    Some(acc)
}

/// `ln C(n, k)` via log-gamma; negative infinity when `k > n`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let lg = |x: u64| libm::lgamma(x as f64 + 1.0);
    lg(n) - lg(k) - lg(n - k)
}

fn check_population(n: u64, m: u64, k: u64) -> Result<()> {
    if m > n {
        return Err(DasError::Domain(format!(
            "same-author count {m} exceeds pool size {n}"
        )));
    }
    if k > n {
        return Err(DasError::Domain(format!(
            "cutoff {k} exceeds pool size {n}"
        )));
    }
    Ok(())
}

/// Probability that a uniform sample of `k` out of `n` documents contains
/// exactly `s` of the `m` relevant ones.
pub fn hypergeom_pmf(n: u64, m: u64, k: u64, s: u64) -> Result<f64> {
    check_population(n, m, k)?;
    if s > m.min(k) {
        return Err(DasError::Domain(format!(
            "s = {s} exceeds min(m, k) = {}",
            m.min(k)
        )));
    }
    if k - s > n - m {
        return Ok(0.0);
    }
    if let (Some(a), Some(b), Some(total)) = (
        exact_binomial(m, s),
        exact_binomial(n - m, k - s),
        exact_binomial(n, k),
    ) {
        if let Some(num) = a.checked_mul(b).filter(|&x| x <= EXACT_LIMIT) {
            return Ok(num as f64 / total as f64);
        }
    }
    // C(k,s) * prod_{i<s} (m-i)/(n-i) * prod_{j<k-s} (1 - (m-s)/(n-s-j))
    let ln_choose_k = match exact_binomial(k, s) {
        Some(c) => (c as f64).ln(),
        None => ln_binomial(k, s),
    };
    let hits: f64 = (0..s).map(|i| ((m - i) as f64 / (n - i) as f64).ln()).sum();
    let misses: f64 = (0..k - s)
        .map(|j| (-((m - s) as f64) / (n - s - j) as f64).ln_1p())
        .sum();
    Ok((ln_choose_k + hits + misses).exp())
}

/// Chance that `k` uniformly drawn documents out of `n` include at least one
/// of the `m` relevant ones: `1 - C(n-m, k) / C(n, k)`.
///
/// Small cases are evaluated as an exact integer ratio; larger ones as
/// `-expm1(sum ln(1 - m/(n-i)))`, which stays accurate at `n` around 1e5.
pub fn random_baseline(n: u64, m: u64, k: u64) -> Result<f64> {
    check_population(n, m, k)?;
    if k == 0 {
        return Err(DasError::Domain("cutoff k must be at least 1".into()));
    }
    if m == 0 {
        return Ok(0.0);
    }
    if k > n - m {
        return Ok(1.0);
    }
    if let (Some(miss), Some(total)) = (exact_binomial(n - m, k), exact_binomial(n, k)) {
        return Ok((total - miss) as f64 / total as f64);
    }
    let log_miss: f64 = (0..k).map(|i| (-(m as f64) / (n - i) as f64).ln_1p()).sum();
    Ok(-log_miss.exp_m1())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_small_values() {
        // enumerate all 45 pairs from 10 with 3 marked: 21 contain exactly one
        assert_eq!(hypergeom_pmf(10, 3, 2, 1).unwrap(), 21.0 / 45.0);
        assert_eq!(random_baseline(10, 3, 2).unwrap(), 24.0 / 45.0);
    }

    #[test]
    fn degenerate_cases_are_exact() {
        assert_eq!(random_baseline(44_770, 0, 20).unwrap(), 0.0);
        assert_eq!(random_baseline(50, 1, 50).unwrap(), 1.0);
        assert_eq!(random_baseline(50, 3, 48).unwrap(), 1.0);
    }

    #[test]
    fn pmf_normalises() {
        let total: f64 = (0..=7).map(|s| hypergeom_pmf(100, 7, 10, s).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
    }

    #[test]
    fn pmf_zero_complements_baseline() {
        for (n, m, k) in [(100, 7, 10), (44_770, 4, 20), (5_000, 9, 20)] {
            let p0 = hypergeom_pmf(n, m, k, 0).unwrap();
            let rb = random_baseline(n, m, k).unwrap();
            assert!((p0 + rb - 1.0).abs() < 1e-12, "{n} {m} {k}");
        }
    }

    #[test]
    fn large_pool_matches_exact_rational() {
        // 1 - C(44766,20)/C(44770,20), evaluated exactly with big integers
        let rb = random_baseline(44_770, 4, 20).unwrap();
        assert!((rb - 0.0017857736330654918).abs() < 1e-15, "{rb}");
        let rb3 = random_baseline(44_770, 3, 20).unwrap();
        assert!((rb3 - 0.0013396144597725627).abs() < 1e-15, "{rb3}");
    }

    #[test]
    fn domain_errors() {
        assert!(random_baseline(10, 11, 2).is_err());
        assert!(random_baseline(10, 2, 11).is_err());
        assert!(random_baseline(10, 2, 0).is_err());
        assert!(hypergeom_pmf(10, 2, 3, 3).is_err());
    }

    #[test]
    fn ln_binomial_agrees_with_exact() {
        assert!((ln_binomial(30, 12) - (86_493_225f64).ln()).abs() < 1e-10);
        assert_eq!(ln_binomial(3, 5), f64::NEG_INFINITY);
    }
}
