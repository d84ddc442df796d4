//! Jaccard similarity and the random-guess baseline it is compared against.

use std::collections::BTreeSet;

use crate::rng::counter_u64;

/// `|a ∩ b| / |a ∪ b|`, with the convention that two empty sets agree fully.
pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Exact expected Jaccard between a fixed `k`-subset of `{1..n}` and a
/// uniformly random one: the overlap is hypergeometric.
pub fn expected_random_jaccard(n: usize, k: usize) -> f64 {
    let k = k.min(n);
    if k == 0 {
        return 1.0;
    }
    let ln_choose = |a: usize, b: usize| ln_factorial(a) - ln_factorial(b) - ln_factorial(a - b);
    (0..=k)
        .filter(|&i| k - i <= n - k)
        .map(|i| {
            let p = (ln_choose(k, i) + ln_choose(n - k, k - i) - ln_choose(n, k)).exp();
            p * i as f64 / (2 * k - i) as f64
        })
        .sum()
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|v| (v as f64).ln()).sum()
}

/// Uniform `k`-subset of `0..n` by a partial Fisher-Yates shuffle driven by
/// the counter RNG at row `draw`.
pub fn random_subset(n: usize, k: usize, seed: u64, draw: u64) -> Vec<usize> {
    let mut items: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let span = (n - i) as u64;
        // Multiply-shift keeps the bias below 2^-32 for any span we use.
        let r = ((counter_u64(seed, draw, i as u64) >> 32) * span) >> 32;
        items.swap(i, i + r as usize);
    }
    items.truncate(k.min(n));
    items
}

/// Monte-Carlo estimate of [`expected_random_jaccard`].
pub fn random_baseline(n: usize, k: usize, draws: usize, seed: u64) -> f64 {
    let fixed: Vec<usize> = (0..k.min(n)).collect();
    let total: f64 = (0..draws as u64)
        .map(|t| jaccard(&fixed, &random_subset(n, k, seed, t)))
        .sum();
    total / draws as f64
}
