//! Jensen-Shannon divergence with base-2 logarithms, so values lie in [0, 1].

/// Counts scaled to sum to one; `None` when all counts are zero.
pub fn normalize(counts: &[u64]) -> Option<Vec<f64>> {
    let total: u64 = counts.iter().sum();
    (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect())
}

fn kl_to_mix(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / (0.5 * (pi + qi))).log2())
        .sum()
}

/// Divergence between two distributions over the same support.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    (0.5 * (kl_to_mix(p, q) + kl_to_mix(q, p))).clamp(0.0, 1.0)
}
