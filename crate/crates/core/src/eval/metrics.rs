//! Ranking metrics over binary relevance labels listed in ranked order.

/// `1 / position` of the first relevant item, 0 when there is none.
pub fn reciprocal_rank(ranked: &[u8]) -> f64 {
    ranked.iter().position(|&y| y > 0).map_or(0.0, |p| 1.0 / (p as f64 + 1.0))
}

/// Mean reciprocal rank over queries; `None` for an empty query set.
pub fn mrr(rankings: &[Vec<u8>]) -> Option<f64> {
    if rankings.is_empty() {
        return None;
    }
    Some(rankings.iter().map(|r| reciprocal_rank(r)).sum::<f64>() / rankings.len() as f64)
}

/// Relevant items among the first `k`, divided by `k` even when the list is
/// shorter.
pub fn precision_at_k(ranked: &[u8], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    ranked.iter().take(k).filter(|&&y| y > 0).count() as f64 / k as f64
}

fn dcg(labels: impl Iterator<Item = u8>, k: usize) -> f64 {
    labels.take(k).enumerate().map(|(j, y)| (f64::from(y).exp2() - 1.0) / ((j as f64) + 2.0).log2()).sum()
}

/// DCG@k with gain `2^y - 1` and discount `1/log2(j + 1)`, normalised by
/// the ideal ordering; 0 when nothing is relevant.
pub fn ndcg_at_k(ranked: &[u8], k: usize) -> f64 {
    let mut ideal = ranked.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let best = dcg(ideal.into_iter(), k);
    if best <= 0.0 {
        return 0.0;
    }
    dcg(ranked.iter().copied(), k) / best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        assert_eq!(reciprocal_rank(&[0, 0, 0, 1]), 0.25);
        assert_eq!(mrr(&[vec![1, 0], vec![1]]), Some(1.0));
        assert_eq!(mrr(&[]), None);
        assert_eq!(precision_at_k(&[1, 0], 1), 1.0);
        assert_eq!(precision_at_k(&[1, 0, 0, 1, 0, 1], 5), 0.4);
        assert_eq!(precision_at_k(&[1], 5), 0.2);
        assert!((ndcg_at_k(&[0, 1, 0], 5) - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((ndcg_at_k(&[0, 1, 0], 5) - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[1, 1, 0], 5), 1.0);
        assert_eq!(ndcg_at_k(&[0, 0], 5), 0.0);
    }
}
