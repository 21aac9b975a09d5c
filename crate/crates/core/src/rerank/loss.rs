//! Listwise and pairwise ranking losses with gradients w.r.t. the scores.

use super::sort::{neural_sort, neural_sort_backward, sinkhorn_backward, sinkhorn_unrolled, Matrix, SINKHORN_ITERS};

pub fn gain(label: f64) -> f64 {
    label.exp2() - 1.0
}

pub fn discount(position: usize) -> f64 {
    1.0 / ((position as f64) + 1.0).log2()
}

/// Best achievable DCG over the first `k` positions.
pub fn max_dcg(labels: &[f64], k: usize) -> f64 {
    let mut sorted = labels.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.iter().take(k).enumerate().map(|(j, &y)| gain(y) * discount(j + 1)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl LossOutput {
    fn zero(n: usize) -> Self {
        Self { loss: 0.0, grad: vec![0.0; n] }
    }
}

/// Negative NeuralNDCG@k: the relaxed permutation, Sinkhorn-scaled for a
/// fixed 50 rounds, applied to the gains and discounted over the top `k`.
/// Groups without any positive gain give zero loss and gradient.
pub fn neural_ndcg_loss(scores: &[f64], labels: &[f64], k: usize, tau: f64) -> Option<LossOutput> {
    let n = scores.len();
    assert_eq!(n, labels.len(), "scores and labels differ in length");
    if labels.iter().chain(scores).any(|v| !v.is_finite()) {
        return None;
    }
    let k = k.min(n);
    let norm = max_dcg(labels, k);
    if norm <= 0.0 {
        return Some(LossOutput::zero(n));
    }
    let p = neural_sort(scores, tau)?;
    let (scaled, tape) = sinkhorn_unrolled(&p, SINKHORN_ITERS);
    let gains: Vec<f64> = labels.iter().map(|&y| gain(y)).collect();
    let mut value = 0.0;
    let mut d_scaled = Matrix::zeros(n);
    for j in 0..k {
        let w = discount(j + 1) / norm;
        let row_gain: f64 = scaled.row(j).iter().zip(&gains).map(|(a, g)| a * g).sum();
        value += w * row_gain;
        for (i, g) in gains.iter().enumerate() {
            d_scaled.data[j * n + i] = -w * g;
        }
    }
    let dp = sinkhorn_backward(&tape, &d_scaled);
    let grad = neural_sort_backward(scores, tau, &p, &dp);
    Some(LossOutput { loss: -value, grad })
}

/// 1-based positions under a descending sort of `scores`, ties broken by index.
pub fn ranks_of(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (pos, &i) in idx.iter().enumerate() {
        ranks[i] = pos + 1;
    }
    ranks
}

/// LambdaLoss with the ranks taken from the current scores.
pub fn lambda_loss(scores: &[f64], labels: &[f64], sigma: f64, mu: f64) -> LossOutput {
    lambda_loss_with_ranks(scores, labels, &ranks_of(scores), sigma, mu)
}

/// Pairwise logistic loss weighted by the swap change in gain and discount,
/// plus `mu` times the rank-gap discount term. Ranks are held fixed, so the
/// gradient only flows through the logistic terms.
pub fn lambda_loss_with_ranks(scores: &[f64], labels: &[f64], ranks: &[usize], sigma: f64, mu: f64) -> LossOutput {
    let n = scores.len();
    assert_eq!(n, labels.len(), "scores and labels differ in length");
    let norm = max_dcg(labels, n);
    if norm <= 0.0 || n < 2 {
        return LossOutput::zero(n);
    }
    let d = |r: usize| ((r as f64) + 1.0).log2();
    let mut out = LossOutput::zero(n);
    let ln2 = std::f64::consts::LN_2;
    for i in 0..n {
        for j in 0..n {
            if labels[i] <= labels[j] {
                continue;
            }
            let gap = ranks[i].abs_diff(ranks[j]);
            let delta = (gain(labels[i]) - gain(labels[j])).abs() / norm;
            let w =
                delta * ((1.0 / d(ranks[i]) - 1.0 / d(ranks[j])).abs() + mu * (1.0 / d(gap) - 1.0 / d(gap + 1)).abs());
            let z = -sigma * (scores[i] - scores[j]);
            // log2(1 + e^z), computed stably
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            out.loss += w * softplus / ln2;
            let sig = 1.0 / (1.0 + (-z).exp());
            let g = w * sig * sigma / ln2;
            out.grad[i] -= g;
            out.grad[j] += g;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_dcg_and_discount() {
        assert!((discount(2) - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert_eq!(max_dcg(&[0.0, 1.0, 0.0], 5), 1.0);
        assert_eq!(max_dcg(&[0.0, 0.0], 5), 0.0);
    }

    #[test]
    fn neural_ndcg_sharp_limit() {
        let out = neural_ndcg_loss(&[3.0, 2.0, 1.0, 0.0], &[1.0, 1.0, 0.0, 0.0], 4, 1e-3).unwrap();
        assert!((out.loss + 1.0).abs() < 1e-3, "{}", out.loss);
        let zero = neural_ndcg_loss(&[3.0, 2.0], &[0.0, 0.0], 2, 1.0).unwrap();
        assert_eq!(zero, LossOutput { loss: 0.0, grad: vec![0.0, 0.0] });
        assert!(neural_ndcg_loss(&[f64::INFINITY, 0.0], &[1.0, 0.0], 2, 1.0).is_none());
    }

    #[test]
    fn lambda_pair_behaviour() {
        let far = lambda_loss(&[20.0, -20.0], &[1.0, 0.0], 1.0, 10.0);
        assert!(far.loss > 0.0 && far.loss < 1e-12);
        let good = lambda_loss(&[0.8, 0.2], &[1.0, 0.0], 1.0, 10.0);
        let bad = lambda_loss(&[0.2, 0.8], &[1.0, 0.0], 1.0, 10.0);
        assert!(bad.loss > good.loss);
        assert_eq!(lambda_loss(&[0.1, 0.5], &[1.0, 1.0], 1.0, 10.0).loss, 0.0);
    }

    #[test]
    fn lambda_gradient_with_frozen_ranks() {
        let s = [0.3, -0.4, 1.1, 0.05, 0.7];
        let y = [1.0, 0.0, 0.0, 1.0, 0.0];
        let ranks = ranks_of(&s);
        let out = lambda_loss_with_ranks(&s, &y, &ranks, 1.0, 10.0);
        let h = 1e-6;
        for i in 0..s.len() {
            let (mut up, mut dn) = (s, s);
            up[i] += h;
            dn[i] -= h;
            let fd = (lambda_loss_with_ranks(&up, &y, &ranks, 1.0, 10.0).loss
                - lambda_loss_with_ranks(&dn, &y, &ranks, 1.0, 10.0).loss)
                / (2.0 * h);
            assert!((fd - out.grad[i]).abs() < 1e-7, "{i}");
        }
    }
}
