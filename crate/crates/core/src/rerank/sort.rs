//! Relaxed sorting: NeuralSort rows and Sinkhorn scaling, with exact
//! reverse-mode gradients.

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        Self { n, data: rows.concat() }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i).iter().enumerate() {
                s[j] += v;
            }
        }
        s
    }

    /// Largest deviation of any row or column sum from 1.
    pub fn stochastic_error(&self) -> f64 {
        self.row_sums().into_iter().chain(self.col_sums()).map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Column index of the largest entry in each row.
    pub fn row_argmax(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                let row = self.row(i);
                (0..self.n).fold(0, |b, j| if row[j] > row[b] { j } else { b })
            })
            .collect()
    }
}

/// NeuralSort relaxation of the descending sort permutation.
///
/// Row `i` (1-based) is `softmax_j(((n + 1 - 2i) s_j - Σ_k |s_j - s_k|) / τ)`.
/// Returns `None` for non-finite scores or a non-positive temperature.
pub fn neural_sort(scores: &[f64], tau: f64) -> Option<Matrix> {
    if tau.is_nan() || tau <= 0.0 || scores.iter().any(|s| !s.is_finite()) {
        return None;
    }
    let n = scores.len();
    let spread: Vec<f64> = scores.iter().map(|sj| scores.iter().map(|sk| (sj - sk).abs()).sum()).collect();
    let mut p = Matrix::zeros(n);
    for i in 0..n {
        let coef = (n as f64 + 1.0 - 2.0 * (i as f64 + 1.0)) / tau;
        let logits: Vec<f64> = (0..n).map(|j| coef * scores[j] - spread[j] / tau).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for j in 0..n {
            *p.at_mut(i, j) = exps[j] / z;
        }
    }
    Some(p)
}

/// Gradient of a scalar through [`neural_sort`]: given `dL/dP`, returns `dL/ds`.
pub fn neural_sort_backward(scores: &[f64], tau: f64, p: &Matrix, dp: &Matrix) -> Vec<f64> {
    let n = scores.len();
    let mut ds = vec![0.0; n];
    // dL/dlogit for each row, then split into the rank term and the spread term
    let mut spread_grad = vec![0.0; n];
    for i in 0..n {
        let coef = (n as f64 + 1.0 - 2.0 * (i as f64 + 1.0)) / tau;
        let dot: f64 = (0..n).map(|j| dp.at(i, j) * p.at(i, j)).sum();
        for j in 0..n {
            let dlogit = p.at(i, j) * (dp.at(i, j) - dot);
            ds[j] += dlogit * coef;
            spread_grad[j] -= dlogit / tau;
        }
    }
    for j in 0..n {
        for k in 0..n {
            let sign = (scores[j] - scores[k]).signum() * f64::from(u8::from(scores[j] != scores[k]));
            ds[j] += spread_grad[j] * sign;
            ds[k] -= spread_grad[j] * sign;
        }
    }
    ds
}

pub const SINKHORN_FLOOR: f64 = 1e-30;
pub const SINKHORN_ITERS: usize = 50;
pub const SINKHORN_TOL: f64 = 1e-6;

/// Outcome of [`sinkhorn_scale`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scaled {
    pub matrix: Matrix,
    pub iterations: usize,
    /// Largest row or column sum deviation from 1 at exit.
    pub achieved_tol: f64,
}

fn normalize_rows(m: &mut Matrix) -> Vec<f64> {
    let sums = m.row_sums();
    for i in 0..m.n {
        for j in 0..m.n {
            *m.at_mut(i, j) /= sums[i];
        }
    }
    sums
}

fn normalize_cols(m: &mut Matrix) -> Vec<f64> {
    let sums = m.col_sums();
    for i in 0..m.n {
        for j in 0..m.n {
            *m.at_mut(i, j) /= sums[j];
        }
    }
    sums
}

/// Alternating row/column normalization, stopping once every sum is within
/// `tol` of 1 or after `iters` rounds. Entries are floored at 1e-30 first.
pub fn sinkhorn_scale(matrix: &Matrix, iters: usize, tol: f64) -> Scaled {
    let mut m = matrix.clone();
    m.data.iter_mut().for_each(|x| *x = x.max(SINKHORN_FLOOR));
    let mut achieved = m.stochastic_error();
    let mut done = 0;
    while done < iters && achieved >= tol {
        normalize_rows(&mut m);
        normalize_cols(&mut m);
        done += 1;
        achieved = m.stochastic_error();
    }
    Scaled { matrix: m, iterations: done, achieved_tol: achieved }
}

/// Sinkhorn scaling unrolled for exactly `iters` rounds, keeping what the
/// backward pass needs.
pub struct SinkhornTape {
    floored: Vec<bool>,
    /// Matrix after each half step (row, col, row, col, ...).
    states: Vec<Matrix>,
    sums: Vec<Vec<f64>>,
}

pub fn sinkhorn_unrolled(matrix: &Matrix, iters: usize) -> (Matrix, SinkhornTape) {
    let mut m = matrix.clone();
    let floored: Vec<bool> = m.data.iter().map(|&x| x < SINKHORN_FLOOR).collect();
    m.data.iter_mut().for_each(|x| *x = x.max(SINKHORN_FLOOR));
    let mut states = Vec::with_capacity(2 * iters);
    let mut sums = Vec::with_capacity(2 * iters);
    for _ in 0..iters {
        sums.push(normalize_rows(&mut m));
        states.push(m.clone());
        sums.push(normalize_cols(&mut m));
        states.push(m.clone());
    }
    (m, SinkhornTape { floored, states, sums })
}

/// Maps `dL/d(output)` back to `dL/d(input)` through the unrolled scaling.
pub fn sinkhorn_backward(tape: &SinkhornTape, d_out: &Matrix) -> Matrix {
    let n = d_out.n;
    let mut g = d_out.clone();
    for step in (0..tape.states.len()).rev() {
        let y = &tape.states[step];
        let sums = &tape.sums[step];
        let rows = step % 2 == 0;
        let mut next = Matrix::zeros(n);
        if rows {
            for i in 0..n {
                let dot: f64 = (0..n).map(|j| g.at(i, j) * y.at(i, j)).sum();
                for j in 0..n {
                    *next.at_mut(i, j) = (g.at(i, j) - dot) / sums[i];
                }
            }
        } else {
            for j in 0..n {
                let dot: f64 = (0..n).map(|i| g.at(i, j) * y.at(i, j)).sum();
                for i in 0..n {
                    *next.at_mut(i, j) = (g.at(i, j) - dot) / sums[j];
                }
            }
        }
        g = next;
    }
    for (v, &f) in g.data.iter_mut().zip(&tape.floored) {
        if f {
            *v = 0.0;
        }
    }
    g
}
