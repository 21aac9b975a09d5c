//! Transformer scorer over the items of one group.
//!
//! Two affine maps lift each feature vector to the model width, a stack of
//! post-norm self-attention blocks mixes information across the group's items
//! and a final affine map produces one score per item. There is no positional
//! encoding, so the scorer is equivariant under item permutations.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::model::{ModelConfig, Params};
use crate::features::FEATURE_COUNT;

const LN_EPS: f64 = 1e-5;
const PER_BLOCK: usize = 16;

/// Names and shapes of the scorer's parameters, in storage order.
pub fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (e, d, h) = (cfg.embed_width, cfg.model_width, cfg.ff_width);
    let mut out = vec![
        ("embed.weight".to_string(), vec![FEATURE_COUNT, e]),
        ("embed.bias".to_string(), vec![e]),
        ("proj.weight".to_string(), vec![e, d]),
        ("proj.bias".to_string(), vec![d]),
    ];
    for b in 0..cfg.blocks {
        let p = format!("blocks.{b}");
        for m in ["q", "k", "v", "o"] {
            out.push((format!("{p}.attn.{m}.weight"), vec![d, d]));
            out.push((format!("{p}.attn.{m}.bias"), vec![d]));
        }
        out.push((format!("{p}.ln1.gamma"), vec![d]));
        out.push((format!("{p}.ln1.beta"), vec![d]));
        out.push((format!("{p}.ff1.weight"), vec![d, h]));
        out.push((format!("{p}.ff1.bias"), vec![h]));
        out.push((format!("{p}.ff2.weight"), vec![h, d]));
        out.push((format!("{p}.ff2.bias"), vec![d]));
        out.push((format!("{p}.ln2.gamma"), vec![d]));
        out.push((format!("{p}.ln2.beta"), vec![d]));
    }
    out.push(("out.weight".to_string(), vec![d, 1]));
    out.push(("out.bias".to_string(), vec![1]));
    out
}

/// Uniform `±1/sqrt(fan_in)` for affine maps; unit gain and zero shift for
/// layer norms.
pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Params {
    let mut params = Params::default();
    let mut fan_in = FEATURE_COUNT;
    for (name, shape) in layout(cfg) {
        let size = shape.iter().product();
        let data = if name.ends_with("gamma") {
            vec![1.0; size]
        } else if name.ends_with("beta") {
            vec![0.0; size]
        } else {
            if shape.len() == 2 {
                fan_in = shape[0];
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..size).map(|_| rng.random_range(-bound..bound)).collect()
        };
        params.push(name, shape, data);
    }
    params
}

// indices into Params::tensors; each weight is followed by its bias
const EMBED_W: usize = 0;
const PROJ_W: usize = 2;

struct BlockIdx(usize);

impl BlockIdx {
    fn new(b: usize) -> Self {
        Self(4 + PER_BLOCK * b)
    }
    /// q, k, v, o weight index; bias follows.
    fn attn(&self, m: usize) -> usize {
        self.0 + 2 * m
    }
    fn ln1(&self) -> usize {
        self.0 + 8
    }
    fn ff1(&self) -> usize {
        self.0 + 10
    }
    fn ff2(&self) -> usize {
        self.0 + 12
    }
    fn ln2(&self) -> usize {
        self.0 + 14
    }
}

fn out_idx(cfg: &ModelConfig) -> usize {
    4 + PER_BLOCK * cfg.blocks
}

fn mat<'a>(p: &'a Params, i: usize) -> ArrayView2<'a, f64> {
    let t = &p.tensors[i];
    ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("tensor shape")
}

fn vec1<'a>(p: &'a Params, i: usize) -> ArrayView1<'a, f64> {
    ArrayView1::from(&p.tensors[i].data[..])
}

fn mat_mut<'a>(p: &'a mut Params, i: usize) -> ArrayViewMut2<'a, f64> {
    let t = &mut p.tensors[i];
    ArrayViewMut2::from_shape((t.shape[0], t.shape[1]), &mut t.data).expect("tensor shape")
}

fn vec_mut<'a>(p: &'a mut Params, i: usize) -> ArrayViewMut1<'a, f64> {
    ArrayViewMut1::from(&mut p.tensors[i].data[..])
}

fn affine(x: &Array2<f64>, p: &Params, w: usize) -> Array2<f64> {
    let mut y = x.dot(&mat(p, w));
    y += &vec1(p, w + 1);
    y
}

/// Accumulates weight and bias gradients of `y = x W + b` and returns `dx`.
fn affine_back(
    x: &Array2<f64>,
    dy: &Array2<f64>,
    p: &Params,
    g: &mut Params,
    w: usize,
    need_dx: bool,
) -> Option<Array2<f64>> {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut mat_mut(g, w));
    let mut gb = vec_mut(g, w + 1);
    gb += &dy.sum_axis(Axis(0));
    need_dx.then(|| dy.dot(&mat(p, w).t()))
}

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, p: &Params, gamma: usize) -> (Array2<f64>, NormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * *s);
    }
    let mut y = &xhat * &vec1(p, gamma);
    y += &vec1(p, gamma + 1);
    (y, NormCache { xhat, inv_std })
}

fn layer_norm_back(c: &NormCache, dy: &Array2<f64>, p: &Params, g: &mut Params, gamma: usize) -> Array2<f64> {
    {
        let mut gg = vec_mut(g, gamma);
        gg += &(dy * &c.xhat).sum_axis(Axis(0));
    }
    {
        let mut gb = vec_mut(g, gamma + 1);
        gb += &dy.sum_axis(Axis(0));
    }
    let dxhat = dy * &vec1(p, gamma);
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let row = dxhat.row(i);
        let xh = c.xhat.row(i);
        let m1 = row.sum() / d;
        let m2 = row.dot(&xh) / d;
        let s = c.inv_std[i];
        dx.row_mut(i).assign(&((&row - m1 - &(&xh * m2)) * s));
    }
    dx
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn((rows, cols), |_| if rng.random::<f64>() < p { 0.0 } else { keep })
}

struct BlockCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    mixed: Array2<f64>,
    mask1: Option<Array2<f64>>,
    norm1: NormCache,
    h1: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    mask2: Option<Array2<f64>>,
    norm2: NormCache,
}

/// Intermediate values kept for the backward pass.
pub struct Cache {
    x: Array2<f64>,
    h0: Array2<f64>,
    blocks: Vec<BlockCache>,
    last: Array2<f64>,
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

fn block_forward(
    h: Array2<f64>,
    p: &Params,
    cfg: &ModelConfig,
    b: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> (Array2<f64>, BlockCache) {
    let idx = BlockIdx::new(b);
    let n = h.nrows();
    let dh = cfg.model_width / cfg.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = affine(&h, p, idx.attn(0));
    let k = affine(&h, p, idx.attn(1));
    let v = affine(&h, p, idx.attn(2));
    let mut mixed = Array2::zeros((n, cfg.model_width));
    let mut attn = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let cols = s![.., head * dh..(head + 1) * dh];
        let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut a);
        mixed.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        attn.push(a);
    }
    let mut o = affine(&mixed, p, idx.attn(3));
    let (mask1, mask2) = match rng {
        Some(rng) if cfg.dropout > 0.0 => {
            let m1 = dropout_mask(n, cfg.model_width, cfg.dropout, rng);
            let m2 = dropout_mask(n, cfg.model_width, cfg.dropout, rng);
            (Some(m1), Some(m2))
        }
        _ => (None, None),
    };
    if let Some(m) = &mask1 {
        o *= m;
    }
    let (h1, norm1) = layer_norm(&(&h + &o), p, idx.ln1());
    let ff_pre = affine(&h1, p, idx.ff1());
    let ff_act = ff_pre.mapv(|x| x.max(0.0));
    let mut f = affine(&ff_act, p, idx.ff2());
    if let Some(m) = &mask2 {
        f *= m;
    }
    let (h2, norm2) = layer_norm(&(&h1 + &f), p, idx.ln2());
    (h2, BlockCache { input: h, q, k, v, attn, mixed, mask1, norm1, h1, ff_pre, ff_act, mask2, norm2 })
}

fn block_backward(
    c: &BlockCache,
    dout: &Array2<f64>,
    p: &Params,
    g: &mut Params,
    cfg: &ModelConfig,
    b: usize,
) -> Array2<f64> {
    let idx = BlockIdx::new(b);
    let dh = cfg.model_width / cfg.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let dr2 = layer_norm_back(&c.norm2, dout, p, g, idx.ln2());
    let mut df = dr2.clone();
    if let Some(m) = &c.mask2 {
        df *= m;
    }
    let mut dact = affine_back(&c.ff_act, &df, p, g, idx.ff2(), true).expect("dx");
    dact.zip_mut_with(&c.ff_pre, |d, &pre| {
        if pre <= 0.0 {
            *d = 0.0
        }
    });
    let mut dh1 = affine_back(&c.h1, &dact, p, g, idx.ff1(), true).expect("dx");
    dh1 += &dr2;
    let dr1 = layer_norm_back(&c.norm1, &dh1, p, g, idx.ln1());
    let mut dobj = dr1.clone();
    if let Some(m) = &c.mask1 {
        dobj *= m;
    }
    let dmixed = affine_back(&c.mixed, &dobj, p, g, idx.attn(3), true).expect("dx");
    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for (head, a) in c.attn.iter().enumerate() {
        let cols = s![.., head * dh..(head + 1) * dh];
        let dmh = dmixed.slice(cols);
        let da = dmh.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&dmh));
        let mut ds = a * &da;
        for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
            let total = row.sum();
            row.zip_mut_with(&arow, |x, &av| *x -= av * total);
        }
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    let mut dinput = dr1;
    for (m, d) in [(0, &dq), (1, &dk), (2, &dv)] {
        dinput += &affine_back(&c.input, d, p, g, idx.attn(m), true).expect("dx");
    }
    dinput
}

/// Scores every row of `x` (one row per item). Passing a random stream turns
/// on dropout.
pub fn forward(
    p: &Params,
    cfg: &ModelConfig,
    x: ArrayView2<f64>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Vec<f64>, Cache) {
    let x = x.to_owned();
    let h0 = affine(&x, p, EMBED_W);
    let mut h = affine(&h0, p, PROJ_W);
    let mut blocks = Vec::with_capacity(cfg.blocks);
    for b in 0..cfg.blocks {
        let (next, cache) = block_forward(h, p, cfg, b, rng.as_deref_mut());
        blocks.push(cache);
        h = next;
    }
    let out = affine(&h, p, out_idx(cfg));
    let scores = out.column(0).to_vec();
    (scores, Cache { x, h0, blocks, last: h })
}

/// Accumulates `d(loss)/d(params)` into `grads` given `d(loss)/d(scores)`.
pub fn backward(p: &Params, cfg: &ModelConfig, cache: &Cache, dscores: &[f64], grads: &mut Params) {
    let dy = Array2::from_shape_vec((dscores.len(), 1), dscores.to_vec()).expect("column");
    let mut dh = affine_back(&cache.last, &dy, p, grads, out_idx(cfg), true).expect("dx");
    for b in (0..cfg.blocks).rev() {
        dh = block_backward(&cache.blocks[b], &dh, p, grads, cfg, b);
    }
    let dh0 = affine_back(&cache.h0, &dh, p, grads, PROJ_W, true).expect("dx");
    affine_back(&cache.x, &dh0, p, grads, EMBED_W, false);
}

pub fn features_matrix(rows: &[[f64; FEATURE_COUNT]]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), FEATURE_COUNT), |(i, j)| rows[i][j])
}

/// Scores a padded batch: rows with `real[i] == false` are left out of the
/// computation and get no score.
pub fn forward_padded(p: &Params, cfg: &ModelConfig, rows: &[[f64; FEATURE_COUNT]], real: &[bool]) -> Vec<Option<f64>> {
    let kept: Vec<[f64; FEATURE_COUNT]> = rows.iter().zip(real).filter(|(_, &r)| r).map(|(x, _)| *x).collect();
    let (scores, _) = forward(p, cfg, features_matrix(&kept).view(), None);
    let mut it = scores.into_iter();
    real.iter().map(|&r| if r { it.next() } else { None }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            embed_width: 5,
            model_width: 6,
            heads: 2,
            ff_width: 7,
            blocks: 2,
            dropout: 0.1,
            ..ModelConfig::default()
        }
    }

    fn rows(n: usize, seed: u64) -> Vec<[f64; FEATURE_COUNT]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect()
    }

    fn params(cfg: &ModelConfig) -> Params {
        init(cfg, &mut ChaCha8Rng::seed_from_u64(11))
    }

    #[test]
    fn layout_matches_default_widths() {
        let cfg = ModelConfig::default();
        let l = layout(&cfg);
        assert_eq!(l.len(), 4 + 16 * 2 + 2);
        assert_eq!(l[0].1, vec![18, 96]);
        assert_eq!(l[2].1, vec![96, 384]);
        assert!(l.iter().any(|(n, s)| n == "blocks.1.ff1.weight" && s == &vec![384, 768]));
    }

    #[test]
    fn single_item_and_duplicates() {
        let cfg = tiny();
        let p = params(&cfg);
        let x = rows(1, 3);
        let (s, _) = forward(&p, &cfg, features_matrix(&x).view(), None);
        assert!(s.len() == 1 && s[0].is_finite());
        let mut x = rows(3, 4);
        x.push(x[1]);
        let (s, _) = forward(&p, &cfg, features_matrix(&x).view(), None);
        assert!((s[1] - s[3]).abs() < 1e-12);
    }

    #[test]
    fn permutation_equivariance() {
        let cfg = tiny();
        let p = params(&cfg);
        let x = rows(6, 5);
        let perm = [4, 2, 0, 5, 1, 3];
        let px: Vec<_> = perm.iter().map(|&i| x[i]).collect();
        let (a, _) = forward(&p, &cfg, features_matrix(&x).view(), None);
        let (b, _) = forward(&p, &cfg, features_matrix(&px).view(), None);
        for (k, &i) in perm.iter().enumerate() {
            assert!((b[k] - a[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn padding_does_not_change_real_scores() {
        let cfg = tiny();
        let p = params(&cfg);
        let x = rows(4, 6);
        let (plain, _) = forward(&p, &cfg, features_matrix(&x).view(), None);
        let mut padded = x.clone();
        padded.insert(1, [0.0; FEATURE_COUNT]);
        padded.push([9.0; FEATURE_COUNT]);
        let got = forward_padded(&p, &cfg, &padded, &[true, false, true, true, true, false]);
        let got: Vec<f64> = got.into_iter().flatten().collect();
        assert_eq!(got, plain);
    }

    fn weighted(p: &Params, cfg: &ModelConfig, x: &Array2<f64>, c: &[f64], stream: Option<u64>) -> f64 {
        let mut rng = stream.map(|s| {
            let mut r = ChaCha8Rng::seed_from_u64(1);
            r.set_stream(s);
            r
        });
        let (s, _) = forward(p, cfg, x.view(), rng.as_mut());
        s.iter().zip(c).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = tiny();
        let p = params(&cfg);
        let x = features_matrix(&rows(4, 8));
        let c = [0.7, -1.3, 0.4, 2.0];
        for stream in [None, Some(3)] {
            let mut rng = stream.map(|s| {
                let mut r = ChaCha8Rng::seed_from_u64(1);
                r.set_stream(s);
                r
            });
            let (_, cache) = forward(&p, &cfg, x.view(), rng.as_mut());
            let mut g = p.zeros_like();
            backward(&p, &cfg, &cache, &c, &mut g);
            let analytic = g.flat();
            let mut fd = Vec::with_capacity(analytic.len());
            let h = 1e-6;
            for t in 0..p.tensors.len() {
                for i in 0..p.tensors[t].data.len() {
                    let mut up = p.clone();
                    up.tensors[t].data[i] += h;
                    let mut dn = p.clone();
                    dn.tensors[t].data[i] -= h;
                    fd.push((weighted(&up, &cfg, &x, &c, stream) - weighted(&dn, &cfg, &x, &c, stream)) / (2.0 * h));
                }
            }
            let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let norm =
                analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
            assert!(diff / norm < 1e-6, "relative error {}", diff / norm);
        }
    }
}
