//! Training loops for the pairwise linear model and the transformer scorer.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::gate::{order_by_scores, RankGroup};
use super::loss::{lambda_loss, max_dcg, neural_ndcg_loss};
use super::model::{EpochRecord, ModelConfig, ModelKind, Params, TrainedModel, TrainingHistory};
use super::{init_params, score_items, tmlp, RerankError};
use crate::eval::metrics::ndcg_at_k;
use crate::features::FEATURE_COUNT;

const SHUFFLE_STREAM: u64 = u64::MAX - 1;
/// Fixed number of gradient partial sums per batch, reduced in order, so the
/// result does not depend on the thread count.
const GRAD_SHARDS: usize = 4;

/// Verified, labelled items of one training group.
pub struct Example {
    pub group: usize,
    pub rows: Vec<[f64; FEATURE_COUNT]>,
    pub labels: Vec<f64>,
}

/// Keeps groups whose verified block has at least two items and a positive.
pub fn training_examples(groups: &[RankGroup]) -> Vec<Example> {
    groups
        .iter()
        .enumerate()
        .filter_map(|(g, group)| {
            let items: Vec<_> = group.items.iter().filter(|i| i.verified && i.label.is_some()).collect();
            let labels: Vec<f64> = items.iter().map(|i| i.relevance()).collect();
            (items.len() >= 2 && max_dcg(&labels, labels.len()) > 0.0).then(|| Example {
                group: g,
                rows: items.iter().map(|i| i.features.0).collect(),
                labels,
            })
        })
        .collect()
}

/// Mean NDCG@k of the gated reranking over groups that contain a positive.
pub fn validation_ndcg(kind: ModelKind, cfg: &ModelConfig, params: &Params, groups: &[RankGroup]) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for g in groups.iter().filter(|g| g.items.iter().any(|i| i.label == Some(1))) {
        let scores = score_items(kind, cfg, params, g);
        let ranked: Vec<u8> = order_by_scores(g, &scores).iter().map(|&i| g.items[i].label.unwrap_or(0)).collect();
        total += ndcg_at_k(&ranked, cfg.val_k);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(p: &Params) -> Self {
        let zeros = || p.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self { m: zeros(), v: zeros(), t: 0 }
    }

    fn step(&mut self, p: &mut Params, g: &Params, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (k, (pt, gt)) in p.tensors.iter_mut().zip(&g.tensors).enumerate() {
            for (((x, &gr), m), v) in pt.data.iter_mut().zip(&gt.data).zip(&mut self.m[k]).zip(&mut self.v[k]) {
                *m = Self::B1 * *m + (1.0 - Self::B1) * gr;
                *v = Self::B2 * *v + (1.0 - Self::B2) * gr * gr;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Shared epoch loop: shuffled batches, step decay, best-validation checkpoint
/// and patience-based stopping.
fn fit(
    kind: ModelKind,
    cfg: &ModelConfig,
    mut params: Params,
    examples: &[Example],
    val: &[RankGroup],
    batch: usize,
    mut update: impl FnMut(&mut Params, usize, f64, &[&Example]) -> f64,
) -> TrainedModel {
    let mut history = TrainingHistory::default();
    history.initial_val_ndcg = validation_ndcg(kind, cfg, &params, val);
    history.best_val_ndcg = history.initial_val_ndcg;
    let mut best = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        let decays = ((epoch - 1) / cfg.scheduler_step) as i32;
        let lr = cfg.lr * cfg.scheduler_gamma.powi(decays);
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for chunk in order.chunks(batch) {
            let items: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            loss += update(&mut params, epoch, lr, &items);
        }
        let val_ndcg = validation_ndcg(kind, cfg, &params, val);
        log::debug!("{} epoch {epoch}: loss {:.6} val ndcg {:.4}", kind.name(), loss / examples.len() as f64, val_ndcg);
        history.epochs.push(EpochRecord { epoch, lr, train_loss: loss / examples.len() as f64, val_ndcg });
        if val_ndcg > history.best_val_ndcg {
            history.best_val_ndcg = val_ndcg;
            history.best_epoch = epoch;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    TrainedModel { kind, config: cfg.clone(), history, params: best }
}

/// Linear scorer trained by per-group gradient steps on the summed pairwise
/// logistic loss.
pub fn train_pairwise_lr(
    train: &[RankGroup],
    val: &[RankGroup],
    cfg: &ModelConfig,
) -> Result<TrainedModel, RerankError> {
    cfg.check()?;
    let examples = training_examples(train);
    let pairs: usize = examples
        .iter()
        .map(|e| e.labels.iter().map(|a| e.labels.iter().filter(|b| a > b).count()).sum::<usize>())
        .sum();
    if pairs == 0 {
        return Err(RerankError::NoPairs);
    }
    let params = init_params(cfg, ModelKind::PairwiseLr, cfg.seed);
    Ok(fit(ModelKind::PairwiseLr, cfg, params, &examples, val, 1, |p, _, lr, batch| {
        let mut loss = 0.0;
        for ex in batch {
            let w = &p.tensors[0].data;
            let s: Vec<f64> = ex.rows.iter().map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum()).collect();
            let mut grad = [0.0; FEATURE_COUNT];
            for i in 0..s.len() {
                for j in 0..s.len() {
                    if ex.labels[i] <= ex.labels[j] {
                        continue;
                    }
                    let z = -(s[i] - s[j]);
                    loss += if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                    let sig = 1.0 / (1.0 + (-z).exp());
                    for (k, g) in grad.iter_mut().enumerate() {
                        *g -= sig * (ex.rows[i][k] - ex.rows[j][k]);
                    }
                }
            }
            for (x, g) in p.tensors[0].data.iter_mut().zip(grad) {
                *x -= lr * g;
            }
        }
        loss
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListLoss {
    NeuralNdcg,
    LambdaLoss,
}

fn dropout_stream(seed: u64, epoch: usize, group: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | group as u64);
    rng
}

pub fn train_tmlp(
    train: &[RankGroup],
    val: &[RankGroup],
    cfg: &ModelConfig,
    loss: ListLoss,
) -> Result<TrainedModel, RerankError> {
    cfg.check()?;
    let examples = training_examples(train);
    if examples.is_empty() {
        return Err(RerankError::EmptyTrainingSet);
    }
    let kind = match loss {
        ListLoss::NeuralNdcg => ModelKind::TmlpNeuralndcg,
        ListLoss::LambdaLoss => ModelKind::TmlpLambdaloss,
    };
    let params = init_params(cfg, kind, cfg.seed);
    let mut adam = Adam::new(&params);
    let mut partials: Vec<Params> = (0..GRAD_SHARDS).map(|_| params.zeros_like()).collect();
    Ok(fit(kind, cfg, params, &examples, val, cfg.batch_groups, |p, epoch, lr, batch| {
        let per_shard = batch.len().div_ceil(GRAD_SHARDS);
        let shard_losses: Vec<f64> = partials
            .par_iter_mut()
            .zip(batch.par_chunks(per_shard.max(1)))
            .map(|(grads, shard)| {
                grads.scale(0.0);
                let mut total = 0.0;
                for ex in shard {
                    let x = Array2::from_shape_fn((ex.rows.len(), FEATURE_COUNT), |(i, j)| ex.rows[i][j]);
                    let mut rng = dropout_stream(cfg.seed, epoch, ex.group);
                    let (scores, cache) = tmlp::forward(p, cfg, x.view(), Some(&mut rng));
                    let out = match loss {
                        ListLoss::NeuralNdcg => {
                            neural_ndcg_loss(&scores, &ex.labels, scores.len(), cfg.tau).expect("finite scores")
                        }
                        ListLoss::LambdaLoss => lambda_loss(&scores, &ex.labels, cfg.sigma, cfg.mu),
                    };
                    total += out.loss;
                    tmlp::backward(p, cfg, &cache, &out.grad, grads);
                }
                total
            })
            .collect();
        let used = batch.len().div_ceil(per_shard.max(1));
        let (first, rest) = partials.split_at_mut(1);
        for other in &rest[..used - 1] {
            first[0].add_scaled(other, 1.0);
        }
        first[0].scale(1.0 / batch.len() as f64);
        adam.step(p, &first[0], lr);
        shard_losses.iter().sum()
    }))
}

/// Trains whichever model `cfg.model_kind` names.
pub fn train_model(train: &[RankGroup], val: &[RankGroup], cfg: &ModelConfig) -> Result<TrainedModel, RerankError> {
    match cfg.model_kind {
        ModelKind::PairwiseLr => train_pairwise_lr(train, val, cfg),
        ModelKind::TmlpNeuralndcg => train_tmlp(train, val, cfg, ListLoss::NeuralNdcg),
        ModelKind::TmlpLambdaloss => train_tmlp(train, val, cfg, ListLoss::LambdaLoss),
    }
}
