//! Gating, learning-to-rank models and final page ordering.

mod gate;
pub mod loss;
mod model;
pub mod sort;
pub mod tmlp;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use gate::{apply_gate, gate_verified, groups_from_records, order_by_scores, RankGroup, RankItem};
pub use loss::{lambda_loss, lambda_loss_with_ranks, neural_ndcg_loss, ranks_of, LossOutput};
pub use model::{EpochRecord, ModelConfig, ModelKind, Params, Tensor, TrainedModel, TrainingHistory};
pub use sort::{neural_sort, sinkhorn_scale, Matrix, Scaled};
pub use train::{train_model, train_pairwise_lr, train_tmlp, training_examples, validation_ndcg, Example, ListLoss};

use crate::features::FEATURE_COUNT;

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("no training group has a verified positive")]
    EmptyTrainingSet,
    #[error("training data contains no labelled pairs")]
    NoPairs,
}

const INIT_STREAM: u64 = u64::MAX;

pub fn param_layout(cfg: &ModelConfig, kind: ModelKind) -> Vec<(String, Vec<usize>)> {
    match kind {
        ModelKind::PairwiseLr => vec![("weights".into(), vec![FEATURE_COUNT]), ("bias".into(), vec![1])],
        _ => tmlp::layout(cfg),
    }
}

/// Fresh parameters: zeros for the linear model, seeded uniform draws for the
/// transformer.
pub fn init_params(cfg: &ModelConfig, kind: ModelKind, seed: u64) -> Params {
    match kind {
        ModelKind::PairwiseLr => {
            let mut p = Params::default();
            p.push("weights", vec![FEATURE_COUNT], vec![0.0; FEATURE_COUNT]);
            p.push("bias", vec![1], vec![0.0]);
            p
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(INIT_STREAM);
            tmlp::init(cfg, &mut rng)
        }
    }
}

/// Scores a group's verified items jointly; unverified items get 0.
pub fn score_items(kind: ModelKind, cfg: &ModelConfig, params: &Params, group: &RankGroup) -> Vec<f64> {
    let mut scores = vec![0.0; group.items.len()];
    let verified = group.verified_indices();
    if verified.is_empty() {
        return scores;
    }
    let rows: Vec<[f64; FEATURE_COUNT]> = verified.iter().map(|&i| group.items[i].features.0).collect();
    let computed = match kind {
        ModelKind::PairwiseLr => {
            let w = &params.tensors[0].data;
            let b = params.tensors[1].data[0];
            rows.iter().map(|r| r.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() + b).collect()
        }
        _ => tmlp::forward(params, cfg, tmlp::features_matrix(&rows).view(), None).0,
    };
    for (i, s) in verified.into_iter().zip(computed) {
        scores[i] = s;
    }
    scores
}

impl TrainedModel {
    pub fn score(&self, group: &RankGroup) -> Vec<f64> {
        score_items(self.kind, &self.config, &self.params, group)
    }
}

/// Final order of a gated group as item indices.
pub fn rerank(group: &RankGroup, model: &TrainedModel) -> Vec<usize> {
    order_by_scores(group, &model.score(group))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::GroundingStatus;
    use crate::features::FeatureVector;
    use rand::Rng;

    fn tiny(kind: ModelKind) -> ModelConfig {
        ModelConfig {
            model_kind: kind,
            embed_width: 6,
            model_width: 8,
            heads: 2,
            ff_width: 12,
            lr: 0.01,
            epochs: 15,
            batch_groups: 4,
            seed: 5,
            ..ModelConfig::default()
        }
    }

    /// Groups where the positive has a larger completion score but feature 0
    /// is pure noise.
    fn groups(count: usize, seed: u64) -> Vec<RankGroup> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|q| {
                let pos = rng.random_range(0..6);
                let items = (0..6)
                    .map(|i| {
                        let mut f = [0.0; FEATURE_COUNT];
                        f.iter_mut().for_each(|x| *x = rng.random::<f64>());
                        f[3] =
                            if i == pos { 0.6 + 0.4 * rng.random::<f64>() } else { 0.05 + 0.5 * rng.random::<f64>() };
                        RankItem {
                            page_id: format!("q{q}p{i}"),
                            features: FeatureVector(f),
                            label: Some(u8::from(i == pos)),
                            original_rank: i as u32 + 1,
                            verified: false,
                            has_instructions: true,
                            grounding_status: GroundingStatus::Full,
                            applied_actions: 1,
                        }
                    })
                    .collect();
                apply_gate(RankGroup::new(format!("q{q}"), items))
            })
            .collect()
    }

    #[test]
    fn pairwise_lr_learns_positive_completion_weight() {
        let cfg = tiny(ModelKind::PairwiseLr);
        let m = train_pairwise_lr(&groups(40, 1), &groups(10, 2), &cfg).unwrap();
        let w = &m.params.get("weights").unwrap().data;
        assert!(w[3] > 0.0, "completion weight {}", w[3]);
        assert!(w[3] > w.iter().enumerate().filter(|(i, _)| *i != 3).map(|(_, x)| x.abs()).fold(0.0, f64::max));
    }

    #[test]
    fn pairwise_lr_without_pairs_errors() {
        let mut g = groups(3, 1);
        g.iter_mut().flat_map(|g| &mut g.items).for_each(|i| i.label = Some(0));
        assert!(matches!(train_pairwise_lr(&g, &[], &tiny(ModelKind::PairwiseLr)), Err(RerankError::NoPairs)));
        assert!(matches!(
            train_tmlp(&g, &[], &tiny(ModelKind::TmlpLambdaloss), ListLoss::LambdaLoss),
            Err(RerankError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn model_file_round_trip_scores_identically() {
        let cfg = tiny(ModelKind::TmlpLambdaloss);
        let train = groups(12, 3);
        let m = train_tmlp(&train, &groups(4, 4), &ModelConfig { epochs: 2, ..cfg }, ListLoss::LambdaLoss).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back, m);
        for g in &train {
            assert_eq!(back.score(g), m.score(g));
        }
        let mut bad = back.clone();
        bad.config.model_width = 10;
        assert!(TrainedModel::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn tmlp_training_is_reproducible_and_improves() {
        let (train, val) = (groups(32, 7), groups(16, 8));
        for loss in [ListLoss::NeuralNdcg, ListLoss::LambdaLoss] {
            let cfg = tiny(ModelKind::TmlpNeuralndcg);
            let a = train_tmlp(&train, &val, &cfg, loss).unwrap();
            let b = train_tmlp(&train, &val, &cfg, loss).unwrap();
            assert_eq!(a.params, b.params);
            assert_eq!(a.history, b.history);
            assert_eq!(a.history.epochs.len(), cfg.epochs);
            assert!(!a.history.stopped_early);
            assert!(a.history.best_val_ndcg >= a.history.initial_val_ndcg + 0.05, "{loss:?}: {:?}", a.history);
            assert_eq!(validation_ndcg(a.kind, &a.config, &a.params, &val), a.history.best_val_ndcg);
        }
    }

    #[test]
    fn rerank_keeps_unverified_block_in_place() {
        let mut g = groups(1, 9).remove(0);
        g.items[1].applied_actions = 0;
        g.items[4].features.0[3] = 0.0;
        let g = apply_gate(g);
        let m = TrainedModel {
            kind: ModelKind::PairwiseLr,
            config: tiny(ModelKind::PairwiseLr),
            history: TrainingHistory::default(),
            params: init_params(&tiny(ModelKind::PairwiseLr), ModelKind::PairwiseLr, 0),
        };
        assert_eq!(rerank(&g, &m), [0, 2, 3, 5, 1, 4]);
    }
}
