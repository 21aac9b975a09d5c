//! Model configuration, parameter storage and the model file.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::RerankError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    PairwiseLr,
    TmlpNeuralndcg,
    TmlpLambdaloss,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::PairwiseLr, ModelKind::TmlpNeuralndcg, ModelKind::TmlpLambdaloss];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::PairwiseLr => "pairwise_lr",
            ModelKind::TmlpNeuralndcg => "tmlp_neuralndcg",
            ModelKind::TmlpLambdaloss => "tmlp_lambdaloss",
        }
    }

    /// Row label used in reports.
    pub fn display(self) -> &'static str {
        match self {
            ModelKind::PairwiseLr => "LR",
            ModelKind::TmlpNeuralndcg => "NeuralNDCG+TMLP",
            ModelKind::TmlpLambdaloss => "LambdaLoss+TMLP",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model_kind: ModelKind,
    pub embed_width: usize,
    pub model_width: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub heads: usize,
    pub ff_width: usize,
    pub tau: f64,
    pub mu: f64,
    pub sigma: f64,
    pub lr: f64,
    pub scheduler_step: usize,
    pub scheduler_gamma: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Cutoff of the validation NDCG.
    pub val_k: usize,
    pub batch_groups: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_kind: ModelKind::TmlpNeuralndcg,
            embed_width: 96,
            model_width: 384,
            blocks: 2,
            dropout: 0.1,
            heads: 4,
            ff_width: 768,
            tau: 1.0,
            mu: 10.0,
            sigma: 1.0,
            lr: 0.001,
            scheduler_step: 50,
            scheduler_gamma: 0.1,
            epochs: 20,
            patience: 20,
            val_k: 5,
            batch_groups: 16,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<(), RerankError> {
        let bad = |m: String| Err(RerankError::Config(m));
        if [self.embed_width, self.model_width, self.heads, self.ff_width, self.blocks.max(1)].contains(&0) {
            return bad("widths and head count must be positive".into());
        }
        if self.model_width % self.heads != 0 {
            return bad(format!("model_width {} is not divisible by heads {}", self.model_width, self.heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} is outside [0, 1)", self.dropout));
        }
        if self.tau.is_nan()
            || self.tau <= 0.0
            || self.lr.is_nan()
            || self.lr <= 0.0
            || self.batch_groups == 0
            || self.scheduler_step == 0
        {
            return bad("tau, lr, batch_groups and scheduler_step must be positive".into());
        }
        Ok(())
    }
}

/// A named, shaped parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered parameter arrays of a model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    pub tensors: Vec<Tensor>,
}

impl Params {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> usize {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        self.tensors.push(Tensor { name: name.into(), shape, data });
        self.tensors.len() - 1
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor { name: t.name.clone(), shape: t.shape.clone(), data: vec![0.0; t.data.len()] })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|x| *x *= factor));
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn same_layout(&self, other: &Params) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_ndcg: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Validation NDCG before any update.
    pub initial_val_ndcg: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the returned checkpoint; 0 means the untrained parameters.
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub history: TrainingHistory,
    pub params: Params,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    /// Little-endian IEEE-754 doubles, base64 encoded.
    data_b64: String,
}

#[derive(Serialize, Deserialize)]
struct StoredModel {
    kind: ModelKind,
    config: ModelConfig,
    history: TrainingHistory,
    params: Vec<StoredTensor>,
}

impl TrainedModel {
    pub fn to_json(&self) -> String {
        let stored = StoredModel {
            kind: self.kind,
            config: self.config.clone(),
            history: self.history.clone(),
            params: self
                .params
                .tensors
                .iter()
                .map(|t| StoredTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data_b64: B64.encode(t.data.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>()),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&stored).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, RerankError> {
        let stored: StoredModel = serde_json::from_str(text).map_err(|e| RerankError::ModelFile(e.to_string()))?;
        let mut params = Params::default();
        for t in stored.params {
            let bytes = B64.decode(&t.data_b64).map_err(|e| RerankError::ModelFile(format!("{}: {e}", t.name)))?;
            if bytes.len() % 8 != 0 || bytes.len() / 8 != t.shape.iter().product::<usize>() {
                return Err(RerankError::ModelFile(format!("{}: data does not match shape {:?}", t.name, t.shape)));
            }
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            params.push(t.name, t.shape, data);
        }
        let model = TrainedModel { kind: stored.kind, config: stored.config, history: stored.history, params };
        let expected = super::param_layout(&model.config, model.kind);
        let matches = expected.len() == model.params.tensors.len()
            && expected.iter().zip(&model.params.tensors).all(|((n, s), t)| *n == t.name && *s == t.shape);
        if !matches {
            return Err(RerankError::ModelFile("parameter shapes do not match the config".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), RerankError> {
        std::fs::write(path, self.to_json()).map_err(|e| RerankError::ModelFile(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, RerankError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| RerankError::ModelFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
