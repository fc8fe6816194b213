//! Optimizer loops for offline-RL and supervised adaptation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::params::{Adam, AdamConfig};
use crate::vp::VpSample;

use super::data::{sample_window, ExperienceDataset, LossKind};
use super::rl_model::RlModel;
use super::vp_model::VpModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub window: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: 10,
            batch_size: 16,
            steps: 500,
            lr: 1e-3,
            clip_norm: Some(1.0),
            seed: 0,
            loss: LossKind::Ce,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.batch_size == 0 {
            return Err(Error::Config("window and batch size must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_curve: Vec<f64>,
    pub frozen_checksum: String,
    pub dataset_digest: String,
}

/// Offline-RL adaptation: each step samples `batch_size` windows and
/// minimizes the mean action cross-entropy.
pub fn adapt_rl(model: &mut RlModel, data: &ExperienceDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.loss != LossKind::Ce {
        return Err(Error::Config("discrete actions are trained with cross-entropy".into()));
    }
    if data.task != model.task() {
        return Err(Error::Usage(format!(
            "dataset holds {} experience, model adapts {}",
            data.task.name(),
            model.task().name()
        )));
    }
    if data.state_pieces() != model.state_pieces() || data.action_pieces() != model.action_pieces() {
        return Err(Error::Usage("dataset pieces do not match the model inputs".into()));
    }
    model.backbone().config().check_window(cfg.window, model.state_pieces(), model.action_pieces())?;
    model.backbone().verify_frozen()?;
    let digest = data.digest();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.store(), cfg.adam());
    let mut curve = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let windows = (0..cfg.batch_size)
            .map(|_| sample_window(data, cfg.window, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut g = Graph::new();
        let Some(loss) = model.batch_loss(&mut g, data, &windows)? else {
            curve.push(f64::NAN);
            continue;
        };
        let value = g.value(loss).data[0];
        if !value.is_finite() {
            return Err(Error::Invariant(format!("loss became {value}")));
        }
        curve.push(value);
        let grads = g.backward(loss).param_grads();
        adam.step(model.store_mut(), &grads);
    }
    model.backbone().verify_frozen()?;
    if data.digest() != digest {
        return Err(Error::Invariant("experience dataset changed during adaptation".into()));
    }
    Ok(TrainReport {
        loss_curve: curve,
        frozen_checksum: model.backbone().frozen_checksum().to_string(),
        dataset_digest: digest,
    })
}

/// Supervised adaptation over shuffled minibatches (reshuffled each epoch).
pub fn adapt_vp(model: &mut VpModel, samples: &[VpSample], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.loss != LossKind::Mse {
        return Err(Error::Config("viewport regression is trained with mean squared error".into()));
    }
    if samples.is_empty() {
        return Err(Error::Input("supervised dataset is empty".into()));
    }
    model.backbone().verify_frozen()?;
    let digest = samples_digest(samples);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.store(), cfg.adam());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(samples.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&samples[order[cursor]]);
            cursor += 1;
        }
        let mut g = Graph::new();
        let loss = model.batch_loss(&mut g, &batch)?;
        let value = g.value(loss).data[0];
        if !value.is_finite() {
            return Err(Error::Invariant(format!("loss became {value}")));
        }
        curve.push(value);
        let grads = g.backward(loss).param_grads();
        adam.step(model.store_mut(), &grads);
    }
    model.backbone().verify_frozen()?;
    Ok(TrainReport {
        loss_curve: curve,
        frozen_checksum: model.backbone().frozen_checksum().to_string(),
        dataset_digest: digest,
    })
}

pub fn samples_digest(samples: &[VpSample]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for s in samples {
        h.update(serde_json::to_vec(s).expect("samples serialize"));
    }
    hex::encode(h.finalize())
}
