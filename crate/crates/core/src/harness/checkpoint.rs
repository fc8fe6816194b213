//! Adapted-model snapshots: a directory holding `manifest.json`,
//! `params.json` (trainable blocks by name) and `loss_curve.json`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::AnswerSpace;
use crate::lrna::{RlModel, RlModelConfig, TaskKind, TrainReport, VpModel, VpModelConfig};
use crate::params::{digest_blocks, ParamStore};
use crate::tensor::Matrix;

use super::config::ResolvedConfig;
use super::settings::{rng_for, Stream};

const CHECKPOINT_FORMAT: &str = "netadapt-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Rl { config: RlModelConfig, space: AnswerSpace },
    Vp { config: VpModelConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub task: TaskKind,
    pub setting: String,
    pub seed: u64,
    pub config: ResolvedConfig,
    pub config_digest: String,
    pub model: ModelSpec,
    pub frozen_checksum: String,
    pub params_digest: String,
    pub dataset_digest: String,
    /// Inference target for return-conditioned models.
    pub target_return: Option<f64>,
    pub train_steps: usize,
}

/// A model together with the task it serves.
pub enum AdaptedModel {
    Rl(RlModel),
    Vp(VpModel),
}

impl AdaptedModel {
    /// Builds a fresh model. Trainable initialization draws from the
    /// experiment's model stream.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, Stream::Model);
        Ok(match spec {
            ModelSpec::Rl { config, space } => {
                let task = match space {
                    AnswerSpace::Abr { .. } => TaskKind::Abr,
                    AnswerSpace::Cjs { .. } => TaskKind::Cjs,
                    AnswerSpace::Vp { .. } => return Err(Error::Config("viewport answers need the supervised model".into())),
                };
                AdaptedModel::Rl(RlModel::new(task, config.clone(), space.clone(), &mut rng)?)
            }
            ModelSpec::Vp { config } => AdaptedModel::Vp(VpModel::new(config.clone(), &mut rng)?),
        })
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            AdaptedModel::Rl(m) => m.store(),
            AdaptedModel::Vp(m) => m.store(),
        }
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            AdaptedModel::Rl(m) => m.store_mut(),
            AdaptedModel::Vp(m) => m.store_mut(),
        }
    }

    pub fn frozen_checksum(&self) -> &str {
        match self {
            AdaptedModel::Rl(m) => m.backbone().frozen_checksum(),
            AdaptedModel::Vp(m) => m.backbone().frozen_checksum(),
        }
    }

    pub fn verify_frozen(&self) -> Result<()> {
        match self {
            AdaptedModel::Rl(m) => m.backbone().verify_frozen(),
            AdaptedModel::Vp(m) => m.backbone().verify_frozen(),
        }
    }
}

pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub model: AdaptedModel,
    pub loss_curve: Vec<f64>,
}

impl Checkpoint {
    pub fn new(config: &ResolvedConfig, spec: ModelSpec, model: AdaptedModel, report: TrainReport, target_return: Option<f64>) -> Result<Self> {
        model.verify_frozen()?;
        if report.frozen_checksum != model.frozen_checksum() {
            return Err(Error::Invariant("frozen checksum changed during adaptation".into()));
        }
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.into(),
            task: config.task,
            setting: config.setting.clone(),
            seed: config.seed,
            config: config.clone(),
            config_digest: config.digest(),
            model: spec,
            frozen_checksum: report.frozen_checksum,
            params_digest: model.store().digest(),
            dataset_digest: report.dataset_digest,
            target_return,
            train_steps: report.loss_curve.len(),
        };
        Ok(Self {
            manifest,
            model,
            loss_curve: report.loss_curve,
        })
    }

    /// Digest identifying the snapshot: trainable values plus frozen checksum.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.manifest.params_digest.as_bytes());
        h.update(self.manifest.frozen_checksum.as_bytes());
        h.update(self.manifest.config_digest.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        std::fs::write(dir.join("params.json"), serde_json::to_string(&self.model.store().to_map())?)?;
        std::fs::write(dir.join("loss_curve.json"), serde_json::to_string(&self.loss_curve)?)?;
        Ok(())
    }

    /// Rebuilds the model, loads trainable blocks and verifies both the
    /// frozen checksum and the parameter digest.
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| Error::Usage(format!("cannot read checkpoint file {}: {e}", dir.join(name).display())))
        };
        let manifest: CheckpointManifest = serde_json::from_str(&read("manifest.json")?)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format '{}'", manifest.format)));
        }
        let blocks: BTreeMap<String, Matrix> = serde_json::from_str(&read("params.json")?)?;
        let loss_curve: Vec<f64> = serde_json::from_str(&read("loss_curve.json")?)?;
        let mut model = AdaptedModel::build(&manifest.model, manifest.seed)?;
        if model.frozen_checksum() != manifest.frozen_checksum {
            return Err(Error::Invariant(format!(
                "frozen set mismatch: checkpoint {} vs rebuilt {}",
                manifest.frozen_checksum,
                model.frozen_checksum()
            )));
        }
        if blocks.len() != model.store().len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameter blocks, model expects {}",
                blocks.len(),
                model.store().len()
            )));
        }
        model.store_mut().load_from(&blocks)?;
        let digest = digest_blocks(model.store().iter());
        if digest != manifest.params_digest {
            return Err(Error::Invariant("checkpoint parameters fail their digest".into()));
        }
        Ok(Self {
            manifest,
            model,
            loss_curve,
        })
    }
}
