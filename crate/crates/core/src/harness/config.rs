//! Experiment configuration: a TOML file whose sections are optional and
//! fall back to per-task defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::lrna::{LossKind, TaskKind, TrainConfig};

use super::settings::{setting, Setting};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub policy: Option<String>,
    pub episodes: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub window: Option<usize>,
    pub batch_size: Option<usize>,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    /// Gradient clipping norm; zero disables clipping.
    pub clip_norm: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: Option<BackboneConfig>,
    pub frozen_seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSection {
    pub setting: Option<String>,
    pub episodes: Option<usize>,
    pub target_return: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VpSection {
    pub traces: usize,
    pub trace_seconds: f64,
    pub stride: usize,
    pub with_images: bool,
    pub split: [f64; 2],
}

impl Default for VpSection {
    fn default() -> Self {
        Self {
            traces: 100,
            trace_seconds: 60.0,
            stride: 1,
            with_images: false,
            split: [0.7, 0.1],
        }
    }
}

/// Configuration as written by the user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default = "default_setting")]
    pub setting: String,
    pub seed: u64,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub collect: CollectSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub test: TestSection,
    #[serde(default)]
    pub vp: VpSection,
}

fn default_setting() -> String {
    "default".into()
}

/// Every knob with task defaults filled in; this is what gets digested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub task: TaskKind,
    pub setting: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub collect_policy: String,
    pub collect_episodes: usize,
    pub train: TrainConfig,
    pub backbone: BackboneConfig,
    pub frozen_seed: u64,
    pub test_setting: String,
    pub test_episodes: usize,
    pub target_return: Option<f64>,
    pub vp: VpSection,
}

impl ExperimentConfig {
    pub fn new(task: TaskKind, seed: u64) -> Self {
        Self {
            task,
            setting: default_setting(),
            seed,
            paths: PathsSection::default(),
            collect: CollectSection::default(),
            train: TrainSection::default(),
            model: ModelSection::default(),
            test: TestSection::default(),
            vp: VpSection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let task = self.task;
        setting(task, &self.setting)?;
        let test_setting = self.test.setting.clone().unwrap_or_else(|| self.setting.clone());
        setting(task, &test_setting)?;
        let (policy, episodes, steps, batch, clip, test_episodes) = match task {
            TaskKind::Abr => ("bba", 500, 1000, 16, 1.0, 100),
            TaskKind::Cjs => ("fair", 100, 500, 8, 1.0, 20),
            TaskKind::Vp => ("", 0, 2000, 32, 0.0, 0),
        };
        let t = &self.train;
        let clip = t.clip_norm.unwrap_or(clip);
        let train = TrainConfig {
            window: t.window.unwrap_or(task.default_window()),
            batch_size: t.batch_size.unwrap_or(batch),
            steps: t.steps.unwrap_or(steps),
            lr: t.lr.unwrap_or(1e-3),
            clip_norm: (clip > 0.0).then_some(clip),
            seed: self.seed,
            loss: if task.is_rl() { LossKind::Ce } else { LossKind::Mse },
        };
        train.validate()?;
        let r = ResolvedConfig {
            task,
            setting: self.setting.clone(),
            seed: self.seed,
            out_dir: self.paths.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs")),
            collect_policy: self.collect.policy.clone().unwrap_or_else(|| policy.into()),
            collect_episodes: self.collect.episodes.unwrap_or(episodes),
            train,
            backbone: self.model.backbone.clone().unwrap_or_default(),
            frozen_seed: self.model.frozen_seed.unwrap_or(7),
            test_setting,
            test_episodes: self.test.episodes.unwrap_or(test_episodes),
            target_return: self.test.target_return,
            vp: self.vp.clone(),
        };
        r.backbone.validate()?;
        Ok(r)
    }
}

impl ResolvedConfig {
    pub fn train_setting(&self) -> Setting {
        setting(self.task, &self.setting).expect("validated on resolve")
    }

    pub fn test_setting(&self) -> Setting {
        setting(self.task, &self.test_setting).expect("validated on resolve")
    }

    /// SHA-256 of the canonical JSON form; output paths are excluded so
    /// relocating a run does not change its identity.
    pub fn digest(&self) -> String {
        let mut v = self.clone();
        v.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&v).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
