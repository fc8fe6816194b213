//! Experiment orchestration: collect experience, adapt, test and report.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod report;
pub mod settings;

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::baselines::{abr_policy, cjs_policy, vp_policy, AbrPolicy, CjsPolicy, VpPredictor};
use crate::env::abr::{qoe, AbrEnv, AbrEnvConfig};
use crate::env::cjs::{jct, CjsEnv};
use crate::error::{Error, Result};
use crate::heads::AnswerSpace;
use crate::lrna::{
    adapt_rl, adapt_vp, collect_experience, rollout_abr, rollout_cjs, CollectMeta, DtAbrPolicy, DtCjsPolicy,
    ExperienceDataset, RlModelConfig, TaskKind, VpModelConfig,
};
use crate::vp::{make_dataset, mae, split_traces, VpSample};

pub use checkpoint::{AdaptedModel, Checkpoint, CheckpointManifest, ModelSpec};
pub use config::{ExperimentConfig, ResolvedConfig};
pub use metrics::{EpisodeRecord, MetricKind, MetricsReport};
pub use settings::{rng_for, setting, Setting, Stream, SETTING_IDS};

/// Default artifact locations under the output directory.
pub fn dataset_dir(cfg: &ResolvedConfig) -> PathBuf {
    cfg.out_dir
        .join(format!("{}-{}-{}", cfg.task.name(), cfg.setting, cfg.collect_policy))
}

pub fn checkpoint_dir(cfg: &ResolvedConfig) -> PathBuf {
    cfg.out_dir.join(format!("{}-{}-adapted", cfg.task.name(), cfg.setting))
}

pub fn results_dir(cfg: &ResolvedConfig) -> PathBuf {
    cfg.out_dir.join(format!("{}-{}-results", cfg.task.name(), cfg.test_setting))
}

/// Rolls the configured behaviour policy over training environments.
pub fn collect(cfg: &ResolvedConfig) -> Result<ExperienceDataset> {
    let meta = CollectMeta {
        task: cfg.task,
        setting: &cfg.setting,
        policy: &cfg.collect_policy,
        seed: cfg.seed,
    };
    let setting = cfg.train_setting();
    if cfg.collect_episodes == 0 && !matches!(setting, Setting::Vp(_)) {
        return Err(Error::Config("collection needs at least one episode".into()));
    }
    match setting {
        Setting::Abr(s) => {
            let video = s.video(cfg.seed);
            let mut policy = abr_policy(&cfg.collect_policy, &video)?;
            let traces = s.traces(cfg.seed, Stream::Train, cfg.collect_episodes);
            collect_experience(meta, traces.len(), |i| {
                let mut env = AbrEnv::new(video.clone(), traces[i].clone(), AbrEnvConfig::default())?;
                Ok(rollout_abr(&mut env, policy.as_mut())?.trajectory)
            })
        }
        Setting::Cjs(s) => {
            let mut policy = cjs_policy(&cfg.collect_policy)?;
            let workloads = s.workloads(cfg.seed, Stream::Train, cfg.collect_episodes)?;
            collect_experience(meta, workloads.len(), |i| {
                let mut env = CjsEnv::new(workloads[i].clone())?;
                Ok(rollout_cjs(&mut env, policy.as_mut(), s.executors)?.trajectory)
            })
        }
        Setting::Vp(_) => Err(Error::Usage(
            "viewport prediction is supervised: its samples come from the viewport trace generator \
             (the [vp] config section) and are built by `adapt` directly"
                .into(),
        )),
    }
}

/// Train, validation and test samples for a viewport setting.
pub fn vp_splits(cfg: &ResolvedConfig, setting_id: &str) -> Result<[Vec<VpSample>; 3]> {
    let Setting::Vp(s) = setting(cfg.task, setting_id)? else {
        return Err(Error::Usage(format!("task {} has no viewport samples", cfg.task.name())));
    };
    let traces = s.traces(cfg.seed, cfg.vp.traces, cfg.vp.trace_seconds)?;
    let window = s.window(cfg.vp.stride, cfg.vp.with_images);
    let split = split_traces(traces.len(), cfg.vp.split);
    let mut out: [Vec<VpSample>; 3] = Default::default();
    for (slot, ix) in out.iter_mut().zip(split) {
        let subset: Vec<_> = ix.iter().map(|&i| traces[i].clone()).collect();
        *slot = if subset.is_empty() {
            Vec::new()
        } else {
            let mut samples = make_dataset(&subset, &window)?.samples;
            for s in &mut samples {
                s.trace = ix[s.trace];
            }
            samples
        };
    }
    Ok(out)
}

/// The model description implied by the training setting.
pub fn model_spec(cfg: &ResolvedConfig) -> Result<ModelSpec> {
    Ok(match cfg.train_setting() {
        Setting::Abr(s) => {
            let mut config = RlModelConfig::default_for(TaskKind::Abr)?;
            config.backbone = cfg.backbone.clone();
            config.frozen_seed = cfg.frozen_seed;
            ModelSpec::Rl {
                config,
                space: AnswerSpace::Abr {
                    ladder_kbps: s.video(cfg.seed).ladder_kbps,
                },
            }
        }
        Setting::Cjs(s) => {
            let mut config = RlModelConfig::default_for(TaskKind::Cjs)?;
            config.backbone = cfg.backbone.clone();
            config.frozen_seed = cfg.frozen_seed;
            ModelSpec::Rl {
                config,
                space: AnswerSpace::Cjs {
                    max_stages: 4096,
                    executor_levels: s.executors,
                    total_executors: s.executors,
                },
            }
        }
        Setting::Vp(s) => ModelSpec::Vp {
            config: VpModelConfig {
                backbone: cfg.backbone.clone(),
                frozen_seed: cfg.frozen_seed,
                window: s.window(cfg.vp.stride, cfg.vp.with_images),
                ..VpModelConfig::default()
            },
        },
    })
}

/// Adapts a fresh model. RL tasks need `data`; viewport samples are
/// generated from the config.
pub fn adapt(cfg: &ResolvedConfig, data: Option<&ExperienceDataset>) -> Result<Checkpoint> {
    let spec = model_spec(cfg)?;
    let mut model = AdaptedModel::build(&spec, cfg.seed)?;
    let (report, target) = match &mut model {
        AdaptedModel::Rl(m) => {
            let data = data.ok_or_else(|| Error::Usage(format!("{} adaptation needs an experience dataset", cfg.task.name())))?;
            if data.task != cfg.task {
                return Err(Error::Usage(format!(
                    "dataset holds {} experience but the config adapts {}",
                    data.task.name(),
                    cfg.task.name()
                )));
            }
            let report = adapt_rl(m, data, &cfg.train)?;
            (report, Some(cfg.target_return.unwrap_or_else(|| data.max_return())))
        }
        AdaptedModel::Vp(m) => {
            if data.is_some() {
                return Err(Error::Usage("viewport prediction does not take an experience dataset".into()));
            }
            let [train, _, _] = vp_splits(cfg, &cfg.setting)?;
            (adapt_vp(m, &train, &cfg.train)?, None)
        }
    };
    Checkpoint::new(cfg, spec, model, report, target)
}

/// What a test run evaluates.
pub enum Method<'a> {
    Adapted(&'a Checkpoint),
    Baseline(&'a str),
}

impl Method<'_> {
    pub fn name(&self) -> &str {
        match self {
            Method::Adapted(_) => "adapted",
            Method::Baseline(n) => n,
        }
    }
}

/// Evaluates a method on the test split of `cfg.test_setting`.
pub fn test(cfg: &ResolvedConfig, method: &Method<'_>) -> Result<MetricsReport> {
    let start = Instant::now();
    if let Method::Adapted(c) = method {
        if c.manifest.task != cfg.task {
            return Err(Error::Usage(format!(
                "checkpoint adapts {} but the config tests {}",
                c.manifest.task.name(),
                cfg.task.name()
            )));
        }
    }
    let records = match cfg.test_setting() {
        Setting::Abr(s) => {
            let video = s.video(cfg.seed);
            let traces = s.traces(cfg.seed, Stream::Test, cfg.test_episodes);
            let mut policy: Box<dyn AbrPolicy + '_> = match method {
                Method::Adapted(c) => match &c.model {
                    AdaptedModel::Rl(m) => Box::new(DtAbrPolicy::new(m, c.manifest.config.train.window, target(c)?)),
                    AdaptedModel::Vp(_) => unreachable!("task checked above"),
                },
                Method::Baseline(name) => abr_policy(name, &video)?,
            };
            let mut out = Vec::with_capacity(traces.len());
            for (i, trace) in traces.into_iter().enumerate() {
                let mut env = AbrEnv::new(video.clone(), trace, AbrEnvConfig::default())?;
                let ep = rollout_abr(&mut env, policy.as_mut())?.episode;
                out.push(EpisodeRecord {
                    episode: i,
                    value: qoe(&ep)?,
                    factors: Some([ep.mean_bitrate(), ep.mean_rebuffer(), ep.mean_change()]),
                });
            }
            out
        }
        Setting::Cjs(s) => {
            let workloads = s.workloads(cfg.seed, Stream::Test, cfg.test_episodes)?;
            let (mut policy, levels): (Box<dyn CjsPolicy + '_>, usize) = match method {
                Method::Adapted(c) => match &c.model {
                    AdaptedModel::Rl(m) => (Box::new(DtCjsPolicy::new(m, c.manifest.config.train.window, target(c)?)), m.executor_levels()),
                    AdaptedModel::Vp(_) => unreachable!("task checked above"),
                },
                Method::Baseline(name) => (cjs_policy(name)?, s.executors),
            };
            let mut out = Vec::new();
            for (i, w) in workloads.into_iter().enumerate() {
                let mut env = CjsEnv::new(w)?;
                for job in rollout_cjs(&mut env, policy.as_mut(), levels)?.jobs {
                    out.push(EpisodeRecord {
                        episode: i,
                        value: jct(&job)?,
                        factors: None,
                    });
                }
            }
            out
        }
        Setting::Vp(s) => {
            let [_, _, samples] = vp_splits(cfg, &cfg.test_setting)?;
            let window = s.window(cfg.vp.stride, cfg.vp.with_images);
            let mut predictor: Box<dyn VpPredictor + '_> = match method {
                Method::Adapted(c) => match &c.model {
                    AdaptedModel::Vp(m) => {
                        let trained = &m.config().window;
                        if trained.history_len() != window.history_len() || trained.horizon() != window.horizon() {
                            return Err(Error::Usage(format!(
                                "checkpoint predicts {} steps from {}, setting '{}' needs {} from {}; adapt on a setting with the same windows",
                                trained.horizon(),
                                trained.history_len(),
                                cfg.test_setting,
                                window.horizon(),
                                window.history_len()
                            )));
                        }
                        Box::new(VpRef(m))
                    }
                    AdaptedModel::Rl(_) => unreachable!("task checked above"),
                },
                Method::Baseline(name) => Box::new(vp_policy(name)?),
            };
            let mut out = Vec::with_capacity(samples.len());
            for (i, s) in samples.iter().enumerate() {
                let p = predictor.predict(&s.history, window.horizon(), window.rate_hz)?;
                out.push(EpisodeRecord {
                    episode: i,
                    value: mae(&p, &s.target)?,
                    factors: None,
                });
            }
            out
        }
    };
    MetricsReport::new(
        cfg.task,
        &cfg.test_setting,
        method.name(),
        records,
        start.elapsed().as_secs_f64(),
        &cfg.digest(),
    )
}

fn target(c: &Checkpoint) -> Result<f64> {
    c.manifest
        .target_return
        .ok_or_else(|| Error::Format("checkpoint lacks a target return".into()))
}

/// Borrowing adaptor so a shared model can serve as a predictor.
struct VpRef<'m>(&'m crate::lrna::VpModel);

impl VpPredictor for VpRef<'_> {
    fn name(&self) -> &str {
        "adapted"
    }

    fn predict(&mut self, history: &[crate::vp::Viewport], horizon: usize, rate_hz: f64) -> Result<Vec<crate::vp::Viewport>> {
        if horizon != self.0.horizon() || (rate_hz - self.0.config().window.rate_hz).abs() > 1e-9 {
            return Err(Error::Config("prediction request does not match the trained window".into()));
        }
        self.0.predict(history, None)
    }
}

/// Loads a dataset directory, mapping a missing path to a usage error.
pub fn load_dataset(dir: &Path) -> Result<ExperienceDataset> {
    if !dir.join("manifest.json").exists() {
        return Err(Error::Usage(format!("no dataset at {}", dir.display())));
    }
    ExperienceDataset::load(dir)
}
