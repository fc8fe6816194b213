//! Trajectories, return annotation, experience datasets and window sampling.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::RawInput;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Abr,
    Cjs,
    Vp,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Abr => "abr",
            TaskKind::Cjs => "cjs",
            TaskKind::Vp => "vp",
        }
    }

    pub fn is_rl(self) -> bool {
        !matches!(self, TaskKind::Vp)
    }

    /// Default context window for offline-RL training.
    pub fn default_window(self) -> usize {
        match self {
            TaskKind::Abr => 10,
            TaskKind::Cjs => 20,
            TaskKind::Vp => 1,
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abr" => Ok(TaskKind::Abr),
            "cjs" => Ok(TaskKind::Cjs),
            "vp" => Ok(TaskKind::Vp),
            other => Err(Error::Usage(format!("unknown task '{other}'; expected abr, cjs or vp"))),
        }
    }
}

/// Suffix sums: `R_t = Σ_{i≥t} r_i`.
pub fn compute_returns(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Input("cannot annotate an empty reward sequence".into()));
    }
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc += r;
        out[i] = acc;
    }
    Ok(out)
}

/// One episode: per step a reward, the state pieces and discrete action pieces,
/// plus the returns-to-go derived from the rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
    pub states: Vec<Vec<RawInput>>,
    pub actions: Vec<Vec<usize>>,
}

impl Trajectory {
    pub fn new(rewards: Vec<f64>, states: Vec<Vec<RawInput>>, actions: Vec<Vec<usize>>) -> Result<Self> {
        let returns = compute_returns(&rewards)?;
        let t = Self {
            rewards,
            returns,
            states,
            actions,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.rewards.len();
        if t == 0 || self.returns.len() != t || self.states.len() != t || self.actions.len() != t {
            return Err(Error::Input(format!(
                "trajectory lengths differ: rewards {t}, returns {}, states {}, actions {}",
                self.returns.len(),
                self.states.len(),
                self.actions.len()
            )));
        }
        let n = self.states[0].len();
        let m = self.actions[0].len();
        if self.states.iter().any(|s| s.len() != n) || self.actions.iter().any(|a| a.len() != m) {
            return Err(Error::Input("state or action piece counts vary within a trajectory".into()));
        }
        for i in 0..t {
            let next = if i + 1 < t { self.returns[i + 1] } else { 0.0 };
            if self.returns[i] != self.rewards[i] + next {
                return Err(Error::Input(format!("return recursion broken at step {i}")));
            }
        }
        Ok(())
    }

    pub fn total_reward(&self) -> f64 {
        self.returns[0]
    }
}

/// Provenance of an experience dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub task: TaskKind,
    pub setting: String,
    pub policy: String,
    pub seed: u64,
    pub trajectories: usize,
    pub state_pieces: usize,
    pub action_pieces: usize,
    pub max_return: f64,
    pub aborted_episodes: usize,
    pub digest: String,
}

/// Immutable corpus of return-annotated trajectories.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperienceDataset {
    pub task: TaskKind,
    pub setting: String,
    pub policy: String,
    pub seed: u64,
    pub aborted_episodes: usize,
    trajectories: Vec<Trajectory>,
}

const DATASET_FORMAT: &str = "netadapt-experience-v1";

impl ExperienceDataset {
    pub fn new(
        task: TaskKind,
        setting: &str,
        policy: &str,
        seed: u64,
        trajectories: Vec<Trajectory>,
    ) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Input("experience dataset is empty".into()));
        }
        for t in &trajectories {
            t.validate()?;
        }
        let (n, m) = (trajectories[0].states[0].len(), trajectories[0].actions[0].len());
        if trajectories
            .iter()
            .any(|t| t.states[0].len() != n || t.actions[0].len() != m)
        {
            return Err(Error::Input("piece counts vary across trajectories".into()));
        }
        Ok(Self {
            task,
            setting: setting.to_string(),
            policy: policy.to_string(),
            seed,
            aborted_episodes: 0,
            trajectories,
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn state_pieces(&self) -> usize {
        self.trajectories[0].states[0].len()
    }

    pub fn action_pieces(&self) -> usize {
        self.trajectories[0].actions[0].len()
    }

    /// Largest episode return, the default inference target.
    pub fn max_return(&self) -> f64 {
        self.trajectories
            .iter()
            .map(Trajectory::total_reward)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// SHA-256 over the serialized trajectories.
    pub fn digest(&self) -> String {
        let mut h = sha2::Sha256::default();
        use sha2::Digest;
        for t in &self.trajectories {
            h.update(serde_json::to_vec(t).expect("trajectories serialize"));
        }
        hex::encode(h.finalize())
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            format: DATASET_FORMAT.into(),
            task: self.task,
            setting: self.setting.clone(),
            policy: self.policy.clone(),
            seed: self.seed,
            trajectories: self.len(),
            state_pieces: self.state_pieces(),
            action_pieces: self.action_pieces(),
            max_return: self.max_return(),
            aborted_episodes: self.aborted_episodes,
            digest: self.digest(),
        }
    }

    /// Writes `trajectories.jsonl` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("trajectories.jsonl"))?);
        for t in &self.trajectories {
            serde_json::to_writer(&mut f, t)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest())?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.format != DATASET_FORMAT {
            return Err(Error::Format(format!("unsupported dataset format '{}'", manifest.format)));
        }
        let f = BufReader::new(std::fs::File::open(dir.join("trajectories.jsonl"))?);
        let mut trajectories = Vec::new();
        for line in f.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                trajectories.push(serde_json::from_str(&line)?);
            }
        }
        let mut d = Self::new(manifest.task, &manifest.setting, &manifest.policy, manifest.seed, trajectories)?;
        d.aborted_episodes = manifest.aborted_episodes;
        if d.digest() != manifest.digest {
            return Err(Error::Invariant(format!(
                "dataset digest mismatch: manifest {} vs contents {}",
                manifest.digest,
                d.digest()
            )));
        }
        Ok(d)
    }
}

/// A context window: `steps[k]` is the trajectory step at slot `k`, `None`
/// for left padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledWindow {
    pub trajectory: usize,
    /// 1-based end index `t`.
    pub end: usize,
    pub steps: Vec<Option<usize>>,
}

impl SampledWindow {
    pub fn mask(&self) -> Vec<bool> {
        self.steps.iter().map(Option::is_some).collect()
    }

    pub fn valid_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.is_some()).count()
    }
}

/// Window ending at 1-based step `end` of a trajectory of length `len`.
pub fn window_at(trajectory: usize, len: usize, end: usize, w: usize) -> SampledWindow {
    assert!(end >= 1 && end <= len && w >= 1);
    let steps = (0..w)
        .map(|k| {
            let back = w - 1 - k;
            (end > back).then(|| end - 1 - back)
        })
        .collect();
    SampledWindow {
        trajectory,
        end,
        steps,
    }
}

/// Trajectory uniform, end index uniform in `[1, T]`.
pub fn sample_window<R: Rng + ?Sized>(data: &ExperienceDataset, w: usize, rng: &mut R) -> Result<SampledWindow> {
    if w == 0 {
        return Err(Error::Config("context window must be at least 1".into()));
    }
    let ti = rng.gen_range(0..data.len());
    let len = data.trajectories()[ti].len();
    let end = rng.gen_range(1..=len);
    Ok(window_at(ti, len, end, w))
}

/// Tokens per window: `w·(1+n+m)`.
pub fn tokens_per_window(w: usize, n: usize, m: usize) -> usize {
    w * (1 + n + m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Mse,
}

/// Plain-value supervised loss. For `Mse`, `y` and `y_hat` are flat value
/// vectors. For `Ce`, `y_hat` is a row of logits and `y` one-hot or a
/// probability vector.
pub fn sl_loss(y: &[f64], y_hat: &[f64], kind: LossKind) -> Result<f64> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::Input(format!("label has {} values, prediction {}", y.len(), y_hat.len())));
    }
    Ok(match kind {
        LossKind::Mse => y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64,
        LossKind::Ce => {
            let max = y_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + y_hat.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            y.iter()
                .zip(y_hat)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, l)| p * (lse - l))
                .sum()
        }
    })
}

/// Plain-value offline-RL loss over one window: per valid timestep, the
/// cross-entropy of every action piece, summed and divided by the number of
/// valid timesteps. `logits[i][j]` scores piece `j` at slot `i`. Returns
/// `None` when every slot is masked.
pub fn rl_loss(actions: &[Vec<usize>], logits: &[Vec<Vec<f64>>], mask: &[bool]) -> Result<Option<f64>> {
    if actions.len() != mask.len() || logits.len() != mask.len() {
        return Err(Error::Input("window slots disagree".into()));
    }
    let valid = mask.iter().filter(|m| **m).count();
    if valid == 0 {
        return Ok(None);
    }
    let mut total = 0.0;
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        if actions[i].len() != logits[i].len() {
            return Err(Error::Input(format!("slot {i} has mismatched action pieces")));
        }
        for (a, l) in actions[i].iter().zip(&logits[i]) {
            if *a >= l.len() {
                return Err(Error::Input(format!("action {a} outside {} classes", l.len())));
            }
            let mut onehot = vec![0.0; l.len()];
            onehot[*a] = 1.0;
            total += sl_loss(&onehot, l, LossKind::Ce)?;
        }
    }
    Ok(Some(total / valid as f64))
}
