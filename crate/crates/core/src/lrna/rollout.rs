//! Episode rollouts that both evaluate a policy and record its experience.

use crate::baselines::{AbrPolicy, CjsPolicy};
use crate::encoder::RawInput;
use crate::env::abr::{AbrEnv, AbrEpisode};
use crate::env::cjs::{CjsAction, CjsEnv, JobRecord};
use crate::error::{Error, Result};

use super::data::{ExperienceDataset, TaskKind, Trajectory};

#[derive(Clone, Debug, PartialEq)]
pub struct AbrRollout {
    pub episode: AbrEpisode,
    pub trajectory: Trajectory,
}

/// Plays a full video. Any rejected action aborts the episode.
pub fn rollout_abr(env: &mut AbrEnv, policy: &mut dyn AbrPolicy) -> Result<AbrRollout> {
    let mut state = env.reset();
    policy.reset();
    let (mut rewards, mut states, mut actions) = (Vec::new(), Vec::new(), Vec::new());
    while !env.is_done() {
        let level = policy.decide(&state)?;
        states.push(state.to_pieces());
        let (next, step) = env.step(level)?;
        policy.observe(step.reward);
        rewards.push(step.reward);
        actions.push(vec![level]);
        state = next;
    }
    Ok(AbrRollout {
        episode: env.episode().clone(),
        trajectory: Trajectory::new(rewards, states, actions)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CjsRollout {
    pub jobs: Vec<JobRecord>,
    pub total_reward: f64,
    pub decisions: Vec<CjsAction>,
    pub trajectory: Trajectory,
}

/// Runs a workload to completion. Each decision is recorded as (node index
/// in the state graph, executor level − 1), where the level is the count the
/// environment would actually grant, clamped to `levels`; that clamped count
/// is what gets executed, so replaying the record reproduces the episode.
pub fn rollout_cjs(env: &mut CjsEnv, policy: &mut dyn CjsPolicy, levels: usize) -> Result<CjsRollout> {
    if levels == 0 {
        return Err(Error::Config("at least one executor level is required".into()));
    }
    let mut state = env.reset();
    policy.reset();
    let (mut rewards, mut states, mut actions, mut decisions) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut total = 0.0;
    while !env.is_done() {
        let act = policy.decide(&state)?;
        let (snap, nodes, _) = state.to_graph();
        let node = nodes
            .iter()
            .position(|n| *n == (act.job, act.stage))
            .ok_or_else(|| Error::Env(format!("stage {}/{} is not active", act.job, act.stage)))?;
        let unstarted = state
            .active_jobs
            .iter()
            .find(|j| j.id == act.job)
            .map_or(0, |j| j.stages[act.stage].unstarted);
        let granted = act.executors.min(state.free_executors).min(unstarted).clamp(1, levels);
        let exec = CjsAction {
            executors: granted,
            ..act
        };
        let step = env.step(exec)?;
        policy.observe(step.reward);
        total += step.reward;
        rewards.push(step.reward);
        states.push(vec![RawInput::Graph(snap)]);
        actions.push(vec![node, granted - 1]);
        decisions.push(exec);
        state = step.state;
    }
    Ok(CjsRollout {
        jobs: env.job_records(),
        total_reward: total,
        decisions,
        trajectory: Trajectory::new(rewards, states, actions)?,
    })
}

/// Provenance attached to a collected dataset.
#[derive(Clone, Debug)]
pub struct CollectMeta<'a> {
    pub task: TaskKind,
    pub setting: &'a str,
    pub policy: &'a str,
    pub seed: u64,
}

/// Runs `episode(i)` for each episode index. Episodes whose policy drives
/// the environment into an error are excluded and counted.
pub fn collect_experience(
    meta: CollectMeta<'_>,
    episodes: usize,
    mut episode: impl FnMut(usize) -> Result<Trajectory>,
) -> Result<ExperienceDataset> {
    let mut kept = Vec::with_capacity(episodes);
    let mut aborted = 0;
    for i in 0..episodes {
        match episode(i) {
            Ok(t) => kept.push(t),
            Err(Error::Env(_)) => aborted += 1,
            Err(e) => return Err(e),
        }
    }
    let mut data = ExperienceDataset::new(meta.task, meta.setting, meta.policy, meta.seed, kept)?;
    data.aborted_episodes = aborted;
    Ok(data)
}
