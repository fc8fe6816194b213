//! Event-driven cluster scheduler over DAG-structured jobs.
//!
//! Executors stay on a stage until it has no unstarted tasks, then return to
//! the free pool. Control returns to the policy whenever executors are free
//! and some stage is runnable.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::encoder::GraphSnapshot;
use crate::error::{Error, Result};

/// Attributes per node in the scheduler's graph snapshot.
pub const NODE_ATTRS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub task_count: usize,
    pub task_duration: f64,
    #[serde(default)]
    pub parents: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobDag {
    pub id: usize,
    pub arrival: f64,
    pub stages: Vec<StageSpec>,
}

impl JobDag {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Input(format!("job {} has no stages", self.id)));
        }
        if !(self.arrival >= 0.0) {
            return Err(Error::Input(format!("job {} arrives at negative time", self.id)));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.task_count == 0 {
                return Err(Error::Input(format!("job {} stage {i} has no tasks", self.id)));
            }
            if !(s.task_duration > 0.0) || !s.task_duration.is_finite() {
                return Err(Error::Input(format!("job {} stage {i} has a non-positive duration", self.id)));
            }
        }
        self.snapshot_shape().check_acyclic()
    }

    fn snapshot_shape(&self) -> GraphSnapshot {
        GraphSnapshot {
            node_attrs: vec![Vec::new(); self.stages.len()],
            parents: self.stages.iter().map(|s| s.parents.clone()).collect(),
        }
    }

    pub fn total_work(&self) -> f64 {
        self.stages.iter().map(|s| s.task_count as f64 * s.task_duration).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub executors: usize,
    pub jobs: Vec<JobDag>,
}

impl Workload {
    pub fn validate(&self) -> Result<()> {
        if self.executors == 0 {
            return Err(Error::Input("cluster needs at least one executor".into()));
        }
        if self.jobs.is_empty() {
            return Err(Error::Input("workload has no jobs".into()));
        }
        for (i, j) in self.jobs.iter().enumerate() {
            if j.id != i {
                return Err(Error::Input(format!("job at position {i} has id {}", j.id)));
            }
            j.validate()?;
        }
        Ok(())
    }

    pub fn total_work(&self) -> f64 {
        self.jobs.iter().map(JobDag::total_work).sum()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let w: Workload = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadGenerator {
    /// Mean seconds between arrivals.
    pub mean_interarrival: f64,
    pub max_tasks: usize,
    pub min_duration: f64,
    pub max_duration: f64,
}

impl Default for WorkloadGenerator {
    fn default() -> Self {
        Self {
            mean_interarrival: 25.0,
            max_tasks: 40,
            min_duration: 2.0,
            max_duration: 20.0,
        }
    }
}

fn template_parents<R: Rng + ?Sized>(rng: &mut R) -> Vec<Vec<usize>> {
    match rng.gen_range(0..3) {
        0 => {
            let n = rng.gen_range(2..=4);
            (0..n).map(|i| if i == 0 { vec![] } else { vec![i - 1] }).collect()
        }
        1 => {
            let leaves = rng.gen_range(2..=3);
            let mut p: Vec<Vec<usize>> = vec![vec![]; leaves];
            p.push((0..leaves).collect());
            p
        }
        _ => vec![vec![], vec![0], vec![0], vec![1, 2]],
    }
}

/// Poisson arrivals with DAGs drawn from chain, tree and diamond templates.
pub fn synth_workload<R: Rng + ?Sized>(
    job_count: usize,
    executors: usize,
    gen: &WorkloadGenerator,
    rng: &mut R,
) -> Result<Workload> {
    if job_count == 0 || executors == 0 {
        return Err(Error::Config("job and executor counts must be positive".into()));
    }
    let gap = Exp::new(1.0 / gen.mean_interarrival)
        .map_err(|e| Error::Config(format!("interarrival: {e}")))?;
    let mut t = 0.0;
    let mut jobs = Vec::with_capacity(job_count);
    for id in 0..job_count {
        if id > 0 {
            t += gap.sample(rng);
        }
        let stages = template_parents(rng)
            .into_iter()
            .map(|parents| StageSpec {
                task_count: rng.gen_range(1..=gen.max_tasks),
                task_duration: (rng.gen_range(gen.min_duration..=gen.max_duration) * 2.0).round() / 2.0,
                parents,
            })
            .collect();
        jobs.push(JobDag { id, arrival: t, stages });
    }
    let w = Workload { executors, jobs };
    w.validate()?;
    Ok(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CjsAction {
    pub job: usize,
    pub stage: usize,
    pub executors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageView {
    pub task_count: usize,
    pub task_duration: f64,
    pub parents: Vec<usize>,
    pub unstarted: usize,
    pub running: usize,
    pub finished: usize,
    pub executors: usize,
    pub complete: bool,
    pub runnable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: usize,
    pub arrival: f64,
    pub stages: Vec<StageView>,
}

impl JobView {
    pub fn remaining_work(&self) -> f64 {
        self.stages
            .iter()
            .map(|s| (s.unstarted + s.running) as f64 * s.task_duration)
            .sum()
    }
}

/// Snapshot of the cluster at a decision point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub clock: f64,
    pub total_executors: usize,
    pub free_executors: usize,
    /// Arrived, incomplete jobs in arrival order.
    pub active_jobs: Vec<JobView>,
}

impl ClusterState {
    pub fn runnable(&self) -> Vec<(usize, usize)> {
        self.active_jobs
            .iter()
            .flat_map(|j| {
                j.stages
                    .iter()
                    .enumerate()
                    .filter(|(_, s)| s.runnable)
                    .map(move |(i, _)| (j.id, i))
            })
            .collect()
    }

    /// Node list, graph and runnable mask over every stage of every active job.
    pub fn to_graph(&self) -> (GraphSnapshot, Vec<(usize, usize)>, Vec<bool>) {
        let e = self.total_executors as f64;
        let free = self.free_executors as f64 / e;
        let mut nodes = Vec::new();
        let mut attrs = Vec::new();
        let mut parents = Vec::new();
        let mut mask = Vec::new();
        for j in &self.active_jobs {
            let base = nodes.len();
            let remaining = j.remaining_work();
            for (i, s) in j.stages.iter().enumerate() {
                nodes.push((j.id, i));
                attrs.push(vec![
                    s.unstarted as f64 / 20.0,
                    s.task_duration / 10.0,
                    s.unstarted as f64 * s.task_duration / 200.0,
                    s.executors as f64 / e,
                    if s.runnable { 1.0 } else { 0.0 },
                    remaining / 500.0,
                    (self.clock - j.arrival) / 100.0,
                    free,
                ]);
                parents.push(s.parents.iter().map(|p| base + p).collect());
                mask.push(s.runnable);
            }
        }
        (
            GraphSnapshot {
                node_attrs: attrs,
                parents,
            },
            nodes,
            mask,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: usize,
    pub arrival: f64,
    pub completion: Option<f64>,
}

pub fn jct(record: &JobRecord) -> Result<f64> {
    record
        .completion
        .map(|t| t - record.arrival)
        .ok_or_else(|| Error::Input(format!("job {} has not completed", record.id)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CjsStep {
    pub state: ClusterState,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Debug)]
struct StageRt {
    unstarted: usize,
    running: usize,
    finished: usize,
    executors: usize,
    started_at: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum EventKind {
    Arrival { job: usize },
    TaskDone { job: usize, stage: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug)]
pub struct CjsEnv {
    workload: Workload,
    clock: f64,
    free: usize,
    arrived: Vec<bool>,
    completion: Vec<Option<f64>>,
    stages: Vec<Vec<StageRt>>,
    events: BinaryHeap<Event>,
    seq: u64,
    errors: usize,
    busy_executor_seconds: f64,
    stage_starts: Vec<Vec<Option<f64>>>,
    stage_ends: Vec<Vec<Option<f64>>>,
}

impl CjsEnv {
    pub fn new(workload: Workload) -> Result<Self> {
        workload.validate()?;
        let n = workload.jobs.len();
        let mut env = Self {
            free: workload.executors,
            workload,
            clock: 0.0,
            arrived: vec![false; n],
            completion: vec![None; n],
            stages: Vec::new(),
            events: BinaryHeap::new(),
            seq: 0,
            errors: 0,
            busy_executor_seconds: 0.0,
            stage_starts: Vec::new(),
            stage_ends: Vec::new(),
        };
        env.reset();
        Ok(env)
    }

    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    pub fn reset(&mut self) -> ClusterState {
        let n = self.workload.jobs.len();
        self.clock = 0.0;
        self.free = self.workload.executors;
        self.arrived = vec![false; n];
        self.completion = vec![None; n];
        self.stages = self
            .workload
            .jobs
            .iter()
            .map(|j| {
                j.stages
                    .iter()
                    .map(|s| StageRt {
                        unstarted: s.task_count,
                        running: 0,
                        finished: 0,
                        executors: 0,
                        started_at: None,
                    })
                    .collect()
            })
            .collect();
        self.stage_starts = self.workload.jobs.iter().map(|j| vec![None; j.stages.len()]).collect();
        self.stage_ends = self.stage_starts.clone();
        self.events.clear();
        self.seq = 0;
        self.errors = 0;
        self.busy_executor_seconds = 0.0;
        for j in 0..n {
            let t = self.workload.jobs[j].arrival;
            self.push(t, EventKind::Arrival { job: j });
        }
        self.advance();
        self.state()
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    pub fn is_done(&self) -> bool {
        self.completion.iter().all(Option::is_some)
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn free_executors(&self) -> usize {
        self.free
    }

    pub fn assigned_executors(&self) -> usize {
        self.stages.iter().flatten().map(|s| s.executors).sum()
    }

    pub fn error_count(&self) -> usize {
        self.errors
    }

    pub fn busy_executor_seconds(&self) -> f64 {
        self.busy_executor_seconds
    }

    /// First task start and last task finish per (job, stage).
    pub fn stage_spans(&self) -> Vec<Vec<(Option<f64>, Option<f64>)>> {
        self.stage_starts
            .iter()
            .zip(&self.stage_ends)
            .map(|(s, e)| s.iter().copied().zip(e.iter().copied()).collect())
            .collect()
    }

    pub fn job_records(&self) -> Vec<JobRecord> {
        self.workload
            .jobs
            .iter()
            .map(|j| JobRecord {
                id: j.id,
                arrival: j.arrival,
                completion: self.completion[j.id],
            })
            .collect()
    }

    fn active_count(&self) -> usize {
        (0..self.arrived.len())
            .filter(|&j| self.arrived[j] && self.completion[j].is_none())
            .count()
    }

    fn stage_complete(&self, job: usize, stage: usize) -> bool {
        self.stages[job][stage].finished == self.workload.jobs[job].stages[stage].task_count
    }

    fn is_runnable(&self, job: usize, stage: usize) -> bool {
        self.arrived[job]
            && self.completion[job].is_none()
            && self.stages[job][stage].unstarted > 0
            && self.workload.jobs[job].stages[stage]
                .parents
                .iter()
                .all(|&p| self.stage_complete(job, p))
    }

    fn any_runnable(&self) -> bool {
        (0..self.workload.jobs.len())
            .any(|j| (0..self.workload.jobs[j].stages.len()).any(|s| self.is_runnable(j, s)))
    }

    pub fn state(&self) -> ClusterState {
        let active_jobs = self
            .workload
            .jobs
            .iter()
            .filter(|j| self.arrived[j.id] && self.completion[j.id].is_none())
            .map(|j| JobView {
                id: j.id,
                arrival: j.arrival,
                stages: j
                    .stages
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let rt = &self.stages[j.id][i];
                        StageView {
                            task_count: s.task_count,
                            task_duration: s.task_duration,
                            parents: s.parents.clone(),
                            unstarted: rt.unstarted,
                            running: rt.running,
                            finished: rt.finished,
                            executors: rt.executors,
                            complete: self.stage_complete(j.id, i),
                            runnable: self.is_runnable(j.id, i),
                        }
                    })
                    .collect(),
            })
            .collect();
        ClusterState {
            clock: self.clock,
            total_executors: self.workload.executors,
            free_executors: self.free,
            active_jobs,
        }
    }

    fn start_task(&mut self, job: usize, stage: usize) {
        let d = self.workload.jobs[job].stages[stage].task_duration;
        let rt = &mut self.stages[job][stage];
        rt.unstarted -= 1;
        rt.running += 1;
        if rt.started_at.is_none() {
            rt.started_at = Some(self.clock);
            self.stage_starts[job][stage] = Some(self.clock);
        }
        self.busy_executor_seconds += d;
        let t = self.clock + d;
        self.push(t, EventKind::TaskDone { job, stage });
    }

    /// Runs events until a decision is needed or the workload finishes.
    /// Returns the accrued reward.
    fn advance(&mut self) -> f64 {
        let mut reward = 0.0;
        loop {
            if self.is_done() || (self.free > 0 && self.any_runnable()) {
                return reward;
            }
            let Some(next) = self.events.peek().map(|e| e.time) else {
                return reward;
            };
            reward -= self.active_count() as f64 * (next - self.clock);
            self.clock = next;
            while self.events.peek().is_some_and(|e| e.time == next) {
                let ev = self.events.pop().expect("peeked");
                match ev.kind {
                    EventKind::Arrival { job } => self.arrived[job] = true,
                    EventKind::TaskDone { job, stage } => self.finish_task(job, stage),
                }
            }
        }
    }

    fn finish_task(&mut self, job: usize, stage: usize) {
        let total = self.workload.jobs[job].stages[stage].task_count;
        {
            let rt = &mut self.stages[job][stage];
            rt.running -= 1;
            rt.finished += 1;
        }
        if self.stages[job][stage].unstarted > 0 {
            self.start_task(job, stage);
        } else {
            self.stages[job][stage].executors -= 1;
            self.free += 1;
        }
        if self.stages[job][stage].finished == total {
            self.stage_ends[job][stage] = Some(self.clock);
            if (0..self.stages[job].len()).all(|s| self.stage_complete(job, s)) {
                self.completion[job] = Some(self.clock);
            }
        }
    }

    pub fn step(&mut self, action: CjsAction) -> Result<CjsStep> {
        let e = self.workload.executors;
        if self.is_done() {
            self.errors += 1;
            return Err(Error::Env("workload already finished".into()));
        }
        if action.job >= self.workload.jobs.len() || action.stage >= self.workload.jobs[action.job].stages.len() {
            self.errors += 1;
            return Err(Error::Env(format!("stage {}/{} does not exist", action.job, action.stage)));
        }
        if !self.is_runnable(action.job, action.stage) {
            self.errors += 1;
            return Err(Error::Env(format!("stage {}/{} is not runnable", action.job, action.stage)));
        }
        if action.executors == 0 || action.executors > e {
            self.errors += 1;
            return Err(Error::Env(format!("executor count {} outside [1, {e}]", action.executors)));
        }
        let n = action
            .executors
            .min(self.free)
            .min(self.stages[action.job][action.stage].unstarted);
        self.free -= n;
        self.stages[action.job][action.stage].executors += n;
        for _ in 0..n {
            self.start_task(action.job, action.stage);
        }
        let reward = self.advance();
        Ok(CjsStep {
            state: self.state(),
            reward,
            done: self.is_done(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn job(id: usize, arrival: f64, stages: Vec<(usize, f64, Vec<usize>)>) -> JobDag {
        JobDag {
            id,
            arrival,
            stages: stages
                .into_iter()
                .map(|(task_count, task_duration, parents)| StageSpec {
                    task_count,
                    task_duration,
                    parents,
                })
                .collect(),
        }
    }

    #[test]
    fn single_task() {
        let w = Workload {
            executors: 1,
            jobs: vec![job(0, 0.0, vec![(1, 10.0, vec![])])],
        };
        let mut env = CjsEnv::new(w).unwrap();
        let s = env.step(CjsAction { job: 0, stage: 0, executors: 1 }).unwrap();
        assert!(s.done);
        assert_eq!(env.clock(), 10.0);
        assert_eq!(jct(&env.job_records()[0]).unwrap(), 10.0);
        assert_eq!(s.reward, -10.0);
    }

    #[test]
    fn chain_is_serial() {
        let w = Workload {
            executors: 1,
            jobs: vec![job(0, 0.0, vec![(1, 5.0, vec![]), (1, 5.0, vec![0])])],
        };
        let mut env = CjsEnv::new(w).unwrap();
        assert_eq!(env.state().runnable(), vec![(0, 0)]);
        let s = env.step(CjsAction { job: 0, stage: 0, executors: 1 }).unwrap();
        assert_eq!(s.state.runnable(), vec![(0, 1)]);
        env.step(CjsAction { job: 0, stage: 1, executors: 1 }).unwrap();
        assert_eq!(jct(&env.job_records()[0]).unwrap(), 10.0);
    }

    #[test]
    fn jct_examples() {
        let r = JobRecord { id: 0, arrival: 3.5, completion: Some(7.25) };
        assert_eq!(jct(&r).unwrap(), 3.75);
        assert!(jct(&JobRecord { completion: None, ..r }).is_err());
    }

    #[test]
    fn rejects_invalid_actions() {
        let w = Workload {
            executors: 2,
            jobs: vec![job(0, 0.0, vec![(1, 5.0, vec![]), (1, 5.0, vec![0])])],
        };
        let mut env = CjsEnv::new(w).unwrap();
        assert!(env.step(CjsAction { job: 0, stage: 1, executors: 1 }).is_err());
        assert!(env.step(CjsAction { job: 0, stage: 0, executors: 3 }).is_err());
        assert!(env.step(CjsAction { job: 0, stage: 0, executors: 0 }).is_err());
        assert_eq!(env.error_count(), 3);
    }

    #[test]
    fn clamps_to_remaining_tasks() {
        let w = Workload {
            executors: 10,
            jobs: vec![job(0, 0.0, vec![(3, 1.0, vec![]), (1, 1.0, vec![])])],
        };
        let mut env = CjsEnv::new(w).unwrap();
        let s = env.step(CjsAction { job: 0, stage: 0, executors: 10 }).unwrap();
        assert_eq!(s.state.free_executors, 7);
        assert_eq!(env.assigned_executors() + env.free_executors(), 10);
    }

    #[test]
    fn rejects_cyclic_dag() {
        let w = Workload {
            executors: 1,
            jobs: vec![job(0, 0.0, vec![(1, 1.0, vec![1]), (1, 1.0, vec![0])])],
        };
        assert!(CjsEnv::new(w).is_err());
    }

    #[test]
    fn workload_generator() {
        let g = WorkloadGenerator::default();
        let a = synth_workload(20, 50, &g, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = synth_workload(20, 50, &g, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.jobs.len(), 20);
        assert_eq!(a.executors, 50);
        assert!(a.jobs.windows(2).all(|w| w[0].arrival <= w[1].arrival));
    }

    #[test]
    fn graph_offsets_parents_per_job() {
        let w = Workload {
            executors: 4,
            jobs: vec![
                job(0, 0.0, vec![(1, 5.0, vec![]), (1, 5.0, vec![0])]),
                job(1, 0.0, vec![(1, 5.0, vec![]), (1, 5.0, vec![0])]),
            ],
        };
        let env = CjsEnv::new(w).unwrap();
        let (g, nodes, mask) = env.state().to_graph();
        assert_eq!(nodes, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(g.parents[3], vec![2]);
        assert_eq!(mask, vec![true, false, true, false]);
        assert!(g.node_attrs.iter().all(|a| a.len() == NODE_ATTRS));
    }
}
