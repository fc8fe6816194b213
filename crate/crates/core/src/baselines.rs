//! Rule-based policies for every task, usable for evaluation and for
//! experience collection.

use crate::env::abr::{AbrState, VideoManifest, REBUF_PENALTY, SMOOTH_PENALTY};
use crate::env::cjs::{CjsAction, ClusterState};
use crate::error::{Error, Result};
use crate::vp::Viewport;

pub trait AbrPolicy {
    fn name(&self) -> &str;
    fn reset(&mut self) {}
    fn decide(&mut self, state: &AbrState) -> Result<usize>;
    /// Reward of the step that followed the last decision.
    fn observe(&mut self, _reward: f64) {}
}

pub trait CjsPolicy {
    fn name(&self) -> &str;
    fn reset(&mut self) {}
    fn decide(&mut self, state: &ClusterState) -> Result<CjsAction>;
    fn observe(&mut self, _reward: f64) {}
}

pub trait VpPredictor {
    fn name(&self) -> &str;
    fn predict(&mut self, history: &[Viewport], horizon: usize, rate_hz: f64) -> Result<Vec<Viewport>>;
}

pub fn vp_hold(history: &[Viewport], horizon: usize) -> Vec<Viewport> {
    let last = history.last().copied().unwrap_or([0.0; 3]);
    vec![last; horizon]
}

/// Per-coordinate least-squares line over sample times, extrapolated.
pub fn vp_lr(history: &[Viewport], horizon: usize, rate_hz: f64) -> Vec<Viewport> {
    let n = history.len();
    if n < 2 {
        return vp_hold(history, horizon);
    }
    let ts: Vec<f64> = (0..n).map(|i| i as f64 / rate_hz).collect();
    let t_mean = ts.iter().sum::<f64>() / n as f64;
    let sxx: f64 = ts.iter().map(|t| (t - t_mean).powi(2)).sum();
    let mut slope = [0.0; 3];
    let mut icpt = [0.0; 3];
    for c in 0..3 {
        let y_mean = history.iter().map(|v| v[c]).sum::<f64>() / n as f64;
        let sxy: f64 = ts.iter().zip(history).map(|(t, v)| (t - t_mean) * (v[c] - y_mean)).sum();
        slope[c] = sxy / sxx;
        icpt[c] = y_mean - slope[c] * t_mean;
    }
    (1..=horizon)
        .map(|h| {
            let t = (n - 1 + h) as f64 / rate_hz;
            [0, 1, 2].map(|c| icpt[c] + slope[c] * t)
        })
        .collect()
}

/// Average velocity over the history window, extrapolated from the last sample.
pub fn vp_velocity(history: &[Viewport], horizon: usize, rate_hz: f64) -> Vec<Viewport> {
    let n = history.len();
    if n < 2 {
        return vp_hold(history, horizon);
    }
    let elapsed = (n - 1) as f64 / rate_hz;
    let (first, last) = (history[0], history[n - 1]);
    let vel = [0, 1, 2].map(|c| (last[c] - first[c]) / elapsed);
    (1..=horizon)
        .map(|h| [0, 1, 2].map(|c| last[c] + vel[c] * h as f64 / rate_hz))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VpBaseline {
    Hold,
    Lr,
    Velocity,
}

impl VpPredictor for VpBaseline {
    fn name(&self) -> &str {
        match self {
            VpBaseline::Hold => "hold",
            VpBaseline::Lr => "lr",
            VpBaseline::Velocity => "velocity",
        }
    }

    fn predict(&mut self, history: &[Viewport], horizon: usize, rate_hz: f64) -> Result<Vec<Viewport>> {
        Ok(match self {
            VpBaseline::Hold => vp_hold(history, horizon),
            VpBaseline::Lr => vp_lr(history, horizon, rate_hz),
            VpBaseline::Velocity => vp_velocity(history, horizon, rate_hz),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bba {
    pub levels: usize,
    pub reservoir_s: f64,
    pub cushion_s: f64,
}

impl Bba {
    pub fn new(levels: usize) -> Self {
        Self {
            levels,
            reservoir_s: 5.0,
            cushion_s: 10.0,
        }
    }
}

/// Buffer-based rate map: lowest level inside the reservoir, highest past the
/// cushion, linear (floored) in between.
pub fn abr_bba(buffer_s: f64, levels: usize, reservoir_s: f64, cushion_s: f64) -> usize {
    if buffer_s <= reservoir_s {
        0
    } else if buffer_s >= reservoir_s + cushion_s {
        levels - 1
    } else {
        let frac = (buffer_s - reservoir_s) / cushion_s;
        ((frac * (levels - 1) as f64).floor() as usize).min(levels - 1)
    }
}

impl AbrPolicy for Bba {
    fn name(&self) -> &str {
        "bba"
    }

    fn decide(&mut self, state: &AbrState) -> Result<usize> {
        Ok(abr_bba(state.buffer_s, self.levels, self.reservoir_s, self.cushion_s))
    }
}

/// Plain (non-robust) model predictive control over the next chunks.
#[derive(Clone, Debug)]
pub struct Mpc {
    pub video: VideoManifest,
    pub horizon: usize,
    pub estimator_window: usize,
}

impl Mpc {
    pub fn new(video: VideoManifest) -> Self {
        Self {
            video,
            horizon: 5,
            estimator_window: 5,
        }
    }

    /// Harmonic mean of the most recent nonzero throughput samples.
    pub fn estimate(&self, past: &[f64]) -> Option<f64> {
        let recent: Vec<f64> = past
            .iter()
            .rev()
            .copied()
            .filter(|v| *v > 0.0)
            .take(self.estimator_window)
            .collect();
        if recent.is_empty() {
            return None;
        }
        Some(recent.len() as f64 / recent.iter().map(|v| 1.0 / v).sum::<f64>())
    }

    /// Best first level and its plan value for a given throughput estimate.
    pub fn plan(&self, chunk: usize, buffer_s: f64, last: Option<usize>, mbps: f64) -> (usize, f64) {
        let steps = self.horizon.min(self.video.chunk_count().saturating_sub(chunk)).max(1);
        let mut best = (0, f64::NEG_INFINITY);
        for first in 0..self.video.levels() {
            let v = self.search(chunk, steps, buffer_s, last, first, mbps);
            if v > best.1 {
                best = (first, v);
            }
        }
        best
    }

    fn search(&self, chunk: usize, steps: usize, buffer: f64, last: Option<usize>, level: usize, mbps: f64) -> f64 {
        let bytes = self.video.chunk_sizes[chunk][level];
        let dl = bytes * 8.0 / (mbps * 1e6);
        let rebuf = (dl - buffer).max(0.0);
        let next_buffer = (buffer - dl).max(0.0) + self.video.chunk_duration_s;
        let rate = self.video.ladder_kbps[level] / 1000.0;
        let prev = last.map_or(rate, |l| self.video.ladder_kbps[l] / 1000.0);
        let r = rate - REBUF_PENALTY * rebuf - SMOOTH_PENALTY * (rate - prev).abs();
        if steps == 1 {
            return r;
        }
        let mut best = f64::NEG_INFINITY;
        for nl in 0..self.video.levels() {
            best = best.max(self.search(chunk + 1, steps - 1, next_buffer, Some(level), nl, mbps));
        }
        r + best
    }
}

impl AbrPolicy for Mpc {
    fn name(&self) -> &str {
        "mpc"
    }

    fn decide(&mut self, state: &AbrState) -> Result<usize> {
        if state.chunk_index >= self.video.chunk_count() {
            return Err(Error::Input("no chunks left to plan".into()));
        }
        let Some(mbps) = self.estimate(&state.past_throughputs) else {
            return Ok(0);
        };
        Ok(self.plan(state.chunk_index, state.buffer_s, state.last_level, mbps).0)
    }
}

fn first_runnable(state: &ClusterState, job_pos: usize) -> Option<usize> {
    state.active_jobs[job_pos].stages.iter().position(|s| s.runnable)
}

/// Earliest-arrival job first, lowest runnable stage, every free executor.
#[derive(Clone, Copy, Debug, Default)]
pub struct Fifo;

pub fn cjs_fifo(state: &ClusterState) -> Result<CjsAction> {
    let mut order: Vec<usize> = (0..state.active_jobs.len()).collect();
    order.sort_by(|&a, &b| {
        let (ja, jb) = (&state.active_jobs[a], &state.active_jobs[b]);
        ja.arrival.total_cmp(&jb.arrival).then(ja.id.cmp(&jb.id))
    });
    for pos in order {
        if let Some(stage) = first_runnable(state, pos) {
            return Ok(CjsAction {
                job: state.active_jobs[pos].id,
                stage,
                executors: state.free_executors.max(1),
            });
        }
    }
    Err(Error::Input("no runnable stage".into()))
}

impl CjsPolicy for Fifo {
    fn name(&self) -> &str {
        "fifo"
    }

    fn decide(&mut self, state: &ClusterState) -> Result<CjsAction> {
        cjs_fifo(state)
    }
}

/// Executors granted per turn: ⌈free/active⌉, at least one, at most free.
pub fn fair_grant(free: usize, active: usize) -> usize {
    free.div_ceil(active.max(1)).max(1).min(free.max(1))
}

/// Round robin over active jobs by id.
#[derive(Clone, Debug, Default)]
pub struct Fair {
    last_job: Option<usize>,
}

impl Fair {
    pub fn decide_state(&mut self, state: &ClusterState) -> Result<CjsAction> {
        let mut order: Vec<usize> = (0..state.active_jobs.len()).collect();
        order.sort_by_key(|&p| state.active_jobs[p].id);
        let start = match self.last_job {
            Some(last) => order
                .iter()
                .position(|&p| state.active_jobs[p].id > last)
                .unwrap_or(0),
            None => 0,
        };
        let n = order.len();
        for k in 0..n {
            let pos = order[(start + k) % n];
            if let Some(stage) = first_runnable(state, pos) {
                let job = state.active_jobs[pos].id;
                self.last_job = Some(job);
                return Ok(CjsAction {
                    job,
                    stage,
                    executors: fair_grant(state.free_executors, n),
                });
            }
        }
        Err(Error::Input("no runnable stage".into()))
    }
}

impl CjsPolicy for Fair {
    fn name(&self) -> &str {
        "fair"
    }

    fn reset(&mut self) {
        self.last_job = None;
    }

    fn decide(&mut self, state: &ClusterState) -> Result<CjsAction> {
        self.decide_state(state)
    }
}

pub const ABR_POLICIES: [&str; 2] = ["bba", "mpc"];
pub const CJS_POLICIES: [&str; 2] = ["fifo", "fair"];
pub const VP_POLICIES: [&str; 3] = ["hold", "lr", "velocity"];

fn unknown(name: &str, known: &[&str]) -> Error {
    Error::Usage(format!("unknown policy '{name}'; registered: {}", known.join(", ")))
}

pub fn abr_policy(name: &str, video: &VideoManifest) -> Result<Box<dyn AbrPolicy>> {
    match name {
        "bba" => Ok(Box::new(Bba::new(video.levels()))),
        "mpc" => Ok(Box::new(Mpc::new(video.clone()))),
        _ => Err(unknown(name, &ABR_POLICIES)),
    }
}

pub fn cjs_policy(name: &str) -> Result<Box<dyn CjsPolicy>> {
    match name {
        "fifo" => Ok(Box::new(Fifo)),
        "fair" => Ok(Box::new(Fair::default())),
        _ => Err(unknown(name, &CJS_POLICIES)),
    }
}

pub fn vp_policy(name: &str) -> Result<VpBaseline> {
    match name {
        "hold" => Ok(VpBaseline::Hold),
        "lr" => Ok(VpBaseline::Lr),
        "velocity" => Ok(VpBaseline::Velocity),
        _ => Err(unknown(name, &VP_POLICIES)),
    }
}
