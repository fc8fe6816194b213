//! Named environment settings: a default train/test setting and three
//! progressively unfamiliar ones per task.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::abr::{synth_trace, synth_video, BandwidthTrace, TraceKind, VideoKind, VideoManifest};
use crate::env::cjs::{synth_workload, Workload, WorkloadGenerator};
use crate::error::{Error, Result};
use crate::lrna::TaskKind;
use crate::vp::{synth_viewports, ViewerKind, ViewportGenerator, ViewportTrace, WindowConfig};

pub const SETTING_IDS: [&str; 4] = ["default", "unseen1", "unseen2", "unseen3"];

/// Random streams derived from one experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Train = 1,
    Test = 2,
    Model = 3,
    Sampling = 4,
    Video = 5,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbrSetting {
    pub video: VideoKind,
    pub trace: TraceKind,
    pub trace_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CjsSetting {
    pub jobs: usize,
    pub executors: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VpSetting {
    pub viewers: ViewerKind,
    pub hw_s: f64,
    pub pw_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Setting {
    Abr(AbrSetting),
    Cjs(CjsSetting),
    Vp(VpSetting),
}

fn unknown(id: &str) -> Error {
    Error::Usage(format!("unknown setting '{id}'; registered: {}", SETTING_IDS.join(", ")))
}

/// Looks up a setting by id.
pub fn setting(task: TaskKind, id: &str) -> Result<Setting> {
    let ix = SETTING_IDS.iter().position(|s| *s == id).ok_or_else(|| unknown(id))?;
    let (a, b) = (ix & 1 == 1, ix & 2 == 2);
    Ok(match task {
        TaskKind::Abr => Setting::Abr(AbrSetting {
            video: if b { VideoKind::Large } else { VideoKind::Default },
            trace: if a { TraceKind::Volatile } else { TraceKind::Default },
            trace_seconds: 600.0,
        }),
        // Jobs and executors scaled down from 200/450 jobs and 50k/30k executors.
        TaskKind::Cjs => Setting::Cjs(CjsSetting {
            jobs: if b { 45 } else { 20 },
            executors: if a { 30 } else { 50 },
        }),
        TaskKind::Vp => Setting::Vp(VpSetting {
            viewers: if b { ViewerKind::Restless } else { ViewerKind::Default },
            hw_s: if a { 4.0 } else { 2.0 },
            pw_s: if a { 6.0 } else { 4.0 },
        }),
    })
}

impl AbrSetting {
    /// The video is shared by every split of the experiment.
    pub fn video(&self, seed: u64) -> VideoManifest {
        synth_video(self.video, &mut rng_for(seed, Stream::Video))
    }

    pub fn traces(&self, seed: u64, stream: Stream, count: usize) -> Vec<BandwidthTrace> {
        let mut rng = rng_for(seed, stream);
        (0..count)
            .map(|_| synth_trace(self.trace, self.trace_seconds, &mut rng))
            .collect()
    }
}

impl CjsSetting {
    pub fn workloads(&self, seed: u64, stream: Stream, count: usize) -> Result<Vec<Workload>> {
        let mut rng = rng_for(seed, stream);
        let gen = WorkloadGenerator::default();
        (0..count)
            .map(|_| synth_workload(self.jobs, self.executors, &gen, &mut rng))
            .collect()
    }
}

impl VpSetting {
    pub fn window(&self, stride: usize, with_images: bool) -> WindowConfig {
        WindowConfig {
            hw_s: self.hw_s,
            pw_s: self.pw_s,
            stride,
            with_images,
            ..WindowConfig::default()
        }
    }

    /// Viewer traces; one trace per (viewer, video) pair.
    pub fn traces(&self, seed: u64, count: usize, seconds: f64) -> Result<Vec<ViewportTrace>> {
        let mut rng = rng_for(seed, Stream::Train);
        let gen = ViewportGenerator::for_kind(self.viewers);
        (0..count)
            .map(|i| {
                let mut t = synth_viewports(seconds, 5.0, &gen, &mut rng)?;
                t.viewer = format!("viewer{}", i / 4);
                t.video = format!("video{}", i % 4);
                Ok(t)
            })
            .collect()
    }
}
