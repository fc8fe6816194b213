//! Chunk-level adaptive bitrate streaming simulator.
//!
//! Bandwidth traces are piecewise constant between samples and wrap around
//! when an episode outlives them. A chunk download costs one RTT plus the
//! time to push its bytes through the trace starting at the current clock.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::RawInput;
use crate::error::{Error, Result};

/// Rebuffering weight in the QoE sum.
pub const REBUF_PENALTY: f64 = 4.3;
/// Bitrate-change weight in the QoE sum.
pub const SMOOTH_PENALTY: f64 = 1.0;

pub const DEFAULT_LADDER_KBPS: [f64; 6] = [300.0, 750.0, 1200.0, 1850.0, 2850.0, 4300.0];
pub const LARGE_LADDER_KBPS: [f64; 6] = [1000.0, 2500.0, 5000.0, 8000.0, 16000.0, 40000.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    pub chunk_duration_s: f64,
    pub ladder_kbps: Vec<f64>,
    /// Bytes per chunk (outer) per ladder level (inner).
    pub chunk_sizes: Vec<Vec<f64>>,
}

impl VideoManifest {
    pub fn chunk_count(&self) -> usize {
        self.chunk_sizes.len()
    }

    pub fn levels(&self) -> usize {
        self.ladder_kbps.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chunk_duration_s > 0.0) {
            return Err(Error::Input("chunk duration must be positive".into()));
        }
        if self.ladder_kbps.is_empty() || self.ladder_kbps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("ladder must be nonempty and ascending".into()));
        }
        if self.chunk_sizes.is_empty() {
            return Err(Error::Input("video has no chunks".into()));
        }
        for (i, sizes) in self.chunk_sizes.iter().enumerate() {
            if sizes.len() != self.levels() {
                return Err(Error::Input(format!("chunk {i} lists {} sizes", sizes.len())));
            }
            if sizes.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Input(format!("chunk {i} has a non-positive size")));
            }
            if sizes.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Input(format!("chunk {i} sizes decrease with bitrate")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: VideoManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoKind {
    Default,
    Large,
}

/// 48 four-second chunks; sizes are `bitrate · duration` with lognormal noise,
/// sorted per chunk so sizes never decrease with bitrate.
pub fn synth_video<R: Rng + ?Sized>(kind: VideoKind, rng: &mut R) -> VideoManifest {
    let ladder: Vec<f64> = match kind {
        VideoKind::Default => DEFAULT_LADDER_KBPS.to_vec(),
        VideoKind::Large => LARGE_LADDER_KBPS.to_vec(),
    };
    let duration = 4.0;
    let noise = LogNormal::new(0.0, 0.1).expect("valid lognormal");
    let chunk_sizes = (0..48)
        .map(|_| {
            let mut sizes: Vec<f64> = ladder
                .iter()
                .map(|kbps| (kbps * 1000.0 / 8.0 * duration * noise.sample(rng)).round().max(1.0))
                .collect();
            sizes.sort_by(f64::total_cmp);
            sizes
        })
        .collect();
    VideoManifest {
        chunk_duration_s: duration,
        ladder_kbps: ladder,
        chunk_sizes,
    }
}

/// Piecewise-constant throughput samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTrace {
    times: Vec<f64>,
    mbps: Vec<f64>,
    period: f64,
}

impl BandwidthTrace {
    pub fn new(times: Vec<f64>, mbps: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != mbps.len() {
            return Err(Error::Input("trace needs matching, nonempty columns".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("trace timestamps must be strictly increasing".into()));
        }
        if let Some(bad) = mbps.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Input(format!("trace throughput must be positive, got {bad}")));
        }
        let n = times.len();
        let last_gap = if n > 1 { times[n - 1] - times[n - 2] } else { 1.0 };
        let period = times[n - 1] + last_gap - times[0];
        let t0 = times[0];
        let times = times.into_iter().map(|t| t - t0).collect();
        Ok(Self { times, mbps, period })
    }

    pub fn constant(mbps: f64, duration: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![mbps]).map(|mut t| {
            t.period = duration;
            t
        })
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.mbps.iter().copied())
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn mean_mbps(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.times.len() {
            let end = self.times.get(i + 1).copied().unwrap_or(self.period);
            total += self.mbps[i] * (end - self.times[i]);
        }
        total / self.period
    }

    fn segment_at(&self, t: f64) -> usize {
        match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// Seconds needed to move `bits` starting at absolute time `start`.
    pub fn transfer_time(&self, start: f64, bits: f64) -> f64 {
        let mut remaining = bits;
        let mut elapsed = 0.0;
        let mut local = start.rem_euclid(self.period);
        let mut seg = self.segment_at(local);
        loop {
            let end = self.times.get(seg + 1).copied().unwrap_or(self.period);
            let rate = self.mbps[seg] * 1e6;
            let span = end - local;
            let capacity = rate * span;
            if capacity >= remaining {
                return elapsed + remaining / rate;
            }
            remaining -= capacity;
            elapsed += span;
            seg += 1;
            local = end;
            if seg == self.times.len() {
                seg = 0;
                local = 0.0;
            }
        }
    }

    /// Parses `timestamp_s throughput_mbps` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut mbps = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::Format(format!("trace line {}: missing column", n + 1)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("trace line {}: {e}", n + 1)))
            };
            times.push(parse(it.next())?);
            mbps.push(parse(it.next())?);
        }
        Self::new(times, mbps)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# netadapt bandwidth trace v1: timestamp_s throughput_mbps\n");
        for (t, m) in self.samples() {
            let _ = writeln!(out, "{t} {m}");
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    Default,
    Volatile,
}

/// Markov-modulated generator parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceGenerator {
    pub min_mbps: f64,
    pub max_mbps: f64,
    pub levels: usize,
    /// Mean number of level switches per second.
    pub switch_rate: f64,
    /// Relative per-sample jitter inside a level.
    pub jitter: f64,
}

impl TraceGenerator {
    pub fn for_kind(kind: TraceKind) -> Self {
        match kind {
            TraceKind::Default => Self {
                min_mbps: 0.8,
                max_mbps: 5.0,
                levels: 8,
                switch_rate: 1.0 / 10.0,
                jitter: 0.05,
            },
            TraceKind::Volatile => Self {
                min_mbps: 0.2,
                max_mbps: 10.0,
                levels: 12,
                switch_rate: 1.0 / 3.0,
                jitter: 0.15,
            },
        }
    }
}

/// One sample per second of throughput hopping between geometrically spaced
/// levels, mostly to neighbouring ones.
pub fn synth_trace<R: Rng + ?Sized>(kind: TraceKind, duration: f64, rng: &mut R) -> BandwidthTrace {
    let gen = TraceGenerator::for_kind(kind);
    let levels: Vec<f64> = (0..gen.levels)
        .map(|i| {
            let f = i as f64 / (gen.levels - 1) as f64;
            gen.min_mbps * (gen.max_mbps / gen.min_mbps).powf(f)
        })
        .collect();
    let hold = Exp::new(gen.switch_rate).expect("positive rate");
    let jitter = Normal::new(0.0, gen.jitter).expect("finite jitter");
    let mut level = rng.gen_range(0..gen.levels);
    let mut next_switch = hold.sample(rng);
    let n = duration.ceil().max(1.0) as usize;
    let mut times = Vec::with_capacity(n);
    let mut mbps = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64;
        while t >= next_switch {
            let step: i64 = *[-2, -1, -1, 1, 1, 2].get(rng.gen_range(0..6)).expect("in range");
            level = (level as i64 + step).clamp(0, gen.levels as i64 - 1) as usize;
            next_switch += hold.sample(rng);
        }
        let v = levels[level] * (1.0 + jitter.sample(rng));
        times.push(t);
        mbps.push(v.max(gen.min_mbps * 0.5));
    }
    BandwidthTrace::new(times, mbps).expect("generator emits valid traces")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbrEnvConfig {
    pub rtt_s: f64,
    pub buffer_cap_s: f64,
    pub history: usize,
    pub initial_buffer_s: f64,
    /// Where in the trace the episode starts.
    pub trace_offset_s: f64,
}

impl Default for AbrEnvConfig {
    fn default() -> Self {
        Self {
            rtt_s: 0.08,
            buffer_cap_s: 60.0,
            history: 8,
            initial_buffer_s: 0.0,
            trace_offset_s: 0.0,
        }
    }
}

/// What a policy sees before choosing the next chunk's bitrate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbrState {
    /// Measured Mbps of the last `k` chunks, oldest first, zero-padded.
    pub past_throughputs: Vec<f64>,
    /// Download seconds of the last `k` chunks, oldest first, zero-padded.
    pub past_delays: Vec<f64>,
    /// Bytes of the next chunk at each ladder level (zeros after the last chunk).
    pub next_chunk_sizes: Vec<f64>,
    pub buffer_s: f64,
    pub last_level: Option<usize>,
    pub chunk_index: usize,
    pub chunks_remaining: usize,
}

impl AbrState {
    /// The four encoded state pieces: throughputs, delays, next sizes, buffer.
    pub fn to_pieces(&self) -> Vec<RawInput> {
        vec![
            RawInput::Series(self.past_throughputs.clone()),
            RawInput::Series(self.past_delays.clone()),
            RawInput::Series(self.next_chunk_sizes.clone()),
            RawInput::Scalar(self.buffer_s),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbrStepResult {
    pub reward: f64,
    pub rebuffer_s: f64,
    pub download_time_s: f64,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub level: usize,
    pub bitrate_mbps: f64,
    pub rebuffer_s: f64,
    pub change_mbps: f64,
    pub download_time_s: f64,
    pub sleep_s: f64,
    pub buffer_after_s: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbrEpisode {
    pub chunks: Vec<ChunkRecord>,
    pub total_chunks: usize,
}

impl AbrEpisode {
    pub fn is_complete(&self) -> bool {
        self.chunks.len() == self.total_chunks
    }

    pub fn mean_bitrate(&self) -> f64 {
        mean(self.chunks.iter().map(|c| c.bitrate_mbps))
    }

    pub fn mean_rebuffer(&self) -> f64 {
        mean(self.chunks.iter().map(|c| c.rebuffer_s))
    }

    pub fn mean_change(&self) -> f64 {
        mean(self.chunks.iter().map(|c| c.change_mbps))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Per-chunk average of `bitrate − 4.3·rebuffer − |Δbitrate|` (Mbps, seconds).
pub fn qoe(episode: &AbrEpisode) -> Result<f64> {
    if !episode.is_complete() || episode.total_chunks == 0 {
        return Err(Error::Input(format!(
            "episode incomplete: {}/{} chunks",
            episode.chunks.len(),
            episode.total_chunks
        )));
    }
    let sum: f64 = episode
        .chunks
        .iter()
        .map(|c| c.bitrate_mbps - REBUF_PENALTY * c.rebuffer_s - SMOOTH_PENALTY * c.change_mbps)
        .sum();
    Ok(sum / episode.total_chunks as f64)
}

/// A single streaming session over one trace.
#[derive(Clone, Debug)]
pub struct AbrEnv {
    video: VideoManifest,
    trace: BandwidthTrace,
    cfg: AbrEnvConfig,
    clock: f64,
    buffer: f64,
    next_chunk: usize,
    last_level: Option<usize>,
    throughputs: Vec<f64>,
    delays: Vec<f64>,
    episode: AbrEpisode,
    errors: usize,
}

impl AbrEnv {
    pub fn new(video: VideoManifest, trace: BandwidthTrace, cfg: AbrEnvConfig) -> Result<Self> {
        video.validate()?;
        if cfg.history == 0 {
            return Err(Error::Config("throughput history must be positive".into()));
        }
        let total = video.chunk_count();
        let mut env = Self {
            video,
            trace,
            cfg,
            clock: 0.0,
            buffer: 0.0,
            next_chunk: 0,
            last_level: None,
            throughputs: Vec::new(),
            delays: Vec::new(),
            episode: AbrEpisode {
                chunks: Vec::new(),
                total_chunks: total,
            },
            errors: 0,
        };
        env.reset();
        Ok(env)
    }

    pub fn video(&self) -> &VideoManifest {
        &self.video
    }

    pub fn reset(&mut self) -> AbrState {
        self.clock = self.cfg.trace_offset_s;
        self.buffer = self.cfg.initial_buffer_s.min(self.cfg.buffer_cap_s);
        self.next_chunk = 0;
        self.last_level = None;
        self.throughputs = vec![0.0; self.cfg.history];
        self.delays = vec![0.0; self.cfg.history];
        self.episode.chunks.clear();
        self.state()
    }

    pub fn is_done(&self) -> bool {
        self.next_chunk >= self.video.chunk_count()
    }

    /// Invalid actions rejected so far.
    pub fn error_count(&self) -> usize {
        self.errors
    }

    /// Seconds of trace time consumed since reset.
    pub fn elapsed(&self) -> f64 {
        self.clock - self.cfg.trace_offset_s
    }

    pub fn buffer(&self) -> f64 {
        self.buffer
    }

    pub fn episode(&self) -> &AbrEpisode {
        &self.episode
    }

    pub fn state(&self) -> AbrState {
        let next_chunk_sizes = if self.is_done() {
            vec![0.0; self.video.levels()]
        } else {
            self.video.chunk_sizes[self.next_chunk].clone()
        };
        AbrState {
            past_throughputs: self.throughputs.clone(),
            past_delays: self.delays.clone(),
            next_chunk_sizes,
            buffer_s: self.buffer,
            last_level: self.last_level,
            chunk_index: self.next_chunk,
            chunks_remaining: self.video.chunk_count() - self.next_chunk,
        }
    }

    pub fn step(&mut self, level: usize) -> Result<(AbrState, AbrStepResult)> {
        if self.is_done() {
            self.errors += 1;
            return Err(Error::Env("episode already finished".into()));
        }
        if level >= self.video.levels() {
            self.errors += 1;
            return Err(Error::Env(format!(
                "bitrate index {level} outside ladder of {}",
                self.video.levels()
            )));
        }
        let bytes = self.video.chunk_sizes[self.next_chunk][level];
        let bits = bytes * 8.0;
        let transfer = self.trace.transfer_time(self.clock + self.cfg.rtt_s, bits);
        let download = self.cfg.rtt_s + transfer;
        let rebuffer = (download - self.buffer).max(0.0);
        let mut buffer = (self.buffer - download).max(0.0) + self.video.chunk_duration_s;
        let sleep = (buffer - self.cfg.buffer_cap_s).max(0.0);
        buffer -= sleep;
        self.clock += download + sleep;
        self.buffer = buffer;

        let bitrate = self.video.ladder_kbps[level] / 1000.0;
        let prev = self.last_level.map_or(bitrate, |l| self.video.ladder_kbps[l] / 1000.0);
        let change = (bitrate - prev).abs();
        let reward = bitrate - REBUF_PENALTY * rebuffer - SMOOTH_PENALTY * change;

        self.throughputs.remove(0);
        self.throughputs.push(bits / download / 1e6);
        self.delays.remove(0);
        self.delays.push(download);
        self.last_level = Some(level);
        self.next_chunk += 1;
        self.episode.chunks.push(ChunkRecord {
            level,
            bitrate_mbps: bitrate,
            rebuffer_s: rebuffer,
            change_mbps: change,
            download_time_s: download,
            sleep_s: sleep,
            buffer_after_s: buffer,
            reward,
        });
        let done = self.is_done();
        Ok((
            self.state(),
            AbrStepResult {
                reward,
                rebuffer_s: rebuffer,
                download_time_s: download,
                done,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_chunk_video(bytes: f64) -> VideoManifest {
        VideoManifest {
            chunk_duration_s: 4.0,
            ladder_kbps: vec![1000.0],
            chunk_sizes: vec![vec![bytes]; 3],
        }
    }

    #[test]
    fn constant_bandwidth_closed_form() {
        // 4 Mbit over 1 Mbps plus 0.08 s RTT from an empty buffer.
        let trace = BandwidthTrace::constant(1.0, 1000.0).unwrap();
        let mut env = AbrEnv::new(one_chunk_video(4e6 / 8.0), trace, AbrEnvConfig::default()).unwrap();
        let (s, r) = env.step(0).unwrap();
        assert_eq!(r.download_time_s, 4.08);
        assert_eq!(r.rebuffer_s, 4.08);
        assert_eq!(s.buffer_s, 4.0);
        assert_eq!(r.reward, 1.0 - 4.3 * 4.08);
    }

    #[test]
    fn no_stall_branch() {
        // 2 s download with 10 s buffered: no stall, buffer 12 s.
        let trace = BandwidthTrace::constant(1.0, 1000.0).unwrap();
        let cfg = AbrEnvConfig {
            rtt_s: 0.0,
            initial_buffer_s: 10.0,
            ..AbrEnvConfig::default()
        };
        let mut env = AbrEnv::new(one_chunk_video(2e6 / 8.0), trace, cfg).unwrap();
        let (s, r) = env.step(0).unwrap();
        assert_eq!(r.rebuffer_s, 0.0);
        assert_eq!(s.buffer_s, 12.0);
    }

    #[test]
    fn first_chunk_has_no_change_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let video = synth_video(VideoKind::Default, &mut rng);
        let trace = BandwidthTrace::constant(50.0, 1000.0).unwrap();
        let mut env = AbrEnv::new(video, trace, AbrEnvConfig::default()).unwrap();
        env.step(5).unwrap();
        assert_eq!(env.episode().chunks[0].change_mbps, 0.0);
        env.step(0).unwrap();
        assert!((env.episode().chunks[1].change_mbps - 4.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_index_is_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let video = synth_video(VideoKind::Default, &mut rng);
        let trace = BandwidthTrace::constant(2.0, 100.0).unwrap();
        let mut env = AbrEnv::new(video, trace, AbrEnvConfig::default()).unwrap();
        assert!(matches!(env.step(6), Err(Error::Env(_))));
        assert_eq!(env.error_count(), 1);
    }

    #[test]
    fn qoe_by_hand() {
        let rec = |b: f64, rb: f64, ch: f64| ChunkRecord {
            level: 0,
            bitrate_mbps: b,
            rebuffer_s: rb,
            change_mbps: ch,
            download_time_s: 0.0,
            sleep_s: 0.0,
            buffer_after_s: 0.0,
            reward: 0.0,
        };
        let one = AbrEpisode {
            chunks: vec![rec(2.85, 0.0, 0.0)],
            total_chunks: 1,
        };
        assert_eq!(qoe(&one).unwrap(), 2.85);
        let two = AbrEpisode {
            chunks: vec![rec(2.85, 0.0, 0.0), rec(0.75, 1.0, 2.1)],
            total_chunks: 2,
        };
        assert!((qoe(&two).unwrap() - (-1.4)).abs() < 1e-12);
        let partial = AbrEpisode {
            chunks: vec![rec(2.85, 0.0, 0.0)],
            total_chunks: 2,
        };
        assert!(qoe(&partial).is_err());
    }

    #[test]
    fn transfer_spans_segments_and_wraps() {
        let t = BandwidthTrace::new(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(t.period(), 2.0);
        // 1 Mbit in [0,1) then 2 Mbit in [1,2), then wraps to 1 Mbps.
        assert!((t.transfer_time(0.0, 3e6) - 2.0).abs() < 1e-12);
        assert!((t.transfer_time(0.0, 3.5e6) - 2.5).abs() < 1e-12);
        assert!((t.transfer_time(1.5, 1e6) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trace_generators() {
        let d = TraceGenerator::for_kind(TraceKind::Default);
        let v = TraceGenerator::for_kind(TraceKind::Volatile);
        assert!(v.max_mbps - v.min_mbps > d.max_mbps - d.min_mbps);
        assert!(v.switch_rate > d.switch_rate);
        let a = synth_trace(TraceKind::Volatile, 300.0, &mut ChaCha8Rng::seed_from_u64(3));
        let b = synth_trace(TraceKind::Volatile, 300.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.samples().all(|(_, m)| m > 0.0));
    }

    #[test]
    fn trace_text_round_trip() {
        let a = synth_trace(TraceKind::Default, 20.0, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(BandwidthTrace::parse(&a.to_text()).unwrap(), a);
        assert!(BandwidthTrace::parse("0 1\n1 -2\n").is_err());
        assert!(BandwidthTrace::parse("0 1\n0 2\n").is_err());
    }

    #[test]
    fn video_generators() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = synth_video(VideoKind::Default, &mut rng);
        assert_eq!(d.ladder_kbps, DEFAULT_LADDER_KBPS.to_vec());
        assert_eq!(d.chunk_duration_s, 4.0);
        d.validate().unwrap();
        let l = synth_video(VideoKind::Large, &mut rng);
        assert!(l.ladder_kbps.last() > d.ladder_kbps.last());
    }
}
