//! Viewport traces, sliding-window datasets and the MAE metric.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::Image;
use crate::error::{Error, Result};

/// Angles stay inside this bound so plain differences never see the wrap.
pub const ANGLE_LIMIT: f64 = 170.0;

pub type Viewport = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewportTrace {
    pub viewer: String,
    pub video: String,
    pub rate_hz: f64,
    /// (roll, pitch, yaw) in degrees.
    pub samples: Vec<Viewport>,
}

impl ViewportTrace {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz > 0.0) {
            return Err(Error::Input("sampling rate must be positive".into()));
        }
        if self.samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Input("viewport angles must be finite".into()));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }

    /// Parses `t_s roll pitch yaw` lines. The rate comes from the first gap
    /// and every other gap must match it.
    pub fn parse(text: &str, viewer: &str, video: &str) -> Result<Self> {
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("viewport line {}: {e}", n + 1)))?;
            if cols.len() != 4 {
                return Err(Error::Format(format!("viewport line {}: expected 4 columns", n + 1)));
            }
            times.push(cols[0]);
            samples.push([cols[1], cols[2], cols[3]]);
        }
        if times.len() < 2 {
            return Err(Error::Format("viewport trace needs at least two samples".into()));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0)) {
            return Err(Error::Format("viewport samples are not evenly spaced".into()));
        }
        let trace = Self {
            viewer: viewer.to_string(),
            video: video.to_string(),
            rate_hz: 1.0 / dt,
            samples,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# t_s roll pitch yaw\n");
        for (i, [r, p, y]) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{} {r} {p} {y}", i as f64 / self.rate_hz);
        }
        out
    }

    pub fn load(path: &Path, viewer: &str, video: &str) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, viewer, video)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VpSample {
    pub trace: usize,
    pub start: usize,
    pub history: Vec<Viewport>,
    pub target: Vec<Viewport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<Image>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub hw_s: f64,
    pub pw_s: f64,
    pub rate_hz: f64,
    pub stride: usize,
    pub with_images: bool,
    pub image_size: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            hw_s: 2.0,
            pw_s: 4.0,
            rate_hz: 5.0,
            stride: 1,
            with_images: false,
            image_size: 16,
        }
    }
}

impl WindowConfig {
    pub fn history_len(&self) -> usize {
        (self.hw_s * self.rate_hz).round() as usize
    }

    pub fn horizon(&self) -> usize {
        (self.pw_s * self.rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.history_len() == 0 || self.horizon() == 0 || self.stride == 0 {
            return Err(Error::Config("history, horizon and stride must be positive".into()));
        }
        if self.with_images && self.image_size < 2 {
            return Err(Error::Config("image size must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VpDataset {
    pub samples: Vec<VpSample>,
    pub skipped_traces: usize,
}

/// Sliding windows over each trace in order; traces that are too short or
/// sampled at a different rate are skipped and counted.
pub fn make_dataset(traces: &[ViewportTrace], cfg: &WindowConfig) -> Result<VpDataset> {
    cfg.validate()?;
    let h = cfg.history_len();
    let p = cfg.horizon();
    let mut samples = Vec::new();
    let mut skipped = 0;
    for (ti, trace) in traces.iter().enumerate() {
        if (trace.rate_hz - cfg.rate_hz).abs() > 1e-9 || trace.samples.len() < h + p {
            skipped += 1;
            continue;
        }
        let mut start = 0;
        while start + h + p <= trace.samples.len() {
            let history = trace.samples[start..start + h].to_vec();
            let target = trace.samples[start + h..start + h + p].to_vec();
            let image = cfg
                .with_images
                .then(|| saliency_image(history[h - 1], cfg.image_size));
            samples.push(VpSample {
                trace: ti,
                start,
                history,
                target,
                image,
            });
            start += cfg.stride;
        }
    }
    Ok(VpDataset {
        samples,
        skipped_traces: skipped,
    })
}

/// Mean over steps of the per-step average absolute angle error.
pub fn mae(pred: &[Viewport], gt: &[Viewport]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Input(format!(
            "prediction has {} steps, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let total: f64 = pred
        .iter()
        .zip(gt)
        .map(|(a, b)| ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0)
        .sum();
    Ok(total / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewerKind {
    Default,
    Restless,
}

/// AR(1) angular velocity per coordinate, in degrees per second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewportGenerator {
    pub persistence: f64,
    pub noise: f64,
    pub max_velocity: f64,
    /// Motion scale for roll, pitch, yaw.
    pub axis_scale: [f64; 3],
}

impl ViewportGenerator {
    pub fn for_kind(kind: ViewerKind) -> Self {
        match kind {
            ViewerKind::Default => Self {
                persistence: 0.9,
                noise: 12.0,
                max_velocity: 90.0,
                axis_scale: [0.2, 0.5, 1.0],
            },
            ViewerKind::Restless => Self {
                persistence: 0.8,
                noise: 25.0,
                max_velocity: 140.0,
                axis_scale: [0.3, 0.6, 1.0],
            },
        }
    }
}

pub fn synth_viewports<R: Rng + ?Sized>(
    duration: f64,
    rate_hz: f64,
    gen: &ViewportGenerator,
    rng: &mut R,
) -> Result<ViewportTrace> {
    if !(duration > 0.0) || !(rate_hz > 0.0) {
        return Err(Error::Config("duration and rate must be positive".into()));
    }
    let n = (duration * rate_hz).round() as usize;
    let eps = Normal::new(0.0, 1.0).expect("unit normal");
    let mut pos = [
        rng.gen_range(-10.0..10.0),
        rng.gen_range(-30.0..30.0),
        rng.gen_range(-120.0..120.0),
    ];
    let mut vel = [0.0f64; 3];
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        samples.push(pos);
        for c in 0..3 {
            let cap = gen.max_velocity * gen.axis_scale[c];
            let v = gen.persistence * vel[c] + gen.noise * gen.axis_scale[c] * eps.sample(rng);
            vel[c] = v.clamp(-cap, cap);
            let next = pos[c] + vel[c] / rate_hz;
            if next.abs() >= ANGLE_LIMIT {
                pos[c] = next.clamp(-ANGLE_LIMIT + 1e-9, ANGLE_LIMIT - 1e-9);
                vel[c] = 0.0;
            } else {
                pos[c] = next;
            }
        }
    }
    Ok(ViewportTrace {
        viewer: String::new(),
        video: String::new(),
        rate_hz,
        samples,
    })
}

/// Continuous pixel coordinates (column, row) of a viewport on a square
/// equirectangular canvas: yaw maps to columns and pitch to rows.
pub fn project_viewport(v: Viewport, size: usize) -> (f64, f64) {
    let span = (size - 1) as f64;
    let col = (v[2] + 180.0) / 360.0 * span;
    let row = (v[1] + 180.0) / 360.0 * span;
    (col, row)
}

/// Single-channel Gaussian blob centred on the projected viewport.
pub fn saliency_image(v: Viewport, size: usize) -> Image {
    let (cx, cy) = project_viewport(v, size);
    let sigma = size as f64 / 8.0;
    let mut img = Image::zeros(size, size, 1);
    for r in 0..size {
        for c in 0..size {
            let d2 = (c as f64 - cx).powi(2) + (r as f64 - cy).powi(2);
            img.pixels[r * size + c] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    img
}

/// Splits trace indices into train/validation/test so no trace is shared.
pub fn split_traces(count: usize, fractions: [f64; 2]) -> [Vec<usize>; 3] {
    let n_train = ((count as f64) * fractions[0]).round() as usize;
    let n_val = ((count as f64) * fractions[1]).round() as usize;
    let n_train = n_train.min(count);
    let n_val = n_val.min(count - n_train);
    [
        (0..n_train).collect(),
        (n_train..n_train + n_val).collect(),
        (n_train + n_val..count).collect(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trace(seconds: f64) -> ViewportTrace {
        synth_viewports(
            seconds,
            5.0,
            &ViewportGenerator::for_kind(ViewerKind::Default),
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap()
    }

    #[test]
    fn window_count() {
        let d = make_dataset(&[trace(60.0)], &WindowConfig::default()).unwrap();
        assert_eq!(d.samples.len(), 271);
        assert_eq!(d.samples[0].history.len(), 10);
        assert_eq!(d.samples[0].target.len(), 20);
        assert_eq!(d.skipped_traces, 0);
    }

    #[test]
    fn windows_are_contiguous() {
        let t = trace(20.0);
        let d = make_dataset(std::slice::from_ref(&t), &WindowConfig::default()).unwrap();
        for s in &d.samples {
            let joined: Vec<Viewport> = s.history.iter().chain(&s.target).copied().collect();
            assert_eq!(joined, t.samples[s.start..s.start + 30].to_vec());
        }
    }

    #[test]
    fn short_traces_are_skipped() {
        let d = make_dataset(&[trace(5.0), trace(7.0)], &WindowConfig::default()).unwrap();
        assert_eq!(d.skipped_traces, 1);
        assert_eq!(d.samples.len(), 6);
    }

    #[test]
    fn mae_examples() {
        let a = [[1.0, 2.0, 3.0]];
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
        assert_eq!(mae(&[[10.0, 20.0, 30.0]], &[[13.0, 17.0, 33.0]]).unwrap(), 3.0);
        let pred = [[0.0; 3], [0.0; 3]];
        let gt = [[3.0; 3], [6.0; 3]];
        assert_eq!(mae(&pred, &gt).unwrap(), 4.5);
        assert!(mae(&pred, &gt[..1]).is_err());
    }

    #[test]
    fn generator_bounds() {
        let g = ViewportGenerator::for_kind(ViewerKind::Default);
        let t = trace(120.0);
        assert_eq!(t, trace(120.0));
        for w in t.samples.windows(2) {
            for c in 0..3 {
                assert!((w[1][c] - w[0][c]).abs() <= g.max_velocity * g.axis_scale[c] / 5.0 + 1e-9);
                assert!(w[1][c].abs() < ANGLE_LIMIT);
            }
        }
    }

    #[test]
    fn blob_peak_at_projection() {
        let v = [0.0, 0.0, 0.0];
        let img = saliency_image(v, 17);
        let (cx, cy) = project_viewport(v, 17);
        assert_eq!((cx, cy), (8.0, 8.0));
        let peak = img
            .pixels
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 8 * 17 + 8);
        assert_eq!(img.pixels[peak], 1.0);
    }

    #[test]
    fn text_round_trip() {
        let t = trace(4.0);
        let back = ViewportTrace::parse(&t.to_text(), "", "").unwrap();
        assert_eq!(back.samples, t.samples);
        assert!((back.rate_hz - 5.0).abs() < 1e-9);
    }

    #[test]
    fn splits_are_disjoint() {
        let [a, b, c] = split_traces(10, [0.6, 0.2]);
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
        assert!(a.iter().all(|i| !b.contains(i) && !c.contains(i)));
    }
}
