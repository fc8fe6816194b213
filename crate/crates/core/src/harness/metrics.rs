//! Per-episode metric records and their summary.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lrna::TaskKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Qoe,
    Jct,
    Mae,
}

impl MetricKind {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Abr => MetricKind::Qoe,
            TaskKind::Cjs => MetricKind::Jct,
            TaskKind::Vp => MetricKind::Mae,
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == MetricKind::Qoe
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Qoe => "QoE",
            MetricKind::Jct => "JCT (s)",
            MetricKind::Mae => "MAE (deg)",
        }
    }
}

/// One line of the result file. For scheduling each job is a record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub value: f64,
    /// Mean bitrate (Mbps), rebuffer (s) and change (Mbps) per chunk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<[f64; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: TaskKind,
    pub setting: String,
    pub method: String,
    pub metric: MetricKind,
    pub records: Vec<EpisodeRecord>,
    pub mean: f64,
    pub percentiles: Percentiles,
    /// (value, fraction of records ≤ value).
    pub cdf: Vec<(f64, f64)>,
    /// Mean of the per-record factors, when the task has them.
    pub factors: Option<[f64; 3]>,
    pub runtime_s: f64,
    pub config_digest: String,
    /// Hash of everything above except the runtime.
    pub digest: String,
}

/// Linear-interpolated percentile of an ascending sample (`q` in [0, 1]).
pub fn percentile(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Input("percentile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Input(format!("quantile {q} outside [0, 1]")));
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Empirical CDF at each distinct value.
pub fn cdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => out.push((*x, frac)),
        }
    }
    out
}

impl MetricsReport {
    pub fn new(
        task: TaskKind,
        setting: &str,
        method: &str,
        records: Vec<EpisodeRecord>,
        runtime_s: f64,
        config_digest: &str,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Input("no episodes to report".into()));
        }
        if let Some(r) = records.iter().find(|r| !r.value.is_finite()) {
            return Err(Error::Invariant(format!("episode {} has metric {}", r.episode, r.value)));
        }
        let values: Vec<f64> = records.iter().map(|r| r.value).collect();
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let factors = if records.iter().all(|r| r.factors.is_some()) {
            let mut f = [0.0; 3];
            for r in &records {
                for (acc, x) in f.iter_mut().zip(r.factors.unwrap()) {
                    *acc += x / n;
                }
            }
            Some(f)
        } else {
            None
        };
        let mut report = Self {
            task,
            setting: setting.into(),
            method: method.into(),
            metric: MetricKind::for_task(task),
            mean: values.iter().sum::<f64>() / n,
            percentiles: Percentiles {
                p10: percentile(&sorted, 0.1)?,
                p50: percentile(&sorted, 0.5)?,
                p90: percentile(&sorted, 0.9)?,
            },
            cdf: cdf_points(&values),
            records,
            factors,
            runtime_s,
            config_digest: config_digest.into(),
            digest: String::new(),
        };
        report.digest = report.content_digest();
        Ok(report)
    }

    pub fn content_digest(&self) -> String {
        let mut v = self.clone();
        v.runtime_s = 0.0;
        v.digest = String::new();
        hex::encode(Sha256::digest(serde_json::to_vec(&v).expect("report serializes")))
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.value).collect()
    }

    /// Writes `<stem>.jsonl` (one record per line) and `<stem>.summary.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}.jsonl")))?);
        for r in &self.records {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        std::fs::write(
            dir.join(format!("{stem}.summary.json")),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }

    /// Loads a summary file and checks its digest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
        let r: Self = serde_json::from_str(&text)?;
        if r.content_digest() != r.digest {
            return Err(Error::Invariant(format!("report {} fails its digest", path.display())));
        }
        Ok(r)
    }
}

pub fn read_records(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
