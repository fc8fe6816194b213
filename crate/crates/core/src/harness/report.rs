//! Comparison tables, CDF series and SVG plots over several result files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrna::TaskKind;

use super::metrics::{MetricKind, MetricsReport};

pub const FACTOR_NAMES: [&str; 3] = ["bitrate", "rebuffer", "change"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub setting: String,
    pub mean: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    /// Improvement of the mean over the first row, in percent; positive is better.
    pub improvement_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub task: TaskKind,
    pub metric: MetricKind,
    pub rows: Vec<ReportRow>,
    pub cdf: Vec<(String, Vec<(f64, f64)>)>,
    /// Min-max normalized factors per method, 1 best and 0 worst.
    pub factors: Option<Vec<(String, [f64; 3])>>,
}

/// Percent by which `value` beats `reference`.
pub fn improvement_pct(reference: f64, value: f64, higher_is_better: bool) -> f64 {
    if reference == 0.0 {
        return 0.0;
    }
    let gain = if higher_is_better { value - reference } else { reference - value };
    100.0 * gain / reference.abs()
}

/// Maps each factor to [0, 1] across methods. Bitrate is higher-better; the
/// two penalties are lower-better. A factor equal across methods maps to 1.
pub fn min_max_factors(raw: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut out = vec![[0.0; 3]; raw.len()];
    for k in 0..3 {
        let lo = raw.iter().map(|f| f[k]).fold(f64::INFINITY, f64::min);
        let hi = raw.iter().map(|f| f[k]).fold(f64::NEG_INFINITY, f64::max);
        for (o, f) in out.iter_mut().zip(raw) {
            o[k] = if hi == lo {
                1.0
            } else if k == 0 {
                (f[k] - lo) / (hi - lo)
            } else {
                (hi - f[k]) / (hi - lo)
            };
        }
    }
    out
}

pub fn compare(reports: &[MetricsReport]) -> Result<ComparisonReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Usage("report needs at least one result file".into()))?;
    if let Some(r) = reports.iter().find(|r| r.task != first.task) {
        return Err(Error::Usage(format!(
            "cannot compare {} results with {} results",
            r.task.name(),
            first.task.name()
        )));
    }
    let better = first.metric.higher_is_better();
    let rows = reports
        .iter()
        .map(|r| ReportRow {
            method: r.method.clone(),
            setting: r.setting.clone(),
            mean: r.mean,
            p10: r.percentiles.p10,
            p50: r.percentiles.p50,
            p90: r.percentiles.p90,
            improvement_pct: improvement_pct(first.mean, r.mean, better),
        })
        .collect();
    let factors = if reports.iter().all(|r| r.factors.is_some()) && first.task == TaskKind::Abr {
        let raw: Vec<[f64; 3]> = reports.iter().map(|r| r.factors.unwrap()).collect();
        Some(
            reports
                .iter()
                .map(|r| r.method.clone())
                .zip(min_max_factors(&raw))
                .collect(),
        )
    } else {
        None
    };
    Ok(ComparisonReport {
        task: first.task,
        metric: first.metric,
        rows,
        cdf: reports.iter().map(|r| (r.method.clone(), r.cdf.clone())).collect(),
        factors,
    })
}

impl ComparisonReport {
    pub fn markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {} results: {}\n", self.task.name(), self.metric.name());
        let _ = writeln!(s, "| method | setting | mean | p10 | p50 | p90 | improvement % |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:+.2} |",
                r.method, r.setting, r.mean, r.p10, r.p50, r.p90, r.improvement_pct
            );
        }
        if let Some(f) = &self.factors {
            let _ = writeln!(s, "\n## Normalized QoE factors (1 best, 0 worst)\n");
            let _ = writeln!(s, "| method | {} |", FACTOR_NAMES.join(" | "));
            let _ = writeln!(s, "|---|---|---|---|");
            for (m, v) in f {
                let _ = writeln!(s, "| {m} | {:.3} | {:.3} | {:.3} |", v[0], v[1], v[2]);
            }
        }
        s
    }

    pub fn cdf_csv(&self) -> String {
        let mut s = String::from("method,value,fraction\n");
        for (m, pts) in &self.cdf {
            for (x, y) in pts {
                let _ = writeln!(s, "{m},{x},{y}");
            }
        }
        s
    }

    /// Writes the table, CDF data and plots into `dir`; returns the paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = vec![dir.join("report.md"), dir.join("report.json"), dir.join("cdf.csv"), dir.join("cdf.svg")];
        std::fs::write(&files[0], self.markdown())?;
        std::fs::write(&files[1], serde_json::to_string_pretty(self)?)?;
        std::fs::write(&files[2], self.cdf_csv())?;
        self.plot_cdf(&files[3])?;
        if self.factors.is_some() {
            let p = dir.join("factors.svg");
            self.plot_factors(&p)?;
            files.push(p);
        }
        Ok(files)
    }

    fn plot_cdf(&self, path: &Path) -> Result<()> {
        let xs = self.cdf.iter().flat_map(|(_, p)| p.iter().map(|q| q.0));
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let pad = if hi > lo { 0.02 * (hi - lo) } else { 1.0 };
        let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(44)
            .caption(format!("{} CDF", self.metric.name()), ("sans-serif", 18))
            .build_cartesian_2d((lo - pad)..(hi + pad), 0.0..1.0)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc(self.metric.name())
            .y_desc("CDF")
            .draw()
            .map_err(plot_err)?;
        for (i, (m, pts)) in self.cdf.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let mut steps = Vec::with_capacity(2 * pts.len() + 1);
            let mut prev = 0.0;
            for (x, y) in pts {
                steps.push((*x, prev));
                steps.push((*x, *y));
                prev = *y;
            }
            chart
                .draw_series(LineSeries::new(steps, color.stroke_width(2)))
                .map_err(plot_err)?
                .label(m.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
        Ok(())
    }

    fn plot_factors(&self, path: &Path) -> Result<()> {
        let factors = self.factors.as_ref().expect("checked by caller");
        let methods = factors.len() as f64;
        let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(44)
            .caption("Normalized QoE factors", ("sans-serif", 18))
            .build_cartesian_2d(0.0..3.0, 0.0..1.05)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(3)
            .x_label_formatter(&|x: &f64| {
                FACTOR_NAMES
                    .get(x.floor() as usize)
                    .map_or_else(String::new, |s| s.to_string())
            })
            .draw()
            .map_err(plot_err)?;
        for (i, (m, v)) in factors.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let width = 0.8 / methods;
            let bars = (0..3).map(move |k| {
                let x0 = k as f64 + 0.1 + i as f64 * width;
                Rectangle::new([(x0, 0.0), (x0 + width, v[k])], color.filled())
            });
            chart
                .draw_series(bars)
                .map_err(plot_err)?
                .label(m.clone())
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
        Ok(())
    }
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Format(format!("plot: {e}"))
}
