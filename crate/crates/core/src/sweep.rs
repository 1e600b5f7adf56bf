//! Pause-time sweeps: one independent world per (variant, pause time, seed),
//! run in parallel and reported in a fixed order.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, ScenarioConfig, Variant};
use crate::metrics::MetricsReport;
use crate::world::run_experiment;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub pause_times: Vec<f64>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

impl SweepSpec {
    /// Seeds run from `cfg.seed` upward, `cfg.sweep.seeds` of them.
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        SweepSpec {
            pause_times: cfg.sweep.pause_times.clone(),
            seeds: (0..u64::from(cfg.sweep.seeds)).map(|i| cfg.seed + i).collect(),
            variants: cfg.sweep.variants.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, reason: &str| ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        };
        if self.pause_times.is_empty() {
            return Err(bad("sweep.pause_times", "must not be empty"));
        }
        if self.pause_times.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(bad("sweep.pause_times", "values must be non-negative"));
        }
        if self.seeds.is_empty() {
            return Err(bad("sweep.seeds", "must be at least 1"));
        }
        if self.variants.is_empty() {
            return Err(bad("sweep.variants", "must not be empty"));
        }
        Ok(())
    }

    /// Every run, ordered by (variant, pause time, seed).
    pub fn points(&self) -> Vec<(Variant, f64, u64)> {
        let mut pts = Vec::new();
        for &v in &self.variants {
            for &p in &self.pause_times {
                for &s in &self.seeds {
                    pts.push((v, p, s));
                }
            }
        }
        pts
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetailRow {
    pub variant: Variant,
    pub pause_time: f64,
    pub seed: u64,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub pause_time: f64,
    pub runs: usize,
    pub failed: usize,
    /// Means in `MetricsReport::CSV_HEADER` order over runs reporting a value.
    pub means: [Option<f64>; 6],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<DetailRow>,
}

pub fn run_sweep(base: &ScenarioConfig, spec: &SweepSpec) -> Result<SweepResult, ConfigError> {
    spec.validate()?;
    base.validate()?;
    let rows = spec
        .points()
        .into_par_iter()
        .map(|(variant, pause_time, seed)| {
            let mut cfg = base.clone();
            cfg.variant = variant;
            cfg.mobility.pause_time = pause_time;
            cfg.seed = seed;
            let (report, error) = match run_experiment(&cfg) {
                Ok(out) => (Some(out.report), None),
                Err(e) => (None, Some(e.to_string())),
            };
            DetailRow {
                variant,
                pause_time,
                seed,
                report,
                error,
            }
        })
        .collect();
    Ok(SweepResult { rows })
}

fn metric_values(r: &MetricsReport) -> [Option<f64>; 6] {
    [
        r.pdr,
        Some(r.throughput_bps),
        r.avg_delay_ms,
        r.plr_percent,
        r.dpr_percent,
        Some(r.control_overhead_packets as f64),
    ]
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepResult {
    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut out: Vec<SummaryRow> = Vec::new();
        for chunk in self.rows.chunk_by(|a, b| a.variant == b.variant && a.pause_time == b.pause_time) {
            let mut means = [None; 6];
            for (k, m) in means.iter_mut().enumerate() {
                let vals: Vec<f64> = chunk
                    .iter()
                    .filter_map(|r| r.report.as_ref().and_then(|rep| metric_values(rep)[k]))
                    .collect();
                if !vals.is_empty() {
                    *m = Some(vals.iter().sum::<f64>() / vals.len() as f64);
                }
            }
            out.push(SummaryRow {
                variant: chunk[0].variant,
                pause_time: chunk[0].pause_time,
                runs: chunk.len(),
                failed: chunk.iter().filter(|r| r.error.is_some()).count(),
                means,
            });
        }
        out
    }

    pub fn detail_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["variant", "pause_time", "seed"];
        header.extend(MetricsReport::CSV_HEADER);
        header.push("error");
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.variant.to_string(), r.pause_time.to_string(), r.seed.to_string()];
            match &r.report {
                Some(rep) => rec.extend(rep.csv_fields()),
                None => rec.extend(std::iter::repeat_n(String::new(), 6)),
            }
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["variant", "pause_time", "runs", "failed"];
        header.extend(MetricsReport::CSV_HEADER);
        w.write_record(&header).expect("in-memory write");
        for s in self.summary() {
            let mut rec = vec![
                s.variant.to_string(),
                s.pause_time.to_string(),
                s.runs.to_string(),
                s.failed.to_string(),
            ];
            rec.extend(s.means.iter().map(|&m| opt(m)));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}
