use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, KMeansOptions, Scores};
use crate::error::{Error, Result};
use crate::fusion::{RunConfig, ViewTrace};
use crate::rng::derive_seed;

/// Mean and standard deviation of each metric over repeated k-means runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub acc: f64,
    pub nmi: f64,
    pub purity: f64,
    pub acc_std: f64,
    pub nmi_std: f64,
    pub purity_std: f64,
    pub runs: usize,
}

impl MetricSummary {
    /// Runs single-initialization k-means `runs` times on the rows of `h` and
    /// averages the scores against `labels`. Runs are independent and
    /// reduced in run order.
    pub fn evaluate(h: &DMatrix<f64>, labels: &[usize], k: usize, runs: usize, seed: u64) -> Result<Self> {
        let runs = runs.max(1);
        let scores: Vec<Scores> = (0..runs)
            .into_par_iter()
            .map(|r| {
                let fit = kmeans(h, k, KMeansOptions::with_restarts(1), derive_seed(seed, 0, r as u64))?;
                Scores::of(&fit.labels, labels)
            })
            .collect::<Result<_>>()?;
        let stats = |f: fn(&Scores) -> f64| {
            let mean = scores.iter().map(f).sum::<f64>() / runs as f64;
            let var = scores.iter().map(|s| (f(s) - mean).powi(2)).sum::<f64>() / runs as f64;
            (mean, var.sqrt())
        };
        let (acc, acc_std) = stats(|s| s.acc);
        let (nmi, nmi_std) = stats(|s| s.nmi);
        let (purity, purity_std) = stats(|s| s.purity);
        Ok(Self {
            acc,
            nmi,
            purity,
            acc_std,
            nmi_std,
            purity_std,
            runs,
        })
    }
}

/// State after fusing the first `view` views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixEntry {
    pub view: usize,
    /// Scores of the consensus; absent without labels.
    pub metrics: Option<MetricSummary>,
    /// Scores of this view's own partition, without fusion.
    pub each: Option<MetricSummary>,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
    pub buffer_pairs: usize,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub conflicts_resolved: usize,
    pub new_conflicts: usize,
    pub intra_view_dropped: usize,
    pub selection_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub view: usize,
    pub extract_ms: f64,
    pub pairs_ms: f64,
    pub fuse_ms: f64,
    pub metrics_ms: f64,
}

/// Final scores of one λ in a grid sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub lambda: f64,
    pub metrics: Option<MetricSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub variant: String,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub views: usize,
    pub config: RunConfig,
    pub prefixes: Vec<PrefixEntry>,
    pub traces: Vec<ViewTrace>,
    pub lambda_grid: Option<Vec<GridEntry>>,
    /// Wall-clock timings; written to `timing.json`, never to `report.json`,
    /// so reports of identical runs are byte-identical.
    #[serde(skip)]
    pub timing: Vec<PhaseTiming>,
}

impl Report {
    pub fn final_metrics(&self) -> Option<MetricSummary> {
        self.prefixes.last().and_then(|p| p.metrics)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Invariant(format!("report serialization: {e}")))
    }

    /// `view,iter,objective`
    pub fn objective_csv(&self) -> String {
        let mut out = String::from("view,iter,objective\n");
        for trace in &self.traces {
            for (iter, value) in trace.objective.iter().enumerate() {
                writeln!(out, "{},{iter},{value:.17e}", trace.view).unwrap();
            }
        }
        out
    }

    /// Fused prefix scores next to each view's own scores.
    pub fn cfp_csv(&self) -> String {
        let mut out =
            String::from("view,fused_acc,fused_nmi,fused_purity,each_acc,each_nmi,each_purity\n");
        let cell = |m: Option<MetricSummary>, f: fn(&MetricSummary) -> f64| {
            m.map(|m| format!("{:.6}", f(&m))).unwrap_or_default()
        };
        for p in &self.prefixes {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.view,
                cell(p.metrics, |m| m.acc),
                cell(p.metrics, |m| m.nmi),
                cell(p.metrics, |m| m.purity),
                cell(p.each, |m| m.acc),
                cell(p.each, |m| m.nmi),
                cell(p.each, |m| m.purity),
            )
            .unwrap();
        }
        out
    }

    /// Writes `report.json`, `objective_trace.csv`, `cfp_trace.csv` and
    /// `timing.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, contents: String| {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| Error::io(&path, e))
        };
        write("report.json", self.to_json()? + "\n")?;
        write("objective_trace.csv", self.objective_csv())?;
        write("cfp_trace.csv", self.cfp_csv())?;
        let timing = serde_json::to_string_pretty(&self.timing)
            .map_err(|e| Error::Invariant(format!("timing serialization: {e}")))?;
        write("timing.json", timing + "\n")?;
        Ok(())
    }

    /// Checks the report-level invariants: one prefix per fused view and every
    /// metric in `[0, 1]`.
    pub fn check(&self) -> Result<()> {
        if self.prefixes.len() != self.views {
            return Err(Error::Invariant(format!(
                "{} prefix entries for {} views",
                self.prefixes.len(),
                self.views
            )));
        }
        for p in &self.prefixes {
            for m in [p.metrics, p.each].into_iter().flatten() {
                for v in [m.acc, m.nmi, m.purity] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::Invariant(format!("metric {v} outside [0, 1] at view {}", p.view)));
                    }
                }
            }
        }
        Ok(())
    }
}
