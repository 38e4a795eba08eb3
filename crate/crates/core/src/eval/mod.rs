//! Localization metrics, the sLORETA baseline, and split-level reports.

pub mod metrics;
pub mod sloreta;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use metrics::{
    evaluate, localization_error, localize, nmse, peak_region, precision_recall, region_energies,
    spatial_dispersion, threshold_active, threshold_active_at, LocalizationResult, MetricReport,
    DEFAULT_THRESHOLD,
};
pub use sloreta::{sloreta_solve, SloretaSolver, DEFAULT_LAMBDA};

use crate::error::{EsiError, Result};
use crate::exec::Exec;
use crate::geometry::SourceSpace;
use crate::model::FairModel;
use crate::sim::PairedSample;
use crate::tensor::Tensor;

/// Anything that maps a scalp fragment to a source estimate.
pub trait SourceEstimator: Sync {
    fn name(&self) -> &str;
    fn estimate(&self, x: &Tensor) -> Result<Tensor>;
}

impl SourceEstimator for FairModel {
    fn name(&self) -> &str {
        "fair"
    }
    fn estimate(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }
}

impl SourceEstimator for SloretaSolver {
    fn name(&self) -> &str {
        "sloreta"
    }
    fn estimate(&self, x: &Tensor) -> Result<Tensor> {
        self.solve(x)
    }
}

/// Scores `solver` on every sample; reports keep the sample order.
pub fn evaluate_split(
    solver: &dyn SourceEstimator,
    samples: &[PairedSample],
    space: &SourceSpace,
    threshold: f64,
    exec: Exec,
) -> Result<Vec<MetricReport>> {
    if samples.is_empty() {
        return Err(EsiError::Data("test split is empty".into()));
    }
    exec.map(samples, |s| {
        let s_hat = solver.estimate(&s.x)?;
        evaluate(&s_hat, s, space, threshold)
    })
    .into_iter()
    .collect()
}

/// Mean and population standard deviation over the defined values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub excluded_count: usize,
}

impl MetricStat {
    pub fn from_values(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut kept = Vec::new();
        let mut excluded = 0;
        for v in values {
            match v {
                Some(x) => kept.push(x),
                None => excluded += 1,
            }
        }
        let n = kept.len();
        let (mean, std) = if n == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = kept.iter().sum::<f64>() / n as f64;
            let var = kept.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            (mean, var.sqrt())
        };
        MetricStat {
            mean,
            std,
            n,
            excluded_count: excluded,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub precision: MetricStat,
    pub recall: MetricStat,
    pub le_mm: MetricStat,
    pub sd_mm: MetricStat,
    pub nmse: MetricStat,
}

impl Summary {
    pub fn from_reports(reports: &[MetricReport]) -> Self {
        let col =
            |f: fn(&MetricReport) -> Option<f64>| MetricStat::from_values(reports.iter().map(f));
        Summary {
            precision: col(|r| Some(r.precision)),
            recall: col(|r| Some(r.recall)),
            le_mm: col(|r| r.le_mm),
            sd_mm: col(|r| r.sd_mm),
            nmse: col(|r| Some(r.nmse)),
        }
    }
}

/// Summaries keyed by solver name, for side-by-side comparisons.
pub type Comparison = BTreeMap<String, Summary>;

#[derive(Serialize)]
struct ReportRow {
    sample: usize,
    precision: f64,
    recall: f64,
    le_mm: Option<f64>,
    sd_mm: Option<f64>,
    nmse: f64,
    undefined: bool,
}

/// One CSV row per sample; undefined LE/SD are left empty and flagged.
pub fn write_reports_csv(reports: &[MetricReport], path: &Path) -> Result<()> {
    let fmt = |e: csv::Error| EsiError::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fmt)?;
    for (i, r) in reports.iter().enumerate() {
        w.serialize(ReportRow {
            sample: i,
            precision: r.precision,
            recall: r.recall,
            le_mm: r.le_mm,
            sd_mm: r.sd_mm,
            nmse: r.nmse,
            undefined: r.is_undefined(),
        })
        .map_err(fmt)?;
    }
    w.flush().map_err(|e| EsiError::io(path, e))
}
