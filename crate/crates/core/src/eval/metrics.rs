use serde::{Deserialize, Serialize};

use crate::error::{param_err, EsiError, Result};
use crate::geometry::{distance, RegionSet, SourceSpace};
use crate::sim::PairedSample;
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `e_j = sum_t S(j, t)^2` for every region.
pub fn region_energies(s_hat: &Tensor) -> Vec<f64> {
    (0..s_hat.rows())
        .map(|j| s_hat.row(j).iter().map(|v| v * v).sum())
        .collect()
}

/// Regions whose energy reaches `fraction` of the largest region energy;
/// `None` when every region is silent.
pub fn threshold_active_at(s_hat: &Tensor, fraction: f64) -> Option<RegionSet> {
    let e = region_energies(s_hat);
    let max = e.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    let active = (0..e.len()).filter(|&j| e[j] >= fraction * max).collect();
    Some(RegionSet::from_sorted(active))
}

pub fn threshold_active(s_hat: &Tensor) -> Option<RegionSet> {
    threshold_active_at(s_hat, DEFAULT_THRESHOLD)
}

/// Highest-energy region, smallest index on ties; `None` for an all-zero
/// estimate.
pub fn peak_region(s_hat: &Tensor) -> Option<usize> {
    let e = region_energies(s_hat);
    let mut best = None;
    let mut best_e = 0.0;
    for (j, &v) in e.iter().enumerate() {
        if v > best_e {
            best = Some(j);
            best_e = v;
        }
    }
    best
}

/// Precision and recall in percent. Precision is 0 for an empty estimate.
pub fn precision_recall(est: Option<&RegionSet>, gt: &RegionSet) -> Result<(f64, f64)> {
    if gt.is_empty() {
        return param_err("ground-truth region set is empty");
    }
    let Some(est) = est else {
        return Ok((0.0, 0.0));
    };
    let hit = est.intersection_len(gt) as f64;
    Ok((
        100.0 * hit / est.len() as f64,
        100.0 * hit / gt.len() as f64,
    ))
}

fn min_distance_to(space: &SourceSpace, j: usize, gt: &RegionSet) -> f64 {
    if gt.contains(j) {
        return 0.0;
    }
    gt.regions()
        .iter()
        .map(|&g| distance(&space.centroids[j], &space.centroids[g]))
        .fold(f64::INFINITY, f64::min)
}

fn check_rows(s_hat: &Tensor, space: &SourceSpace) -> Result<()> {
    if s_hat.rank() != 2 || s_hat.rows() != space.n_regions() {
        return param_err(format!(
            "estimate {:?} does not match a {}-region source space",
            s_hat.dims(),
            space.n_regions()
        ));
    }
    Ok(())
}

/// Distance in mm from the peak region to the nearest ground-truth centroid.
pub fn localization_error(s_hat: &Tensor, gt: &RegionSet, space: &SourceSpace) -> Result<f64> {
    check_rows(s_hat, space)?;
    let peak = peak_region(s_hat)
        .ok_or_else(|| EsiError::Undefined("localization error of an all-zero estimate".into()))?;
    Ok(min_distance_to(space, peak, gt))
}

/// Energy-weighted RMS distance (mm) of the estimate to the ground truth.
pub fn spatial_dispersion(s_hat: &Tensor, gt: &RegionSet, space: &SourceSpace) -> Result<f64> {
    check_rows(s_hat, space)?;
    let e = region_energies(s_hat);
    let total: f64 = e.iter().sum();
    if total <= 0.0 {
        return Err(EsiError::Undefined(
            "spatial dispersion of an all-zero estimate".into(),
        ));
    }
    let weighted: f64 = e
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(j, &v)| min_distance_to(space, j, gt).powi(2) * v)
        .sum();
    Ok((weighted / total).sqrt())
}

/// `||S_hat - S||_F^2 / ||S||_F^2`.
pub fn nmse(s_hat: &Tensor, s: &Tensor) -> Result<f64> {
    s_hat.same_shape(s)?;
    let denom = s.sum_sq();
    if denom == 0.0 {
        return param_err("nMSE is undefined for an all-zero reference");
    }
    Ok(s_hat.sub(s)?.sum_sq() / denom)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub estimated_active: RegionSet,
    pub peak_region: usize,
}

pub fn localize(s_hat: &Tensor, fraction: f64) -> Option<LocalizationResult> {
    Some(LocalizationResult {
        estimated_active: threshold_active_at(s_hat, fraction)?,
        peak_region: peak_region(s_hat)?,
    })
}

/// Per-sample scores. `le_mm`/`sd_mm` are `None` when the estimate is all
/// zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub le_mm: Option<f64>,
    pub sd_mm: Option<f64>,
    pub nmse: f64,
}

impl MetricReport {
    pub fn is_undefined(&self) -> bool {
        self.le_mm.is_none() || self.sd_mm.is_none()
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(EsiError::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores an estimate against the sample's ground truth (union of sources).
pub fn evaluate(
    s_hat: &Tensor,
    sample: &PairedSample,
    space: &SourceSpace,
    fraction: f64,
) -> Result<MetricReport> {
    check_rows(s_hat, space)?;
    let gt = sample.active_regions();
    let est = threshold_active_at(s_hat, fraction);
    let (precision, recall) = precision_recall(est.as_ref(), &gt)?;
    Ok(MetricReport {
        precision,
        recall,
        le_mm: defined(localization_error(s_hat, &gt, space))?,
        sd_mm: defined(spatial_dispersion(s_hat, &gt, space))?,
        nmse: nmse(s_hat, &sample.s)?,
    })
}
