//! Paired source/scalp data: Jansen-Rit sources on a source space, projected
//! through a lead field, with white sensor noise at a target SNR.

mod generate;
pub mod jansen_rit;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use generate::{
    generate_dataset, load_manifest, load_sample, save_sample, Manifest, ManifestEntry, Split,
    MANIFEST_FILE,
};
pub use jansen_rit::{simulate_jansen_rit, JansenRitParams, NmmJitter, NmmPreset};

use crate::error::{param_err, EsiError, Result};
use crate::geometry::{grow_patch, LeadField, RegionSet, SourceSpace};
use crate::tensor::Tensor;

/// Amplitude factor applied per graph hop inside an extended source.
pub const HOP_DECAY: f64 = 0.7;
const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    /// Target SNR in dB; `None` disables noise.
    pub snr_db: Option<f64>,
    pub n_sources: usize,
    pub extent: usize,
    pub n_timepoints: usize,
    pub sample_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub preset: NmmPreset,
    #[serde(default)]
    pub jitter: NmmJitter,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sources < 1 {
            return param_err("n_sources must be >= 1");
        }
        if self.extent < 1 {
            return param_err("extent must be >= 1");
        }
        if self.n_timepoints < 32 {
            return param_err(format!(
                "n_timepoints must be >= 32, got {}",
                self.n_timepoints
            ));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return param_err("snr_db must be finite (use null to disable noise)");
            }
        }
        Ok(())
    }

    fn snr(&self) -> f64 {
        self.snr_db.unwrap_or(f64::INFINITY)
    }
}

/// One simulated pair: scalp fragment `x` (channels x time) and source
/// activity `s` (regions x time).
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub x: Tensor,
    pub s: Tensor,
    pub ground_truth: Vec<RegionSet>,
    pub config: SimulationConfig,
}

impl PairedSample {
    /// Union of every source footprint.
    pub fn active_regions(&self) -> RegionSet {
        RegionSet::union_all(&self.ground_truth).expect("sample has at least one source")
    }
}

/// SplitMix64 step; used to derive independent sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Places `cfg.n_sources` disjoint extended sources and fills their rows of
/// `S` with Jansen-Rit waveforms scaled by `HOP_DECAY^hops`.
pub fn generate_source_activity(
    space: &SourceSpace,
    cfg: &SimulationConfig,
    params: &JansenRitParams,
) -> Result<(Tensor, Vec<RegionSet>)> {
    cfg.validate()?;
    let n = space.n_regions();
    let max_footprint = (0..n)
        .map(|c| grow_patch(space, c, cfg.extent).map(|p| p.len()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(1);
    if 2 * cfg.n_sources * max_footprint >= n {
        return param_err(format!(
            "{} sources of up to {} regions do not fit under half of {} regions",
            cfg.n_sources, max_footprint, n
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers: Vec<usize> = Vec::new();
    let mut footprints: Vec<RegionSet> = Vec::new();
    let mut attempts = 0;
    while footprints.len() < cfg.n_sources {
        if attempts == MAX_PLACEMENT_ATTEMPTS {
            return Err(EsiError::Placement {
                n_sources: cfg.n_sources,
                attempts,
            });
        }
        attempts += 1;
        let c = rng.random_range(0..n);
        let fp = grow_patch(space, c, cfg.extent)?;
        if footprints.iter().all(|f| f.is_disjoint(&fp)) {
            centers.push(c);
            footprints.push(fp);
        }
    }

    let mut s = Tensor::zeros(&[n, cfg.n_timepoints]);
    for &c in &centers {
        let wave_seed: u64 = rng.random();
        let jitter_seed: u64 = rng.random();
        let p = cfg
            .jitter
            .apply(params, &mut ChaCha8Rng::seed_from_u64(jitter_seed));
        let wave = simulate_jansen_rit(&p, cfg.n_timepoints, cfg.sample_rate, wave_seed)?;
        for (r, hops) in space.hop_distances(c, cfg.extent - 1) {
            let w = HOP_DECAY.powi(hops as i32);
            for (dst, v) in s.row_mut(r).iter_mut().zip(&wave) {
                *dst = w * v;
            }
        }
    }
    Ok((s, footprints))
}

/// Noiseless scalp signal `G * S`.
pub fn project_forward(lf: &LeadField, s: &Tensor) -> Result<Tensor> {
    if s.rank() != 2 || s.rows() != lf.n_regions() {
        return param_err(format!(
            "source matrix {:?} incompatible with lead field {:?}",
            s.dims(),
            lf.matrix().dims()
        ));
    }
    lf.matrix().matmul(s)
}

/// Adds white Gaussian noise so that `10 log10(P_signal / P_noise) = snr_db`,
/// with `P` the mean square over all entries. `f64::INFINITY` disables noise.
pub fn add_noise(x_clean: &Tensor, snr_db: f64, seed: u64) -> Result<Tensor> {
    if snr_db == f64::INFINITY {
        return Ok(x_clean.clone());
    }
    if !snr_db.is_finite() {
        return param_err(format!("snr_db must be finite or +inf, got {snr_db}"));
    }
    let p_signal = x_clean.sum_sq() / x_clean.len() as f64;
    if !(p_signal > 0.0) {
        return param_err("signal has zero power; SNR is undefined");
    }
    let sigma = (p_signal / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x_clean.clone();
    for v in x.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Ok(x)
}

/// Full pipeline for one sample, seeded by `cfg.seed`.
pub fn simulate_sample(
    space: &SourceSpace,
    lf: &LeadField,
    cfg: &SimulationConfig,
) -> Result<PairedSample> {
    let params = cfg.preset.params();
    let (s, ground_truth) = generate_source_activity(space, cfg, &params)?;
    let clean = project_forward(lf, &s)?;
    let x = add_noise(&clean, cfg.snr(), derive_seed(cfg.seed, 1))?;
    Ok(PairedSample {
        x,
        s,
        ground_truth,
        config: cfg.clone(),
    })
}
