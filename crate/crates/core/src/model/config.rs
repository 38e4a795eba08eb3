use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

/// How the spectral view turns FFT coefficients into refined coefficients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralMode {
    /// Coefficients are replaced by their tempered softmax.
    #[default]
    Replace,
    /// Coefficients are multiplied elementwise by their tempered softmax.
    Reweight,
}

fn default_patch_len() -> usize {
    16
}
fn default_tau() -> f64 {
    0.1
}
fn default_overlap() -> usize {
    8
}
fn default_alpha() -> f64 {
    0.5
}
fn default_blocks() -> usize {
    1
}
fn default_attention_dim() -> usize {
    16
}
fn default_kernel() -> usize {
    3
}
fn default_depth_factor() -> usize {
    2
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairConfig {
    pub n_channels: usize,
    pub n_regions: usize,
    pub n_timepoints: usize,
    #[serde(default = "default_patch_len")]
    pub patch_len: usize,
    #[serde(default = "default_overlap")]
    pub overlap: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_blocks")]
    pub n_blocks: usize,
    #[serde(default = "default_attention_dim")]
    pub attention_dim: usize,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    /// ConvBlock output depth as a multiple of the patch length.
    #[serde(default = "default_depth_factor")]
    pub conv_depth_factor: usize,
    /// Hidden width of the per-timepoint MLP; 0 means `n_regions`.
    #[serde(default)]
    pub mlp_hidden: usize,
    /// Hidden size per GRU direction; 0 means `n_regions / 2` (at least 1).
    #[serde(default)]
    pub gru_hidden: usize,
    #[serde(default)]
    pub spectral_mode: SpectralMode,
    #[serde(default = "yes")]
    pub use_spectral: bool,
    #[serde(default = "yes")]
    pub use_temporal: bool,
    #[serde(default = "yes")]
    pub use_patch: bool,
}

impl FairConfig {
    pub fn new(n_channels: usize, n_regions: usize, n_timepoints: usize) -> Self {
        FairConfig {
            n_channels,
            n_regions,
            n_timepoints,
            patch_len: default_patch_len(),
            overlap: default_overlap(),
            tau: default_tau(),
            alpha: default_alpha(),
            n_blocks: default_blocks(),
            attention_dim: default_attention_dim(),
            kernel_size: default_kernel(),
            conv_depth_factor: default_depth_factor(),
            mlp_hidden: 0,
            gru_hidden: 0,
            spectral_mode: SpectralMode::Replace,
            use_spectral: true,
            use_temporal: true,
            use_patch: true,
        }
    }

    pub fn mlp_width(&self) -> usize {
        if self.mlp_hidden == 0 {
            self.n_regions
        } else {
            self.mlp_hidden
        }
    }

    pub fn gru_width(&self) -> usize {
        if self.gru_hidden == 0 {
            (self.n_regions / 2).max(1)
        } else {
            self.gru_hidden
        }
    }

    pub fn conv_depth(&self) -> usize {
        self.conv_depth_factor * self.patch_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.n_regions == 0 {
            return param_err("n_channels and n_regions must be >= 1");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return param_err(format!(
                "tau must be a positive finite number, got {}",
                self.tau
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return param_err(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.n_blocks < 1 {
            return param_err("n_blocks must be >= 1");
        }
        if self.patch_len < 2 || !self.patch_len.is_power_of_two() {
            return param_err(format!(
                "patch_len must be a power of two >= 2, got {}",
                self.patch_len
            ));
        }
        if self.overlap >= self.patch_len {
            return param_err(format!(
                "overlap {} must be smaller than patch_len {}",
                self.overlap, self.patch_len
            ));
        }
        if self.patch_len > self.n_timepoints {
            return param_err(format!(
                "patch_len {} exceeds n_timepoints {}",
                self.patch_len, self.n_timepoints
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return param_err(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.attention_dim == 0 || self.conv_depth_factor == 0 {
            return param_err("attention_dim and conv_depth_factor must be >= 1");
        }
        Ok(())
    }
}
