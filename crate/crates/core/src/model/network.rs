use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::FairConfig;
use super::refine::{
    patch_backward, patch_forward, spectral_backward, spectral_forward, temporal_backward,
    temporal_forward, PatchCache, PatchParams, SpectralCache, PATCH_PARAM_NAMES,
};
use crate::dataset::{
    extract_patches, merge_patches, merge_patches_adjoint, normalize_fragment, PatchGrid,
};
use crate::error::{param_err, EsiError, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::gru::{bigru, bigru_backward, BiGruCache, GruParams};
use crate::nn::layers::{init_uniform, linear, linear_backward, Mlp, MlpCache};
use crate::nn::AdamState;
use crate::tensor::Tensor;

/// Every learnable tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct FairParams {
    pub blocks: Vec<PatchParams>,
    /// Channel-axis upsampling of the merged refined grid, `N_c x N_s`.
    pub up_w: Tensor,
    pub up_b: Tensor,
    pub mlp: Mlp,
    /// Residual projection of the input, `N_c x N_s`, no bias.
    pub res_w: Tensor,
    pub gru_fwd: GruParams,
    pub gru_bwd: GruParams,
    /// Readout of the BiGRU state, `2h x N_s`.
    pub out_w: Tensor,
    pub out_b: Tensor,
}

const GRU_NAMES: [&str; 4] = ["w_ih", "w_hh", "b_ih", "b_hh"];

impl FairParams {
    pub fn new(cfg: &FairConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_c, n_s, h) = (cfg.n_channels, cfg.n_regions, cfg.gru_width());
        let blocks = (0..cfg.n_blocks)
            .map(|_| PatchParams::new(cfg, &mut rng))
            .collect();
        FairParams {
            blocks,
            up_w: init_uniform(&[n_c, n_s], n_c, &mut rng),
            up_b: init_uniform(&[n_s], n_c, &mut rng),
            mlp: Mlp::new(&[n_c, cfg.mlp_width(), n_s], &mut rng),
            res_w: init_uniform(&[n_c, n_s], n_c, &mut rng),
            gru_fwd: GruParams::new(n_s, h, &mut rng),
            gru_bwd: GruParams::new(n_s, h, &mut rng),
            out_w: init_uniform(&[2 * h, n_s], 2 * h, &mut rng),
            out_b: init_uniform(&[n_s], 2 * h, &mut rng),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (b, blk) in self.blocks.iter().enumerate() {
            for (name, t) in PATCH_PARAM_NAMES.iter().zip(blk.tensors()) {
                out.push((format!("block{b}.{name}"), t));
            }
        }
        out.push(("up_w".into(), &self.up_w));
        out.push(("up_b".into(), &self.up_b));
        for (i, (w, b)) in self.mlp.weights.iter().zip(&self.mlp.biases).enumerate() {
            out.push((format!("mlp.w{i}"), w));
            out.push((format!("mlp.b{i}"), b));
        }
        out.push(("res_w".into(), &self.res_w));
        for (dir, g) in [("gru_fwd", &self.gru_fwd), ("gru_bwd", &self.gru_bwd)] {
            for (name, t) in GRU_NAMES.iter().zip(g.tensors()) {
                out.push((format!("{dir}.{name}"), t));
            }
        }
        out.push(("out_w".into(), &self.out_w));
        out.push(("out_b".into(), &self.out_b));
        out
    }

    /// Same order as [`FairParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for blk in &mut self.blocks {
            out.extend(blk.tensors_mut());
        }
        out.push(&mut self.up_w);
        out.push(&mut self.up_b);
        for (w, b) in self.mlp.weights.iter_mut().zip(self.mlp.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.res_w);
        out.extend(self.gru_fwd.tensors_mut());
        out.extend(self.gru_bwd.tensors_mut());
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut()
            .into_iter()
            .for_each(|t| *t = Tensor::zeros(t.dims()));
        z
    }

    pub fn add_assign(&mut self, other: &FairParams) {
        let theirs = other.named();
        for (mine, (_, t)) in self.tensors_mut().into_iter().zip(theirs) {
            mine.add_assign(t).expect("parameter sets share a layout");
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors_mut().into_iter().for_each(|t| t.scale(s));
    }

    /// Rounds every entry to the nearest f32 so checkpoints are lossless.
    pub fn round_to_storage(&mut self) {
        self.tensors_mut()
            .into_iter()
            .for_each(Tensor::round_to_f32);
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

struct BlockCache {
    input: Tensor,
    spectral: Option<SpectralCache>,
    temporal: Option<Tensor>,
    spectral_out: Option<Tensor>,
    fused: Tensor,
    patch: Option<PatchCache>,
    output: Tensor,
}

pub struct ForwardCache {
    scale: f64,
    grid: PatchGrid,
    blocks: Vec<BlockCache>,
    merged_t: Tensor,
    xt: Tensor,
    mlp: MlpCache,
    gru: BiGruCache,
    gru_out: Tensor,
}

/// Intermediate grids of one FAIR block, kept for inspection.
#[derive(Clone, Debug)]
pub struct RefinementTrace {
    pub input: Tensor,
    pub spectral: Option<Tensor>,
    pub temporal: Option<Tensor>,
    pub fused: Tensor,
    pub key_indices: Option<Vec<usize>>,
    /// Per-channel `l x l` attention weights over the key patch tokens.
    pub attention_weights: Vec<Tensor>,
    /// Per-channel key-patch summaries, `N_c x l`.
    pub summaries: Option<Tensor>,
    /// Fused grid with the summary plane appended, `N_c x N_p x 2l`.
    pub augmented: Option<Tensor>,
    pub output: Tensor,
}

/// Squared Frobenius error divided by the number of regions.
pub fn mse_loss(s_hat: &Tensor, s: &Tensor) -> Result<f64> {
    s_hat.same_shape(s)?;
    if s.rank() != 2 {
        return param_err(format!("loss expects regions x time, got {:?}", s.dims()));
    }
    Ok(s_hat.sub(s)?.sum_sq() / s.rows() as f64)
}

fn mse_loss_grad(s_hat: &Tensor, s: &Tensor) -> Tensor {
    let n_s = s.rows() as f64;
    let mut g = s_hat.sub(s).expect("shapes checked");
    g.scale(2.0 / n_s);
    g
}

#[derive(Clone, Debug, PartialEq)]
pub struct FairModel {
    pub config: FairConfig,
    pub params: FairParams,
}

pub const CHECKPOINT_KIND: &str = "fair-esi";

impl FairModel {
    pub fn new(config: FairConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = FairParams::new(&config, seed);
        params.round_to_storage();
        Ok(FairModel { config, params })
    }

    fn padding(&self) -> usize {
        self.config.kernel_size / 2
    }

    /// Weight of the spectral view in the fusion, after ablation flags.
    fn effective_alpha(&self) -> Option<f64> {
        match (self.config.use_spectral, self.config.use_temporal) {
            (true, true) => Some(self.config.alpha),
            (true, false) => Some(1.0),
            (false, true) => Some(0.0),
            (false, false) => None,
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let want = [self.config.n_channels, self.config.n_timepoints];
        if x.dims() != want {
            return param_err(format!(
                "fragment is {:?}, model expects {:?} (channels x time)",
                x.dims(),
                want
            ));
        }
        Ok(())
    }

    fn block_forward(&self, p: Tensor, prm: &PatchParams) -> Result<BlockCache> {
        let cfg = &self.config;
        let (spectral, spectral_out) = if cfg.use_spectral {
            let (o, c) = spectral_forward(&p, cfg.tau, cfg.spectral_mode)?;
            (Some(c), Some(o))
        } else {
            (None, None)
        };
        let temporal = if cfg.use_temporal {
            Some(temporal_forward(&p, cfg.tau)?)
        } else {
            None
        };
        let fused = match (&spectral_out, &temporal, self.effective_alpha()) {
            (Some(s), Some(t), Some(a)) => {
                let mut f = s.scaled(a);
                f.axpy(1.0 - a, t)?;
                f
            }
            (Some(s), None, _) => s.clone(),
            (None, Some(t), _) => t.clone(),
            _ => p.clone(),
        };
        let (output, patch) = if cfg.use_patch {
            let (o, c) = patch_forward(&fused, prm, self.padding())?;
            (o, Some(c))
        } else {
            (fused.clone(), None)
        };
        Ok(BlockCache {
            input: p,
            spectral,
            temporal,
            spectral_out,
            fused,
            patch,
            output,
        })
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.check_input(x)?;
        let cfg = &self.config;
        let (xn, scale) = normalize_fragment(x)?;
        // A silent fragment maps to a silent estimate.
        let scale = if x.max_abs() == 0.0 { 0.0 } else { scale };
        let grid = extract_patches(&xn, cfg.patch_len, cfg.overlap)?;
        let mut blocks: Vec<BlockCache> = Vec::with_capacity(cfg.n_blocks);
        let mut p = grid.patches.clone();
        for prm in &self.params.blocks {
            let b = self.block_forward(p, prm)?;
            p = b.output.clone();
            blocks.push(b);
        }
        let refined = PatchGrid {
            patches: p,
            patch_len: grid.patch_len,
            stride: grid.stride,
            n_timepoints_original: grid.n_timepoints_original,
        };
        let merged_t = merge_patches(&refined)?.transpose();
        let xt = xn.transpose();
        let prm = &self.params;
        let mut h = linear(&merged_t, &prm.up_w, Some(&prm.up_b))?;
        let (m, mlp) = prm.mlp.forward(&xt)?;
        h.add_assign(&m)?;
        h.add_assign(&xt.matmul(&prm.res_w)?)?;
        let (gru_out, gru) = bigru(&h, &prm.gru_fwd, &prm.gru_bwd)?;
        let o = linear(&gru_out, &prm.out_w, Some(&prm.out_b))?;
        let s_hat = o.transpose().scaled(scale);
        Ok((
            s_hat,
            ForwardCache {
                scale,
                grid,
                blocks,
                merged_t,
                xt,
                mlp,
                gru,
                gru_out,
            },
        ))
    }

    /// Source estimate `N_s x N_t` for a scalp fragment `N_c x N_t`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn trace(&self, x: &Tensor) -> Result<Vec<RefinementTrace>> {
        let (_, cache) = self.forward_cached(x)?;
        Ok(cache
            .blocks
            .into_iter()
            .map(|b| RefinementTrace {
                input: b.input,
                spectral: b.spectral_out,
                temporal: b.temporal,
                fused: b.fused,
                key_indices: b.patch.as_ref().map(|c| c.key.clone()),
                attention_weights: b
                    .patch
                    .as_ref()
                    .map(|c| c.attention_weights())
                    .unwrap_or_default(),
                summaries: b.patch.as_ref().map(|c| c.summary.clone()),
                augmented: b.patch.as_ref().map(|c| c.augmented.clone()),
                output: b.output,
            })
            .collect())
    }

    /// Parameter gradients given `d loss / d s_hat`.
    pub fn backward(&self, cache: &ForwardCache, d_s_hat: &Tensor) -> FairParams {
        let expect = "shapes fixed by forward";
        let prm = &self.params;
        let mut grads = prm.zeros_like();
        let d_o = d_s_hat.transpose().scaled(cache.scale);
        let (d_gru, dw, db) = linear_backward(&cache.gru_out, &prm.out_w, &d_o);
        grads.out_w = dw;
        grads.out_b = db;
        let (dh, gf, gb) = bigru_backward(&cache.gru, &prm.gru_fwd, &prm.gru_bwd, &d_gru);
        grads.gru_fwd = gf;
        grads.gru_bwd = gb;
        let (d_merged_t, dw, db) = linear_backward(&cache.merged_t, &prm.up_w, &dh);
        grads.up_w = dw;
        grads.up_b = db;
        let (_, dws, dbs) = prm.mlp.backward(&cache.mlp, &dh);
        grads.mlp.weights = dws;
        grads.mlp.biases = dbs;
        grads.res_w = cache.xt.transpose().matmul(&dh).expect(expect);

        let mut d = merge_patches_adjoint(&d_merged_t.transpose(), &cache.grid).expect(expect);
        let alpha = self.effective_alpha();
        for (i, b) in cache.blocks.iter().enumerate().rev() {
            let d_fused = match &b.patch {
                Some(pc) => patch_backward(
                    pc,
                    &b.fused,
                    &prm.blocks[i],
                    self.padding(),
                    &d,
                    &mut grads.blocks[i],
                ),
                None => d,
            };
            if i == 0 {
                break;
            }
            d = self.views_backward(b, alpha, d_fused);
        }
        grads
    }

    fn views_backward(&self, b: &BlockCache, alpha: Option<f64>, d_fused: Tensor) -> Tensor {
        let cfg = &self.config;
        let Some(a) = alpha else {
            return d_fused;
        };
        let mut d = Tensor::zeros(d_fused.dims());
        if let Some(sc) = &b.spectral {
            let g = d_fused.scaled(a);
            d.add_assign(&spectral_backward(sc, cfg.tau, cfg.spectral_mode, &g))
                .expect("same dims");
        }
        if let Some(y) = &b.temporal {
            let g = d_fused.scaled(1.0 - a);
            d.add_assign(&temporal_backward(y, cfg.tau, &g))
                .expect("same dims");
        }
        d
    }

    /// Loss of one pair and its parameter gradient.
    pub fn loss_and_grad(&self, x: &Tensor, s: &Tensor) -> Result<(f64, FairParams)> {
        let (s_hat, cache) = self.forward_cached(x)?;
        let loss = mse_loss(&s_hat, s)?;
        let grads = self.backward(&cache, &mse_loss_grad(&s_hat, s));
        Ok((loss, grads))
    }

    pub fn to_checkpoint(&self, adam: Option<&AdamState>, extra: serde_json::Value) -> Checkpoint {
        Checkpoint {
            tensors: self
                .params
                .named()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
            adam: adam.cloned(),
            meta: serde_json::json!({
                "kind": CHECKPOINT_KIND,
                "model": self.config,
                "state": extra,
            }),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.get("kind").and_then(|k| k.as_str()) != Some(CHECKPOINT_KIND) {
            return Err(EsiError::Format(
                "checkpoint is not a FAIR-ESI model".into(),
            ));
        }
        let config: FairConfig = serde_json::from_value(ck.meta["model"].clone())
            .map_err(|e| EsiError::Format(format!("checkpoint model config: {e}")))?;
        let mut model = FairModel::new(config, 0)?;
        let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
        if names.len() != ck.tensors.len() {
            return Err(EsiError::Format(format!(
                "checkpoint holds {} tensors, model needs {}",
                ck.tensors.len(),
                names.len()
            )));
        }
        for ((name, dst), (ck_name, src)) in names
            .iter()
            .zip(model.params.tensors_mut())
            .zip(&ck.tensors)
        {
            if name != ck_name || dst.dims() != src.dims() {
                return Err(EsiError::Format(format!(
                    "checkpoint tensor {ck_name} {:?} does not match {name} {:?}",
                    src.dims(),
                    dst.dims()
                )));
            }
            *dst = src.clone();
        }
        Ok(model)
    }
}
