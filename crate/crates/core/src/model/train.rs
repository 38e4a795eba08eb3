//! Mini-batch Adam training with plateau learning-rate halving.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::FairConfig;
use super::network::{mse_loss, FairModel, FairParams};
use crate::error::{param_err, EsiError, Result};
use crate::exec::Exec;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{AdamConfig, AdamState};
use crate::sim::{derive_seed, Manifest, PairedSample, Split};
use crate::tensor::Tensor;

pub const BEST_DIR: &str = "best";
pub const LAST_DIR: &str = "last";
pub const LOG_FILE: &str = "train_log.csv";

fn default_batch() -> usize {
    16
}
fn default_patience() -> usize {
    3
}
fn default_tol() -> f64 {
    1e-4
}
fn default_min_lr() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs to run in this call (a resumed run continues numbering).
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_patience")]
    pub plateau_patience: usize,
    /// Minimum relative val-loss improvement that resets the plateau count.
    #[serde(default = "default_tol")]
    pub plateau_tol: f64,
    #[serde(default = "default_min_lr")]
    pub min_lr: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: default_batch(),
            adam: AdamConfig::default(),
            plateau_patience: default_patience(),
            plateau_tol: default_tol(),
            min_lr: default_min_lr(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return param_err("epochs and batch_size must be >= 1");
        }
        if !(self.adam.lr > 0.0) || !(self.adam.eps > 0.0) || self.adam.weight_decay < 0.0 {
            return param_err("lr and eps must be > 0, weight_decay >= 0");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return param_err("Adam betas must lie in [0, 1)");
        }
        if self.plateau_patience == 0 || self.min_lr < 0.0 || self.plateau_tol < 0.0 {
            return param_err("plateau_patience must be >= 1; min_lr and plateau_tol >= 0");
        }
        Ok(())
    }
}

/// One row of the training log. Epochs are numbered from 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

/// Halves the learning rate after `patience` consecutive epochs without a
/// relative val-loss improvement larger than `tol`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub tol: f64,
    pub min_lr: f64,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, tol: f64, min_lr: f64) -> Self {
        PlateauScheduler {
            patience,
            tol,
            min_lr,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Records a val loss; returns whether it is a new best and the lr for
    /// the next epoch.
    pub fn observe(&mut self, val: f64, lr: f64) -> (bool, f64) {
        let improved = match self.best {
            None => true,
            Some(b) => val < b - self.tol * b.abs(),
        };
        if improved {
            self.best = Some(val);
            self.bad_epochs = 0;
            return (true, lr);
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return (false, (lr / 2.0).max(self.min_lr));
        }
        (false, lr)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainerState {
    next_epoch: usize,
    scheduler: PlateauScheduler,
    history: Vec<EpochRecord>,
}

pub struct Trainer {
    pub model: FairModel,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub exec: Exec,
    state: TrainerState,
}

/// Mean loss of `model` over `samples`.
pub fn mean_loss(model: &FairModel, samples: &[PairedSample], exec: Exec) -> Result<f64> {
    if samples.is_empty() {
        return Err(EsiError::Data(
            "cannot compute a loss over zero samples".into(),
        ));
    }
    let losses = exec.map(samples, |s| {
        let s_hat = model.forward(&s.x)?;
        mse_loss(&s_hat, &s.s)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}

fn grads_of(p: &FairParams) -> Vec<Tensor> {
    p.named().into_iter().map(|(_, t)| t.clone()).collect()
}

impl Trainer {
    pub fn new(model: FairModel, config: TrainConfig, exec: Exec) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(
            config.adam,
            model.params.named().into_iter().map(|(_, t)| t),
        );
        let scheduler =
            PlateauScheduler::new(config.plateau_patience, config.plateau_tol, config.min_lr);
        Ok(Trainer {
            model,
            adam,
            config,
            exec,
            state: TrainerState {
                next_epoch: 0,
                scheduler,
                history: Vec::new(),
            },
        })
    }

    /// Restores model, optimizer and scheduler from a `last/` checkpoint.
    /// The learning rate continues from the checkpoint; the other settings
    /// come from `config`.
    pub fn resume(dir: &Path, config: TrainConfig, exec: Exec) -> Result<Self> {
        config.validate()?;
        let ck = Checkpoint::load(dir)?;
        let model = FairModel::from_checkpoint(&ck)?;
        let adam = ck
            .adam
            .clone()
            .ok_or_else(|| EsiError::Format(format!("{}: no optimizer state", dir.display())))?;
        let state: TrainerState = serde_json::from_value(ck.meta["state"].clone())
            .map_err(|e| EsiError::Format(format!("{}: trainer state: {e}", dir.display())))?;
        Ok(Trainer {
            model,
            adam,
            config,
            exec,
            state,
        })
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.state.history
    }

    pub fn lr(&self) -> f64 {
        self.adam.config.lr
    }

    pub fn next_epoch(&self) -> usize {
        self.state.next_epoch
    }

    fn check_samples(&self, samples: &[PairedSample], what: &str) -> Result<()> {
        if samples.is_empty() {
            return Err(EsiError::Data(format!("{what} split is empty")));
        }
        let cfg = &self.model.config;
        for s in samples {
            if s.x.dims() != [cfg.n_channels, cfg.n_timepoints]
                || s.s.dims() != [cfg.n_regions, cfg.n_timepoints]
            {
                return param_err(format!(
                    "{what} sample dims x {:?} / s {:?} do not match the model ({} channels, {} regions, {} timepoints)",
                    s.x.dims(),
                    s.s.dims(),
                    cfg.n_channels,
                    cfg.n_regions,
                    cfg.n_timepoints
                ));
            }
        }
        Ok(())
    }

    /// One pass over `train` followed by a val-loss evaluation and a
    /// scheduler update. Returns the log row and whether val improved.
    pub fn run_epoch(
        &mut self,
        train: &[PairedSample],
        val: &[PairedSample],
    ) -> Result<(EpochRecord, bool)> {
        self.check_samples(train, "train")?;
        self.check_samples(val, "val")?;
        let epoch = self.state.next_epoch;
        let lr = self.adam.config.lr;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            epoch as u64,
        )));
        let mut total = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let model = &self.model;
            let results = self
                .exec
                .map(batch, |&i| model.loss_and_grad(&train[i].x, &train[i].s));
            let mut sum: Option<FairParams> = None;
            for r in results {
                let (loss, g) = r?;
                if !loss.is_finite() {
                    return Err(EsiError::Divergence { epoch });
                }
                total += loss;
                match &mut sum {
                    None => sum = Some(g),
                    Some(acc) => acc.add_assign(&g),
                }
            }
            let mut g = sum.expect("batch is non-empty");
            g.scale(1.0 / batch.len() as f64);
            let grads = grads_of(&g);
            let refs: Vec<&Tensor> = grads.iter().collect();
            self.adam
                .step(&mut self.model.params.tensors_mut(), &refs)?;
            self.model.params.round_to_storage();
            self.adam.round_to_storage();
        }
        let train_loss = total / train.len() as f64;
        let val_loss = mean_loss(&self.model, val, self.exec)?;
        if !train_loss.is_finite() || !val_loss.is_finite() || !self.model_is_finite() {
            return Err(EsiError::Divergence { epoch });
        }
        let (improved, next_lr) = self.state.scheduler.observe(val_loss, lr);
        self.adam.config.lr = next_lr;
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        };
        self.state.history.push(rec);
        self.state.next_epoch += 1;
        log::info!(
            "epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e} lr {lr:e}{}",
            if improved { " *" } else { "" }
        );
        Ok((rec, improved))
    }

    fn model_is_finite(&self) -> bool {
        self.model.params.named().iter().all(|(_, t)| t.is_finite())
    }

    fn checkpoint(&self) -> Checkpoint {
        let state = serde_json::to_value(&self.state).expect("trainer state serializes");
        self.model.to_checkpoint(Some(&self.adam), state)
    }

    /// Runs `config.epochs` epochs. With `out_dir`, keeps `best/` and `last/`
    /// checkpoints and rewrites the CSV log after every epoch.
    pub fn fit(
        &mut self,
        train: &[PairedSample],
        val: &[PairedSample],
        out_dir: Option<&Path>,
    ) -> Result<TrainOutcome> {
        for _ in 0..self.config.epochs {
            let (_, improved) = self.run_epoch(train, val)?;
            if let Some(dir) = out_dir {
                let ck = self.checkpoint();
                if improved {
                    ck.save(&dir.join(BEST_DIR))?;
                }
                ck.save(&dir.join(LAST_DIR))?;
                write_log(&self.state.history, &dir.join(LOG_FILE))?;
            }
        }
        Ok(TrainOutcome::from_history(
            &self.state.history,
            out_dir.map(Path::to_path_buf),
        ))
    }
}

pub fn write_log(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in history {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| EsiError::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> EsiError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => EsiError::io(path, io),
        other => EsiError::Format(format!("{}: {other:?}", path.display())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_val: f64,
    pub best_epoch: usize,
    pub out_dir: Option<PathBuf>,
}

impl TrainOutcome {
    fn from_history(history: &[EpochRecord], out_dir: Option<PathBuf>) -> Self {
        let (best_epoch, best_val) = history.iter().fold((0, f64::INFINITY), |b, r| {
            if r.val_loss < b.1 {
                (r.epoch, r.val_loss)
            } else {
                b
            }
        });
        TrainOutcome {
            history: history.to_vec(),
            best_val,
            best_epoch,
            out_dir,
        }
    }

    /// Best val loss seen up to and including each epoch.
    pub fn best_val_curve(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.history
            .iter()
            .map(|r| {
                best = best.min(r.val_loss);
                best
            })
            .collect()
    }
}

/// Loads the train and val splits of `manifest` and trains a fresh model
/// (or resumes from `out_dir/last` when `resume` is set).
pub fn train(
    manifest: &Manifest,
    model_cfg: &FairConfig,
    train_cfg: &TrainConfig,
    out_dir: &Path,
    exec: Exec,
    resume: bool,
) -> Result<TrainOutcome> {
    let train_set = manifest.load_split(Split::Train)?;
    let val_set = manifest.load_split(Split::Val)?;
    let mut trainer = if resume {
        Trainer::resume(&out_dir.join(LAST_DIR), train_cfg.clone(), exec)?
    } else {
        let model = FairModel::new(model_cfg.clone(), train_cfg.seed)?;
        Trainer::new(model, train_cfg.clone(), exec)?
    };
    trainer.fit(&train_set, &val_set, Some(out_dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_lead_field, build_synthetic_source_space};
    use crate::sim::{simulate_sample, SimulationConfig};

    #[test]
    fn scheduler_halves_after_three_flat_epochs() {
        let mut s = PlateauScheduler::new(3, 1e-4, 1e-6);
        let mut lr = 1e-3;
        let mut lrs = Vec::new();
        for _ in 0..8 {
            lrs.push(lr);
            lr = s.observe(1.0, lr).1;
        }
        assert_eq!(lrs, [1e-3, 1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 5e-4, 2.5e-4]);
    }

    #[test]
    fn scheduler_floor_and_small_gains() {
        let mut s = PlateauScheduler::new(1, 1e-4, 1e-6);
        let mut lr = 3e-6;
        s.observe(1.0, lr);
        for _ in 0..5 {
            lr = s.observe(1.0 - 1e-6, lr).1;
        }
        assert_eq!(lr, 1e-6);
        assert!(s.observe(0.5, lr).0);
    }

    fn toy_samples(n: usize, seed: u64) -> (FairConfig, Vec<PairedSample>) {
        let space = build_synthetic_source_space(16, 3, 1).unwrap();
        let lf = build_lead_field(&space, 4, 2).unwrap();
        let samples = (0..n)
            .map(|k| {
                let cfg = SimulationConfig {
                    snr_db: Some(10.0),
                    n_sources: 1,
                    extent: 1,
                    n_timepoints: 32,
                    sample_rate: 250.0,
                    seed: seed + k as u64,
                    preset: Default::default(),
                    jitter: Default::default(),
                };
                simulate_sample(&space, &lf, &cfg).unwrap()
            })
            .collect();
        let mut mc = FairConfig::new(4, 16, 32);
        mc.patch_len = 8;
        mc.overlap = 4;
        mc.attention_dim = 4;
        (mc, samples)
    }

    fn quick_cfg(epochs: usize) -> TrainConfig {
        let mut c = TrainConfig::new(epochs, 7);
        c.batch_size = 4;
        c.adam.lr = 1e-3;
        c
    }

    #[test]
    fn best_val_is_monotone_and_files_written() {
        let (mc, samples) = toy_samples(24, 100);
        let (train, val) = samples.split_at(20);
        let dir = tempfile::tempdir().unwrap();
        let model = FairModel::new(mc, 3).unwrap();
        let mut t = Trainer::new(model, quick_cfg(5), Exec::default()).unwrap();
        let out = t.fit(train, val, Some(dir.path())).unwrap();
        assert_eq!(out.history.len(), 5);
        let curve = out.best_val_curve();
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
        assert!(dir.path().join(BEST_DIR).join("index.json").exists());
        assert_eq!(read_log(&dir.path().join(LOG_FILE)).unwrap(), out.history);

        let best =
            FairModel::from_checkpoint(&Checkpoint::load(&dir.path().join(BEST_DIR)).unwrap())
                .unwrap();
        let best_loss = mean_loss(&best, val, Exec::Sequential).unwrap();
        assert_eq!(best_loss, out.best_val);
    }

    #[test]
    fn reruns_and_execution_modes_are_identical() {
        let (mc, samples) = toy_samples(12, 200);
        let (train, val) = samples.split_at(9);
        let run = |exec| {
            let model = FairModel::new(mc.clone(), 3).unwrap();
            let mut t = Trainer::new(model, quick_cfg(2), exec).unwrap();
            let out = t.fit(train, val, None).unwrap();
            (out.history, t.model)
        };
        let a = run(Exec::Parallel);
        let b = run(Exec::Parallel);
        let c = run(Exec::Sequential);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn resume_continues_numbering_and_matches_straight_run() {
        let (mc, samples) = toy_samples(12, 300);
        let (train, val) = samples.split_at(9);
        let dir = tempfile::tempdir().unwrap();
        let straight = {
            let mut t = Trainer::new(
                FairModel::new(mc.clone(), 1).unwrap(),
                quick_cfg(4),
                Exec::default(),
            )
            .unwrap();
            t.fit(train, val, None).unwrap().history
        };
        let mut t = Trainer::new(
            FairModel::new(mc, 1).unwrap(),
            quick_cfg(2),
            Exec::default(),
        )
        .unwrap();
        t.fit(train, val, Some(dir.path())).unwrap();
        let mut r =
            Trainer::resume(&dir.path().join(LAST_DIR), quick_cfg(2), Exec::default()).unwrap();
        assert_eq!(r.next_epoch(), 2);
        let out = r.fit(train, val, Some(dir.path())).unwrap();
        let epochs: Vec<usize> = out.history.iter().map(|h| h.epoch).collect();
        assert_eq!(epochs, [0, 1, 2, 3]);
        assert_eq!(out.history, straight);
    }

    #[test]
    fn empty_and_mismatched_splits() {
        let (mc, samples) = toy_samples(3, 400);
        let mut t = Trainer::new(
            FairModel::new(mc.clone(), 1).unwrap(),
            quick_cfg(1),
            Exec::default(),
        )
        .unwrap();
        assert!(matches!(t.run_epoch(&[], &samples), Err(EsiError::Data(_))));
        assert!(matches!(t.run_epoch(&samples, &[]), Err(EsiError::Data(_))));
        let mut other = mc;
        other.n_regions = 8;
        let mut t = Trainer::new(
            FairModel::new(other, 1).unwrap(),
            quick_cfg(1),
            Exec::default(),
        )
        .unwrap();
        assert!(matches!(
            t.run_epoch(&samples, &samples),
            Err(EsiError::Parameter(_))
        ));
    }

    #[test]
    fn divergence_names_the_epoch() {
        let (mc, samples) = toy_samples(4, 500);
        let mut cfg = quick_cfg(3);
        cfg.adam.lr = f64::MAX;
        let mut t = Trainer::new(FairModel::new(mc, 1).unwrap(), cfg, Exec::default()).unwrap();
        let err = t.fit(&samples, &samples, None).unwrap_err();
        assert!(matches!(err, EsiError::Divergence { .. }), "{err:?}");
    }
}
