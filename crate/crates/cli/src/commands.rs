use std::path::{Path, PathBuf};

use esi_core::eval::{
    evaluate_split, region_energies, write_reports_csv, Comparison, SloretaSolver, SourceEstimator,
    Summary,
};
use esi_core::geometry::{
    build_lead_field, build_synthetic_source_space, load_lead_field, save_lead_field, LeadField,
    SourceSpace,
};
use esi_core::io;
use esi_core::model::{train, FairModel, BEST_DIR, LOG_FILE};
use esi_core::nn::checkpoint::{Checkpoint, INDEX_FILE};
use esi_core::sim::{generate_dataset, load_manifest, load_sample, Manifest, Split, MANIFEST_FILE};
use esi_core::{EsiError, Exec, Result, Tensor};

use crate::config::ExperimentConfig;
use crate::svg::render_topography;

pub const SOURCE_SPACE_FILE: &str = "source_space.json";
pub const LEAD_FIELD_FILE: &str = "lead_field.esit";
pub const RESOLVED_CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ESTIMATE_FILE: &str = "s_hat.esit";
pub const TOPOGRAPHY_FILE: &str = "topography.svg";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SolverKind {
    Fair,
    Sloreta,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Fair => "fair",
            SolverKind::Sloreta => "sloreta",
        }
    }
}

/// Options shared by every subcommand after config loading.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

fn manifest_path(cfg: &ExperimentConfig, o: &Overrides) -> PathBuf {
    o.manifest
        .clone()
        .unwrap_or_else(|| cfg.data_dir.join(MANIFEST_FILE))
}

fn data_dir_of(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn open_manifest(path: &Path) -> Result<Manifest> {
    if !path.is_file() {
        return Err(EsiError::Data(format!(
            "manifest {} not found; run `esi simulate` first or pass --manifest",
            path.display()
        )));
    }
    load_manifest(path)
}

fn load_fair(cfg: &ExperimentConfig, o: &Overrides) -> Result<FairModel> {
    let dir = o
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.run_dir.join(BEST_DIR));
    if !dir.join(INDEX_FILE).is_file() {
        return Err(EsiError::Parameter(format!(
            "no checkpoint at {}; run `esi train` first or pass --checkpoint",
            dir.display()
        )));
    }
    FairModel::from_checkpoint(&Checkpoint::load(&dir)?)
}

fn estimator(
    kind: SolverKind,
    cfg: &ExperimentConfig,
    o: &Overrides,
    data_dir: &Path,
) -> Result<Box<dyn SourceEstimator>> {
    Ok(match kind {
        SolverKind::Fair => Box::new(load_fair(cfg, o)?),
        SolverKind::Sloreta => {
            let lf: LeadField = load_lead_field(&data_dir.join(LEAD_FIELD_FILE))?;
            Box::new(SloretaSolver::new(&lf, cfg.evaluation.sloreta_lambda)?)
        }
    })
}

/// Builds geometry, writes it next to the samples, and simulates every grid
/// cell. Returns the manifest path.
pub fn cmd_simulate(cfg: &ExperimentConfig, o: &Overrides, exec: Exec) -> Result<PathBuf> {
    let out = o.out.clone().unwrap_or_else(|| cfg.data_dir.clone());
    let g = &cfg.geometry;
    let space = build_synthetic_source_space(g.n_regions, g.n_neighbors, cfg.geometry_seed())?;
    let lf = build_lead_field(&space, g.n_channels, cfg.lead_field_seed())?;
    io::create_dir(&out)?;
    space.save_json(&out.join(SOURCE_SPACE_FILE))?;
    save_lead_field(&lf, &out.join(LEAD_FIELD_FILE))?;
    let cells = cfg.cells();
    let manifest = generate_dataset(
        &space,
        &lf,
        &cells,
        cfg.simulation.samples_per_cell,
        &out,
        exec,
    )?;
    for (c, cell) in cells.iter().enumerate() {
        let entries: Vec<_> = manifest
            .entries
            .iter()
            .filter(|e| e.path.starts_with(&format!("cell_{c:02}/")))
            .collect();
        let count = |s: Split| entries.iter().filter(|e| e.split == s).count();
        let snr = cell
            .snr_db
            .map_or("none".to_string(), |v| format!("{v} dB"));
        println!(
            "cell {c:02} (snr {snr}, sources {}, extent {}): {} samples (train {}, val {}, test {})",
            cell.n_sources,
            cell.extent,
            entries.len(),
            count(Split::Train),
            count(Split::Val),
            count(Split::Test)
        );
    }
    let path = out.join(MANIFEST_FILE);
    println!("manifest: {}", path.display());
    Ok(path)
}

/// Trains FAIR-ESI on the manifest's train/val splits. Returns the best
/// checkpoint directory.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    o: &Overrides,
    resume: bool,
    exec: Exec,
) -> Result<PathBuf> {
    let manifest = open_manifest(&manifest_path(cfg, o))?;
    let out = o.out.clone().unwrap_or_else(|| cfg.run_dir.clone());
    io::create_dir(&out)?;
    io::write_json(
        &serde_json::json!({
            "seed": cfg.seed,
            "model": cfg.model,
            "training": cfg.training,
        }),
        &out.join(RESOLVED_CONFIG_FILE),
    )?;
    let outcome = train(&manifest, &cfg.model, &cfg.training, &out, exec, resume)?;
    for r in &outcome.history {
        println!(
            "epoch {:>3}  train {:.6e}  val {:.6e}  lr {:.2e}",
            r.epoch, r.train_loss, r.val_loss, r.lr
        );
    }
    let best = out.join(BEST_DIR);
    println!(
        "best val {:.6e} at epoch {}; checkpoint {}; log {}",
        outcome.best_val,
        outcome.best_epoch,
        best.display(),
        out.join(LOG_FILE).display()
    );
    Ok(best)
}

/// Scores each requested solver on the test split. Returns the written
/// report paths, summary last.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    o: &Overrides,
    solvers: &[SolverKind],
    exec: Exec,
) -> Result<Vec<PathBuf>> {
    let mpath = manifest_path(cfg, o);
    let manifest = open_manifest(&mpath)?;
    let data_dir = data_dir_of(&mpath);
    let space = SourceSpace::load_json(&data_dir.join(SOURCE_SPACE_FILE))?;
    let test = manifest.load_split(Split::Test)?;
    let out = o.out.clone().unwrap_or_else(|| cfg.run_dir.join("eval"));
    io::create_dir(&out)?;

    let mut comparison = Comparison::new();
    let mut written = Vec::new();
    for &kind in solvers {
        let solver = estimator(kind, cfg, o, &data_dir)?;
        let reports = evaluate_split(
            solver.as_ref(),
            &test,
            &space,
            cfg.evaluation.threshold,
            exec,
        )?;
        let path = out.join(format!("{}_reports.csv", kind.name()));
        write_reports_csv(&reports, &path)?;
        written.push(path);
        comparison.insert(kind.name().to_string(), Summary::from_reports(&reports));
    }
    println!(
        "{:<8} {:>16} {:>16} {:>16} {:>16} {:>18}",
        "solver", "precision %", "recall %", "LE mm", "SD mm", "nMSE"
    );
    for (name, s) in &comparison {
        let cell = |m: &esi_core::eval::MetricStat| format!("{:.2}±{:.2}", m.mean, m.std);
        println!(
            "{name:<8} {:>16} {:>16} {:>16} {:>16} {:>18}",
            cell(&s.precision),
            cell(&s.recall),
            cell(&s.le_mm),
            cell(&s.sd_mm),
            format!("{:.4}±{:.4}", s.nmse.mean, s.nmse.std)
        );
    }
    let summary = out.join(SUMMARY_FILE);
    io::write_json(&comparison, &summary)?;
    written.push(summary);
    Ok(written)
}

fn read_fragment(path: &Path) -> Result<Tensor> {
    if path.extension().is_some_and(|e| e == "json") {
        Ok(load_sample(path)?.x)
    } else {
        io::load_tensor(path)
    }
}

/// Runs one solver on a single fragment (an ESIT tensor or a sample
/// sidecar) and writes the estimate plus its topography.
pub fn cmd_localize(
    cfg: &ExperimentConfig,
    o: &Overrides,
    fragment: &Path,
    solver: SolverKind,
) -> Result<(PathBuf, PathBuf)> {
    let data_dir = data_dir_of(&manifest_path(cfg, o));
    let x = read_fragment(fragment)?;
    let n_c = cfg.geometry.n_channels;
    if x.rank() != 2 || x.rows() != n_c {
        return Err(EsiError::Parameter(format!(
            "fragment {} has dims {:?}; expected {n_c} channels x time",
            fragment.display(),
            x.dims()
        )));
    }
    let est = estimator(solver, cfg, o, &data_dir)?;
    if solver == SolverKind::Fair && x.cols() != cfg.model.n_timepoints {
        return Err(EsiError::Parameter(format!(
            "fragment has {} samples; the model expects {}",
            x.cols(),
            cfg.model.n_timepoints
        )));
    }
    let s_hat = est.estimate(&x)?;
    let space = SourceSpace::load_json(&data_dir.join(SOURCE_SPACE_FILE))?;
    if space.n_regions() != s_hat.rows() {
        return Err(EsiError::Parameter(format!(
            "estimate has {} regions but the source space has {}",
            s_hat.rows(),
            space.n_regions()
        )));
    }
    let out = o
        .out
        .clone()
        .unwrap_or_else(|| cfg.run_dir.join("localize"));
    io::create_dir(&out)?;
    let tensor_path = out.join(ESTIMATE_FILE);
    io::save_tensor(&s_hat, &tensor_path)?;
    let svg_path = out.join(TOPOGRAPHY_FILE);
    let energies = region_energies(&s_hat);
    let title = format!("{} estimate for {}", solver.name(), fragment.display());
    std::fs::write(&svg_path, render_topography(&space, &energies, &title))
        .map_err(|e| EsiError::io(&svg_path, e))?;
    println!("estimate: {}", tensor_path.display());
    println!("topography: {}", svg_path.display());
    Ok((tensor_path, svg_path))
}
