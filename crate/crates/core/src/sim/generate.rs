use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{simulate_sample, PairedSample, SimulationConfig};
use crate::error::{EsiError, Result};
use crate::exec::Exec;
use crate::geometry::{LeadField, RegionSet, SourceSpace};
use crate::io;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    /// 10:1:1 split by sample index modulo 12.
    pub fn for_index(index: usize) -> Split {
        match index % 12 {
            10 => Split::Val,
            11 => Split::Test,
            _ => Split::Train,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Sidecar path relative to the manifest directory.
    pub path: String,
    pub split: Split,
    pub config: SimulationConfig,
}

/// Dataset index. Serialized as a bare JSON array; `root` is the directory
/// that entry paths are relative to.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<PairedSample>> {
        self.split(split)
            .into_iter()
            .map(|e| load_sample(&self.resolve(e)))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(&self.entries, path)
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let entries: Vec<ManifestEntry> = io::read_json(path)?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(Manifest { root, entries })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    config: SimulationConfig,
    ground_truth: Vec<RegionSet>,
    x_file: String,
    s_file: String,
}

/// Writes `<stem>.x.esit`, `<stem>.s.esit` and the `<stem>.json` sidecar;
/// returns the sidecar path.
pub fn save_sample(sample: &PairedSample, dir: &Path, stem: &str) -> Result<PathBuf> {
    let x_file = format!("{stem}.x.esit");
    let s_file = format!("{stem}.s.esit");
    io::save_tensor(&sample.x, &dir.join(&x_file))?;
    io::save_tensor(&sample.s, &dir.join(&s_file))?;
    let sidecar = Sidecar {
        config: sample.config.clone(),
        ground_truth: sample.ground_truth.clone(),
        x_file,
        s_file,
    };
    let path = dir.join(format!("{stem}.json"));
    io::write_json(&sidecar, &path)?;
    Ok(path)
}

pub fn load_sample(sidecar_path: &Path) -> Result<PairedSample> {
    let sidecar: Sidecar = io::read_json(sidecar_path)?;
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let x = io::load_tensor(&dir.join(&sidecar.x_file))?;
    let s = io::load_tensor(&dir.join(&sidecar.s_file))?;
    if x.rank() != 2 || s.rank() != 2 || x.cols() != s.cols() {
        return Err(EsiError::Format(format!(
            "{}: inconsistent tensor dims {:?} / {:?}",
            sidecar_path.display(),
            x.dims(),
            s.dims()
        )));
    }
    if sidecar.ground_truth.is_empty()
        || sidecar
            .ground_truth
            .iter()
            .any(|g| g.is_empty() || g.regions().iter().any(|&r| r >= s.rows()))
    {
        return Err(EsiError::Format(format!(
            "{}: invalid ground truth",
            sidecar_path.display()
        )));
    }
    Ok(PairedSample {
        x,
        s,
        ground_truth: sidecar.ground_truth,
        config: sidecar.config,
    })
}

/// Simulates `n_samples` per grid cell (sample `k` is seeded with
/// `cell.seed + k`) and writes files plus `manifest.json` under `out_dir`.
///
/// Samples are independent, so the output does not depend on `exec`.
pub fn generate_dataset(
    space: &SourceSpace,
    lf: &LeadField,
    grid: &[SimulationConfig],
    n_samples: usize,
    out_dir: &Path,
    exec: Exec,
) -> Result<Manifest> {
    for cell in grid {
        cell.validate()?;
    }
    let tasks: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..n_samples).map(move |k| (c, k)))
        .collect();
    for c in 0..grid.len() {
        io::create_dir(&out_dir.join(cell_dir(c)))?;
    }
    let entries = exec
        .map(&tasks, |&(c, k)| -> Result<ManifestEntry> {
            let cfg = SimulationConfig {
                seed: grid[c].seed.wrapping_add(k as u64),
                ..grid[c].clone()
            };
            let sample = simulate_sample(space, lf, &cfg)?;
            let stem = format!("sample_{k:06}");
            save_sample(&sample, &out_dir.join(cell_dir(c)), &stem)?;
            Ok(ManifestEntry {
                path: format!("{}/{stem}.json", cell_dir(c)),
                split: Split::for_index(k),
                config: cfg,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn cell_dir(c: usize) -> String {
    format!("cell_{c:02}")
}
