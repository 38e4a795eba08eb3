//! Parameter checkpoints: one ESIT file per tensor, `index.json` mapping
//! names to files and dims, optional Adam moments described by `adam.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use crate::error::{EsiError, Result};
use crate::io;
use crate::tensor::Tensor;

pub const INDEX_FILE: &str = "index.json";
pub const ADAM_FILE: &str = "adam.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub adam: Option<AdamState>,
    /// Free-form metadata (model config, trainer state).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    name: String,
    file: String,
    dims: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    tensors: Vec<IndexEntry>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamIndex {
    config: AdamConfig,
    step: u64,
    moments: Vec<[String; 2]>,
}

fn file_name(name: &str) -> String {
    format!("{}.esit", name.replace(['/', '\\'], "_"))
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir(dir)?;
        let mut entries = Vec::new();
        for (name, t) in &self.tensors {
            let file = file_name(name);
            io::save_tensor(t, &dir.join(&file))?;
            entries.push(IndexEntry {
                name: name.clone(),
                file,
                dims: t.dims().to_vec(),
            });
        }
        io::write_json(
            &Index {
                tensors: entries,
                meta: self.meta.clone(),
            },
            &dir.join(INDEX_FILE),
        )?;
        let adam_path = dir.join(ADAM_FILE);
        if let Some(adam) = &self.adam {
            let mut moments = Vec::new();
            for (i, (name, _)) in self.tensors.iter().enumerate() {
                let (mf, vf) = (
                    file_name(&format!("adam_m.{name}")),
                    file_name(&format!("adam_v.{name}")),
                );
                io::save_tensor(&adam.m[i], &dir.join(&mf))?;
                io::save_tensor(&adam.v[i], &dir.join(&vf))?;
                moments.push([mf, vf]);
            }
            io::write_json(
                &AdamIndex {
                    config: adam.config,
                    step: adam.step,
                    moments,
                },
                &adam_path,
            )?;
        } else if adam_path.exists() {
            std::fs::remove_file(&adam_path).map_err(|e| EsiError::io(&adam_path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: Index = io::read_json(&dir.join(INDEX_FILE))?;
        let mut tensors = Vec::new();
        for e in &index.tensors {
            let t = io::load_tensor(&dir.join(&e.file))?;
            if t.dims() != e.dims.as_slice() {
                return Err(EsiError::Format(format!(
                    "{}: index says {:?}, file holds {:?}",
                    e.name,
                    e.dims,
                    t.dims()
                )));
            }
            tensors.push((e.name.clone(), t));
        }
        let adam_path = dir.join(ADAM_FILE);
        let adam = if adam_path.exists() {
            let a: AdamIndex = io::read_json(&adam_path)?;
            if a.moments.len() != tensors.len() {
                return Err(EsiError::Format(format!(
                    "adam state has {} moment pairs for {} tensors",
                    a.moments.len(),
                    tensors.len()
                )));
            }
            let mut m = Vec::new();
            let mut v = Vec::new();
            for [mf, vf] in &a.moments {
                m.push(io::load_tensor(&dir.join(mf))?);
                v.push(io::load_tensor(&dir.join(vf))?);
            }
            Some(AdamState {
                config: a.config,
                step: a.step,
                m,
                v,
            })
        } else {
            None
        };
        Ok(Checkpoint {
            tensors,
            adam,
            meta: index.meta,
        })
    }
}
