use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use esi_core::eval::{DEFAULT_LAMBDA, DEFAULT_THRESHOLD};
use esi_core::model::{FairConfig, TrainConfig};
use esi_core::sim::{derive_seed, NmmJitter, NmmPreset, SimulationConfig};
use esi_core::{EsiError, Result};

/// Seed streams derived from the experiment seed.
pub const GEOMETRY_STREAM: u64 = 10;
pub const LEAD_FIELD_STREAM: u64 = 11;
pub const TRAIN_STREAM: u64 = 20;
pub const CELL_STREAM_BASE: u64 = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub n_regions: usize,
    pub n_neighbors: usize,
    pub n_channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    /// `null` disables sensor noise.
    pub snr_db: Option<f64>,
    pub n_sources: usize,
    pub extent: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub n_timepoints: usize,
    pub sample_rate: f64,
    pub samples_per_cell: usize,
    #[serde(default)]
    pub preset: NmmPreset,
    #[serde(default)]
    pub jitter: NmmJitter,
    pub grid: Vec<GridCell>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_lambda")]
    pub sloreta_lambda: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            threshold: DEFAULT_THRESHOLD,
            sloreta_lambda: DEFAULT_LAMBDA,
        }
    }
}

fn default_data_dir() -> PathBuf {
    "data".into()
}
fn default_run_dir() -> PathBuf {
    "run".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_run_dir")]
    pub run_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            data_dir: default_data_dir(),
            run_dir: default_run_dir(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    geometry: GeometrySection,
    simulation: SimulationSection,
    #[serde(default)]
    model: Option<Value>,
    #[serde(default)]
    training: Option<Value>,
    #[serde(default)]
    evaluation: EvaluationSection,
    #[serde(default)]
    paths: PathsSection,
}

/// A validated experiment description. Relative paths are resolved against
/// the directory holding the config file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub geometry: GeometrySection,
    pub simulation: SimulationSection,
    pub model: FairConfig,
    pub training: TrainConfig,
    pub evaluation: EvaluationSection,
    pub data_dir: PathBuf,
    pub run_dir: PathBuf,
}

fn invalid(msg: impl Into<String>) -> EsiError {
    EsiError::Parameter(msg.into())
}

fn section_object(v: Option<Value>, name: &str) -> Result<serde_json::Map<String, Value>> {
    match v {
        None => Ok(Default::default()),
        Some(Value::Object(m)) => Ok(m),
        Some(_) => Err(invalid(format!(
            "config section `{name}` must be an object"
        ))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EsiError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, seed_override).map_err(|e| match e {
            EsiError::Parameter(m) => invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path, seed_override: Option<u64>) -> Result<Self> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| invalid(format!("invalid config: {e}")))?;
        let seed = seed_override.unwrap_or(raw.seed);

        let mut model = section_object(raw.model, "model")?;
        for (key, value) in [
            ("n_channels", raw.geometry.n_channels),
            ("n_regions", raw.geometry.n_regions),
            ("n_timepoints", raw.simulation.n_timepoints),
        ] {
            if model.contains_key(key) {
                return Err(invalid(format!(
                    "model.{key} is derived from the geometry/simulation sections; remove it"
                )));
            }
            model.insert(key.into(), value.into());
        }
        let model: FairConfig = serde_json::from_value(Value::Object(model))
            .map_err(|e| invalid(format!("invalid model section: {e}")))?;

        let mut training = section_object(raw.training, "training")?;
        if training.contains_key("seed") {
            return Err(invalid(
                "training.seed is derived from the top-level seed; remove it",
            ));
        }
        training.entry("epochs").or_insert_with(|| Value::from(10));
        training.insert("seed".into(), derive_seed(seed, TRAIN_STREAM).into());
        let training: TrainConfig = serde_json::from_value(Value::Object(training))
            .map_err(|e| invalid(format!("invalid training section: {e}")))?;

        let cfg = ExperimentConfig {
            seed,
            geometry: raw.geometry,
            simulation: raw.simulation,
            model,
            training,
            evaluation: raw.evaluation,
            data_dir: base.join(raw.paths.data_dir),
            run_dir: base.join(raw.paths.run_dir),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if g.n_regions < 8 || g.n_neighbors < 1 || g.n_neighbors >= g.n_regions {
            return Err(invalid(format!(
                "geometry needs n_regions >= 8 and 1 <= n_neighbors < n_regions (got {} / {})",
                g.n_regions, g.n_neighbors
            )));
        }
        if g.n_channels < 2 {
            return Err(invalid("geometry.n_channels must be >= 2"));
        }
        let s = &self.simulation;
        if s.grid.is_empty() {
            return Err(invalid("simulation.grid must list at least one cell"));
        }
        if s.samples_per_cell == 0 {
            return Err(invalid("simulation.samples_per_cell must be >= 1"));
        }
        for cell in self.cells() {
            cell.validate()?;
        }
        self.model.validate()?;
        self.training.validate()?;
        let e = &self.evaluation;
        if !(e.threshold > 0.0 && e.threshold <= 1.0) {
            return Err(invalid(format!(
                "evaluation.threshold must lie in (0, 1], got {}",
                e.threshold
            )));
        }
        if !(e.sloreta_lambda >= 0.0 && e.sloreta_lambda.is_finite()) {
            return Err(invalid("evaluation.sloreta_lambda must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn geometry_seed(&self) -> u64 {
        derive_seed(self.seed, GEOMETRY_STREAM)
    }

    pub fn lead_field_seed(&self) -> u64 {
        derive_seed(self.seed, LEAD_FIELD_STREAM)
    }

    /// One simulation config per grid cell, each with its own seed stream.
    pub fn cells(&self) -> Vec<SimulationConfig> {
        let s = &self.simulation;
        s.grid
            .iter()
            .enumerate()
            .map(|(c, cell)| SimulationConfig {
                snr_db: cell.snr_db,
                n_sources: cell.n_sources,
                extent: cell.extent,
                n_timepoints: s.n_timepoints,
                sample_rate: s.sample_rate,
                seed: derive_seed(self.seed, CELL_STREAM_BASE + c as u64),
                preset: s.preset,
                jitter: s.jitter.clone(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"{
        "seed": 7,
        "geometry": {"n_regions": 64, "n_neighbors": 6, "n_channels": 32},
        "simulation": {"n_timepoints": 128, "sample_rate": 250, "samples_per_cell": 12,
                       "grid": [{"snr_db": 5, "n_sources": 1, "extent": 2}]},
        "model": {"patch_len": 16},
        "training": {"epochs": 3, "batch_size": 4}
    }"#;

    #[test]
    fn parses_toy_config() {
        let c = ExperimentConfig::parse(TOY, Path::new("/x"), None).unwrap();
        assert_eq!(c.model.n_channels, 32);
        assert_eq!(c.model.n_regions, 64);
        assert_eq!(c.model.n_timepoints, 128);
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.data_dir, Path::new("/x/data"));
        assert_eq!(c.cells().len(), 1);
        assert_eq!(c.evaluation, EvaluationSection::default());
    }

    #[test]
    fn shipped_toy_config_is_valid() {
        let text = include_str!("../../../configs/toy.json");
        let c = ExperimentConfig::parse(text, Path::new("/r/configs"), None).unwrap();
        assert_eq!(c.simulation.samples_per_cell, 720);
        assert_eq!(c.training.epochs, 50);
        assert_eq!(c.run_dir, Path::new("/r/configs/../runs/toy"));
    }

    #[test]
    fn seed_override_changes_every_stream() {
        let a = ExperimentConfig::parse(TOY, Path::new("."), None).unwrap();
        let b = ExperimentConfig::parse(TOY, Path::new("."), Some(8)).unwrap();
        assert_ne!(a.geometry_seed(), b.geometry_seed());
        assert_ne!(a.cells()[0].seed, b.cells()[0].seed);
        assert_ne!(a.training.seed, b.training.seed);
    }

    const SCHEMA: &str = include_str!("../schema/experiment.schema.json");

    fn same_default(schema: &Value, actual: &Value) -> bool {
        match (schema.as_f64(), actual.as_f64()) {
            (Some(a), Some(b)) => a == b,
            _ => schema == actual,
        }
    }

    /// Schema keys and defaults must agree with what the parser accepts.
    fn check_section(schema: &Value, defaults: Value, skip: &[&str]) {
        let props = schema["properties"].as_object().unwrap();
        let mut actual = defaults.as_object().unwrap().clone();
        for k in skip {
            actual.remove(*k);
        }
        let mut a: Vec<&String> = props.keys().collect();
        let mut b: Vec<&String> = actual.keys().collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        for (k, v) in &actual {
            let entry = &props[k];
            if entry["type"] == "object" {
                check_section(entry, v.clone(), &[]);
            } else {
                assert!(
                    same_default(&entry["default"], v),
                    "{k}: {} vs {v}",
                    entry["default"]
                );
            }
        }
    }

    #[test]
    fn schema_matches_parser() {
        let schema: Value = serde_json::from_str(SCHEMA).unwrap();
        let p = &schema["properties"];
        check_section(
            &p["model"],
            serde_json::to_value(FairConfig::new(1, 1, 1)).unwrap(),
            &["n_channels", "n_regions", "n_timepoints"],
        );
        check_section(
            &p["training"],
            serde_json::to_value(TrainConfig::new(10, 0)).unwrap(),
            &["seed"],
        );
        check_section(
            &p["evaluation"],
            serde_json::to_value(EvaluationSection::default()).unwrap(),
            &[],
        );
        check_section(
            &p["paths"],
            serde_json::to_value(PathsSection::default()).unwrap(),
            &[],
        );
        let sim = &p["simulation"]["properties"];
        check_section(
            &sim["jitter"],
            serde_json::to_value(NmmJitter::default()).unwrap(),
            &[],
        );
        assert_eq!(
            sim["preset"]["default"],
            serde_json::to_value(NmmPreset::default()).unwrap()
        );
        let top: Vec<&String> = p.as_object().unwrap().keys().collect();
        assert_eq!(top.len(), 7);
    }

    #[test]
    fn rejects_unknown_and_derived_keys() {
        for (from, to) in [
            (r#""seed": 7,"#, r#""seed": 7, "sede": 1,"#),
            (r#""patch_len": 16"#, r#""patch_lenn": 16"#),
            (r#""patch_len": 16"#, r#""n_regions": 64"#),
            (r#""batch_size": 4"#, r#""batch_size": 4, "seed": 3"#),
            (r#""extent": 2"#, r#""extent": 2, "radius": 1"#),
            (r#""samples_per_cell": 12"#, r#""samples_per_cell": 0"#),
            (r#""n_neighbors": 6"#, r#""n_neighbors": 64"#),
        ] {
            let text = TOY.replace(from, to);
            assert_ne!(text, TOY);
            let err = ExperimentConfig::parse(&text, Path::new("."), None).unwrap_err();
            assert!(matches!(err, EsiError::Parameter(_)), "{to}: {err:?}");
        }
    }
}
