use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn esi(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_esi"));
    cmd.args(args).env_remove("ESI_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn esi")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "esi failed ({:?}): {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn toy_config(samples_per_cell: usize, grid: Value) -> Value {
    json!({
        "seed": 7,
        "geometry": {"n_regions": 64, "n_neighbors": 6, "n_channels": 32},
        "simulation": {
            "n_timepoints": 64,
            "sample_rate": 250,
            "samples_per_cell": samples_per_cell,
            "grid": grid
        },
        "model": {"attention_dim": 4},
        "training": {"epochs": 3, "batch_size": 4, "adam": {"lr": 1e-3}}
    })
}

fn default_grid() -> Value {
    json!([{"snr_db": 5, "n_sources": 1, "extent": 2}])
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("experiment.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn read_tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulated toy dataset in `<tmp>/data` plus the config path.
fn simulated(samples_per_cell: usize, grid: Value) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &toy_config(samples_per_cell, grid));
    ok(&esi(&["simulate", "--config", s(&cfg)], &[]));
    (dir, cfg)
}

#[test]
fn simulate_writes_samples_and_manifest() {
    let (dir, _) = simulated(12, default_grid());
    let data = dir.path().join("data");
    let manifest: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest.len(), 12);
    let sidecars = std::fs::read_dir(data.join("cell_00"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "json")
        .count();
    assert_eq!(sidecars, 12);
    assert!(data.join("source_space.json").is_file());
    assert!(data.join("lead_field.esit").is_file());
}

#[test]
fn simulate_grid_of_three_snrs_and_prints_counts() {
    let dir = tempfile::tempdir().unwrap();
    let grid = json!([
        {"snr_db": -5, "n_sources": 1, "extent": 2},
        {"snr_db": 5, "n_sources": 1, "extent": 2},
        {"snr_db": 15, "n_sources": 1, "extent": 2}
    ]);
    let cfg = write_config(dir.path(), &toy_config(12, grid));
    let stdout = ok(&esi(&["simulate", "--config", s(&cfg)], &[]));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("cell ")).count(), 3);
    assert!(stdout.contains("12 samples (train 10, val 1, test 1)"));
    let manifest: Vec<Value> = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("data/manifest.json")).unwrap(),
    )
    .unwrap();
    let mut snrs: Vec<f64> = manifest
        .iter()
        .map(|e| e["config"]["snr_db"].as_f64().unwrap())
        .collect();
    snrs.dedup();
    assert_eq!(snrs, [-5.0, 5.0, 15.0]);
}

#[test]
fn simulate_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &toy_config(12, default_grid()));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&esi(
        &["simulate", "--config", s(&cfg), "--out", s(&a)],
        &[],
    ));
    ok(&esi(
        &["simulate", "--config", s(&cfg), "--out", s(&b)],
        &[("ESI_THREADS", "2")],
    ));
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert_eq!(ta.len(), 12 * 3 + 3);
    assert_eq!(ta, tb);

    let c = dir.path().join("c");
    ok(&esi(
        &[
            "simulate",
            "--config",
            s(&cfg),
            "--out",
            s(&c),
            "--seed",
            "8",
        ],
        &[],
    ));
    assert_ne!(ta, read_tree(&c));
}

fn log_rows(run: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "epoch,train_loss,val_loss,lr");
    lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn train_resume_and_rerun() {
    let (dir, cfg) = simulated(12, default_grid());
    let run = dir.path().join("run");
    ok(&esi(&["train", "--config", s(&cfg)], &[]));
    let rows = log_rows(&run);
    assert_eq!(rows.len(), 3);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], i.to_string());
        assert!(r[1].parse::<f64>().unwrap().is_finite());
        assert!(r[2].parse::<f64>().unwrap().is_finite());
    }
    assert!(run.join("best/index.json").is_file());
    assert!(run.join("last/adam.json").is_file());

    let rerun = dir.path().join("rerun");
    ok(&esi(
        &["train", "--config", s(&cfg), "--out", s(&rerun)],
        &[("ESI_THREADS", "1")],
    ));
    assert_eq!(
        std::fs::read(run.join("train_log.csv")).unwrap(),
        std::fs::read(rerun.join("train_log.csv")).unwrap()
    );

    ok(&esi(&["train", "--config", s(&cfg), "--resume"], &[]));
    let resumed = log_rows(&run);
    assert_eq!(resumed.len(), 6);
    assert_eq!(resumed[..3], rows[..]);
    let epochs: Vec<&str> = resumed.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(epochs, ["0", "1", "2", "3", "4", "5"]);
}

#[test]
fn train_divergence_exits_numerical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(12, default_grid());
    cfg["training"]["adam"]["lr"] = json!(1e300);
    let path = write_config(dir.path(), &cfg);
    ok(&esi(&["simulate", "--config", s(&path)], &[]));
    let out = esi(&["train", "--config", s(&path)], &[]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 0"));
}

fn summary(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn eval_fair_and_side_by_side() {
    let (dir, cfg) = simulated(24, default_grid());
    ok(&esi(&["train", "--config", s(&cfg)], &[]));
    let out = dir.path().join("eval");
    ok(&esi(&["eval", "--config", s(&cfg), "--out", s(&out)], &[]));
    let csv = std::fs::read_to_string(out.join("fair_reports.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);
    let sm = summary(&out.join("summary.json"));
    assert_eq!(sm.as_object().unwrap().len(), 1);
    assert_eq!(sm["fair"]["nmse"]["n"], 2);

    let both = dir.path().join("both");
    let stdout = ok(&esi(
        &[
            "eval",
            "--config",
            s(&cfg),
            "--out",
            s(&both),
            "--solver",
            "fair",
            "--solver",
            "sloreta",
        ],
        &[],
    ));
    let sm = summary(&both.join("summary.json"));
    let keys: Vec<&String> = sm.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["fair", "sloreta"]);
    for k in ["precision", "recall", "le_mm", "sd_mm", "nmse"] {
        for field in ["mean", "std", "n", "excluded_count"] {
            assert!(sm["sloreta"][k].get(field).is_some(), "{k}.{field}");
        }
    }
    assert!(stdout.contains("sloreta"));
    assert!(both.join("sloreta_reports.csv").is_file());
}

#[test]
fn eval_sloreta_noiseless_single_sources_has_zero_error() {
    let grid = json!([{"snr_db": null, "n_sources": 1, "extent": 1}]);
    let (dir, cfg) = simulated(120, grid);
    let out = dir.path().join("eval");
    ok(&esi(
        &[
            "eval",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--solver",
            "sloreta",
        ],
        &[],
    ));
    let sm = summary(&out.join("summary.json"));
    assert_eq!(sm["sloreta"]["le_mm"]["n"], 10);
    assert_eq!(sm["sloreta"]["le_mm"]["mean"], 0.0);
}

#[test]
fn eval_without_checkpoint_is_a_validation_error() {
    let (_dir, cfg) = simulated(12, default_grid());
    let out = esi(&["eval", "--config", s(&cfg)], &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("esi train"));
}

fn write_tensor(path: &Path, rows: usize, cols: usize, data: &[f32]) {
    let mut bytes = b"ESIT".to_vec();
    bytes.push(1);
    bytes.push(2);
    for d in [rows, cols] {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).unwrap();
}

fn disc_fills(svg: &str) -> Vec<String> {
    let doc = roxmltree::Document::parse(svg).expect("well-formed SVG");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    doc.descendants()
        .filter(|n| n.has_tag_name("circle") && n.attribute("r") == Some("7"))
        .map(|n| n.attribute("fill").unwrap().to_string())
        .collect()
}

#[test]
fn localize_outputs_and_zero_fragment() {
    let (dir, cfg) = simulated(12, default_grid());
    ok(&esi(&["train", "--config", s(&cfg)], &[]));

    let sample = dir.path().join("data/cell_00/sample_000000.json");
    let out = dir.path().join("loc");
    ok(&esi(
        &[
            "localize",
            "--config",
            s(&cfg),
            "--fragment",
            s(&sample),
            "--out",
            s(&out),
        ],
        &[],
    ));
    let bytes = std::fs::read(out.join("s_hat.esit")).unwrap();
    assert_eq!(&bytes[..4], b"ESIT");
    assert_eq!(bytes[5], 2);
    assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 64);
    assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 64);
    assert_eq!(bytes.len(), 14 + 4 * 64 * 64);
    let fills = disc_fills(&std::fs::read_to_string(out.join("topography.svg")).unwrap());
    assert_eq!(fills.len(), 64);
    assert!(fills.iter().any(|f| f != "#bdbdbd"));

    let zero = dir.path().join("zero.esit");
    write_tensor(&zero, 32, 64, &vec![0.0; 32 * 64]);
    let zout = dir.path().join("zloc");
    ok(&esi(
        &[
            "localize",
            "--config",
            s(&cfg),
            "--fragment",
            s(&zero),
            "--out",
            s(&zout),
        ],
        &[],
    ));
    let fills = disc_fills(&std::fs::read_to_string(zout.join("topography.svg")).unwrap());
    assert_eq!(fills.len(), 64);
    assert!(fills.iter().all(|f| f == "#bdbdbd"));

    let bad = dir.path().join("bad.esit");
    write_tensor(&bad, 31, 64, &vec![0.0; 31 * 64]);
    let out = esi(
        &["localize", "--config", s(&cfg), "--fragment", s(&bad)],
        &[],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn localize_with_sloreta_needs_no_checkpoint() {
    let (dir, cfg) = simulated(12, default_grid());
    let sample = dir.path().join("data/cell_00/sample_000003.json");
    ok(&esi(
        &[
            "localize",
            "--config",
            s(&cfg),
            "--fragment",
            s(&sample),
            "--solver",
            "sloreta",
        ],
        &[],
    ));
    assert!(dir.path().join("run/localize/topography.svg").is_file());
}

#[test]
fn validation_and_io_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_config(12, default_grid());
    cfg["model"]["tua"] = json!(0.1);
    let bad = write_config(dir.path(), &cfg);
    let out = esi(&["simulate", "--config", s(&bad)], &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("tua"));

    let good = write_config(dir.path(), &toy_config(12, default_grid()));
    assert_eq!(code(&esi(&["train", "--config", s(&good)], &[])), 3);
    assert_eq!(
        code(&esi(
            &["simulate", "--config", s(&good)],
            &[("ESI_THREADS", "zero")]
        )),
        2
    );
    assert_eq!(
        code(&esi(
            &["simulate", "--config", s(&good)],
            &[("ESI_THREADS", "0")]
        )),
        2
    );
    assert_eq!(
        code(&esi(&["simulate", "--config", "/nonexistent/x.json"], &[])),
        3
    );
    assert_eq!(code(&esi(&["simulate"], &[])), 2);

    let garbled = dir.path().join("data/manifest.json");
    std::fs::create_dir_all(garbled.parent().unwrap()).unwrap();
    std::fs::write(&garbled, "[{\"path\": 3}]").unwrap();
    assert_eq!(code(&esi(&["train", "--config", s(&good)], &[])), 3);
}
