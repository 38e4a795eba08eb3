use esi_core::dataset::{extract_patches, merge_patches, normalize_fragment};
use esi_core::eval::{
    evaluate_split, SloretaSolver, SourceEstimator, Summary, DEFAULT_LAMBDA, DEFAULT_THRESHOLD,
};
use esi_core::geometry::{build_lead_field, build_synthetic_source_space};
use esi_core::model::{read_log, train, FairConfig, FairModel, TrainConfig, BEST_DIR, LOG_FILE};
use esi_core::nn::checkpoint::Checkpoint;
use esi_core::sim::{generate_dataset, load_manifest, SimulationConfig, Split};
use esi_core::Exec;

fn cell(snr_db: Option<f64>, seed: u64) -> SimulationConfig {
    SimulationConfig {
        snr_db,
        n_sources: 1,
        extent: 2,
        n_timepoints: 48,
        sample_rate: 250.0,
        seed,
        preset: Default::default(),
        jitter: Default::default(),
    }
}

#[test]
fn simulate_train_and_score_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let space = build_synthetic_source_space(24, 4, 3).unwrap();
    let lf = build_lead_field(&space, 8, 4).unwrap();
    let grid = [cell(Some(10.0), 50), cell(None, 60)];
    let manifest = generate_dataset(
        &space,
        &lf,
        &grid,
        24,
        &dir.path().join("data"),
        Exec::default(),
    )
    .unwrap();
    let reloaded = load_manifest(&dir.path().join("data/manifest.json")).unwrap();
    assert_eq!(reloaded.entries.len(), 48);
    let train_set = reloaded.load_split(Split::Train).unwrap();
    let test_set = reloaded.load_split(Split::Test).unwrap();
    assert_eq!((train_set.len(), test_set.len()), (40, 4));

    for s in &test_set {
        let (xn, _) = normalize_fragment(&s.x).unwrap();
        let grid = extract_patches(&xn, 16, 8).unwrap();
        let back = merge_patches(&grid).unwrap();
        assert!(back.sub(&xn).unwrap().max_abs() < 1e-12);
    }

    let mut cfg = FairConfig::new(8, 24, 48);
    cfg.attention_dim = 4;
    let run = dir.path().join("run");
    let outcome = train(
        &manifest,
        &cfg,
        &TrainConfig::new(2, 5),
        &run,
        Exec::default(),
        false,
    )
    .unwrap();
    assert_eq!(read_log(&run.join(LOG_FILE)).unwrap(), outcome.history);

    let model =
        FairModel::from_checkpoint(&Checkpoint::load(&run.join(BEST_DIR)).unwrap()).unwrap();
    let solver = SloretaSolver::new(&lf, DEFAULT_LAMBDA).unwrap();
    for est in [&model as &dyn SourceEstimator, &solver] {
        let seq =
            evaluate_split(est, &test_set, &space, DEFAULT_THRESHOLD, Exec::Sequential).unwrap();
        let par =
            evaluate_split(est, &test_set, &space, DEFAULT_THRESHOLD, Exec::Parallel).unwrap();
        assert_eq!(seq, par);
        let summary = Summary::from_reports(&seq);
        assert_eq!(summary.nmse.n, 4);
        assert!(summary.nmse.mean.is_finite());
    }
}

#[test]
fn checkpoint_reload_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let space = build_synthetic_source_space(16, 3, 1).unwrap();
    let lf = build_lead_field(&space, 6, 2).unwrap();
    let manifest = generate_dataset(
        &space,
        &lf,
        &[cell(Some(5.0), 7)],
        12,
        &dir.path().join("d"),
        Exec::default(),
    )
    .unwrap();
    let mut cfg = FairConfig::new(6, 16, 48);
    cfg.attention_dim = 4;
    let run = dir.path().join("r");
    train(
        &manifest,
        &cfg,
        &TrainConfig::new(1, 9),
        &run,
        Exec::default(),
        false,
    )
    .unwrap();
    let a = FairModel::from_checkpoint(&Checkpoint::load(&run.join(BEST_DIR)).unwrap()).unwrap();
    let b = FairModel::from_checkpoint(&Checkpoint::load(&run.join(BEST_DIR)).unwrap()).unwrap();
    let x = &manifest.load_split(Split::Val).unwrap()[0].x;
    assert_eq!(a.forward(x).unwrap(), b.forward(x).unwrap());
}
