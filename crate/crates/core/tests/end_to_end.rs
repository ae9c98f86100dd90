use yformer::data::{parse_csv, synth_series, CsvOptions, Dataset, DatasetSpec, SplitSpec, SynthKind, WindowSpec};
use yformer::harness::{evaluate, fit_model_config, train, ResultStore, TrainConfig};
use yformer::model::{load_checkpoint, save_checkpoint, ModelConfig};

fn sines() -> Dataset {
    let series = synth_series(SynthKind::SumOfSines, 600, 0.1, 11).unwrap();
    let spec = DatasetSpec {
        targets: vec![],
        split: SplitSpec::SYNTHETIC,
        window: WindowSpec::new(24, 12),
    };
    Dataset::prepare(&series, &spec).unwrap()
}

fn small(ds: &Dataset) -> ModelConfig {
    let template = ModelConfig {
        d_model: 16,
        n_heads: 2,
        ..ModelConfig::new(0, 0, 0, 0)
    };
    fit_model_config(ds, &template)
}

#[test]
fn training_lowers_the_loss_over_five_epochs() {
    let ds = sines();
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        max_epochs: 5,
        patience: 5,
        seed: 1,
        max_eval_windows: Some(64),
        ..TrainConfig::default()
    };
    let out = train(&small(&ds), &cfg, &ds, "sines", "smoke").unwrap();
    let losses = out.record.train_losses();
    assert_eq!(losses.len(), 5);
    assert!(losses[4] < losses[0], "{losses:?}");
}

#[test]
fn checkpoint_reproduces_test_metrics() {
    let ds = sines();
    let cfg = TrainConfig {
        max_epochs: 2,
        max_train_batches: Some(3),
        max_eval_windows: Some(32),
        seed: 4,
        ..TrainConfig::default()
    };
    let out = train(&small(&ds), &cfg, &ds, "sines", "ckpt").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&out.model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let a = evaluate(&out.model, &ds, &ds.test, 32, Some(32), 9, false).unwrap();
    let b = evaluate(&loaded, &ds, &ds.test, 32, Some(32), 9, false).unwrap();
    assert_eq!(a, b);

    let store = ResultStore::create(dir.path().join("results")).unwrap();
    let run = store.append(&out.record).unwrap();
    let back = yformer::harness::results::read_records(&run).unwrap();
    assert_eq!(back, vec![out.record]);
}

#[test]
fn csv_series_flows_through_training() {
    let mut text = String::from("date,load,OT\n");
    let start = chrono::NaiveDate::from_ymd_opt(2017, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    for h in 0..500i64 {
        let t = start + chrono::TimeDelta::hours(h);
        let x = (h as f64 * 0.26).sin();
        text.push_str(&format!("{},{:.4},{:.4}\n", t.format("%Y-%m-%d %H:%M:%S"), x, 0.5 * x + 1.0));
    }
    let series = parse_csv(text.as_bytes(), "inline.csv", CsvOptions::default()).unwrap();
    let spec = DatasetSpec {
        targets: vec!["OT".into()],
        split: SplitSpec::SYNTHETIC,
        window: WindowSpec::new(16, 8),
    };
    let ds = Dataset::prepare(&series, &spec).unwrap();
    let cfg = small(&ds);
    assert_eq!((cfg.predictors, cfg.targets), (1, 1));
    let tc = TrainConfig {
        max_epochs: 1,
        max_train_batches: Some(2),
        max_eval_windows: Some(16),
        destandardize: true,
        ..TrainConfig::default()
    };
    let rec = train(&cfg, &tc, &ds, "inline", "csv").unwrap().record;
    assert!(rec.test.mse.is_finite() && rec.test.mae > 0.0);
}
