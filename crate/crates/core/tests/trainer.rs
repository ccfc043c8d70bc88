use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slimclr::data::make_synthetic;
use slimclr::probe::knn_eval;
use slimclr::trainer::{
    evaluate_model, extract_features, pretrain_run, read_grad_log, read_metrics, EvalConfig, LrSchedule, MetricRecord, RunConfig,
    RunMeta, RunOptions, Trainer,
};
use slimclr::Error;

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 5;
    cfg.data.instances = 240;
    cfg.data.test_instances = 80;
    cfg.model.hidden = vec![16, 16];
    cfg.model.head_hidden = 16;
    cfg.model.feature_dim = 8;
    cfg.contrastive.queue_size = 64;
    cfg.optim.epochs = 3;
    cfg.optim.warmup_epochs = 1;
    cfg.optim.batch_size = 60;
    cfg.remedies.slow_start_epochs = 1;
    cfg.diagnostics.knn_every = 3;
    cfg
}

fn steps(records: &[MetricRecord]) -> Vec<(usize, usize, f64, Vec<f64>)> {
    records
        .iter()
        .filter_map(|r| match r {
            MetricRecord::Step { epoch, step, lr, breakdown, .. } => Some((*epoch, *step, *lr, breakdown.widths.clone())),
            _ => None,
        })
        .collect()
}

#[test]
fn smoke_run_writes_every_artifact() {
    let cfg = tiny();
    let tmp = tempfile::tempdir().unwrap();
    let summary = pretrain_run(&cfg, &RunOptions { out_dir: tmp.path().to_path_buf(), ..RunOptions::default() }).unwrap();
    assert_eq!(summary.epochs_completed, 3);
    assert_eq!(summary.steps, 12);
    assert!(summary.final_loss.is_finite());
    for f in ["config.toml", "run.json", "metrics.jsonl", "grads.jsonl", "last_layer.f64", "checkpoints/epoch_0003.ckpt"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let meta: RunMeta = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(meta.gradients, "post_reweighting");
    assert_eq!(meta.slow_start_epochs, 1);
    assert_eq!(meta.steps_per_epoch, 4);

    let records = read_metrics(&tmp.path().join("metrics.jsonl")).unwrap();
    let s = steps(&records);
    assert_eq!(s.len(), 12);
    // slow start: one width in epoch 0, all three afterwards
    for (epoch, _, _, widths) in &s {
        assert_eq!(widths.len(), if *epoch == 0 { 1 } else { 3 });
    }
    // logged learning rates follow the schedule
    let sched = LrSchedule::new(cfg.optim.lr, 1, 3, 4, None);
    for (_, step, lr, _) in &s {
        assert_eq!(*lr, sched.lr(*step));
    }
    let knn: Vec<Option<f64>> = records
        .iter()
        .filter_map(|r| match r {
            MetricRecord::Epoch { knn_full, .. } => Some(*knn_full),
            _ => None,
        })
        .collect();
    assert_eq!(knn.len(), 3);
    assert!(knn[2].is_some() && knn[0].is_none());

    let grads = read_grad_log(&tmp.path().join("grads.jsonl")).unwrap();
    assert_eq!(grads.len(), 12);
    assert!(grads.iter().all(|g| g.partition_norms.values().flatten().all(|&v| v >= 0.0)));
    let with_vector = grads.iter().filter(|g| g.last_layer_ref.is_some()).count();
    assert_eq!(with_vector, 12usize.div_ceil(cfg.diagnostics.last_layer_every));
    let v = grads[0].last_layer_ref.as_ref().unwrap().read(tmp.path()).unwrap();
    assert_eq!(v.len(), (16 + 1) * 8);
}

#[test]
fn slow_start_over_whole_run_never_runs_sub_widths() {
    let mut cfg = tiny();
    cfg.optim.epochs = 2;
    cfg.remedies.slow_start_epochs = 2;
    let splits = make_synthetic(&cfg.data).unwrap();
    let mut t = Trainer::new(cfg, splits).unwrap();
    while !t.is_finished() {
        t.run_epoch(|s| {
            assert_eq!(s.breakdown.widths, vec![1.0]);
            assert!(s.breakdown.distill.iter().all(Option::is_none));
            Ok(())
        })
        .unwrap();
    }
}

#[test]
fn untrained_backbone_probe_is_near_chance_without_class_structure() {
    let mut cfg = tiny();
    cfg.data.separation = 0.0;
    cfg.data.instances = 600;
    cfg.data.test_instances = 400;
    let splits = make_synthetic(&cfg.data).unwrap();
    let t = Trainer::new(cfg.clone(), splits).unwrap();
    let eval = EvalConfig { widths: Some(vec![1.0]), ..EvalConfig::default() };
    let report = evaluate_model(t.model(), t.store(), t.splits(), &cfg.data.augment, &eval).unwrap();
    let linear = report.linear.unwrap()[0].top1;
    let knn = report.knn.unwrap()[0].top1;
    // 10 classes; 400 test points put two standard errors near 0.03
    assert!(linear < 0.2, "linear {linear}");
    assert!(knn < 0.2, "knn {knn}");
}

#[test]
fn one_nearest_neighbor_on_its_own_train_set_is_exact() {
    let cfg = tiny();
    let splits = make_synthetic(&cfg.data).unwrap();
    let t = Trainer::new(cfg.clone(), splits).unwrap();
    let f = extract_features(t.model(), t.store(), t.splits().train.inputs(), &cfg.data.augment, 0).unwrap();
    let unit = slimclr::trainer::unit_rows(&f);
    let labels = t.splits().train.labels();
    assert_eq!(knn_eval(&unit, labels, &unit, labels, 1, false).unwrap(), 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let raw = Array2::from_shape_fn((30, 5), |_| rng.random::<f64>() - 0.5);
    let unit = slimclr::trainer::unit_rows(&raw);
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    assert_eq!(knn_eval(&unit, &labels, &unit, &labels, 1, false).unwrap(), 1.0);
}

#[test]
fn evaluating_an_untrained_width_is_rejected() {
    let cfg = tiny();
    let splits = make_synthetic(&cfg.data).unwrap();
    let t = Trainer::new(cfg.clone(), splits).unwrap();
    let eval = EvalConfig { widths: Some(vec![0.75]), linear: None, knn_k: Some(5) };
    let err = evaluate_model(t.model(), t.store(), t.splits(), &cfg.data.augment, &eval).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
}

#[test]
fn divergent_run_leaves_an_abort_snapshot() {
    let mut cfg = tiny();
    cfg.optim.lr = 1e250;
    cfg.optim.warmup_epochs = 0;
    let tmp = tempfile::tempdir().unwrap();
    let err = pretrain_run(&cfg, &RunOptions { out_dir: tmp.path().to_path_buf(), ..RunOptions::default() }).unwrap_err();
    assert_eq!(err.kind(), "invalid-state", "{err}");
    assert!(err.to_string().contains("non-finite"));
    let snap = std::fs::read_to_string(tmp.path().join("abort_snapshot.json")).unwrap();
    assert!(snap.contains("partition_norms"));
}
