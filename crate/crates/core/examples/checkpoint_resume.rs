//! Interrupts a run after one epoch, resumes it from the checkpoint and
//! confirms the final checkpoint matches an uninterrupted run byte for byte.
//!
//! `cargo run --release --example checkpoint_resume`

use slimclr::trainer::{checkpoint_path, pretrain_run, RunConfig, RunOptions};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.instances = 300;
    cfg.data.test_instances = 100;
    cfg.model.hidden = vec![24, 24];
    cfg.model.head_hidden = 24;
    cfg.model.feature_dim = 12;
    cfg.contrastive.queue_size = 128;
    cfg.optim.epochs = 3;
    cfg.optim.warmup_epochs = 1;
    cfg.optim.batch_size = 60;
    cfg.remedies.slow_start_epochs = 1;
    cfg.diagnostics.knn_every = 0;
    cfg
}

pub fn run_example() -> anyhow::Result<()> {
    let cfg = small_config();
    let tmp = tempfile::tempdir()?;
    let straight = tmp.path().join("straight");
    let split = tmp.path().join("split");
    pretrain_run(&cfg, &RunOptions { out_dir: straight.clone(), ..RunOptions::default() })?;

    let first = RunOptions { out_dir: split.clone(), stop_after_epoch: Some(1), ..RunOptions::default() };
    let partial = pretrain_run(&cfg, &first)?;
    println!("stopped after epoch {} ({} steps)", partial.epochs_completed, partial.steps);
    let resume = RunOptions { out_dir: split.clone(), resume: partial.last_checkpoint, ..RunOptions::default() };
    let done = pretrain_run(&cfg, &resume)?;
    println!("resumed to epoch {} ({} steps)", done.epochs_completed, done.steps);

    let a = std::fs::read(checkpoint_path(&straight, cfg.optim.epochs))?;
    let b = std::fs::read(checkpoint_path(&split, cfg.optim.epochs))?;
    println!("final checkpoints: {} bytes, identical = {}", a.len(), a == b);
    anyhow::ensure!(a == b, "resumed run diverged");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
