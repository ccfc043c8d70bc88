//! Linear-probe and k-NN evaluation of a pre-trained checkpoint, comparing a
//! switchable probe (one head per width) with a single slimmable head.
//!
//! `cargo run --release --example evaluate -- [checkpoint]`
//! Without a checkpoint a short run is trained first.

use std::path::PathBuf;

use slimclr::probe::{ProbeMode, ProbeTrainConfig};
use slimclr::trainer::{evaluate_run, pretrain_run, EvalConfig, RunConfig, RunOptions};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.instances = 500;
    cfg.data.test_instances = 200;
    cfg.data.separation = 0.4;
    cfg.model.hidden = vec![32, 32];
    cfg.model.head_hidden = 32;
    cfg.model.feature_dim = 16;
    cfg.contrastive.queue_size = 256;
    cfg.optim.epochs = 3;
    cfg.optim.warmup_epochs = 1;
    cfg.optim.batch_size = 100;
    cfg.remedies.slow_start_epochs = 1;
    cfg.diagnostics.knn_every = 0;
    cfg
}

pub fn run_example(arg: Option<String>) -> anyhow::Result<()> {
    let tmp = tempfile::tempdir()?;
    let ckpt: PathBuf = match arg {
        Some(p) => p.into(),
        None => {
            let opts = RunOptions { out_dir: tmp.path().to_path_buf(), ..RunOptions::default() };
            pretrain_run(&small_config(), &opts)?.last_checkpoint.expect("final epoch is saved")
        }
    };
    let knn = evaluate_run(&ckpt, &EvalConfig { linear: None, knn_k: Some(20), widths: None }, None)?;
    for k in knn.knn.unwrap_or_default() {
        println!("k-NN      width {:<5} top-1 {:.3}", k.width, k.top1);
    }
    for mode in [ProbeMode::Switchable, ProbeMode::Slimmable] {
        let probe = ProbeTrainConfig { epochs: 20, ..ProbeTrainConfig::default() };
        let cfg = EvalConfig { linear: Some((mode, probe)), knn_k: None, widths: None };
        let report = evaluate_run(&ckpt, &cfg, None)?;
        for acc in report.linear.unwrap_or_default() {
            println!("{:<9} width {:<5} top-1 {:.3}", format!("{mode:?}").to_lowercase(), acc.width, acc.top1);
        }
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example(std::env::args().nth(1))
}
