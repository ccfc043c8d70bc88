//! Pre-trains a slimmable encoder from a TOML config and prints the k-NN
//! accuracy of every width.
//!
//! `cargo run --release --example pretrain -- configs/desk.toml`
//! Without an argument a two-epoch run on a small synthetic set is used.

use std::path::PathBuf;

use slimclr::trainer::{evaluate_run, pretrain_run, EvalConfig, RunConfig, RunOptions};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.instances = 400;
    cfg.data.test_instances = 100;
    cfg.model.hidden = vec![32, 32];
    cfg.model.head_hidden = 32;
    cfg.model.feature_dim = 16;
    cfg.contrastive.queue_size = 256;
    cfg.optim.epochs = 2;
    cfg.optim.warmup_epochs = 1;
    cfg.optim.batch_size = 64;
    cfg.remedies.slow_start_epochs = 1;
    cfg
}

pub fn run_example(arg: Option<String>) -> anyhow::Result<()> {
    let cfg = match arg {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => small_config(),
    };
    let out = tempfile::tempdir()?;
    let opts = RunOptions {
        out_dir: out.path().to_path_buf(),
        verbose: true,
        ..RunOptions::default()
    };
    let start = std::time::Instant::now();
    let summary = pretrain_run(&cfg, &opts)?;
    println!("{} steps in {:.1?}", summary.steps, start.elapsed());
    let ckpt: PathBuf = summary.last_checkpoint.expect("final epoch is saved");
    let eval = EvalConfig {
        linear: None,
        ..EvalConfig::default()
    };
    let report = evaluate_run(&ckpt, &eval, None)?;
    for k in report.knn.unwrap_or_default() {
        println!("width {:<5} k-NN top-1 {:.3}", k.width, k.top1);
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example(std::env::args().nth(1))
}
