//! Trains the same slimmable encoder twice, with the interference remedies
//! and as a vanilla slimmable run, then compares the post-slow-start
//! gradient-norm ratio `‖∇θ_{1.0\0.25}‖ / ‖∇θ_{0.25}‖` and per-width k-NN.
//!
//! `cargo run --release --example remedy_study -- configs/desk.toml`

use slimclr::diagnostics::{grad_norm_ratio, median};
use slimclr::interference::RemedyConfig;
use slimclr::trainer::{RunConfig, Trainer};

struct Outcome {
    ratio: f64,
    knn: Vec<f64>,
}

fn train(cfg: &RunConfig, window_start: usize) -> anyhow::Result<Outcome> {
    let splits = slimclr::data::make_synthetic(&cfg.data)?;
    let mut t = Trainer::new(cfg.clone(), splits)?;
    let widths = cfg.model.widths.widths().to_vec();
    let (big, small) = (widths[0], *widths.last().unwrap());
    let num = format!("{}\\{}", slimclr::slimnet::width_label(big), slimclr::slimnet::width_label(small));
    let den = slimclr::slimnet::width_label(small);
    let mut ratios = Vec::new();
    while !t.is_finished() {
        t.run_epoch(|s| {
            if let (true, Some(snap)) = (s.epoch >= window_start, &s.snapshot) {
                ratios.push(grad_norm_ratio(snap, &num, &den)?.value);
            }
            Ok(())
        })?;
    }
    let knn = (0..widths.len()).map(|wi| t.knn_accuracy(wi, cfg.diagnostics.knn_k)).collect::<Result<_, _>>()?;
    Ok(Outcome {
        ratio: median(&ratios).unwrap_or(f64::NAN),
        knn,
    })
}

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.instances = 600;
    cfg.data.test_instances = 200;
    cfg.data.separation = 0.25;
    cfg.data.augment.noise_std = 0.5;
    cfg.model.hidden = vec![32, 32];
    cfg.model.head_hidden = 32;
    cfg.model.feature_dim = 16;
    cfg.contrastive.queue_size = 512;
    cfg.optim.epochs = 4;
    cfg.optim.warmup_epochs = 1;
    cfg.optim.batch_size = 100;
    cfg.remedies.slow_start_epochs = 2;
    cfg.diagnostics.knn_every = 0;
    cfg
}

pub fn run_example(arg: Option<String>) -> anyhow::Result<()> {
    let cfg = match arg {
        Some(path) => RunConfig::load(path.as_ref())?,
        None => small_config(),
    };
    let s = cfg.remedies.slow_start_epochs;
    let vanilla = RunConfig {
        remedies: RemedyConfig::vanilla(),
        ..cfg.clone()
    };
    let start = std::time::Instant::now();
    let with = train(&cfg, s)?;
    let without = train(&vanilla, s)?;
    println!("{:<10} {:>14} {}", "run", "median ratio", "k-NN per width");
    for (name, o) in [("remedies", &with), ("vanilla", &without)] {
        let knn: Vec<String> = o.knn.iter().map(|a| format!("{a:.3}")).collect();
        println!("{name:<10} {:>14.4} {}", o.ratio, knn.join(" "));
    }
    println!("elapsed {:.1?}", start.elapsed());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example(std::env::args().nth(1))
}
