//! Reads back the gradient log of a short pre-training run: per-partition
//! norm ratios, PCA of the last-layer gradient directions, and SVG/CSV
//! renderings of both.
//!
//! `cargo run --release --example grad_diagnostics -- [out_dir]`

use std::path::PathBuf;

use slimclr::diagnostics::plot::{line_chart_svg, scatter_svg, write_text, Series};
use slimclr::diagnostics::{grad_direction_pca, grad_norm_ratio, median};
use slimclr::slimnet::{partition_key, width_label};
use slimclr::trainer::{pretrain_run, read_grad_log, RunConfig, RunOptions};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.instances = 400;
    cfg.data.test_instances = 100;
    cfg.model.hidden = vec![32, 32];
    cfg.model.head_hidden = 32;
    cfg.model.feature_dim = 16;
    cfg.contrastive.queue_size = 256;
    cfg.optim.epochs = 4;
    cfg.optim.warmup_epochs = 1;
    cfg.optim.batch_size = 64;
    cfg.remedies.slow_start_epochs = 2;
    cfg.diagnostics.last_layer_every = 2;
    cfg.diagnostics.knn_every = 0;
    cfg
}

pub fn run_example(arg: Option<String>) -> anyhow::Result<()> {
    let tmp = tempfile::tempdir()?;
    let out: PathBuf = arg.map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    let cfg = small_config();
    let run_dir = out.join("run");
    pretrain_run(&cfg, &RunOptions { out_dir: run_dir.clone(), ..RunOptions::default() })?;

    let snaps = read_grad_log(&run_dir.join("grads.jsonl"))?;
    let s = cfg.remedies.slow_start_epochs;
    let mut series = Vec::new();
    for &w in &cfg.model.widths.widths()[1..] {
        let (num, den) = (partition_key(1.0, w), width_label(w));
        let mut points = Vec::new();
        let mut post = Vec::new();
        for snap in &snaps {
            let r = grad_norm_ratio(snap, &num, &den)?;
            points.push((snap.step as f64, r.value));
            if snap.epoch >= s {
                post.push(r.value);
            }
        }
        println!("‖∇θ_{num}‖ / ‖∇θ_{den}‖: median after slow start {:.3}", median(&post).unwrap_or(f64::NAN));
        series.push((format!("{num} / {den}"), points));
    }
    let series: Vec<Series> = series.iter().map(|(l, p)| Series { label: l, points: p.clone() }).collect();
    write_text(&out.join("ratios.svg"), &line_chart_svg("gradient-norm ratios", "step", "ratio", &series))?;

    let mut vectors = Vec::new();
    for snap in &snaps {
        if let Some(r) = &snap.last_layer_ref {
            vectors.push(r.read(&run_dir)?);
        }
    }
    let pca = grad_direction_pca(&vectors)?;
    println!(
        "last-layer gradients: {} samples, top-2 components explain {:.1}%",
        vectors.len(),
        100.0 * pca.explained_ratio
    );
    let points = pca.projections.iter().map(|p| (p[0], p[1])).collect();
    write_text(&out.join("pca.svg"), &scatter_svg("gradient directions", "PC1", "PC2", &[Series { label: "steps", points }]))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example(std::env::args().nth(1))
}
