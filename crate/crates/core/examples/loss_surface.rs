//! Loss surface around a trained checkpoint on a plane of two
//! filter-normalized random directions, with the checkpoint trajectory
//! projected onto the same plane.
//!
//! `cargo run --release --example loss_surface -- [out_dir]`

use std::path::PathBuf;

use slimclr::diagnostics::plot::{heatmap_svg, write_text};
use slimclr::diagnostics::{loss_surface_slice, random_directions, store_shapes, trajectory_projection, Normalization};
use slimclr::trainer::{checkpoint_path, load_trainer, pretrain_run, Checkpoint, RunConfig, RunOptions};

fn small_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.instances = 300;
    cfg.data.test_instances = 100;
    cfg.model.hidden = vec![24, 24];
    cfg.model.head_hidden = 24;
    cfg.model.feature_dim = 12;
    cfg.contrastive.queue_size = 128;
    cfg.optim.epochs = 4;
    cfg.optim.warmup_epochs = 1;
    cfg.optim.batch_size = 60;
    cfg.remedies.slow_start_epochs = 1;
    cfg.diagnostics.knn_every = 0;
    cfg
}

pub fn run_example(arg: Option<String>) -> anyhow::Result<()> {
    let tmp = tempfile::tempdir()?;
    let out: PathBuf = arg.map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    let cfg = small_config();
    let run_dir = out.join("run");
    pretrain_run(&cfg, &RunOptions { out_dir: run_dir.clone(), ..RunOptions::default() })?;

    let last = checkpoint_path(&run_dir, cfg.optim.epochs);
    let trainer = load_trainer(&last, None)?;
    let theta = trainer.store().flat_values();
    let names: Vec<String> = trainer.store().params().iter().map(|p| p.name.clone()).collect();
    let mut trajectory = Vec::new();
    for epoch in 1..=cfg.optim.epochs {
        let ckpt = Checkpoint::load(&checkpoint_path(&run_dir, epoch))?;
        let mut flat = Vec::new();
        for name in &names {
            flat.extend(ckpt.tensor(&format!("theta/{name}")).expect("saved by the trainer").iter().copied());
        }
        trajectory.push(flat);
    }
    let proj = trajectory_projection(&trajectory, &theta)?;
    println!("trajectory in its own PCA plane ({:.1}% of the offset variance):", 100.0 * proj.explained_ratio);
    for (e, p) in proj.points.iter().enumerate() {
        println!("  epoch {:>2}  ({:+.3}, {:+.3})", e + 1, p[0], p[1]);
    }

    let (u, v) = random_directions(&theta, &store_shapes(trainer.store()), Normalization::Filter, 0)?;
    let (view1, view2) = trainer.fixed_views(128, 0);
    let grid = loss_surface_slice(&theta, &u, &v, 7, 1.0, |p| trainer.full_width_loss(&view1, &view2, p))?;
    println!("center loss {:.4}", grid.center_loss);
    for row in &grid.values {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:7.3}")).collect();
        println!("  {}", cells.join(" "));
    }
    write_text(&out.join("surface.svg"), &heatmap_svg("loss surface", &grid.alphas, &grid.betas, &grid.values, None))?;
    println!("wrote {}", out.join("surface.svg").display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example(std::env::args().nth(1))
}
