//! Writes a small synthetic image dataset as PNG class folders, then
//! pre-trains a slimmable CNN on it through the `image_folder` data source.
//! A CIFAR-10 binary download can be laid out the same way with
//! `convert_cifar10`.
//!
//! `cargo run --release --example image_folder -- [cifar-10-batches-bin dir]`

use ndarray::Axis;
use slimclr::data::{convert_cifar10, make_synthetic, save_png, DatasetSpec, Source};
use slimclr::trainer::{pretrain_run, Backbone, RunConfig, RunOptions};

pub fn run_example(arg: Option<String>) -> anyhow::Result<()> {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path().join("images");
    if let Some(src) = arg {
        let (train, test) = convert_cifar10(src.as_ref(), &root)?;
        println!("converted {train} train and {test} test images");
    } else {
        let spec = DatasetSpec { shape: vec![1, 12, 12], instances: 200, test_instances: 50, classes: 4, ..DatasetSpec::default() };
        let splits = make_synthetic(&spec)?;
        for (name, set) in [("train", &splits.train), ("test", &splits.test)] {
            for (i, (sample, &label)) in set.inputs().axis_iter(Axis(0)).zip(set.labels()).enumerate() {
                let dir = root.join(name).join(format!("class{label}"));
                std::fs::create_dir_all(&dir)?;
                save_png(&sample, &dir.join(format!("{i:05}.png")))?;
            }
        }
        println!("wrote {} + {} PNGs under {}", splits.train.len(), splits.test.len(), root.display());
    }

    let mut cfg = RunConfig::default();
    cfg.data = DatasetSpec {
        source: Source::ImageFolder,
        path: Some(root.clone()),
        shape: vec![1, 12, 12],
        ..DatasetSpec::default()
    };
    cfg.data.augment.crop = Some(10);
    cfg.model.backbone = Backbone::Cnn;
    cfg.model.hidden = vec![8, 16];
    cfg.model.head_hidden = 16;
    cfg.model.feature_dim = 8;
    cfg.contrastive.queue_size = 64;
    cfg.optim.epochs = 2;
    cfg.optim.warmup_epochs = 1;
    cfg.optim.batch_size = 50;
    cfg.remedies.slow_start_epochs = 1;
    cfg.diagnostics.knn_every = 0;
    let summary = pretrain_run(&cfg, &RunOptions { out_dir: tmp.path().join("run"), ..RunOptions::default() })?;
    println!("trained {} steps, final loss {:.4}", summary.steps, summary.final_loss);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example(std::env::args().nth(1))
}
