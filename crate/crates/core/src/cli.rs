//! Command-line front end. Every subcommand maps onto library calls; the
//! binary in `src/bin` only forwards `std::env::args` here.
//!
//! Failures print one line, `error[<kind>]: <message>`, to the error stream
//! and exit with status 1. Usage errors use the kind `usage` and status 2.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::plot::{heatmap_svg, line_chart_svg, scatter_svg, write_csv, write_text, Series};
use crate::diagnostics::{
    grad_direction_pca, grad_norm_ratio, loss_surface_slice, median, random_directions, store_shapes,
    trajectory_projection, GradSnapshot, Normalization,
};
use crate::error::{invalid, Error, Result};
use crate::probe::{
    block_inverse, lsq_probe_losses, read_features, shared_probe_condition, spd_inverse, to_dmatrix,
    write_features, Dtype, FeatureMeta, ProbeMode, ProbeProblem, ProbeTrainConfig,
};
use crate::slimnet::{partition_key, width_label};
use crate::trainer::{
    evaluate_model, extract_features, load_trainer, output_root, pretrain_run, read_grad_log, read_metrics, Checkpoint,
    EvalConfig, MetricRecord, RunConfig, RunMeta, RunOptions,
};

#[derive(Debug, Parser)]
#[command(name = "slimclr", version, about = "Slimmable contrastive pre-training, evaluation and diagnostics")]
struct Cli {
    /// Directory for cached synthetic datasets.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pre-train a slimmable network from a TOML config.
    Pretrain(PretrainArgs),
    /// Train linear probes on frozen features of a checkpoint.
    LinearProbe(LinearProbeArgs),
    /// k-nearest-neighbor accuracy of a checkpoint at every width.
    Knn(KnnArgs),
    /// Summaries of a run's gradient log.
    Diagnose(DiagnoseArgs),
    /// Check the shared linear-probe least-squares identities.
    VerifyLsq(VerifyLsqArgs),
    /// Loss surface around a checkpoint with the training trajectory.
    Surface(SurfaceArgs),
    /// Render a run's logs as SVG charts and CSV tables.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct PretrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `$SLIMCLR_OUT/<config name>-<hash>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Stop after this many completed epochs.
    #[arg(long)]
    stop_after: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProbeArg {
    Switchable,
    Slimmable,
}

#[derive(Debug, Args)]
struct LinearProbeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "switchable")]
    probe: ProbeArg,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    /// Train every head on labels only.
    #[arg(long)]
    no_distill: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write full-width (X), narrowest-width (X1) train features and
    /// one-hot targets (T) to this directory for `verify-lsq --features`.
    #[arg(long)]
    dump_features: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KnnArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(short, default_value_t = 20)]
    k: usize,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    /// Run directory, or its `grads.jsonl`.
    #[arg(long)]
    log: PathBuf,
    /// Only the gradient-direction PCA.
    #[arg(long, conflicts_with = "ratios")]
    pca: bool,
    /// Only the gradient-norm ratios.
    #[arg(long)]
    ratios: bool,
}

#[derive(Debug, Args)]
struct VerifyLsqArgs {
    /// Random instance: N d d1 C seed.
    #[arg(long, num_args = 5, value_names = ["N", "D", "D1", "C", "SEED"], conflicts_with = "features")]
    random: Option<Vec<u64>>,
    /// Feature files X, X1 and T.
    #[arg(long, num_args = 3, value_names = ["X", "X1", "T"])]
    features: Option<Vec<PathBuf>>,
    /// With `--random`: build X1 = X11 with X11ᵀX12 = 0, where the residual vanishes.
    #[arg(long, requires = "random")]
    satisfy: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DirectionArg {
    Random,
    Pca,
}

#[derive(Debug, Args)]
struct SurfaceArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Grid resolution per axis.
    #[arg(long, default_value_t = 11)]
    grid: usize,
    /// Half-width of the grid in direction units.
    #[arg(long, default_value_t = 1.0)]
    range: f64,
    #[arg(long, default_value = "filter")]
    normalization: String,
    #[arg(long, value_enum, default_value = "random")]
    directions: DirectionArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Size of the fixed evaluation batch.
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Output directory; defaults to `surface` next to the checkpoint directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Run directory, or one of its logs.
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit status.
pub fn run<I, T>(args: I, out: &mut impl Write, err: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(err, "error[usage]: {first}");
            return 2;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let line = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            let _ = writeln!(err, "error[{}]: {line}", e.kind());
            1
        }
    }
}

fn dispatch(cli: Cli, out: &mut impl Write) -> Result<()> {
    let cache = cli.cache_dir.as_deref();
    match cli.command {
        Command::Pretrain(a) => pretrain(a, cache, out),
        Command::LinearProbe(a) => linear_probe(a, cache, out),
        Command::Knn(a) => knn(a, cache, out),
        Command::Diagnose(a) => diagnose(a, out),
        Command::VerifyLsq(a) => verify_lsq(a, out),
        Command::Surface(a) => surface(a, cache, out),
        Command::Plot(a) => plot(a, out),
    }
}

fn emit(out: &mut impl Write, text: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(text).and_then(|_| out.write_all(b"\n")).map_err(|e| Error::io("<stdout>", e))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        emit($out, format_args!($($arg)*))
    };
}

fn pretrain(a: PretrainArgs, cache: Option<&Path>, out: &mut impl Write) -> Result<()> {
    let config = RunConfig::load(&a.config)?;
    let out_dir = match a.out {
        Some(d) => d,
        None => {
            let stem = a.config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            output_root().join(format!("{stem}-{}", &config.hash()[..8]))
        }
    };
    let opts = RunOptions {
        out_dir,
        resume: a.resume,
        stop_after_epoch: a.stop_after,
        cache_dir: cache.map(Path::to_path_buf),
        verbose: !a.quiet,
    };
    let summary = pretrain_run(&config, &opts)?;
    say!(out, "out_dir {}", summary.out_dir.display())?;
    say!(out, "epochs {} steps {} final_loss {:.6}", summary.epochs_completed, summary.steps, summary.final_loss)?;
    if let Some(c) = &summary.last_checkpoint {
        say!(out, "checkpoint {}", c.display())?;
    }
    Ok(())
}

fn linear_probe(a: LinearProbeArgs, cache: Option<&Path>, out: &mut impl Write) -> Result<()> {
    let trainer = load_trainer(&a.ckpt, cache)?;
    let mode = match a.probe {
        ProbeArg::Switchable => ProbeMode::Switchable,
        ProbeArg::Slimmable => ProbeMode::Slimmable,
    };
    let train_cfg = ProbeTrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        distill: !a.no_distill,
        seed: a.seed,
        ..ProbeTrainConfig::default()
    };
    let cfg = EvalConfig {
        widths: None,
        linear: Some((mode, train_cfg)),
        knn_k: None,
    };
    let augment = &trainer.config().data.augment;
    let report = evaluate_model(trainer.model(), trainer.store(), trainer.splits(), augment, &cfg)?;
    say!(out, "probe {}", format!("{mode:?}").to_lowercase())?;
    say!(out, "width\ttop1\ttop5")?;
    for acc in report.linear.iter().flatten() {
        let top5 = acc.top5.map_or("-".to_string(), |v| format!("{v:.4}"));
        say!(out, "{}\t{:.4}\t{top5}", width_label(acc.width), acc.top1)?;
    }
    if let Some(dir) = a.dump_features {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let widths = trainer.store().widths();
        let last = widths.len() - 1;
        let inputs = trainer.splits().train.inputs();
        let labels = trainer.splits().train.labels();
        let classes = trainer.splits().train.classes();
        let x = extract_features(trainer.model(), trainer.store(), inputs, augment, 0)?;
        let x1 = extract_features(trainer.model(), trainer.store(), inputs, augment, last)?;
        let mut t = Array2::zeros((labels.len(), classes));
        for (i, &y) in labels.iter().enumerate() {
            t[[i, y]] = 1.0;
        }
        for (name, data, width) in [("X", &x, Some(1.0)), ("X1", &x1, Some(widths.width(last))), ("T", &t, None)] {
            let mut meta = FeatureMeta::new(Dtype::F64);
            meta.width = width;
            meta.split = Some("train".into());
            let path = dir.join(format!("{name}.bin"));
            write_features(&path, data, &meta)?;
        }
        say!(out, "features {}", dir.display())?;
    }
    Ok(())
}

fn knn(a: KnnArgs, cache: Option<&Path>, out: &mut impl Write) -> Result<()> {
    if a.k == 0 {
        return Err(invalid!("k must be positive"));
    }
    let trainer = load_trainer(&a.ckpt, cache)?;
    say!(out, "width\ttop1 (k={})", a.k)?;
    for wi in 0..trainer.store().widths().len() {
        let acc = trainer.knn_accuracy(wi, a.k)?;
        say!(out, "{}\t{acc:.4}", width_label(trainer.store().widths().width(wi)))?;
    }
    Ok(())
}

/// The directory holding a run's logs, given the directory or one file in it.
fn run_dir(log: &Path) -> PathBuf {
    if log.is_dir() {
        log.to_path_buf()
    } else {
        log.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn load_meta(dir: &Path) -> Option<RunMeta> {
    let text = std::fs::read_to_string(dir.join("run.json")).ok()?;
    serde_json::from_str(&text).ok()
}

/// Sub-widths present in the log, as the partition keys of the two ratio
/// norms `(full\sub, sub)`.
fn ratio_pairs(snaps: &[GradSnapshot]) -> Vec<(f64, String, String)> {
    let mut widths: Vec<f64> = snaps
        .iter()
        .flat_map(|s| s.partition_norms.keys())
        .filter(|k| !k.contains('\\'))
        .filter_map(|k| k.parse::<f64>().ok())
        .filter(|&w| w < 1.0)
        .collect();
    widths.sort_by(|a, b| b.total_cmp(a));
    widths.dedup();
    widths
        .into_iter()
        .map(|w| (w, partition_key(1.0, w), width_label(w)))
        .collect()
}

/// `(step, epoch, ratio)` for each snapshot; snapshots where the sub-width
/// did not run (all-zero denominator) are dropped.
fn ratio_series(snaps: &[GradSnapshot], num: &str, den: &str) -> Result<Vec<(u64, usize, f64)>> {
    let mut rows = Vec::new();
    for s in snaps {
        if !s.partition_norms.contains_key(num) || !s.partition_norms.contains_key(den) {
            continue;
        }
        let r = grad_norm_ratio(s, num, den)?;
        if !r.zero_denominator {
            rows.push((s.step, s.epoch, r.value));
        }
    }
    Ok(rows)
}

fn last_layer_samples(dir: &Path, snaps: &[GradSnapshot]) -> Result<Vec<(u64, Vec<f64>)>> {
    let mut out = Vec::new();
    for s in snaps {
        if let Some(v) = &s.last_layer {
            out.push((s.step, v.clone()));
        } else if let Some(r) = &s.last_layer_ref {
            out.push((s.step, r.read(dir)?));
        }
    }
    Ok(out)
}

fn grads_file(log: &Path) -> PathBuf {
    if log.is_dir() {
        log.join("grads.jsonl")
    } else if log.file_name().is_some_and(|n| n == "grads.jsonl") {
        log.to_path_buf()
    } else {
        run_dir(log).join("grads.jsonl")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

fn diagnose(a: DiagnoseArgs, out: &mut impl Write) -> Result<()> {
    let dir = run_dir(&a.log);
    let snaps = read_grad_log(&grads_file(&a.log))?;
    if snaps.is_empty() {
        return Err(Error::InvalidState("gradient log is empty".into()));
    }
    let meta = load_meta(&dir);
    let both = !a.pca && !a.ratios;
    if a.ratios || both {
        let s = meta.as_ref().map(|m| m.slow_start_epochs);
        say!(out, "gradient-norm ratios over {} snapshots (slow start {})", snaps.len(), s.map_or("?".into(), |s| s.to_string()))?;
        say!(out, "numerator\tdenominator\tsteps\tmedian\tmedian_post_slow_start")?;
        for (_, num, den) in ratio_pairs(&snaps) {
            let rows = ratio_series(&snaps, &num, &den)?;
            let all: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let post: Vec<f64> = rows.iter().filter(|r| s.is_none_or(|s| r.1 >= s)).map(|r| r.2).collect();
            say!(out, "{num}\t{den}\t{}\t{}\t{}", rows.len(), fmt_opt(median(&all)), fmt_opt(median(&post)))?;
        }
    }
    if a.pca || both {
        let samples = last_layer_samples(&dir, &snaps)?;
        let vectors: Vec<Vec<f64>> = samples.into_iter().map(|(_, v)| v).collect();
        let pca = grad_direction_pca(&vectors)?;
        say!(out, "last-layer gradient PCA over {} samples of dimension {}", vectors.len(), pca.mean.len())?;
        say!(
            out,
            "explained_variance {:.6e} {:.6e} explained_ratio {:.4}",
            pca.explained_variance[0], pca.explained_variance[1], pca.explained_ratio
        )?;
    }
    Ok(())
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn verify_lsq(a: VerifyLsqArgs, out: &mut impl Write) -> Result<()> {
    let problem = match (&a.random, &a.features) {
        (Some(r), None) => {
            let [n, d, d1, c, seed] = <[u64; 5]>::try_from(r.as_slice()).map_err(|_| invalid!("--random takes 5 values"))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, d, d1, c) = (n as usize, d as usize, d1 as usize, c as usize);
            if a.satisfy {
                ProbeProblem::satisfying_condition(n, d, d1, c, &mut rng)?
            } else {
                ProbeProblem::random(n, d, d1, c, &mut rng)?
            }
        }
        (None, Some(paths)) => {
            let (x, _) = read_features(&paths[0])?;
            let (x1, _) = read_features(&paths[1])?;
            let (t, _) = read_features(&paths[2])?;
            let d1 = x1.ncols();
            ProbeProblem::new(to_dmatrix(&x), to_dmatrix(&x1), to_dmatrix(&t), d1)?
        }
        _ => return Err(invalid!("give either --random N d d1 C seed or --features X X1 T")),
    };
    let (n, d) = problem.x.shape();
    say!(out, "instance N={n} d={d} d1={} C={}", problem.d1, problem.t.ncols())?;
    let blocks = block_inverse(&problem.x, problem.d1)?;
    let res = blocks.identity_residuals(&problem.x);
    for (name, r) in ["A11B11+A12B21=I", "A11B12+A12B22=0", "A21B11+A22B21=0", "A21B12+A22B22=I"].iter().zip(res) {
        say!(out, "identity {name}\t{r:.3e}")?;
    }
    let gram = problem.x.transpose() * &problem.x;
    let direct = spd_inverse(&gram, "XᵀX")?;
    let assembled = blocks.assemble();
    say!(out, "assembled_inverse_error\t{:.3e}", max_abs(&(&assembled * &gram - DMatrix::identity(d, d))))?;
    let d1 = problem.d1;
    say!(out, "schur_b11_vs_direct\t{:.3e}", max_abs(&(&blocks.b11 - direct.view((0, 0), (d1, d1)))))?;
    let cond = shared_probe_condition(&problem)?;
    say!(out, "theta11_form_agreement\t{:.3e}", cond.form_agreement)?;
    say!(out, "condition_residual_mean_abs\t{:.6e}", cond.mean_abs)?;
    say!(out, "condition_residual_total_abs\t{:.6e}", cond.total_abs)?;
    let losses = lsq_probe_losses(&problem)?;
    say!(out, "loss_switchable\t{:.6}", losses.switchable)?;
    say!(out, "loss_slimmable\t{:.6}", losses.slimmable)?;
    say!(out, "loss_joint\t{:.6}", losses.joint)?;
    Ok(())
}

/// Online parameters of a checkpoint in store order.
fn checkpoint_theta(path: &Path, names: &[String]) -> Result<Vec<f64>> {
    let ckpt = Checkpoint::load(path)?;
    let mut flat = Vec::new();
    for name in names {
        let key = format!("theta/{name}");
        let t = ckpt.tensor(&key).ok_or_else(|| Error::format(path, format!("missing tensor {key}")))?;
        flat.extend(t.iter().copied());
    }
    Ok(flat)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Coordinates of `p` in the plane spanned by `u` and `v` (least squares).
fn plane_coords(p: &[f64], u: &[f64], v: &[f64]) -> (f64, f64) {
    let (uu, uv, vv) = (dot(u, u), dot(u, v), dot(v, v));
    let (pu, pv) = (dot(p, u), dot(p, v));
    let det = uu * vv - uv * uv;
    ((vv * pu - uv * pv) / det, (uu * pv - uv * pu) / det)
}

fn surface(a: SurfaceArgs, cache: Option<&Path>, out: &mut impl Write) -> Result<()> {
    let normalization: Normalization = a.normalization.parse()?;
    let trainer = load_trainer(&a.ckpt, cache)?;
    let theta = trainer.store().flat_values();
    let names: Vec<String> = trainer.store().params().iter().map(|p| p.name.clone()).collect();

    // every checkpoint of the run up to and including this one
    let ckpt_dir = a.ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&ckpt_dir)
        .map_err(|e| Error::io(&ckpt_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    paths.sort();
    let mut trajectory = Vec::new();
    for p in &paths {
        let t = checkpoint_theta(p, &names)?;
        trajectory.push(t);
        if p.file_name() == a.ckpt.file_name() {
            break;
        }
    }

    let (u, v) = match a.directions {
        DirectionArg::Random => random_directions(&theta, &store_shapes(trainer.store()), normalization, a.seed)?,
        DirectionArg::Pca => {
            let proj = trajectory_projection(&trajectory, &theta)?;
            let [u, v] = proj.directions;
            (u, v)
        }
    };
    let path: Vec<(f64, f64)> = trajectory
        .iter()
        .map(|t| {
            let off: Vec<f64> = t.iter().zip(&theta).map(|(a, b)| a - b).collect();
            plane_coords(&off, &u, &v)
        })
        .collect();

    let (view1, view2) = trainer.fixed_views(a.batch, a.seed);
    let grid = loss_surface_slice(&theta, &u, &v, a.grid, a.range, |p| trainer.full_width_loss(&view1, &view2, p))?;

    let out_dir = a.out.unwrap_or_else(|| ckpt_dir.parent().unwrap_or(Path::new(".")).join("surface"));
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut rows = Vec::new();
    for (i, &al) in grid.alphas.iter().enumerate() {
        for (j, &be) in grid.betas.iter().enumerate() {
            rows.push(vec![al, be, grid.values[i][j]]);
        }
    }
    write_csv(&out_dir.join("surface.csv"), &["alpha", "beta", "loss"], &rows)?;
    let traj_rows: Vec<Vec<f64>> = path.iter().enumerate().map(|(i, &(x, y))| vec![i as f64, x, y]).collect();
    write_csv(&out_dir.join("trajectory.csv"), &["checkpoint", "alpha", "beta"], &traj_rows)?;
    let svg = heatmap_svg("loss surface", &grid.alphas, &grid.betas, &grid.values, Some(&path));
    write_text(&out_dir.join("surface.svg"), &svg)?;
    say!(out, "center_loss {:.6}", grid.center_loss)?;
    say!(out, "grid {}x{} range {} checkpoints {}", a.grid, a.grid, a.range, trajectory.len())?;
    say!(out, "wrote {}", out_dir.display())?;
    Ok(())
}

fn plot(a: PlotArgs, out: &mut impl Write) -> Result<()> {
    let dir = run_dir(&a.log);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut written = Vec::new();

    let metrics_path = dir.join("metrics.jsonl");
    if metrics_path.exists() {
        let records = read_metrics(&metrics_path)?;
        let mut per_width: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        let mut total = Vec::new();
        let mut rows = Vec::new();
        for r in &records {
            if let MetricRecord::Step { step, breakdown, .. } = r {
                total.push((*step as f64, breakdown.total));
                rows.push(vec![*step as f64, breakdown.total]);
                for (w, l) in breakdown.widths.iter().zip(&breakdown.info_nce) {
                    per_width.entry(format!("InfoNCE {}", width_label(*w))).or_default().push((*step as f64, *l));
                }
            }
        }
        let mut series = vec![Series { label: "total", points: total }];
        for (label, points) in &per_width {
            series.push(Series { label, points: points.clone() });
        }
        write_text(&a.out.join("losses.svg"), &line_chart_svg("training loss", "step", "loss", &series))?;
        write_csv(&a.out.join("losses.csv"), &["step", "total"], &rows)?;
        written.extend(["losses.svg", "losses.csv"]);
    }

    let grads_path = dir.join("grads.jsonl");
    if grads_path.exists() {
        let snaps = read_grad_log(&grads_path)?;
        let pairs = ratio_pairs(&snaps);
        if !pairs.is_empty() {
            let mut series = Vec::new();
            let mut rows = Vec::new();
            let labels: Vec<String> = pairs.iter().map(|(_, n, d)| format!("{n} / {d}")).collect();
            for ((_, num, den), label) in pairs.iter().zip(&labels) {
                let r = ratio_series(&snaps, num, den)?;
                for &(step, epoch, value) in &r {
                    rows.push(vec![step as f64, epoch as f64, value]);
                }
                series.push(Series { label, points: r.iter().map(|&(s, _, v)| (s as f64, v)).collect() });
            }
            write_text(&a.out.join("ratios.svg"), &line_chart_svg("gradient-norm ratios", "step", "ratio", &series))?;
            write_csv(&a.out.join("ratios.csv"), &["step", "epoch", "ratio"], &rows)?;
            written.extend(["ratios.svg", "ratios.csv"]);
        }
        let samples = last_layer_samples(&dir, &snaps)?;
        if samples.len() >= 3 {
            let steps: Vec<u64> = samples.iter().map(|s| s.0).collect();
            let vectors: Vec<Vec<f64>> = samples.into_iter().map(|s| s.1).collect();
            let pca = grad_direction_pca(&vectors)?;
            let points: Vec<(f64, f64)> = pca.projections.iter().map(|p| (p[0], p[1])).collect();
            let rows: Vec<Vec<f64>> = steps.iter().zip(&pca.projections).map(|(&s, p)| vec![s as f64, p[0], p[1]]).collect();
            let title = format!("last-layer gradient directions ({:.1}% variance)", 100.0 * pca.explained_ratio);
            write_text(&a.out.join("pca.svg"), &scatter_svg(&title, "PC1", "PC2", &[Series { label: "gradients", points }]))?;
            write_csv(&a.out.join("pca.csv"), &["step", "pc1", "pc2"], &rows)?;
            written.extend(["pca.svg", "pca.csv"]);
        }
    }
    if written.is_empty() {
        return Err(invalid!("no metrics.jsonl or grads.jsonl under {}", dir.display()));
    }
    for f in written {
        say!(out, "wrote {}", a.out.join(f).display())?;
    }
    Ok(())
}
