use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayD, Axis, Slice};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointHeader};
use super::config::RunConfig;
use super::optim::Sgd;
use super::schedule::LrSchedule;
use crate::contrastive::{
    backward_predictions, commit_student_stats, l2_normalize_rows, multi_width_forward, Framework, MomentumState,
    NegativeQueue, Negatives,
};
use crate::data::{eval_batch, load_splits, shuffled_batches, AugmentConfig, Splits};
use crate::diagnostics::{GradSnapshot, VectorRef};
use crate::error::{invalid, Error, Result};
use crate::interference::{composite_objective, loss_weights, ObjectiveBreakdown};
use crate::probe::knn_eval;
use crate::slimnet::{param_partition, Grads, Mode, ParamStore, PartitionMap, SlimModel};

/// Environment variable naming the root directory for run outputs.
pub const OUT_ENV: &str = "SLIMCLR_OUT";

/// Root for run outputs: `$SLIMCLR_OUT`, or `runs` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

const STREAM_INIT: u64 = 0;
const STREAM_VIEW1: u64 = 1;
const STREAM_VIEW2: u64 = 2;
const STREAM_FIXED: u64 = 3;
const STREAM_SHUFFLE: u64 = 1 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Result of one optimizer step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub breakdown: ObjectiveBreakdown,
    /// Gradient the optimizer consumed (after loss reweighting).
    pub grads: Grads,
    pub snapshot: Option<GradSnapshot>,
    pub elapsed: Duration,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRecord {
    Step {
        epoch: usize,
        step: usize,
        lr: f64,
        #[serde(flatten)]
        breakdown: ObjectiveBreakdown,
        step_ms: f64,
    },
    Epoch {
        epoch: usize,
        mean_loss: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        knn_full: Option<f64>,
    },
}

/// Pre-training state: online and momentum networks, queue, optimizer and
/// the random streams, over a fixed pair of data splits.
pub struct Trainer {
    config: RunConfig,
    model: SlimModel,
    store: ParamStore,
    momentum: MomentumState,
    queue: Option<NegativeQueue>,
    optimizer: Sgd,
    partition: PartitionMap,
    weights: Vec<f64>,
    schedule: LrSchedule,
    steps_per_epoch: usize,
    splits: Splits,
    epoch: usize,
    step: usize,
    view_rngs: [ChaCha8Rng; 2],
    last_snapshot: Option<GradSnapshot>,
}

impl Trainer {
    pub fn new(config: RunConfig, splits: Splits) -> Result<Self> {
        config.validate()?;
        if config.model.framework == Framework::Mocov2 && config.optim.batch_size > config.contrastive.queue_size {
            return Err(invalid!("batch_size exceeds queue_size"));
        }
        let sample_shape = config.data.augment.output_shape(splits.train.sample_shape());
        let arch = config.model.architecture(&sample_shape)?;
        let mut init = stream(config.seed, STREAM_INIT);
        let (model, store) = SlimModel::build(&arch, config.model.widths.clone(), &mut init)?;
        let queue = match config.model.framework {
            Framework::Mocov2 => Some(NegativeQueue::random(config.contrastive.queue_size, config.model.feature_dim, &mut init)?),
            Framework::Mocov3 => None,
        };
        let momentum = MomentumState::new(&store, config.contrastive.momentum)?;
        let optimizer = Sgd::new(&store, config.optim.momentum, config.optim.weight_decay);
        let partition = param_partition(&store)?;
        let weights = loss_weights(&config.model.widths, config.remedies.reweight_variant);
        let steps_per_epoch = splits.train.len() / config.optim.batch_size;
        if steps_per_epoch == 0 {
            return Err(invalid!("batch_size {} exceeds the training set", config.optim.batch_size));
        }
        let o = &config.optim;
        let restart = o.lr_restart.map(|v| (config.remedies.slow_start_epochs, v));
        let schedule = LrSchedule::new(o.lr, o.warmup_epochs, o.epochs, steps_per_epoch, restart);
        Ok(Self {
            view_rngs: [stream(config.seed, STREAM_VIEW1), stream(config.seed, STREAM_VIEW2)],
            config,
            model,
            store,
            momentum,
            queue,
            optimizer,
            partition,
            weights,
            schedule,
            steps_per_epoch,
            splits,
            epoch: 0,
            step: 0,
            last_snapshot: None,
        })
    }

    /// Rebuilds a trainer at the state saved in `ckpt`.
    pub fn from_checkpoint(mut ckpt: Checkpoint, splits: Splits) -> Result<Self> {
        let h = ckpt.header.clone();
        if h.config.hash() != h.config_hash {
            return Err(Error::InvalidState("checkpoint config hash does not match its config".into()));
        }
        let mut t = Self::new(h.config, splits)?;
        restore_store(&mut ckpt, "theta", &mut t.store)?;
        restore_store(&mut ckpt, "xi", t.momentum.params_mut())?;
        let velocity = t
            .store
            .params()
            .iter()
            .map(|p| ckpt.take(&format!("velocity/{}", p.name)))
            .collect::<Result<Vec<_>>>()?;
        t.optimizer.set_velocity(velocity)?;
        t.queue = match (t.queue.take(), h.queue) {
            (Some(_), Some((cursor, len))) => {
                let buf = ckpt.take("queue")?.into_dimensionality().map_err(|e| Error::InvalidState(e.to_string()))?;
                Some(NegativeQueue::from_parts(buf, cursor, len)?)
            }
            (None, None) => None,
            _ => return Err(Error::InvalidState("queue presence differs from the framework".into())),
        };
        for (rng, pos) in t.view_rngs.iter_mut().zip(&h.view_rng_pos) {
            let pos: u128 = pos.parse().map_err(|_| Error::InvalidState(format!("bad rng position {pos:?}")))?;
            rng.set_word_pos(pos);
        }
        t.epoch = h.epoch;
        t.step = h.step;
        Ok(t)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        dump_store(&self.store, "theta", &mut tensors);
        dump_store(self.momentum.params(), "xi", &mut tensors);
        for (p, v) in self.store.params().iter().zip(self.optimizer.velocity()) {
            tensors.push((format!("velocity/{}", p.name), v.clone()));
        }
        if let Some(q) = &self.queue {
            tensors.push(("queue".into(), q.buffer().clone().into_dyn()));
        }
        Checkpoint {
            header: CheckpointHeader {
                epoch: self.epoch,
                step: self.step,
                config: self.config.clone(),
                config_hash: self.config.hash(),
                view_rng_pos: [self.view_rngs[0].get_word_pos().to_string(), self.view_rngs[1].get_word_pos().to_string()],
                queue: self.queue.as_ref().map(|q| (q.cursor(), q.len())),
            },
            tensors,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn model(&self) -> &SlimModel {
        &self.model
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn partition(&self) -> &PartitionMap {
        &self.partition
    }

    /// Next epoch to run (equals completed epochs).
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.optim.epochs
    }

    pub fn last_snapshot(&self) -> Option<&GradSnapshot> {
        self.last_snapshot.as_ref()
    }

    /// Mini-batches of the current epoch, from a stream keyed by the epoch.
    pub fn epoch_batches(&self) -> Vec<Vec<usize>> {
        let mut rng = stream(self.config.seed, STREAM_SHUFFLE + self.epoch as u64);
        shuffled_batches(self.splits.train.len(), self.config.optim.batch_size, &mut rng)
    }

    /// One optimizer step on the instances `ids`.
    pub fn train_step(&mut self, ids: &[usize]) -> Result<StepOutcome> {
        let start = Instant::now();
        let cfg = &self.config;
        let epoch = self.epoch;
        let all = cfg.model.widths.widths();
        let active: Vec<f64> = if cfg.remedies.sub_widths_active(epoch) { all.to_vec() } else { vec![1.0] };
        let [rng1, rng2] = &mut self.view_rngs;
        let batch = self.splits.train.unlabeled().two_view_batch(ids, &cfg.data.augment, rng1, rng2);
        let (cb, cache) = multi_width_forward(
            &self.model,
            &self.store,
            &self.momentum,
            &batch.view1,
            &batch.view2,
            cfg.model.framework,
            &active,
            Mode::Train,
        )?;
        let negatives = match &self.queue {
            Some(q) => Negatives::Queue(q.negatives()),
            None => Negatives::InBatch,
        };
        let obj = composite_objective(&cb, all, negatives, cfg.tau1(), cfg.tau2(), &cfg.remedies, &self.weights, epoch)?;
        let mut grads = Grads::zeros_like(&self.store);
        backward_predictions(&self.model, &self.store, &cb, &cache, &obj.grad_predictions, &mut grads)?;

        let d = &cfg.diagnostics;
        let finite = obj.breakdown.total.is_finite() && grads.is_finite();
        let capture = d.grad_every > 0 && self.step % d.grad_every == 0;
        let last_layer = d.last_layer_every > 0 && self.step % d.last_layer_every == 0;
        let snapshot = (capture || !finite).then(|| {
            GradSnapshot::capture(
                self.step as u64,
                epoch,
                &self.partition,
                &self.store,
                &grads,
                last_layer.then_some(&self.model),
            )
        });
        if snapshot.is_some() {
            self.last_snapshot.clone_from(&snapshot);
        }
        if !finite {
            return Err(Error::InvalidState(format!(
                "non-finite loss {} at step {} (epoch {epoch})",
                obj.breakdown.total, self.step
            )));
        }

        commit_student_stats(&self.model, &mut self.store, &cache);
        let lr = self.schedule.lr(self.step);
        self.optimizer.step(&mut self.store, &grads, lr, &cb.width_indices);
        self.momentum.update(&self.store)?;
        if let Some(q) = &mut self.queue {
            q.enqueue(cb.target.view())?;
        }
        self.step += 1;
        Ok(StepOutcome {
            epoch,
            step: self.step - 1,
            lr,
            breakdown: obj.breakdown,
            grads,
            snapshot,
            elapsed: start.elapsed(),
        })
    }

    /// Runs the remaining steps of the current epoch, handing each outcome
    /// to `on_step`.
    pub fn run_epoch(&mut self, mut on_step: impl FnMut(&StepOutcome) -> Result<()>) -> Result<f64> {
        if self.is_finished() {
            return Err(Error::InvalidState("training already finished".into()));
        }
        let mut total = 0.0;
        let batches = self.epoch_batches();
        for ids in &batches {
            let out = self.train_step(ids)?;
            total += out.breakdown.total;
            on_step(&out)?;
        }
        self.epoch += 1;
        Ok(total / batches.len() as f64)
    }

    /// Two augmented views of a fixed batch of training instances, drawn
    /// from a stream independent of the training views.
    pub fn fixed_views(&self, batch_size: usize, seed: u64) -> (ArrayD<f64>, ArrayD<f64>) {
        let n = batch_size.min(self.splits.train.len());
        let ids: Vec<usize> = (0..n).collect();
        let mut rng1 = stream(seed, STREAM_FIXED);
        let mut rng2 = stream(seed, STREAM_FIXED + 1);
        let batch = self.splits.train.unlabeled().two_view_batch(&ids, &self.config.data.augment, &mut rng1, &mut rng2);
        (batch.view1, batch.view2)
    }

    /// Full-width objective on fixed views with the online parameters
    /// replaced by `theta` (in [`ParamStore::flat_values`] order). The
    /// momentum network, queue and running statistics stay untouched.
    pub fn full_width_loss(&self, view1: &ArrayD<f64>, view2: &ArrayD<f64>, theta: &[f64]) -> Result<f64> {
        let mut store = self.store.clone();
        store.set_flat_values(theta)?;
        let cfg = &self.config;
        let (cb, _) = multi_width_forward(
            &self.model,
            &store,
            &self.momentum,
            view1,
            view2,
            cfg.model.framework,
            &[1.0],
            Mode::Train,
        )?;
        let negatives = match &self.queue {
            Some(q) => Negatives::Queue(q.negatives()),
            None => Negatives::InBatch,
        };
        let mut remedies = cfg.remedies.clone();
        remedies.slow_start_epochs = usize::MAX;
        let obj = composite_objective(&cb, cfg.model.widths.widths(), negatives, cfg.tau1(), cfg.tau2(), &remedies, &self.weights, 0)?;
        Ok(obj.breakdown.total)
    }

    /// k-NN accuracy of backbone features at one width (train set as the
    /// reference, test set as queries).
    pub fn knn_accuracy(&self, width_idx: usize, k: usize) -> Result<f64> {
        knn_accuracy(&self.model, &self.store, &self.splits, &self.config.data.augment, width_idx, k)
    }
}

fn dump_store(store: &ParamStore, prefix: &str, out: &mut Vec<(String, ArrayD<f64>)>) {
    for p in store.params() {
        out.push((format!("{prefix}/{}", p.name), p.value.clone()));
    }
    for nb in store.norms() {
        for (wi, rs) in nb.per_width.iter().enumerate() {
            out.push((format!("{prefix}_stats/{}/{wi}/mean", nb.layer), rs.mean.clone().into_dyn()));
            out.push((format!("{prefix}_stats/{}/{wi}/var", nb.layer), rs.var.clone().into_dyn()));
        }
    }
}

fn restore_store(ckpt: &mut Checkpoint, prefix: &str, store: &mut ParamStore) -> Result<()> {
    let names: Vec<String> = store.params().iter().map(|p| p.name.clone()).collect();
    for name in names {
        let v = ckpt.take(&format!("{prefix}/{name}"))?;
        store.set_value(&name, v)?;
    }
    for nb in store.norms_mut() {
        for (wi, rs) in nb.per_width.iter_mut().enumerate() {
            for (field, dst) in [("mean", &mut rs.mean), ("var", &mut rs.var)] {
                let name = format!("{prefix}_stats/{}/{wi}/{field}", nb.layer);
                let v = ckpt.take(&name)?;
                if v.shape() != dst.shape() {
                    return Err(Error::InvalidState(format!("shape mismatch for {name}")));
                }
                let v: Array1<f64> = v.into_dimensionality().map_err(|e| Error::InvalidState(e.to_string()))?;
                dst.assign(&v);
            }
        }
    }
    Ok(())
}

/// Backbone features of `inputs` at one width, evaluation mode, in chunks.
pub fn extract_features(
    model: &SlimModel,
    store: &ParamStore,
    inputs: &ArrayD<f64>,
    augment: &AugmentConfig,
    width_idx: usize,
) -> Result<Array2<f64>> {
    const CHUNK: usize = 512;
    let n = inputs.shape()[0];
    let mut parts = Vec::new();
    for start in (0..n).step_by(CHUNK) {
        let chunk = inputs.slice_axis(Axis(0), Slice::from(start..(start + CHUNK).min(n))).to_owned();
        let x = eval_batch(&chunk, augment);
        parts.push(model.features(store, &x, width_idx, Mode::Eval)?);
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| invalid!("feature concat: {e}"))
}

/// Row-normalizes features; all-zero rows (every unit inactive) map to the
/// uniform direction so cosine similarity stays defined.
pub fn unit_rows(features: &Array2<f64>) -> Array2<f64> {
    let (mut unit, _) = l2_normalize_rows(features);
    let fill = 1.0 / (features.ncols() as f64).sqrt();
    for mut row in unit.axis_iter_mut(Axis(0)) {
        if row.iter().all(|&v| v == 0.0) {
            row.fill(fill);
        }
    }
    unit
}

pub fn knn_accuracy(
    model: &SlimModel,
    store: &ParamStore,
    splits: &Splits,
    augment: &AugmentConfig,
    width_idx: usize,
    k: usize,
) -> Result<f64> {
    let train = unit_rows(&extract_features(model, store, splits.train.inputs(), augment, width_idx)?);
    let test = unit_rows(&extract_features(model, store, splits.test.inputs(), augment, width_idx)?);
    knn_eval(&train, splits.train.labels(), &test, splits.test.labels(), k.min(train.nrows()), false)
}

/// How to drive [`pretrain_run`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Continue from this checkpoint; its config replaces the given one.
    pub resume: Option<PathBuf>,
    /// Stop cleanly after this many completed epochs.
    pub stop_after_epoch: Option<usize>,
    /// Where synthetic datasets are cached; no caching when absent.
    pub cache_dir: Option<PathBuf>,
    /// Print a line per epoch to stdout.
    pub verbose: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub epochs_completed: usize,
    pub steps: usize,
    pub final_loss: f64,
    pub last_checkpoint: Option<PathBuf>,
}

/// Run metadata written next to the logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub widths: Vec<f64>,
    pub slow_start_epochs: usize,
    pub steps_per_epoch: usize,
    /// Parameter name of the layer whose gradients feed the direction PCA.
    pub last_linear_layer: String,
    /// Gradient norms are of the reweighted total loss the optimizer sees.
    pub gradients: String,
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch_{epoch:04}.ckpt"))
}

fn jsonl_line(w: &mut impl Write, value: &impl Serialize, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

fn open_append(path: &Path, fresh: bool) -> Result<BufWriter<File>> {
    let f = if fresh {
        File::create(path)
    } else {
        OpenOptions::new().create(true).append(true).open(path)
    };
    Ok(BufWriter::new(f.map_err(|e| Error::io(path, e))?))
}

/// Pre-trains a model, writing checkpoints, metrics and gradient logs under
/// `opts.out_dir`.
///
/// On a non-finite loss the last gradient snapshot is written to
/// `abort_snapshot.json` and the error is returned.
pub fn pretrain_run(config: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let out = &opts.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (mut trainer, fresh) = match &opts.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let splits = load_splits(&ckpt.header.config.data, opts.cache_dir.as_deref())?;
            (Trainer::from_checkpoint(ckpt, splits)?, false)
        }
        None => {
            config.validate()?;
            let splits = load_splits(&config.data, opts.cache_dir.as_deref())?;
            (Trainer::new(config.clone(), splits)?, true)
        }
    };
    let cfg = trainer.config().clone();
    if fresh {
        let cfg_path = out.join("config.toml");
        std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
        let meta = RunMeta {
            config_hash: cfg.hash(),
            widths: cfg.model.widths.widths().to_vec(),
            slow_start_epochs: cfg.remedies.slow_start_epochs,
            steps_per_epoch: trainer.steps_per_epoch(),
            last_linear_layer: trainer.model().last_linear().name.clone(),
            gradients: "post_reweighting".into(),
        };
        let meta_path = out.join("run.json");
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    }
    let metrics_path = out.join("metrics.jsonl");
    let grads_path = out.join("grads.jsonl");
    let vec_name = "last_layer.f64";
    let vec_path = out.join(vec_name);
    let mut metrics = open_append(&metrics_path, fresh)?;
    let mut grad_log = open_append(&grads_path, fresh)?;
    let mut vec_file = open_append(&vec_path, fresh)?;
    let mut vec_offset = if fresh {
        0
    } else {
        std::fs::metadata(&vec_path).map(|m| m.len() / 8).unwrap_or(0)
    };

    let stop = opts.stop_after_epoch.unwrap_or(usize::MAX).min(cfg.optim.epochs);
    let mut final_loss = f64::NAN;
    let mut last_checkpoint = None;
    while trainer.epoch() < stop {
        let epoch = trainer.epoch();
        let result = trainer.run_epoch(|s| {
            if let Some(snap) = &s.snapshot {
                let mut rec = snap.clone();
                if let Some(v) = rec.last_layer.take() {
                    for x in &v {
                        vec_file.write_all(&x.to_le_bytes()).map_err(|e| Error::io(&vec_path, e))?;
                    }
                    rec.last_layer_ref = Some(VectorRef {
                        file: vec_name.into(),
                        offset: vec_offset,
                        len: v.len(),
                    });
                    vec_offset += v.len() as u64;
                }
                jsonl_line(&mut grad_log, &rec, &grads_path)?;
            }
            let rec = MetricRecord::Step {
                epoch: s.epoch,
                step: s.step,
                lr: s.lr,
                breakdown: s.breakdown.clone(),
                step_ms: s.elapsed.as_secs_f64() * 1e3,
            };
            jsonl_line(&mut metrics, &rec, &metrics_path)
        });
        let mean_loss = match result {
            Ok(l) => l,
            Err(e) => {
                for (w, p) in [(&mut metrics, &metrics_path), (&mut grad_log, &grads_path)] {
                    w.flush().map_err(|e| Error::io(p, e))?;
                }
                if let Some(snap) = trainer.last_snapshot() {
                    let p = out.join("abort_snapshot.json");
                    let text = serde_json::to_string_pretty(snap).map_err(|e| Error::format(&p, e.to_string()))?;
                    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
                }
                return Err(e);
            }
        };
        final_loss = mean_loss;
        let done = trainer.epoch();
        let d = &cfg.diagnostics;
        let knn_full = if d.knn_every > 0 && (done % d.knn_every == 0 || done == cfg.optim.epochs) {
            Some(trainer.knn_accuracy(0, d.knn_k)?)
        } else {
            None
        };
        jsonl_line(
            &mut metrics,
            &MetricRecord::Epoch {
                epoch,
                mean_loss,
                knn_full,
            },
            &metrics_path,
        )?;
        for (w, p) in [(&mut metrics, &metrics_path), (&mut grad_log, &grads_path), (&mut vec_file, &vec_path)] {
            w.flush().map_err(|e| Error::io(p, e))?;
        }
        if done % cfg.checkpoint.every == 0 || done == cfg.optim.epochs || done == stop {
            let path = checkpoint_path(out, done);
            trainer.to_checkpoint().save(&path)?;
            last_checkpoint = Some(path);
        }
        if opts.verbose {
            let knn = knn_full.map(|k| format!(" knn@1.0 {:.3}", k)).unwrap_or_default();
            println!("epoch {done}/{} loss {mean_loss:.4}{knn}", cfg.optim.epochs);
        }
    }
    Ok(RunSummary {
        out_dir: out.clone(),
        epochs_completed: trainer.epoch(),
        steps: trainer.step(),
        final_loss,
        last_checkpoint,
    })
}

/// Reads every record of a `metrics.jsonl` file.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    read_jsonl(path)
}

/// Reads every record of a `grads.jsonl` file.
pub fn read_grad_log(path: &Path) -> Result<Vec<GradSnapshot>> {
    read_jsonl(path)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
        .collect()
}
