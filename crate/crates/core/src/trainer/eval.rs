use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::run::{extract_features, knn_accuracy, Trainer};
use crate::data::{load_splits, Splits};
use crate::error::{invalid, Result};
use crate::probe::{linear_probe_train, probe_accuracy, ProbeHead, ProbeMode, ProbeTrainConfig, WidthAccuracy};
use crate::slimnet::{ParamStore, SlimModel};

/// What [`evaluate_run`] measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Widths to evaluate; all trained widths when absent.
    pub widths: Option<Vec<f64>>,
    /// Linear probe settings; skipped when absent.
    pub linear: Option<(ProbeMode, ProbeTrainConfig)>,
    /// Neighbor count for k-NN; skipped when absent.
    pub knn_k: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            widths: None,
            linear: Some((ProbeMode::Switchable, ProbeTrainConfig::default())),
            knn_k: Some(crate::probe::DEFAULT_K),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnAccuracy {
    pub width: f64,
    pub top1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub widths: Vec<f64>,
    pub linear: Option<Vec<WidthAccuracy>>,
    pub probe_mode: Option<ProbeMode>,
    pub knn: Option<Vec<KnnAccuracy>>,
}

/// Trainer restored from a checkpoint, with its data loaded.
pub fn load_trainer(ckpt: &Path, cache_dir: Option<&Path>) -> Result<Trainer> {
    let ckpt = Checkpoint::load(ckpt)?;
    let splits = load_splits(&ckpt.header.config.data, cache_dir)?;
    Trainer::from_checkpoint(ckpt, splits)
}

fn width_indices(store: &ParamStore, wanted: Option<&[f64]>) -> Result<Vec<usize>> {
    let widths = store.widths();
    match wanted {
        None => Ok((0..widths.len()).collect()),
        Some(ws) => {
            if ws.is_empty() {
                return Err(invalid!("no widths requested"));
            }
            let mut idx = ws
                .iter()
                .map(|&w| widths.index_of(w).map_err(|_| invalid!("width {w} is not one of the trained widths {:?}", widths.widths())))
                .collect::<Result<Vec<_>>>()?;
            idx.sort_unstable();
            idx.dedup();
            Ok(idx)
        }
    }
}

/// Column standardization fitted on `train`; constant columns are centered only.
fn standardize(train: &Array2<f64>, test: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mean = train.mean_axis(Axis(0)).expect("non-empty");
    let std: Array1<f64> = train.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    ((train - &mean) / &std, (test - &mean) / &std)
}

/// Per-width linear-probe and k-NN accuracies of a trained model.
pub fn evaluate_model(model: &SlimModel, store: &ParamStore, splits: &Splits, augment: &crate::data::AugmentConfig, cfg: &EvalConfig) -> Result<EvalReport> {
    let idx = width_indices(store, cfg.widths.as_deref())?;
    let widths: Vec<f64> = idx.iter().map(|&i| store.widths().width(i)).collect();
    let knn = match cfg.knn_k {
        Some(k) => Some(
            idx.iter()
                .zip(&widths)
                .map(|(&wi, &width)| Ok(KnnAccuracy { width, top1: knn_accuracy(model, store, splits, augment, wi, k)? }))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let linear = match &cfg.linear {
        Some((mode, train_cfg)) => {
            let mut train_feats = Vec::new();
            let mut test_feats = Vec::new();
            for &wi in &idx {
                let tr = extract_features(model, store, splits.train.inputs(), augment, wi)?;
                let te = extract_features(model, store, splits.test.inputs(), augment, wi)?;
                let (tr, te) = standardize(&tr, &te);
                train_feats.push(tr);
                test_feats.push(te);
            }
            let dims = train_feats.iter().map(|f| f.ncols()).collect();
            let classes = splits.train.classes().max(splits.test.classes());
            let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
            let mut head = ProbeHead::new(*mode, widths.clone(), dims, classes, &mut rng)?;
            linear_probe_train(&train_feats, splits.train.labels(), &mut head, train_cfg)?;
            Some(probe_accuracy(&head, &test_feats, splits.test.labels())?)
        }
        None => None,
    };
    Ok(EvalReport {
        widths,
        probe_mode: cfg.linear.as_ref().map(|(m, _)| *m),
        linear,
        knn,
    })
}

/// Loads a checkpoint and evaluates it on the test split of its dataset.
pub fn evaluate_run(ckpt: &Path, cfg: &EvalConfig, cache_dir: Option<&Path>) -> Result<EvalReport> {
    let t = load_trainer(ckpt, cache_dir)?;
    evaluate_model(t.model(), t.store(), t.splits(), &t.config().data.augment, cfg)
}
