//! InfoNCE, momentum encoder, negative queue and the multi-width forward
//! pass: every active width of the online network predicts from the first
//! view while the full-width momentum network provides the target from the
//! second view.

mod loss;
mod momentum;
mod queue;

pub use loss::{
    info_nce, info_nce_batch, info_nce_with_grad, l2_normalize_backward, l2_normalize_rows, similarities,
    similarity_backward, Negatives, Similarities, UNIT_TOL,
};
pub(crate) use loss::{check_tau, check_unit, log_sum_exp, softmax, softmax_rows, softmax_rows_lse};
pub use momentum::{momentum_update, MomentumState};
pub use queue::NegativeQueue;

use ndarray::{Array1, Array2, ArrayD};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::slimnet::{Grads, Mode, ModelTape, ParamStore, SlimModel};

/// Which contrastive framework the heads and negatives follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    /// MLP head, negatives from a memory queue.
    Mocov2,
    /// Projector plus predictor, negatives from the batch.
    Mocov3,
}

impl Framework {
    pub fn default_tau1(self) -> f64 {
        match self {
            Framework::Mocov2 => 0.2,
            Framework::Mocov3 => 1.0,
        }
    }

    pub fn default_tau2(self) -> f64 {
        match self {
            Framework::Mocov2 => 5.0,
            Framework::Mocov3 => 1.0,
        }
    }
}

/// Unit-norm predictions of each active width and the full-width momentum
/// target.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    /// Indices into the run's width list, ascending; index 0 is always present.
    pub width_indices: Vec<usize>,
    pub predictions: Vec<Array2<f64>>,
    pub target: Array2<f64>,
}

impl ContrastiveBatch {
    pub fn prediction(&self, width_idx: usize) -> Option<&Array2<f64>> {
        self.width_indices
            .iter()
            .position(|&w| w == width_idx)
            .map(|i| &self.predictions[i])
    }
}

/// What the backward pass needs from [`multi_width_forward`].
#[derive(Debug, Clone)]
pub struct StudentCache {
    tapes: Vec<ModelTape>,
    norms: Vec<Array1<f64>>,
}

impl StudentCache {
    pub fn tapes(&self) -> &[ModelTape] {
        &self.tapes
    }
}

/// Runs the online network at every active width on `view1` and the
/// momentum network at full width on `view2`.
///
/// `active_widths` are values from the store's width list and must include
/// 1.0. Only the listed widths are evaluated.
#[allow(clippy::too_many_arguments)]
pub fn multi_width_forward(
    model: &SlimModel,
    store: &ParamStore,
    momentum: &MomentumState,
    view1: &ArrayD<f64>,
    view2: &ArrayD<f64>,
    framework: Framework,
    active_widths: &[f64],
    mode: Mode,
) -> Result<(ContrastiveBatch, StudentCache)> {
    if (framework == Framework::Mocov3) != model.predictor.is_some() {
        return Err(invalid!("{framework:?} does not match the model heads"));
    }
    if view1.shape() != view2.shape() {
        return Err(invalid!("views have different shapes"));
    }
    let widths = store.widths();
    let mut idx = Vec::with_capacity(active_widths.len());
    for &w in active_widths {
        let i = widths.index_of(w).map_err(|_| invalid!("active width {w} is not configured"))?;
        if !idx.contains(&i) {
            idx.push(i);
        }
    }
    if !idx.contains(&0) {
        return Err(invalid!("active widths must include the full width 1.0"));
    }
    idx.sort_unstable();

    let (z_target, _) = model.forward_target(momentum.params(), view2, 0, mode)?;
    let (target, _) = l2_normalize_rows(&z_target);

    let mut predictions = Vec::with_capacity(idx.len());
    let mut tapes = Vec::with_capacity(idx.len());
    let mut norms = Vec::with_capacity(idx.len());
    for &wi in &idx {
        let (z, tape) = model.forward_student(store, view1, wi, mode)?;
        if z.ncols() != target.ncols() {
            return Err(invalid!("prediction dimension differs from target dimension"));
        }
        let (zbar, n) = l2_normalize_rows(&z);
        predictions.push(zbar);
        tapes.push(tape);
        norms.push(n);
    }
    Ok((
        ContrastiveBatch {
            width_indices: idx,
            predictions,
            target,
        },
        StudentCache { tapes, norms },
    ))
}

/// Back-propagates `dL/dz̄` of every active width into `grads`.
pub fn backward_predictions(
    model: &SlimModel,
    store: &ParamStore,
    batch: &ContrastiveBatch,
    cache: &StudentCache,
    grad_predictions: &[Array2<f64>],
    grads: &mut Grads,
) -> Result<()> {
    if grad_predictions.len() != batch.predictions.len() {
        return Err(invalid!("one gradient per active width is required"));
    }
    for i in 0..batch.predictions.len() {
        let dz = l2_normalize_backward(&batch.predictions[i], &cache.norms[i], &grad_predictions[i]);
        model.backward(store, &cache.tapes[i], dz, grads)?;
    }
    Ok(())
}

/// Folds the batch statistics of every evaluated width into the store.
pub fn commit_student_stats(model: &SlimModel, store: &mut ParamStore, cache: &StudentCache) {
    for tape in &cache.tapes {
        model.commit_stats(store, tape);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slimnet::{mlp_backbone, mlp_head, Architecture, WidthConfig};
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn toy(framework: Framework) -> (SlimModel, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let backbone = mlp_backbone(6, &[16, 16]);
        let arch = match framework {
            Framework::Mocov2 => Architecture {
                backbone,
                projector: mlp_head(16, 16, 8, true, false),
                predictor: None,
            },
            Framework::Mocov3 => Architecture {
                backbone,
                projector: mlp_head(16, 16, 8, true, true),
                predictor: Some(mlp_head(8, 16, 8, false, true)),
            },
        };
        SlimModel::build(&arch, WidthConfig::new(vec![1.0, 0.5, 0.25]).unwrap(), &mut rng).unwrap()
    }

    fn input(seed: u64) -> ArrayD<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArrayD::from_shape_fn(IxDyn(&[8, 6]), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn slow_start_width_set_gives_one_prediction() {
        let (model, store) = toy(Framework::Mocov2);
        let mom = MomentumState::new(&store, 0.99).unwrap();
        let (batch, _) = multi_width_forward(&model, &store, &mom, &input(1), &input(2), Framework::Mocov2, &[1.0], Mode::Train).unwrap();
        assert_eq!(batch.predictions.len(), 1);
        assert_eq!(batch.target.nrows(), 8);
    }

    #[test]
    fn all_widths_unit_norm() {
        for fw in [Framework::Mocov2, Framework::Mocov3] {
            let (model, store) = toy(fw);
            let mom = MomentumState::new(&store, 0.99).unwrap();
            let (batch, _) =
                multi_width_forward(&model, &store, &mom, &input(1), &input(2), fw, &[1.0, 0.5, 0.25], Mode::Train).unwrap();
            assert_eq!(batch.predictions.len(), 3);
            for p in batch.predictions.iter().chain(std::iter::once(&batch.target)) {
                for r in p.rows() {
                    assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-5, "{fw:?} {r}");
                }
            }
        }
    }

    #[test]
    fn synchronized_branches_agree() {
        let (model, store) = toy(Framework::Mocov2);
        let mom = MomentumState::new(&store, 0.99).unwrap();
        let x = input(3);
        let (batch, _) = multi_width_forward(&model, &store, &mom, &x, &x, Framework::Mocov2, &[1.0], Mode::Eval).unwrap();
        let diff = (&batch.predictions[0] - &batch.target).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff <= 1e-6);
    }

    #[test]
    fn rejects_missing_full_width_and_unknown_width() {
        let (model, store) = toy(Framework::Mocov2);
        let mom = MomentumState::new(&store, 0.99).unwrap();
        assert!(multi_width_forward(&model, &store, &mom, &input(1), &input(2), Framework::Mocov2, &[0.5], Mode::Train).is_err());
        assert!(multi_width_forward(&model, &store, &mom, &input(1), &input(2), Framework::Mocov2, &[1.0, 0.3], Mode::Train).is_err());
        assert!(multi_width_forward(&model, &store, &mom, &input(1), &input(2), Framework::Mocov3, &[1.0], Mode::Train).is_err());
    }

    /// The target depends on ξ but gradients only ever land in θ's buffers.
    #[test]
    fn momentum_branch_is_stop_gradient() {
        let (model, store) = toy(Framework::Mocov2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mom = MomentumState::new(&store, 0.99).unwrap();
        let q = NegativeQueue::random(32, 8, &mut rng).unwrap();
        let loss_and_grad = |mom: &MomentumState| {
            let (batch, cache) =
                multi_width_forward(&model, &store, mom, &input(1), &input(2), Framework::Mocov2, &[1.0], Mode::Train).unwrap();
            let neg = Negatives::Queue(q.negatives());
            let sim = similarities(&batch.predictions[0], &batch.target, neg).unwrap();
            let (l, ds) = info_nce_batch(&sim, 0.2).unwrap();
            let dq = similarity_backward(&ds, &batch.target, neg);
            let mut g = Grads::zeros_like(&store);
            backward_predictions(&model, &store, &batch, &cache, &[dq], &mut g).unwrap();
            (l, g)
        };
        let (l0, g0) = loss_and_grad(&mom);
        for p in mom.params_mut().params_mut() {
            p.value.mapv_inplace(|v| v * 1.1 + 0.01);
        }
        let (l1, g1) = loss_and_grad(&mom);
        assert_ne!(l0, l1);
        // gradient buffers are shaped like θ only; ξ has none
        assert_eq!(g0.tensors.len(), store.params().len());
        assert_eq!(g1.tensors.len(), store.params().len());
    }
}
