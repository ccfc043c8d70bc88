//! Slow start, online distillation and loss reweighting, assembled into the
//! total pre-training objective.

mod distill;
mod weights;

pub use distill::{distill_batch, distill_batch_from, distill_distribution, distill_loss, DistillForm, TeacherDistribution};
pub use weights::{loss_weights, ReweightVariant, PUBLISHED_VARIANT4_WEIGHTS};

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayD};
use serde::{Deserialize, Serialize};

use crate::contrastive::{
    check_tau, info_nce_batch, l2_normalize_backward, l2_normalize_rows, similarities, similarity_backward,
    ContrastiveBatch, Framework, Negatives,
};
use crate::error::{invalid, Error, Result};
use crate::slimnet::{param_partition, Grads, Mode, ParamStore, SlimModel};

/// Remedy settings as they appear in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemedyConfig {
    #[serde(default)]
    pub slow_start_epochs: usize,
    /// Falls back to the framework default when absent.
    #[serde(default)]
    pub distill_tau: Option<f64>,
    #[serde(default = "default_form")]
    pub distill_form: DistillForm,
    #[serde(default = "default_variant")]
    pub reweight_variant: ReweightVariant,
}

fn default_form() -> DistillForm {
    DistillForm::Kd
}

fn default_variant() -> ReweightVariant {
    ReweightVariant::SumOfSubWidths
}

impl Default for RemedyConfig {
    fn default() -> Self {
        Self {
            slow_start_epochs: 0,
            distill_tau: None,
            distill_form: default_form(),
            reweight_variant: default_variant(),
        }
    }
}

impl RemedyConfig {
    /// Plain slimmable training: no slow start, no distillation, equal weights.
    pub fn vanilla() -> Self {
        Self {
            slow_start_epochs: 0,
            distill_tau: None,
            distill_form: DistillForm::None,
            reweight_variant: ReweightVariant::None,
        }
    }

    pub fn validate(&self, total_epochs: usize) -> Result<()> {
        if self.slow_start_epochs > total_epochs {
            return Err(invalid!(
                "slow_start_epochs {} exceeds the {total_epochs} training epochs",
                self.slow_start_epochs
            ));
        }
        if let Some(t) = self.distill_tau {
            check_tau(t)?;
        }
        Ok(())
    }

    pub fn tau2(&self, framework: Framework) -> f64 {
        self.distill_tau.unwrap_or_else(|| framework.default_tau2())
    }

    /// Whether sub-widths run at `epoch`.
    pub fn sub_widths_active(&self, epoch: usize) -> bool {
        epoch >= self.slow_start_epochs
    }
}

/// The parts of one step's objective, indexed like the active widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub widths: Vec<f64>,
    pub info_nce: Vec<f64>,
    /// `None` for the full width and whenever distillation is off.
    pub distill: Vec<Option<f64>>,
    pub weights: Vec<f64>,
    pub total: f64,
}

/// Combines per-width losses into the scalar objective.
///
/// Before `slow_start` only the full-width term `λ_1 L_1` counts and only
/// one InfoNCE value is expected. Afterwards every sub-width contributes
/// `λ_i (L_i + Lp_i) / 2`, or `λ_i L_i` when distillation is off.
pub fn total_objective(
    info_nce: &[f64],
    distill: &[Option<f64>],
    weights: &[f64],
    epoch: usize,
    slow_start: usize,
    distill_on: bool,
) -> Result<f64> {
    if info_nce.is_empty() || weights.is_empty() {
        return Err(invalid!("the full-width loss and weight are required"));
    }
    if epoch < slow_start {
        if info_nce.len() != 1 {
            return Err(Error::InvalidState(format!(
                "{} width losses during slow start; only the full width runs",
                info_nce.len()
            )));
        }
        return Ok(weights[0] * info_nce[0]);
    }
    if info_nce.len() != weights.len() {
        return Err(Error::InvalidState(format!(
            "{} width losses for {} weights",
            info_nce.len(),
            weights.len()
        )));
    }
    let mut total = weights[0] * info_nce[0];
    for i in 1..info_nce.len() {
        total += if distill_on {
            let lp = distill.get(i).copied().flatten().ok_or_else(|| {
                Error::InvalidState(format!("missing distillation loss for width index {i}"))
            })?;
            weights[i] * (info_nce[i] + lp) / 2.0
        } else {
            weights[i] * info_nce[i]
        };
    }
    Ok(total)
}

impl ObjectiveBreakdown {
    /// Recomputes the total from the stored parts.
    pub fn recombine(&self, epoch: usize, slow_start: usize) -> Result<f64> {
        let on = self.distill.iter().any(Option::is_some);
        total_objective(&self.info_nce, &self.distill, &self.weights, epoch, slow_start, on)
    }
}

/// Loss breakdown plus `dL/dz̄` for every prediction in the batch.
#[derive(Debug, Clone)]
pub struct CompositeObjective {
    pub breakdown: ObjectiveBreakdown,
    pub grad_predictions: Vec<Array2<f64>>,
}

/// Evaluates the total objective on a batch and its gradient w.r.t. the
/// normalized predictions.
///
/// `weights` are the loss weights over the store's full width list. The
/// teacher distribution for distillation is the full-width prediction's
/// similarity row at `tau2`, treated as a constant.
#[allow(clippy::too_many_arguments)]
pub fn composite_objective(
    batch: &ContrastiveBatch,
    all_widths: &[f64],
    negatives: Negatives,
    tau1: f64,
    tau2: f64,
    remedies: &RemedyConfig,
    weights: &[f64],
    epoch: usize,
) -> Result<CompositeObjective> {
    composite_objective_with_teacher(batch, None, all_widths, negatives, tau1, tau2, remedies, weights, epoch)
}

/// [`composite_objective`] with the teacher prediction supplied separately.
///
/// `teacher` replaces the batch's full-width prediction as the source of the
/// distillation targets. Finite-difference checks use it to hold the
/// gradient-blocked teacher fixed while the parameters move.
#[allow(clippy::too_many_arguments)]
pub fn composite_objective_with_teacher(
    batch: &ContrastiveBatch,
    teacher: Option<&Array2<f64>>,
    all_widths: &[f64],
    negatives: Negatives,
    tau1: f64,
    tau2: f64,
    remedies: &RemedyConfig,
    weights: &[f64],
    epoch: usize,
) -> Result<CompositeObjective> {
    if weights.len() != all_widths.len() {
        return Err(invalid!("{} weights for {} widths", weights.len(), all_widths.len()));
    }
    if batch.width_indices.first() != Some(&0) {
        return Err(invalid!("the batch must start with the full width"));
    }
    let slow = !remedies.sub_widths_active(epoch);
    if slow && batch.width_indices.len() != 1 {
        return Err(Error::InvalidState("sub-width predictions present during slow start".into()));
    }
    if !slow && batch.width_indices.len() != all_widths.len() {
        return Err(Error::InvalidState(format!(
            "{} of {} widths evaluated after slow start",
            batch.width_indices.len(),
            all_widths.len()
        )));
    }
    let distill_on = remedies.distill_form.is_enabled();
    let mut info = Vec::new();
    let mut distill = Vec::new();
    let mut lambda = Vec::new();
    let mut widths = Vec::new();
    let mut grads = Vec::new();
    let fixed_teacher = teacher.map(|t| similarities(t, &batch.target, negatives)).transpose()?;
    let mut teacher = None;
    for (k, &wi) in batch.width_indices.iter().enumerate() {
        let sim = similarities(&batch.predictions[k], &batch.target, negatives)?;
        let (l, mut ds) = info_nce_batch(&sim, tau1)?;
        let w = weights[wi];
        if k == 0 {
            ds *= w;
            distill.push(None);
            if distill_on {
                let source = fixed_teacher.as_ref().unwrap_or(&sim);
                teacher = Some(TeacherDistribution::new(source, tau2));
            }
        } else if distill_on {
            let t = teacher.as_ref().expect("full width is first");
            let (lp, dsp) = distill_batch_from(t, &sim, tau2, remedies.distill_form)?;
            ds = (ds + dsp) * (w / 2.0);
            distill.push(Some(lp));
        } else {
            ds *= w;
            distill.push(None);
        }
        info.push(l);
        lambda.push(w);
        widths.push(all_widths[wi]);
        grads.push(similarity_backward(&ds, &batch.target, negatives));
    }
    let total = total_objective(&info, &distill, &lambda, epoch, remedies.slow_start_epochs, distill_on)?;
    Ok(CompositeObjective {
        breakdown: ObjectiveBreakdown {
            widths,
            info_nce: info,
            distill,
            weights: lambda,
            total,
        },
        grad_predictions: grads,
    })
}

/// Outcome of [`gradient_accumulation_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulationReport {
    pub passed: bool,
    /// Largest relative deviation over all partition keys.
    pub max_rel_deviation: f64,
    /// Relative deviation per partition key (`"1.0"`, `"1.0\0.25"`, ...).
    pub per_partition: BTreeMap<String, f64>,
    /// Largest gradient any sub-width loss left on parameters that width
    /// does not use; zero when the sub-networks are nested correctly.
    pub exclusive_leak: f64,
}

/// Compares the gradient of `Σ_i L_i` (every width back-propagated into one
/// buffer during a single joint pass) with the sum of gradients from
/// independent per-width forward/backward passes.
///
/// Each `L_i` is InfoNCE of width `i`'s prediction against `target`.
pub fn gradient_accumulation_check(
    model: &SlimModel,
    store: &ParamStore,
    input: &ArrayD<f64>,
    target: &Array2<f64>,
    negatives: Negatives,
    tau: f64,
    tolerance: f64,
) -> Result<AccumulationReport> {
    let n = store.widths().len();
    let per_width = |wi: usize, grads: &mut Grads| -> Result<()> {
        let (z, tape) = model.forward_student(store, input, wi, Mode::Train)?;
        let (zbar, norms) = l2_normalize_rows(&z);
        let sim = similarities(&zbar, target, negatives)?;
        let (_, ds) = info_nce_batch(&sim, tau)?;
        let dzbar = similarity_backward(&ds, target, negatives);
        model.backward(store, &tape, l2_normalize_backward(&zbar, &norms, &dzbar), grads)
    };

    let mut joint = Grads::zeros_like(store);
    for wi in 0..n {
        per_width(wi, &mut joint)?;
    }
    let mut separate = Vec::with_capacity(n);
    for wi in 0..n {
        let mut g = Grads::zeros_like(store);
        per_width(wi, &mut g)?;
        separate.push(g);
    }
    let mut summed = Grads::zeros_like(store);
    for g in &separate {
        summed.add_assign(g);
    }

    let part = param_partition(store)?;
    let joint_flat = part.shared_flat(&joint);
    let sum_flat = part.shared_flat(&summed);
    let mut per_partition = BTreeMap::new();
    let mut max_rel = 0.0f64;
    for (key, set) in part.keyed_sets() {
        if set.is_empty() {
            continue;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for k in set.indices() {
            num += (joint_flat[k] - sum_flat[k]).powi(2);
            den += sum_flat[k].powi(2);
        }
        let rel = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        max_rel = max_rel.max(rel);
        per_partition.insert(key, rel);
    }

    let mut leak = 0.0f64;
    for (wi, g) in separate.iter().enumerate() {
        let flat = part.shared_flat(g);
        for k in part.set(0).difference(part.set(wi)).indices() {
            leak = leak.max(flat[k].abs());
        }
        for (pid, p) in store.params().iter().enumerate() {
            if let Some(owner) = p.role.owner_width() {
                if owner != wi {
                    leak = leak.max(g.tensors[pid].iter().fold(0.0f64, |a, v| a.max(v.abs())));
                }
            }
        }
    }
    Ok(AccumulationReport {
        passed: max_rel <= tolerance && leak == 0.0,
        max_rel_deviation: max_rel,
        per_partition,
        exclusive_leak: leak,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::{backward_predictions, multi_width_forward, MomentumState, NegativeQueue};
    use crate::slimnet::{mlp_backbone, mlp_head, Architecture, WidthConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn toy(widths: &[f64], seed: u64) -> (SlimModel, ParamStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture {
            backbone: mlp_backbone(6, &[16, 16]),
            projector: mlp_head(16, 16, 8, true, false),
            predictor: None,
        };
        SlimModel::build(&arch, WidthConfig::new(widths.to_vec()).unwrap(), &mut rng).unwrap()
    }

    fn randn(shape: &[usize], rng: &mut impl Rng) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn total_objective_arithmetic() {
        let t = total_objective(&[2.0, 4.0], &[None, Some(1.0)], &[1.5, 1.0], 5, 2, true).unwrap();
        assert_abs_diff_eq!(t, 5.5, epsilon = 1e-12);
        let single = total_objective(&[3.0], &[None], &[1.0], 0, 0, true).unwrap();
        assert_eq!(single, 3.0);
        let slow = total_objective(&[2.0], &[None], &[2.5, 1.0, 1.0], 1, 3, true).unwrap();
        assert_eq!(slow, 5.0);
        let fallback = total_objective(&[2.0, 4.0], &[None, None], &[1.5, 1.0], 5, 2, false).unwrap();
        assert_eq!(fallback, 7.0);
    }

    #[test]
    fn total_objective_missing_distillation() {
        let err = total_objective(&[2.0, 4.0], &[None, None], &[1.5, 1.0], 5, 2, true).unwrap_err();
        assert!(matches!(err, Error::InvalidState(_)));
        let err = total_objective(&[2.0, 4.0], &[None, None], &[1.5, 1.0], 0, 2, true).unwrap_err();
        assert!(matches!(err, Error::InvalidState(_)));
    }

    #[test]
    fn remedy_config_validation_and_parsing() {
        let cfg: RemedyConfig = toml::from_str(
            "slow_start_epochs = 20\ndistill_form = \"literal_eq5\"\ndistill_tau = 5.0\nreweight_variant = \"3\"",
        )
        .unwrap();
        assert_eq!(cfg.distill_form, DistillForm::LiteralEq5);
        assert_eq!(cfg.reweight_variant, ReweightVariant::Proportional);
        assert!(cfg.validate(40).is_ok());
        assert!(cfg.validate(10).is_err());
        let bad = RemedyConfig {
            distill_tau: Some(0.0),
            ..RemedyConfig::default()
        };
        assert!(bad.validate(10).is_err());
        assert!(toml::from_str::<RemedyConfig>("reweight_variant = \"7\"").is_err());
        let stub: RemedyConfig = toml::from_str("distill_form = \"atkd\"").unwrap();
        assert_eq!(stub.distill_form, DistillForm::Atkd);
        assert_eq!(RemedyConfig::default().tau2(Framework::Mocov2), 5.0);
        assert_eq!(RemedyConfig::default().tau2(Framework::Mocov3), 1.0);
    }

    #[test]
    fn accumulation_check_passes_on_toy_mlp() {
        let (model, store) = toy(&[1.0, 0.5, 0.25], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = randn(&[6, 6], &mut rng);
        let target = l2_normalize_rows(&randn(&[6, 8], &mut rng).into_dimensionality().unwrap()).0;
        let queue = NegativeQueue::random(16, 8, &mut rng).unwrap();
        let rep = gradient_accumulation_check(&model, &store, &x, &target, Negatives::Queue(queue.negatives()), 0.2, 1e-6)
            .unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.per_partition.contains_key("1.0\\0.25"));
        assert_eq!(rep.exclusive_leak, 0.0);
    }

    #[test]
    fn accumulation_check_single_width_is_exact() {
        let (model, store) = toy(&[1.0], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = randn(&[4, 6], &mut rng);
        let target = l2_normalize_rows(&randn(&[4, 8], &mut rng).into_dimensionality().unwrap()).0;
        let rep = gradient_accumulation_check(&model, &store, &x, &target, Negatives::InBatch, 1.0, 0.0).unwrap();
        assert_eq!(rep.max_rel_deviation, 0.0);
        assert!(rep.passed);
    }

    fn composite_setup(distill_form: DistillForm) -> (SlimModel, ParamStore, MomentumState, NegativeQueue, ArrayD<f64>, ArrayD<f64>) {
        let (model, store) = toy(&[1.0, 0.5, 0.25], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut mom = MomentumState::new(&store, 0.99).unwrap();
        for p in mom.params_mut().params_mut() {
            p.value.mapv_inplace(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal));
        }
        let _ = distill_form;
        let queue = NegativeQueue::random(12, 8, &mut rng).unwrap();
        (model, store, mom, queue, randn(&[5, 6], &mut rng), randn(&[5, 6], &mut rng))
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        for form in [DistillForm::Kd, DistillForm::Mse, DistillForm::LiteralEq5, DistillForm::None] {
            let (model, store, mom, queue, v1, v2) = composite_setup(form);
            let remedies = RemedyConfig {
                slow_start_epochs: 0,
                distill_tau: Some(2.0),
                distill_form: form,
                reweight_variant: ReweightVariant::SumOfSubWidths,
            };
            let widths = store.widths().clone();
            let weights = loss_weights(&widths, remedies.reweight_variant);
            let neg = Negatives::Queue(queue.negatives());
            // the teacher is gradient-blocked, so it stays at its unperturbed value
            let (base, _) =
                multi_width_forward(&model, &store, &mom, &v1, &v2, Framework::Mocov2, widths.widths(), Mode::Train).unwrap();
            let teacher = base.predictions[0].clone();
            let eval = |s: &ParamStore| -> (f64, Grads) {
                let (batch, cache) =
                    multi_width_forward(&model, s, &mom, &v1, &v2, Framework::Mocov2, widths.widths(), Mode::Train).unwrap();
                let out = composite_objective_with_teacher(
                    &batch, Some(&teacher), widths.widths(), neg, 0.2, 2.0, &remedies, &weights, 0,
                )
                .unwrap();
                let mut g = Grads::zeros_like(s);
                backward_predictions(&model, s, &batch, &cache, &out.grad_predictions, &mut g).unwrap();
                (out.breakdown.total, g)
            };
            let (_, g) = eval(&store);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let h = 1e-5;
            for _ in 0..25 {
                let pid = rng.random_range(0..store.params().len());
                let len = store.param(pid).value.len();
                let k = rng.random_range(0..len);
                let mut plus = store.clone();
                let mut minus = store.clone();
                plus.params_mut()[pid].value.as_slice_mut().unwrap()[k] += h;
                minus.params_mut()[pid].value.as_slice_mut().unwrap()[k] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = g.tensors[pid].as_slice().unwrap()[k];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1e-3), "{form:?} {}[{k}]: fd {fd} analytic {an}", store.param(pid).name);
            }
        }
    }

    #[test]
    fn breakdown_recombines_to_total() {
        let (model, store, mom, queue, v1, v2) = composite_setup(DistillForm::Kd);
        let widths = store.widths().clone();
        let remedies = RemedyConfig::default();
        let weights = loss_weights(&widths, remedies.reweight_variant);
        let (batch, _) =
            multi_width_forward(&model, &store, &mom, &v1, &v2, Framework::Mocov2, widths.widths(), Mode::Train).unwrap();
        let out = composite_objective(&batch, widths.widths(), Negatives::Queue(queue.negatives()), 0.2, 5.0, &remedies, &weights, 3)
            .unwrap();
        let b = &out.breakdown;
        assert!((b.recombine(3, 0).unwrap() - b.total).abs() <= 1e-12);
        assert_eq!(b.weights, vec![1.75, 1.0, 1.0]);
        assert!(b.distill[0].is_none() && b.distill[1].is_some());
    }

    #[test]
    fn slow_start_touches_only_full_width() {
        let (model, store, mom, queue, v1, v2) = composite_setup(DistillForm::Kd);
        let widths = store.widths().clone();
        let remedies = RemedyConfig {
            slow_start_epochs: 2,
            ..RemedyConfig::default()
        };
        let weights = loss_weights(&widths, remedies.reweight_variant);
        let neg = Negatives::Queue(queue.negatives());
        let (all, _) =
            multi_width_forward(&model, &store, &mom, &v1, &v2, Framework::Mocov2, widths.widths(), Mode::Train).unwrap();
        assert!(matches!(
            composite_objective(&all, widths.widths(), neg, 0.2, 5.0, &remedies, &weights, 1),
            Err(Error::InvalidState(_))
        ));
        let (batch, cache) = multi_width_forward(&model, &store, &mom, &v1, &v2, Framework::Mocov2, &[1.0], Mode::Train).unwrap();
        let out = composite_objective(&batch, widths.widths(), neg, 0.2, 5.0, &remedies, &weights, 1).unwrap();
        let mut g = Grads::zeros_like(&store);
        backward_predictions(&model, &store, &batch, &cache, &out.grad_predictions, &mut g).unwrap();
        for (pid, p) in store.params().iter().enumerate() {
            if matches!(p.role.owner_width(), Some(w) if w > 0) {
                assert!(g.tensors[pid].iter().all(|&v| v == 0.0), "{}", p.name);
            }
        }
    }

    #[test]
    fn stub_forms_reject_at_runtime() {
        let (model, store, mom, queue, v1, v2) = composite_setup(DistillForm::Kd);
        let widths = store.widths().clone();
        let remedies = RemedyConfig {
            distill_form: DistillForm::Dkd,
            ..RemedyConfig::default()
        };
        let weights = loss_weights(&widths, remedies.reweight_variant);
        let (batch, _) =
            multi_width_forward(&model, &store, &mom, &v1, &v2, Framework::Mocov2, widths.widths(), Mode::Train).unwrap();
        let r = composite_objective(&batch, widths.widths(), Negatives::Queue(queue.negatives()), 0.2, 5.0, &remedies, &weights, 0);
        assert!(matches!(r, Err(Error::NotImplemented(_))));
    }
}
