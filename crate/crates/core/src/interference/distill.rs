use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::contrastive::{check_tau, check_unit, softmax, softmax_rows_lse, Similarities};
use crate::error::{invalid, Error, Result};

/// How a sub-width prediction distribution is pulled toward the full width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillForm {
    /// Cross-entropy against the full teacher distribution.
    Kd,
    /// Mean squared difference between the two distributions.
    Mse,
    /// `-p_t log p_s` over the positive-class probabilities only.
    LiteralEq5,
    /// Accepted in configs, rejected when a loss is computed.
    Atkd,
    /// Accepted in configs, rejected when a loss is computed.
    Dkd,
    /// No distillation; sub-widths train on InfoNCE alone.
    None,
}

impl DistillForm {
    pub fn is_enabled(self) -> bool {
        self != DistillForm::None
    }

    fn ensure_implemented(self) -> Result<()> {
        match self {
            DistillForm::Atkd | DistillForm::Dkd => Err(Error::NotImplemented(format!(
                "distillation form {self:?} is a named stub"
            ))),
            DistillForm::None => Err(Error::InvalidState("distillation is disabled".into())),
            _ => Ok(()),
        }
    }
}

/// Softmax over `[s⁺, s⁻_1, ..]/τ2`; entry 0 is the positive-pair probability.
pub fn distill_distribution(
    student_pred: ArrayView1<f64>,
    target: ArrayView1<f64>,
    negatives: ArrayView2<f64>,
    tau2: f64,
) -> Result<Array1<f64>> {
    check_tau(tau2)?;
    let d = student_pred.len();
    if target.len() != d || negatives.ncols() != d {
        return Err(invalid!("dimension mismatch between prediction, target and negatives"));
    }
    check_unit(student_pred, "prediction")?;
    check_unit(target, "target")?;
    for (i, n) in negatives.axis_iter(Axis(0)).enumerate() {
        check_unit(n, &format!("negative {i}"))?;
    }
    let mut logits = Array1::zeros(1 + negatives.nrows());
    logits[0] = target.dot(&student_pred) / tau2;
    for (i, n) in negatives.axis_iter(Axis(0)).enumerate() {
        logits[1 + i] = n.dot(&student_pred) / tau2;
    }
    Ok(softmax(logits.view()))
}

/// Distillation loss between a fixed teacher and a student distribution.
///
/// For `literal_eq5` only entry 0 (the positive class) of each vector is used.
pub fn distill_loss(teacher: ArrayView1<f64>, student: ArrayView1<f64>, form: DistillForm) -> Result<f64> {
    form.ensure_implemented()?;
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err(invalid!(
            "teacher has {} entries, student has {}",
            teacher.len(),
            student.len()
        ));
    }
    Ok(match form {
        DistillForm::Kd => -teacher
            .iter()
            .zip(student)
            .filter(|(&t, _)| t > 0.0)
            .map(|(&t, &s)| t * s.ln())
            .sum::<f64>(),
        DistillForm::Mse => {
            teacher.iter().zip(student).map(|(t, s)| (s - t).powi(2)).sum::<f64>() / teacher.len() as f64
        }
        DistillForm::LiteralEq5 => -teacher[0] * student[0].ln(),
        _ => unreachable!(),
    })
}

/// Batch-mean distillation loss from a teacher similarity matrix to a
/// student one, and its gradient w.r.t. the student similarities.
///
/// Both matrices are turned into distributions at `tau2`; the teacher is a
/// constant.
pub fn distill_batch(
    teacher: &Similarities,
    student: &Similarities,
    tau2: f64,
    form: DistillForm,
) -> Result<(f64, Array2<f64>)> {
    check_tau(tau2)?;
    let qt = TeacherDistribution::new(teacher, tau2);
    distill_batch_from(&qt, student, tau2, form)
}

/// Teacher probabilities at `tau2`, computed once and shared by every
/// student width of a step.
#[derive(Debug, Clone)]
pub struct TeacherDistribution {
    probs: Array2<f64>,
    positive: Vec<usize>,
}

impl TeacherDistribution {
    pub fn new(teacher: &Similarities, tau2: f64) -> Self {
        Self {
            probs: softmax_rows_lse(&teacher.s / tau2).0,
            positive: teacher.positive.clone(),
        }
    }
}

/// [`distill_batch`] against a precomputed teacher distribution.
pub fn distill_batch_from(
    teacher: &TeacherDistribution,
    student: &Similarities,
    tau2: f64,
    form: DistillForm,
) -> Result<(f64, Array2<f64>)> {
    form.ensure_implemented()?;
    check_tau(tau2)?;
    let qt = &teacher.probs;
    if qt.dim() != student.s.dim() {
        return Err(invalid!("teacher and student similarity shapes differ"));
    }
    if teacher.positive != student.positive {
        return Err(invalid!("teacher and student disagree on the positive column"));
    }
    let (b, m) = student.s.dim();
    let (qs, lse) = softmax_rows_lse(&student.s / tau2);
    let mut loss = 0.0;
    let mut ds = Array2::zeros((b, m));
    for r in 0..b {
        let t = qt.row(r);
        let s = qs.row(r);
        let mut g = ds.row_mut(r);
        match form {
            DistillForm::Kd => {
                // log q_s = logits − lse, so no logarithm per entry is needed
                let z = student.s.row(r);
                let cross: f64 = t.iter().zip(z).map(|(&t, &z)| t * z).sum::<f64>() / tau2;
                loss += lse[r] * t.sum() - cross;
                ndarray::Zip::from(&mut g).and(s).and(t).for_each(|g, &s, &t| *g = s - t);
            }
            DistillForm::Mse => {
                loss += distill_loss(t, s, form)?;
                // through the softmax Jacobian: ds = q ⊙ (dq − ⟨q, dq⟩) · τ2
                let dq = (&s - &t) * (2.0 / m as f64);
                let inner = s.dot(&dq);
                g.assign(&(&s * &(dq - inner)));
            }
            DistillForm::LiteralEq5 => {
                let p = student.positive[r];
                loss += -t[p] * (student.s[[r, p]] / tau2 - lse[r]);
                g.assign(&(&s * t[p]));
                g[p] -= t[p];
            }
            _ => unreachable!(),
        }
    }
    ds /= tau2 * b as f64;
    Ok((loss / b as f64, ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::{l2_normalize_rows, similarities, Negatives};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit_rows(n: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
        l2_normalize_rows(&Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal))).0
    }

    #[test]
    fn distribution_examples() {
        let p = distill_distribution(array![1.0, 0.0].view(), array![1.0, 0.0].view(), array![[0.0, 1.0]].view(), 1.0)
            .unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(p[0], e / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 1.0 / (e + 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 0.7311, epsilon = 1e-4);

        // every similarity equal
        let q = array![1.0, 0.0, 0.0];
        let negs = array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]];
        let p = distill_distribution(q.view(), array![0.0, 0.0, 1.0].view(), negs.view(), 5.0).unwrap();
        for v in p.iter() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-12);
        }
        assert!(distill_distribution(q.view(), q.view(), negs.view(), 0.0).is_err());
    }

    #[test]
    fn distribution_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = unit_rows(2, 8, &mut rng);
        let negs = unit_rows(30, 8, &mut rng);
        let p = distill_distribution(v.row(0), v.row(1), negs.view(), 0.3).unwrap();
        assert!((p.sum() - 1.0).abs() <= 1e-9);
        assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn loss_examples() {
        let kd = distill_loss(array![1.0, 0.0].view(), array![0.5, 0.5].view(), DistillForm::Kd).unwrap();
        assert_abs_diff_eq!(kd, 2f64.ln(), epsilon = 1e-12);
        let t = array![0.2, 0.3, 0.5];
        let entropy = -t.iter().map(|&x: &f64| x * x.ln()).sum::<f64>();
        assert_abs_diff_eq!(distill_loss(t.view(), t.view(), DistillForm::Kd).unwrap(), entropy, epsilon = 1e-12);
        assert_eq!(distill_loss(t.view(), t.view(), DistillForm::Mse).unwrap(), 0.0);
        let lit = distill_loss(t.view(), array![0.4, 0.3, 0.3].view(), DistillForm::LiteralEq5).unwrap();
        assert_abs_diff_eq!(lit, -0.2 * 0.4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn loss_errors() {
        let t = array![0.5, 0.5];
        assert!(matches!(
            distill_loss(t.view(), array![1.0].view(), DistillForm::Kd),
            Err(Error::InvalidArgument(_))
        ));
        for form in [DistillForm::Atkd, DistillForm::Dkd] {
            assert!(matches!(distill_loss(t.view(), t.view(), form), Err(Error::NotImplemented(_))));
        }
    }

    fn batch_case(seed: u64, in_batch: bool) -> (Similarities, Similarities) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = unit_rows(5, 6, &mut rng);
        let qt = unit_rows(5, 6, &mut rng);
        let qs = unit_rows(5, 6, &mut rng);
        let queue = unit_rows(9, 6, &mut rng);
        let neg = if in_batch { Negatives::InBatch } else { Negatives::Queue(queue.view()) };
        let t = similarities(&qt, &target, neg).unwrap();
        let s = similarities(&qs, &target, neg).unwrap();
        (t, s)
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        for form in [DistillForm::Kd, DistillForm::Mse, DistillForm::LiteralEq5] {
            for in_batch in [false, true] {
                let (t, s) = batch_case(3, in_batch);
                let tau2 = 0.7;
                let (_, ds) = distill_batch(&t, &s, tau2, form).unwrap();
                let h = 1e-6;
                for r in 0..s.s.nrows() {
                    for c in 0..s.s.ncols() {
                        let mut plus = s.clone();
                        let mut minus = s.clone();
                        plus.s[[r, c]] += h;
                        minus.s[[r, c]] -= h;
                        let fd = (distill_batch(&t, &plus, tau2, form).unwrap().0
                            - distill_batch(&t, &minus, tau2, form).unwrap().0)
                            / (2.0 * h);
                        assert!((fd - ds[[r, c]]).abs() <= 1e-7 + 1e-5 * fd.abs(), "{form:?} {r},{c}: {fd} vs {}", ds[[r, c]]);
                    }
                }
            }
        }
    }

    #[test]
    fn kd_gradient_vanishes_only_at_teacher() {
        let (t, s) = batch_case(4, false);
        let (_, at_teacher) = distill_batch(&t, &t, 5.0, DistillForm::Kd).unwrap();
        assert!(at_teacher.iter().all(|v| v.abs() <= 1e-15));
        let (_, perturbed) = distill_batch(&t, &s, 5.0, DistillForm::Kd).unwrap();
        assert!(perturbed.iter().any(|v| v.abs() > 1e-6));
    }
}
