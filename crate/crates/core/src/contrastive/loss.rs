use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{invalid, Result};

/// Allowed deviation of a "unit" vector's norm from 1.
pub const UNIT_TOL: f64 = 1e-5;

pub(crate) fn check_unit(v: ArrayView1<f64>, what: &str) -> Result<()> {
    let n = v.dot(&v).sqrt();
    if (n - 1.0).abs() > UNIT_TOL || !n.is_finite() {
        return Err(invalid!("{what} is not unit-norm (norm {n})"));
    }
    Ok(())
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid!("temperature must be positive, got {tau}"));
    }
    Ok(())
}

/// Numerically stable `log Σ exp(x)`.
pub(crate) fn log_sum_exp(x: ArrayView1<f64>) -> f64 {
    let m = x.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.mapv(|v| (v - m).exp()).sum().ln()
}

pub(crate) fn softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let lse = log_sum_exp(x);
    x.mapv(|v| (v - lse).exp())
}

pub(crate) fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    softmax_rows_lse(x.clone()).0
}

/// Row-wise softmax (in place) and log-sum-exp, one exponential per entry.
pub(crate) fn softmax_rows_lse(x: Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let mut out = x;
    let mut lse = Array1::zeros(out.nrows());
    for (mut row, l) in out.axis_iter_mut(Axis(0)).zip(lse.iter_mut()) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - m).exp();
            sum += e;
            e
        });
        row /= sum;
        *l = m + sum.ln();
    }
    (out, lse)
}

/// InfoNCE for a single query against one positive and a set of negatives
/// (rows of `negatives`), all unit-norm.
///
/// Returns `-log(exp(s⁺/τ) / (exp(s⁺/τ) + Σ exp(s⁻/τ)))`.
pub fn info_nce(query: ArrayView1<f64>, positive: ArrayView1<f64>, negatives: ArrayView2<f64>, tau: f64) -> Result<f64> {
    Ok(info_nce_with_grad(query, positive, negatives, tau)?.0)
}

/// [`info_nce`] plus its gradient w.r.t. the query. The positive and the
/// negatives are constants.
pub fn info_nce_with_grad(
    query: ArrayView1<f64>,
    positive: ArrayView1<f64>,
    negatives: ArrayView2<f64>,
    tau: f64,
) -> Result<(f64, Array1<f64>)> {
    check_tau(tau)?;
    let d = query.len();
    if positive.len() != d || negatives.ncols() != d {
        return Err(invalid!("dimension mismatch between query, positive and negatives"));
    }
    if negatives.nrows() == 0 {
        return Err(invalid!("at least one negative is required"));
    }
    check_unit(query, "query")?;
    check_unit(positive, "positive")?;
    for (i, n) in negatives.axis_iter(Axis(0)).enumerate() {
        check_unit(n, &format!("negative {i}"))?;
    }
    let mut logits = Array1::zeros(1 + negatives.nrows());
    logits[0] = positive.dot(&query) / tau;
    for (i, n) in negatives.axis_iter(Axis(0)).enumerate() {
        logits[1 + i] = n.dot(&query) / tau;
    }
    let loss = log_sum_exp(logits.view()) - logits[0];
    let p = softmax(logits.view());
    let mut grad = positive.to_owned() * ((p[0] - 1.0) / tau);
    for (i, n) in negatives.axis_iter(Axis(0)).enumerate() {
        grad.scaled_add(p[1 + i] / tau, &n);
    }
    Ok((loss, grad))
}

/// Where the negatives of a batch come from.
#[derive(Debug, Clone, Copy)]
pub enum Negatives<'a> {
    /// Rows of a memory queue, shared by every query (MoCo v2 style).
    Queue(ArrayView2<'a, f64>),
    /// The other momentum targets of the same batch (MoCo v3 style).
    InBatch,
}

/// Query-key similarity matrix of a batch.
///
/// For [`Negatives::Queue`] column 0 holds the positive and columns `1..`
/// the queue; for [`Negatives::InBatch`] column `j` is target `j` and the
/// positive of row `b` sits at column `b`.
#[derive(Debug, Clone)]
pub struct Similarities {
    pub s: Array2<f64>,
    pub positive: Vec<usize>,
}

pub fn similarities(query: &Array2<f64>, target: &Array2<f64>, negatives: Negatives) -> Result<Similarities> {
    let (b, d) = query.dim();
    if target.dim() != (b, d) {
        return Err(invalid!("query {:?} and target {:?} shapes differ", query.dim(), target.dim()));
    }
    match negatives {
        Negatives::Queue(q) => {
            if q.ncols() != d {
                return Err(invalid!("queue dimension {} != feature dimension {d}", q.ncols()));
            }
            if q.nrows() == 0 {
                return Err(invalid!("negative queue is empty"));
            }
            let mut s = Array2::zeros((b, 1 + q.nrows()));
            let pos = (query * target).sum_axis(Axis(1));
            s.column_mut(0).assign(&pos);
            s.slice_mut(ndarray::s![.., 1..]).assign(&query.dot(&q.t()));
            Ok(Similarities {
                s,
                positive: vec![0; b],
            })
        }
        Negatives::InBatch => {
            if b < 2 {
                return Err(invalid!("in-batch negatives need a batch of at least 2"));
            }
            Ok(Similarities {
                s: query.dot(&target.t()),
                positive: (0..b).collect(),
            })
        }
    }
}

/// Maps a gradient w.r.t. the similarity matrix back onto the queries.
pub fn similarity_backward(ds: &Array2<f64>, target: &Array2<f64>, negatives: Negatives) -> Array2<f64> {
    match negatives {
        Negatives::Queue(q) => {
            let mut dq = ds.slice(ndarray::s![.., 1..]).dot(&q);
            let pos = ds.column(0).insert_axis(Axis(1));
            dq += &(target * &pos);
            dq
        }
        Negatives::InBatch => ds.dot(target),
    }
}

/// Batch-mean InfoNCE over a similarity matrix and its gradient w.r.t. `s`.
pub fn info_nce_batch(sim: &Similarities, tau: f64) -> Result<(f64, Array2<f64>)> {
    check_tau(tau)?;
    let b = sim.s.nrows() as f64;
    let (mut probs, lse) = softmax_rows_lse(&sim.s / tau);
    let mut loss = 0.0;
    for (r, &p) in sim.positive.iter().enumerate() {
        loss += lse[r] - sim.s[[r, p]] / tau;
        probs[[r, p]] -= 1.0;
    }
    probs /= tau * b;
    Ok((loss / b, probs))
}

/// Row-wise ℓ2 normalization; returns the normalized rows and the norms.
pub fn l2_normalize_rows(z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = z.mapv(|v| v * v).sum_axis(Axis(1)).mapv(|v| v.sqrt().max(1e-12));
    let zbar = z / &norms.view().insert_axis(Axis(1));
    (zbar, norms)
}

/// Gradient through `z̄ = z / ‖z‖` given `dL/dz̄`.
pub fn l2_normalize_backward(zbar: &Array2<f64>, norms: &Array1<f64>, dzbar: &Array2<f64>) -> Array2<f64> {
    let dot = (zbar * dzbar).sum_axis(Axis(1)).insert_axis(Axis(1));
    (dzbar - &(zbar * &dot)) / &norms.view().insert_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn unit_rows(n: usize, d: usize, rng: &mut impl Rng) -> Array2<f64> {
        let z = Array2::from_shape_fn((n, d), |_| rng.sample(StandardNormal));
        l2_normalize_rows(&z).0
    }

    #[test]
    fn scalar_example() {
        let q = array![1.0, 0.0];
        let pos = array![1.0, 0.0];
        let neg = array![[0.0, 1.0]];
        let l = info_nce(q.view(), pos.view(), neg.view(), 1.0).unwrap();
        // ln(1 + e^{-1})
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn uniform_similarities_give_log_k_plus_one() {
        // every key orthogonal to the query
        let q = array![1.0, 0.0, 0.0, 0.0, 0.0];
        let pos = array![0.0, 1.0, 0.0, 0.0, 0.0];
        let neg = array![[0.0, 0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0, 1.0]];
        let l = info_nce(q.view(), pos.view(), neg.view(), 0.2).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let q = array![1.0, 0.0];
        let neg = array![[0.0, 1.0]];
        assert!(info_nce(q.view(), q.view(), neg.view(), 0.0).is_err());
        assert!(info_nce(q.view(), q.view(), neg.view(), -1.0).is_err());
        let long = array![2.0, 0.0];
        assert!(info_nce(long.view(), q.view(), neg.view(), 1.0).is_err());
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(info_nce(q.view(), q.view(), empty.view(), 1.0).is_err());
    }

    #[test]
    fn query_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let d = 6;
            let q = unit_rows(1, d, &mut rng).row(0).to_owned();
            let p = unit_rows(1, d, &mut rng).row(0).to_owned();
            let negs = unit_rows(9, d, &mut rng);
            let tau = 0.2 + rng.random::<f64>();
            let (_, g) = info_nce_with_grad(q.view(), p.view(), negs.view(), tau).unwrap();
            // the loss is defined on unit queries; differentiate its unconstrained
            // extension (logsumexp of dot products) directly
            let f = |q: &Array1<f64>| {
                let mut logits = vec![p.dot(q) / tau];
                logits.extend(negs.rows().into_iter().map(|n| n.dot(q) / tau));
                let l = Array1::from(logits);
                log_sum_exp(l.view()) - l[0]
            };
            let h = 1e-5;
            for k in 0..d {
                let mut a = q.clone();
                let mut b = q.clone();
                a[k] += h;
                b[k] -= h;
                let fd = (f(&a) - f(&b)) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-4 * fd.abs().max(1e-3), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn batch_matches_scalar_queue_and_in_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (b, d, k) = (5, 4, 7);
        let q = unit_rows(b, d, &mut rng);
        let t = unit_rows(b, d, &mut rng);
        let queue = unit_rows(k, d, &mut rng);
        let tau = 0.3;

        let sim = similarities(&q, &t, Negatives::Queue(queue.view())).unwrap();
        let (loss, ds) = info_nce_batch(&sim, tau).unwrap();
        let dq = similarity_backward(&ds, &t, Negatives::Queue(queue.view()));
        let mut expected = 0.0;
        for r in 0..b {
            let (l, g) = info_nce_with_grad(q.row(r), t.row(r), queue.view(), tau).unwrap();
            expected += l / b as f64;
            for c in 0..d {
                assert!((dq[[r, c]] - g[c] / b as f64).abs() < 1e-12);
            }
        }
        assert!((loss - expected).abs() < 1e-12);

        let sim = similarities(&q, &t, Negatives::InBatch).unwrap();
        let (loss, _) = info_nce_batch(&sim, tau).unwrap();
        let mut expected = 0.0;
        for r in 0..b {
            let others: Vec<usize> = (0..b).filter(|&j| j != r).collect();
            let negs = t.select(Axis(0), &others);
            expected += info_nce(q.row(r), t.row(r), negs.view(), tau).unwrap() / b as f64;
        }
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn batch_of_two_has_one_in_batch_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = unit_rows(2, 3, &mut rng);
        let t = unit_rows(2, 3, &mut rng);
        let sim = similarities(&q, &t, Negatives::InBatch).unwrap();
        assert_eq!(sim.s.ncols() - 1, 1);
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Array2::from_shape_fn((3, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let w = Array2::from_shape_fn((3, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let (zbar, norms) = l2_normalize_rows(&z);
        let dz = l2_normalize_backward(&zbar, &norms, &w);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let mut a = z.clone();
                let mut b = z.clone();
                a[[i, j]] += h;
                b[[i, j]] -= h;
                let fd = ((&l2_normalize_rows(&a).0 * &w).sum() - (&l2_normalize_rows(&b).0 * &w).sum()) / (2.0 * h);
                assert!((fd - dz[[i, j]]).abs() < 1e-7);
            }
        }
    }
}
