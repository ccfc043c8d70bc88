use ndarray::{Array2, Axis};

use crate::contrastive::check_unit;
use crate::error::{invalid, Result};

/// Default neighbor count.
pub const DEFAULT_K: usize = 20;

fn check_rows(f: &Array2<f64>, what: &str) -> Result<()> {
    for (i, r) in f.axis_iter(Axis(0)).enumerate() {
        check_unit(r, &format!("{what} row {i}"))?;
    }
    Ok(())
}

/// Cosine k-NN majority vote for each query row.
///
/// Neighbors are ranked by similarity, ties by reference index; vote ties go
/// to the smallest class. With `exclude_self`, queries and references must be
/// the same set and query `i` never counts reference `i`.
pub fn knn_predict(
    reference: &Array2<f64>,
    reference_labels: &[usize],
    queries: &Array2<f64>,
    k: usize,
    exclude_self: bool,
) -> Result<Vec<usize>> {
    if reference.nrows() != reference_labels.len() {
        return Err(invalid!("{} reference rows, {} labels", reference.nrows(), reference_labels.len()));
    }
    if reference.ncols() != queries.ncols() {
        return Err(invalid!("reference and query dimensions differ"));
    }
    if exclude_self && reference.nrows() != queries.nrows() {
        return Err(invalid!("self-exclusion needs queries identical to the reference set"));
    }
    let available = reference.nrows() - usize::from(exclude_self);
    if k == 0 || k > available {
        return Err(invalid!("k = {k} must lie in [1, {available}]"));
    }
    check_rows(reference, "reference")?;
    check_rows(queries, "query")?;
    let classes = reference_labels.iter().copied().max().map_or(0, |m| m + 1);
    let sims = queries.dot(&reference.t());
    let mut out = Vec::with_capacity(queries.nrows());
    let mut order: Vec<usize> = Vec::with_capacity(reference.nrows());
    for (qi, row) in sims.axis_iter(Axis(0)).enumerate() {
        order.clear();
        order.extend((0..reference.nrows()).filter(|&j| !(exclude_self && j == qi)));
        order.select_nth_unstable_by(k - 1, |&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        let mut votes = vec![0usize; classes];
        for &j in &order[..k] {
            votes[reference_labels[j]] += 1;
        }
        let best = votes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(c, _)| c);
        out.push(best);
    }
    Ok(out)
}

/// Top-1 accuracy of [`knn_predict`] on labelled queries.
pub fn knn_eval(
    train: &Array2<f64>,
    train_labels: &[usize],
    test: &Array2<f64>,
    test_labels: &[usize],
    k: usize,
    exclude_self: bool,
) -> Result<f64> {
    if test.nrows() != test_labels.len() {
        return Err(invalid!("{} test rows, {} labels", test.nrows(), test_labels.len()));
    }
    if test.nrows() == 0 {
        return Err(invalid!("no test queries"));
    }
    let pred = knn_predict(train, train_labels, test, k, exclude_self)?;
    let hits = pred.iter().zip(test_labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / test.nrows() as f64)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::l2_normalize_rows;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn clusters(n: usize, classes: usize, spread: f64, rng: &mut impl Rng) -> (Array2<f64>, Vec<usize>) {
        let d = 16;
        let centers = Array2::from_shape_fn((classes, d), |_| rng.sample::<f64, _>(StandardNormal) * 5.0);
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let x = Array2::from_shape_fn((n, d), |(i, j)| centers[[labels[i], j]] + spread * rng.sample::<f64, _>(StandardNormal));
        (l2_normalize_rows(&x).0, labels)
    }

    #[test]
    fn separated_clusters_k1() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, y) = clusters(200, 2, 0.1, &mut rng);
        assert_eq!(knn_eval(&x, &y, &x, &y, 1, true).unwrap(), 1.0);
    }

    #[test]
    fn permuted_labels_are_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (train, mut yt) = clusters(2000, 10, 1.0, &mut rng);
        yt.shuffle(&mut rng);
        let (test, ys) = clusters(1000, 10, 1.0, &mut rng);
        let acc = knn_eval(&train, &yt, &test, &ys, 20, false).unwrap();
        assert!((0.05..=0.15).contains(&acc), "{acc}");
    }

    #[test]
    fn full_k_is_global_majority() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, _) = clusters(30, 3, 1.0, &mut rng);
        let mut y = vec![0; 30];
        for (i, l) in y.iter_mut().enumerate() {
            *l = if i < 14 { 2 } else if i < 22 { 0 } else { 1 };
        }
        let pred = knn_predict(&x, &y, &x, 30, false).unwrap();
        assert!(pred.iter().all(|&p| p == 2));
    }

    #[test]
    fn ties_go_to_smallest_class() {
        let x = l2_normalize_rows(&ndarray::array![[1.0, 0.0], [1.0, 0.1], [1.0, -0.1]]).0;
        let q = l2_normalize_rows(&ndarray::array![[1.0, 0.0]]).0;
        let pred = knn_predict(&x.slice(ndarray::s![1.., ..]).to_owned(), &[3, 1], &q, 2, false).unwrap();
        assert_eq!(pred, vec![1]);
    }

    #[test]
    fn rejects_bad_k_and_unnormalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y) = clusters(10, 2, 1.0, &mut rng);
        assert!(knn_predict(&x, &y, &x, 11, false).is_err());
        assert!(knn_predict(&x, &y, &x, 10, true).is_err());
        assert!(knn_predict(&x, &y, &x, 0, false).is_err());
        let raw = &x * 2.0;
        assert!(knn_predict(&raw, &y, &x, 1, false).is_err());
    }
}
