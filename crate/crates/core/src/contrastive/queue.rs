use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::loss::{check_unit, l2_normalize_rows};
use crate::error::{invalid, Result};

/// Fixed-capacity FIFO of unit-norm momentum keys used as negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    buffer: Array2<f64>,
    cursor: usize,
    len: usize,
}

impl NegativeQueue {
    /// An empty queue of `capacity` keys of dimension `dim`.
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(invalid!("queue capacity and dimension must be positive"));
        }
        Ok(Self {
            buffer: Array2::zeros((capacity, dim)),
            cursor: 0,
            len: 0,
        })
    }

    /// A full queue of random unit vectors.
    pub fn random(capacity: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut q = Self::new(capacity, dim)?;
        let z = Array2::from_shape_fn((capacity, dim), |_| rng.sample::<f64, _>(StandardNormal));
        q.buffer = l2_normalize_rows(&z).0;
        q.len = capacity;
        Ok(q)
    }

    /// Rebuilds a queue from its raw parts (checkpoint restore).
    pub fn from_parts(buffer: Array2<f64>, cursor: usize, len: usize) -> Result<Self> {
        let k = buffer.nrows();
        if k == 0 || cursor >= k || len > k {
            return Err(invalid!("inconsistent queue state"));
        }
        Ok(Self { buffer, cursor, len })
    }

    pub fn capacity(&self) -> usize {
        self.buffer.nrows()
    }

    pub fn dim(&self) -> usize {
        self.buffer.ncols()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Raw ring buffer, in storage order.
    pub fn buffer(&self) -> &Array2<f64> {
        &self.buffer
    }

    /// Filled rows usable as negatives. Order is storage order; the loss is
    /// invariant to the order of negatives.
    pub fn negatives(&self) -> ArrayView2<'_, f64> {
        self.buffer.slice(s![..self.len, ..])
    }

    /// Keys from oldest to newest.
    pub fn logical(&self) -> Array2<f64> {
        let k = self.capacity();
        let start = if self.len < k { 0 } else { self.cursor };
        let order: Vec<usize> = (0..self.len).map(|i| (start + i) % k).collect();
        self.buffer.select(Axis(0), &order)
    }

    /// Appends `keys`, overwriting the oldest entries once full.
    pub fn enqueue(&mut self, keys: ArrayView2<f64>) -> Result<()> {
        let k = self.capacity();
        if keys.ncols() != self.dim() {
            return Err(invalid!("key dimension {} != queue dimension {}", keys.ncols(), self.dim()));
        }
        if keys.nrows() > k {
            return Err(invalid!("batch of {} keys exceeds queue capacity {k}", keys.nrows()));
        }
        for (i, row) in keys.axis_iter(Axis(0)).enumerate() {
            check_unit(row, &format!("key {i}"))?;
        }
        for row in keys.axis_iter(Axis(0)) {
            self.buffer.row_mut(self.cursor).assign(&row);
            self.cursor = (self.cursor + 1) % k;
            self.len = (self.len + 1).min(k);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basis(i: usize) -> Array2<f64> {
        let mut a = Array2::zeros((1, 6));
        a[[0, i]] = 1.0;
        a
    }

    #[test]
    fn fifo_replacement() {
        let mut q = NegativeQueue::new(4, 6).unwrap();
        for i in 0..4 {
            q.enqueue(basis(i).view()).unwrap();
        }
        let mut ef = Array2::zeros((2, 6));
        ef[[0, 4]] = 1.0;
        ef[[1, 5]] = 1.0;
        q.enqueue(ef.view()).unwrap();
        let logical = q.logical();
        let firsts: Vec<usize> = logical
            .rows()
            .into_iter()
            .map(|r| r.iter().position(|&v| v == 1.0).unwrap())
            .collect();
        assert_eq!(firsts, vec![2, 3, 4, 5]);
        assert_eq!(q.len(), 4);
        assert_eq!(q.capacity(), 4);
    }

    #[test]
    fn enqueue_full_capacity_replaces_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = NegativeQueue::random(3, 2, &mut rng).unwrap();
        let keys = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        q.enqueue(keys.view()).unwrap();
        assert_eq!(q.logical(), keys);
    }

    #[test]
    fn rejects_oversized_batch_and_non_unit_keys() {
        let mut q = NegativeQueue::new(2, 2).unwrap();
        let keys = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        assert!(q.enqueue(keys.view()).is_err());
        let bad = array![[2.0, 0.0]];
        assert!(q.enqueue(bad.view()).is_err());
        let wrong_dim = array![[1.0, 0.0, 0.0]];
        assert!(q.enqueue(wrong_dim.view()).is_err());
    }

    #[test]
    fn random_queue_rows_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = NegativeQueue::random(16, 5, &mut rng).unwrap();
        for r in q.negatives().rows() {
            assert!((r.dot(&r) - 1.0).abs() < 1e-12);
        }
    }
}
