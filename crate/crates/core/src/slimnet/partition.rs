use std::collections::BTreeMap;

use ndarray::Dimension;

use super::store::{Grads, ParamStore};
use super::width::width_label;
use crate::error::{invalid, Result};

/// Membership mask over the flattened shared (weight and bias) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    mask: Vec<bool>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.mask.get(idx).copied().unwrap_or(false)
    }

    pub fn is_subset_of(&self, other: &ParamSet) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    pub fn difference(&self, other: &ParamSet) -> ParamSet {
        ParamSet {
            mask: self.mask.iter().zip(&other.mask).map(|(&a, &b)| a && !b).collect(),
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

/// Index sets `Θ_w` per width plus the set differences between widths.
///
/// Indices address the concatenation of all shared parameters in store
/// order; per-width normalization parameters are not part of any set.
#[derive(Debug, Clone)]
pub struct PartitionMap {
    widths: Vec<f64>,
    sets: Vec<ParamSet>,
    /// (param id, offset into the shared flattening) for each shared param.
    layout: Vec<(usize, usize)>,
    total: usize,
}

impl PartitionMap {
    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn total_shared(&self) -> usize {
        self.total
    }

    pub fn set(&self, width_idx: usize) -> &ParamSet {
        &self.sets[width_idx]
    }

    /// `Θ_{w_i} \ Θ_{w_j}`.
    pub fn difference(&self, i: usize, j: usize) -> ParamSet {
        self.sets[i].difference(&self.sets[j])
    }

    /// Every partition key with its set: one per width (`"1.0"`), and one per
    /// ordered pair `i < j` (`"1.0\0.25"`).
    pub fn keyed_sets(&self) -> BTreeMap<String, ParamSet> {
        let mut out = BTreeMap::new();
        for (i, &w) in self.widths.iter().enumerate() {
            out.insert(width_label(w), self.sets[i].clone());
            for j in (i + 1)..self.widths.len() {
                out.insert(partition_key(w, self.widths[j]), self.difference(i, j));
            }
        }
        out
    }

    /// Shared-parameter entries of `grads`, flattened in partition order.
    pub fn shared_flat(&self, grads: &Grads) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total);
        for &(pid, _) in &self.layout {
            out.extend(grads.tensors[pid].iter().copied());
        }
        out
    }

    /// Per-layer ℓ2 norms of `grads` restricted to `set`, for layers that
    /// intersect it, in store order.
    pub fn layer_norms(&self, store: &ParamStore, grads: &Grads, set: &ParamSet) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for &(pid, offset) in &self.layout {
            let param = store.param(pid);
            let g = &grads.tensors[pid];
            let mut sq = 0.0;
            let mut hit = false;
            for (k, v) in g.iter().enumerate() {
                if set.mask[offset + k] {
                    sq += v * v;
                    hit = true;
                }
            }
            if !hit {
                continue;
            }
            match out.last_mut() {
                Some((name, acc)) if *name == param.layer => *acc += sq,
                _ => out.push((param.layer.clone(), sq)),
            }
        }
        for (_, v) in &mut out {
            *v = v.sqrt();
        }
        out
    }
}

pub fn partition_key(outer: f64, inner: f64) -> String {
    format!("{}\\{}", width_label(outer), width_label(inner))
}

/// Computes the nested parameter partition of `store` for its widths.
pub fn param_partition(store: &ParamStore) -> Result<PartitionMap> {
    let widths = store.widths().widths().to_vec();
    let mut layout = Vec::new();
    let mut total = 0;
    for (pid, p) in store.params().iter().enumerate() {
        if p.role.is_shared() {
            layout.push((pid, total));
            total += p.value.len();
        }
    }
    let mut sets = Vec::with_capacity(widths.len());
    for &w in &widths {
        let mut mask = vec![false; total];
        for &(pid, offset) in &layout {
            let p = store.param(pid);
            let active = p.active_shape(w)?;
            let full = p.value.shape();
            // row-major flat index of every element inside the active prefix box
            for (k, idx) in ndarray::indices(full).into_iter().enumerate() {
                let inside = idx.slice().iter().zip(&active).all(|(&i, &a)| i < a);
                if inside {
                    mask[offset + k] = true;
                }
            }
        }
        sets.push(ParamSet { mask });
    }
    for (i, pair) in sets.windows(2).enumerate() {
        if !pair[1].is_subset_of(&pair[0]) {
            return Err(invalid!("partition for width index {} is not nested", i + 1));
        }
    }
    Ok(PartitionMap {
        widths,
        sets,
        layout,
        total,
    })
}
