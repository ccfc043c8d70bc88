use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::slimnet::{Grads, ParamStore, PartitionMap, SlimModel};

/// Per-step gradient record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSnapshot {
    pub step: u64,
    #[serde(default)]
    pub epoch: usize,
    /// Layer-wise ℓ2 norms per partition key, for layers that intersect it.
    pub partition_norms: BTreeMap<String, Vec<f64>>,
    /// Flattened gradient of the last linear layer, when captured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_layer: Option<Vec<f64>>,
    /// Where the last-layer gradient was written when it is stored outside
    /// the log line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_layer_ref: Option<VectorRef>,
}

/// A run of little-endian `f64` values inside a side file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorRef {
    /// File name relative to the log's directory.
    pub file: String,
    /// Offset in values, not bytes.
    pub offset: u64,
    pub len: usize,
}

impl VectorRef {
    pub fn read(&self, dir: &Path) -> Result<Vec<f64>> {
        let path = dir.join(&self.file);
        let mut f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        f.seek(SeekFrom::Start(self.offset * 8)).map_err(|e| Error::io(&path, e))?;
        let mut bytes = vec![0u8; self.len * 8];
        f.read_exact(&mut bytes).map_err(|e| Error::io(&path, e))?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

impl GradSnapshot {
    pub fn capture(
        step: u64,
        epoch: usize,
        partition: &PartitionMap,
        store: &ParamStore,
        grads: &Grads,
        model: Option<&SlimModel>,
    ) -> Self {
        let partition_norms = partition
            .keyed_sets()
            .into_iter()
            .map(|(k, set)| {
                let norms = partition.layer_norms(store, grads, &set).into_iter().map(|(_, n)| n).collect();
                (k, norms)
            })
            .collect();
        // weight then bias, flattened
        let last_layer = model.and_then(|m| {
            let layer = m.last_linear();
            let w = layer.weight()?;
            let ids = std::iter::once(w).chain(layer.bias());
            Some(ids.flat_map(|id| grads.tensors[id].iter().copied()).collect())
        });
        Self {
            step,
            epoch,
            partition_norms,
            last_layer,
            last_layer_ref: None,
        }
    }

    /// Unweighted mean of the layer norms of a partition.
    pub fn network_norm(&self, key: &str) -> Result<f64> {
        let norms = self
            .partition_norms
            .get(key)
            .ok_or_else(|| invalid!("unknown partition {key:?}"))?;
        if norms.is_empty() {
            return Err(invalid!("partition {key:?} is empty"));
        }
        Ok(norms.iter().sum::<f64>() / norms.len() as f64)
    }

    /// Mean layer norm of every partition.
    pub fn network_norms(&self) -> BTreeMap<String, f64> {
        self.partition_norms
            .keys()
            .filter_map(|k| self.network_norm(k).ok().map(|v| (k.clone(), v)))
            .collect()
    }
}

/// A norm ratio; a zero denominator yields `+∞` with the flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRatio {
    pub value: f64,
    pub zero_denominator: bool,
}

pub fn grad_norm_ratio(snapshot: &GradSnapshot, numerator: &str, denominator: &str) -> Result<NormRatio> {
    let num = snapshot.network_norm(numerator)?;
    let den = snapshot.network_norm(denominator)?;
    Ok(if den == 0.0 {
        NormRatio {
            value: f64::INFINITY,
            zero_denominator: true,
        }
    } else {
        NormRatio {
            value: num / den,
            zero_denominator: false,
        }
    })
}

/// Median of the finite values, or `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
