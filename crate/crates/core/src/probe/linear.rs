use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::contrastive::{log_sum_exp, softmax_rows};
use crate::error::{invalid, Result};

/// How the probe heads of the different widths relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    /// An independent head per width.
    Switchable,
    /// One head; each width uses the leading rows that match its features.
    Slimmable,
}

/// Linear classifier(s) on frozen features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeHead {
    pub mode: ProbeMode,
    pub widths: Vec<f64>,
    /// Feature dimension per width, non-increasing.
    pub dims: Vec<usize>,
    pub classes: usize,
    /// `d_w × C` weights: one per width (switchable) or a single full one.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl ProbeHead {
    pub fn new(mode: ProbeMode, widths: Vec<f64>, dims: Vec<usize>, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        if widths.is_empty() || widths.len() != dims.len() {
            return Err(invalid!("{} widths for {} feature dimensions", widths.len(), dims.len()));
        }
        if classes < 2 {
            return Err(invalid!("a probe needs at least two classes"));
        }
        if dims.windows(2).any(|p| p[1] > p[0]) || dims.contains(&0) {
            return Err(invalid!("feature dimensions {dims:?} must be positive and non-increasing"));
        }
        let mut init = |d: usize| {
            let std = 0.01;
            Array2::from_shape_fn((d, classes), |_| std * rng.sample::<f64, _>(StandardNormal))
        };
        let (weights, biases) = match mode {
            ProbeMode::Switchable => (
                dims.iter().map(|&d| init(d)).collect(),
                dims.iter().map(|_| Array1::zeros(classes)).collect(),
            ),
            ProbeMode::Slimmable => (vec![init(dims[0])], vec![Array1::zeros(classes)]),
        };
        Ok(Self {
            mode,
            widths,
            dims,
            classes,
            weights,
            biases,
        })
    }

    fn slot(&self, width_idx: usize) -> usize {
        match self.mode {
            ProbeMode::Switchable => width_idx,
            ProbeMode::Slimmable => 0,
        }
    }

    fn check_features(&self, features: &[Array2<f64>]) -> Result<()> {
        if features.len() != self.widths.len() {
            return Err(invalid!("{} feature sets for {} widths", features.len(), self.widths.len()));
        }
        for (i, f) in features.iter().enumerate() {
            if f.ncols() != self.dims[i] {
                return Err(invalid!("width {} features have {} columns, head expects {}", self.widths[i], f.ncols(), self.dims[i]));
            }
            if f.nrows() != features[0].nrows() {
                return Err(invalid!("feature sets have different row counts"));
            }
        }
        Ok(())
    }

    pub fn logits(&self, width_idx: usize, features: &Array2<f64>) -> Result<Array2<f64>> {
        let d = *self
            .dims
            .get(width_idx)
            .ok_or_else(|| invalid!("width index {width_idx} out of range"))?;
        if features.ncols() != d {
            return Err(invalid!("features have {} columns, head expects {d}", features.ncols()));
        }
        let k = self.slot(width_idx);
        Ok(features.dot(&self.weights[k].slice(s![..d, ..])) + &self.biases[k])
    }
}

/// Training settings for [`linear_probe_train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Distill from the full-width logits into every sub-width head.
    pub distill: bool,
    pub tau2: f64,
    pub seed: u64,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.1,
            batch_size: 256,
            momentum: 0.9,
            weight_decay: 0.0,
            distill: true,
            tau2: 1.0,
            seed: 0,
        }
    }
}

/// Accuracy of one width's probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthAccuracy {
    pub width: f64,
    pub top1: f64,
    /// Only reported with at least five classes.
    pub top5: Option<f64>,
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(invalid!("{} labels for {n} rows", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(invalid!("label {bad} out of range for {classes} classes"));
    }
    Ok(())
}

/// Cross-entropy SGD on frozen features; `features[i]` belongs to width `i`.
///
/// The objective is `CE_1 + Σ_{i≥2} (CE_i + KD_i)/2` with distillation and
/// `Σ_i CE_i` without. Returns the final mean training loss.
pub fn linear_probe_train(
    features: &[Array2<f64>],
    labels: &[usize],
    head: &mut ProbeHead,
    cfg: &ProbeTrainConfig,
) -> Result<f64> {
    head.check_features(features)?;
    let n = features[0].nrows();
    check_labels(labels, n, head.classes)?;
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !(cfg.tau2 > 0.0) {
        return Err(invalid!("batch_size, lr and tau2 must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut vel_w: Vec<Array2<f64>> = head.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
    let mut vel_b: Vec<Array1<f64>> = head.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch).max(1);
    let mut step = 0;
    let mut last_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let lr = 0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos());
            let b = chunk.len() as f64;
            let mut gw: Vec<Array2<f64>> = head.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
            let mut gb: Vec<Array1<f64>> = head.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
            let mut teacher: Option<Array2<f64>> = None;
            let mut loss = 0.0;
            for wi in 0..head.widths.len() {
                let x = features[wi].select(Axis(0), chunk);
                let z = head.logits(wi, &x)?;
                let mut dz = softmax_rows(&z);
                let mut ce = 0.0;
                for (r, &idx) in chunk.iter().enumerate() {
                    let y = labels[idx];
                    ce += log_sum_exp(z.row(r)) - z[[r, y]];
                    dz[[r, y]] -= 1.0;
                }
                ce /= b;
                dz /= b;
                if wi == 0 {
                    loss += ce;
                    if cfg.distill {
                        teacher = Some(softmax_rows(&(&z / cfg.tau2)));
                    }
                } else if let Some(t) = &teacher {
                    let qs = softmax_rows(&(&z / cfg.tau2));
                    let kd = -(t * &qs.mapv(|v| v.max(1e-300).ln())).sum() / b;
                    loss += (ce + kd) / 2.0;
                    dz = (dz + (&qs - t) / (cfg.tau2 * b)) / 2.0;
                } else {
                    loss += ce;
                }
                let k = head.slot(wi);
                let d = head.dims[wi];
                let mut gslice = gw[k].slice_mut(s![..d, ..]);
                gslice += &x.t().dot(&dz);
                gb[k] += &dz.sum_axis(Axis(0));
            }
            for k in 0..head.weights.len() {
                let g = &gw[k] + &(&head.weights[k] * cfg.weight_decay);
                vel_w[k] = &vel_w[k] * cfg.momentum + &g;
                head.weights[k].scaled_add(-lr, &vel_w[k]);
                vel_b[k] = &vel_b[k] * cfg.momentum + &gb[k];
                head.biases[k].scaled_add(-lr, &vel_b[k]);
            }
            epoch_loss += loss * b;
            step += 1;
        }
        last_loss = epoch_loss / n as f64;
    }
    Ok(last_loss)
}

/// Top-1 (and top-5 when `C ≥ 5`) accuracy per width.
pub fn probe_accuracy(head: &ProbeHead, features: &[Array2<f64>], labels: &[usize]) -> Result<Vec<WidthAccuracy>> {
    head.check_features(features)?;
    check_labels(labels, features[0].nrows(), head.classes)?;
    let n = labels.len().max(1) as f64;
    let mut out = Vec::new();
    for wi in 0..head.widths.len() {
        let z = head.logits(wi, &features[wi])?;
        let (mut top1, mut top5) = (0usize, 0usize);
        for (r, &y) in labels.iter().enumerate() {
            let row = z.row(r);
            // rank of the true class: how many classes score strictly higher,
            // ties resolved toward the smaller index
            let rank = (0..head.classes)
                .filter(|&c| row[c] > row[y] || (row[c] == row[y] && c < y))
                .count();
            top1 += usize::from(rank == 0);
            top5 += usize::from(rank < 5);
        }
        out.push(WidthAccuracy {
            width: head.widths[wi],
            top1: top1 as f64 / n,
            top5: (head.classes >= 5).then(|| top5 as f64 / n),
        });
    }
    Ok(out)
}
