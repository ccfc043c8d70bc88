use ndarray::{s, ArrayD, ArrayViewD, Axis, IxDyn, Slice};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Augmentation strengths. Every field at its zero value is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Std of additive Gaussian noise (vectors and images).
    pub noise_std: f64,
    /// Probability of zeroing each vector feature.
    pub mask_prob: f64,
    /// Vectors are scaled by a factor drawn from `[1 - s, 1 + s]`.
    pub scale_jitter: f64,
    /// Side of the square random crop; `None` keeps the full image.
    pub crop: Option<usize>,
    pub flip_prob: f64,
    /// Brightness and contrast factors are drawn from `[1 - s, 1 + s]`.
    pub color_jitter: f64,
    pub grayscale_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::identity()
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            noise_std: 0.0,
            mask_prob: 0.0,
            scale_jitter: 0.0,
            crop: None,
            flip_prob: 0.0,
            color_jitter: 0.0,
            grayscale_prob: 0.0,
        }
    }

    pub fn validate(&self, sample_shape: &[usize]) -> Result<()> {
        for (name, p) in [("mask_prob", self.mask_prob), ("flip_prob", self.flip_prob), ("grayscale_prob", self.grayscale_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid!("{name} = {p} is not a probability"));
            }
        }
        for (name, v) in [("noise_std", self.noise_std), ("scale_jitter", self.scale_jitter), ("color_jitter", self.color_jitter)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid!("{name} = {v} must be a finite nonnegative number"));
            }
        }
        if self.scale_jitter >= 1.0 || self.color_jitter >= 1.0 {
            return Err(invalid!("scale_jitter and color_jitter must be below 1"));
        }
        if let Some(c) = self.crop {
            if sample_shape.len() != 3 {
                return Err(invalid!("crop applies to images only"));
            }
            if c == 0 || c > sample_shape[1] || c > sample_shape[2] {
                return Err(invalid!("crop {c} does not fit a {}x{} image", sample_shape[1], sample_shape[2]));
            }
        }
        Ok(())
    }

    /// Shape of an augmented (or evaluation) sample.
    pub fn output_shape(&self, sample_shape: &[usize]) -> Vec<usize> {
        match (self.crop, sample_shape) {
            (Some(c), [ch, _, _]) => vec![*ch, c, c],
            _ => sample_shape.to_vec(),
        }
    }
}

/// One random draw `t ~ T` applied to a single sample (`[d]` or `[C, H, W]`).
pub fn augment(sample: ArrayViewD<f64>, cfg: &AugmentConfig, rng: &mut impl Rng) -> ArrayD<f64> {
    let mut out = match sample.ndim() {
        3 => augment_image(sample, cfg, rng),
        _ => augment_vector(sample, cfg, rng),
    };
    if cfg.noise_std > 0.0 {
        out.mapv_inplace(|v| v + cfg.noise_std * rng.sample::<f64, _>(StandardNormal));
    }
    out
}

fn augment_vector(sample: ArrayViewD<f64>, cfg: &AugmentConfig, rng: &mut impl Rng) -> ArrayD<f64> {
    let mut out = sample.to_owned();
    if cfg.scale_jitter > 0.0 {
        let f = rng.random_range(1.0 - cfg.scale_jitter..=1.0 + cfg.scale_jitter);
        out.mapv_inplace(|v| v * f);
    }
    if cfg.mask_prob > 0.0 {
        out.mapv_inplace(|v| if rng.random::<f64>() < cfg.mask_prob { 0.0 } else { v });
    }
    out
}

fn augment_image(sample: ArrayViewD<f64>, cfg: &AugmentConfig, rng: &mut impl Rng) -> ArrayD<f64> {
    let (h, w) = (sample.shape()[1], sample.shape()[2]);
    let mut out = match cfg.crop {
        Some(c) => {
            let y = rng.random_range(0..=h - c);
            let x = rng.random_range(0..=w - c);
            sample.slice(s![.., y..y + c, x..x + c]).to_owned().into_dyn()
        }
        None => sample.to_owned(),
    };
    if cfg.flip_prob > 0.0 && rng.random::<f64>() < cfg.flip_prob {
        out.invert_axis(Axis(2));
        out = out.as_standard_layout().into_owned();
    }
    if cfg.color_jitter > 0.0 {
        let j = cfg.color_jitter;
        let brightness = rng.random_range(1.0 - j..=1.0 + j);
        let contrast = rng.random_range(1.0 - j..=1.0 + j);
        let mean = out.mean().unwrap_or(0.0);
        out.mapv_inplace(|v| ((v * brightness - mean) * contrast + mean).clamp(0.0, 1.0));
    }
    if cfg.grayscale_prob > 0.0 && out.shape()[0] == 3 && rng.random::<f64>() < cfg.grayscale_prob {
        let gray = &out.index_axis(Axis(0), 0) * 0.299 + &out.index_axis(Axis(0), 1) * 0.587 + &out.index_axis(Axis(0), 2) * 0.114;
        for mut ch in out.axis_iter_mut(Axis(0)) {
            ch.assign(&gray);
        }
    }
    out
}

/// Deterministic evaluation transform: center crop when cropping is on.
pub fn eval_view(sample: ArrayViewD<f64>, cfg: &AugmentConfig) -> ArrayD<f64> {
    match (cfg.crop, sample.ndim()) {
        (Some(c), 3) => {
            let (h, w) = (sample.shape()[1], sample.shape()[2]);
            let (y, x) = ((h - c) / 2, (w - c) / 2);
            sample.slice(s![.., y..y + c, x..x + c]).to_owned().into_dyn()
        }
        _ => sample.to_owned(),
    }
}

/// Applies [`eval_view`] to every sample of a batch `[N, ...]`.
pub fn eval_batch(batch: &ArrayD<f64>, cfg: &AugmentConfig) -> ArrayD<f64> {
    let n = batch.shape()[0];
    let mut shape = vec![n];
    shape.extend(cfg.output_shape(&batch.shape()[1..]));
    if shape == batch.shape() {
        return batch.clone();
    }
    let mut out = ArrayD::zeros(IxDyn(&shape));
    for i in 0..n {
        out.slice_axis_mut(Axis(0), Slice::from(i..i + 1))
            .index_axis_mut(Axis(0), 0)
            .assign(&eval_view(batch.index_axis(Axis(0), i), cfg));
    }
    out
}
