use ndarray::{Array1, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::width::{active_channels, WidthConfig};
use crate::error::{invalid, Result};

pub type ParamId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    /// Affine scale of a normalization layer, owned by one width.
    NormScale { width: usize },
    /// Affine shift of a normalization layer, owned by one width.
    NormShift { width: usize },
}

impl ParamRole {
    /// Shared parameters are sliced across widths; normalization affine
    /// parameters are private to one width.
    pub fn is_shared(&self) -> bool {
        matches!(self, ParamRole::Weight | ParamRole::Bias)
    }

    pub fn owner_width(&self) -> Option<usize> {
        match *self {
            ParamRole::NormScale { width } | ParamRole::NormShift { width } => Some(width),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    /// Name of the layer owning this parameter, used to group per-layer norms.
    pub layer: String,
    pub role: ParamRole,
    pub value: ArrayD<f64>,
    /// Whether axis 0 (output channels) and axis 1 (input channels) are sliced.
    pub slim: [bool; 2],
}

impl Param {
    /// Shape of the leading block used at `width`.
    pub fn active_shape(&self, width: f64) -> Result<Vec<usize>> {
        if !self.role.is_shared() {
            return Ok(self.value.shape().to_vec());
        }
        let mut shape = self.value.shape().to_vec();
        for (axis, dim) in shape.iter_mut().enumerate().take(2) {
            if self.slim[axis] {
                *dim = active_channels(width, *dim)?;
            }
        }
        Ok(shape)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

/// Running statistics of one normalization layer, one set per width.
#[derive(Debug, Clone)]
pub struct NormBuffers {
    pub layer: String,
    pub per_width: Vec<RunningStats>,
}

/// Full-width parameters of a slimmable network plus per-width
/// normalization statistics.
#[derive(Debug, Clone)]
pub struct ParamStore {
    widths: WidthConfig,
    params: Vec<Param>,
    norms: Vec<NormBuffers>,
}

impl ParamStore {
    pub(crate) fn new(widths: WidthConfig) -> Self {
        Self {
            widths,
            params: Vec::new(),
            norms: Vec::new(),
        }
    }

    pub fn widths(&self) -> &WidthConfig {
        &self.widths
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn norms(&self) -> &[NormBuffers] {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut [NormBuffers] {
        &mut self.norms
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn set_value(&mut self, name: &str, value: ArrayD<f64>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| invalid!("no parameter named {name}"))?;
        if self.params[id].value.shape() != value.shape() {
            return Err(invalid!(
                "shape mismatch for {name}: {:?} vs {:?}",
                self.params[id].value.shape(),
                value.shape()
            ));
        }
        self.params[id].value = value;
        Ok(())
    }

    /// Total number of scalar parameters (shared and per-width).
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn push_weight(
        &mut self,
        layer: &str,
        shape: &[usize],
        fan_in: usize,
        slim: [bool; 2],
        rng: &mut impl Rng,
    ) -> ParamId {
        let std = (2.0 / fan_in as f64).sqrt();
        let value = ArrayD::from_shape_fn(IxDyn(shape), |_| {
            std * rng.sample::<f64, _>(StandardNormal)
        });
        self.params.push(Param {
            name: format!("{layer}.weight"),
            layer: layer.to_string(),
            role: ParamRole::Weight,
            value,
            slim,
        });
        self.params.len() - 1
    }

    /// Bias drawn uniformly from `±1/sqrt(fan_in)`.
    pub(crate) fn push_bias(&mut self, layer: &str, len: usize, fan_in: usize, slim: bool, rng: &mut impl Rng) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let value = ArrayD::from_shape_fn(IxDyn(&[len]), |_| rng.random_range(-bound..bound));
        self.params.push(Param {
            name: format!("{layer}.bias"),
            layer: layer.to_string(),
            role: ParamRole::Bias,
            value,
            slim: [slim, false],
        });
        self.params.len() - 1
    }

    /// Registers a normalization layer; returns (buffer index, scale ids, shift ids).
    pub(crate) fn push_norm(
        &mut self,
        layer: &str,
        channels: usize,
        slim: bool,
    ) -> Result<(usize, Vec<ParamId>, Vec<ParamId>)> {
        let mut scales = Vec::new();
        let mut shifts = Vec::new();
        let mut stats = Vec::new();
        for (wi, &w) in self.widths.widths().to_vec().iter().enumerate() {
            let c = if slim { active_channels(w, channels)? } else { channels };
            self.params.push(Param {
                name: format!("{layer}.w{wi}.scale"),
                layer: layer.to_string(),
                role: ParamRole::NormScale { width: wi },
                value: ArrayD::ones(IxDyn(&[c])),
                slim: [false, false],
            });
            scales.push(self.params.len() - 1);
            self.params.push(Param {
                name: format!("{layer}.w{wi}.shift"),
                layer: layer.to_string(),
                role: ParamRole::NormShift { width: wi },
                value: ArrayD::zeros(IxDyn(&[c])),
                slim: [false, false],
            });
            shifts.push(self.params.len() - 1);
            stats.push(RunningStats {
                mean: Array1::zeros(c),
                var: Array1::ones(c),
            });
        }
        self.norms.push(NormBuffers {
            layer: layer.to_string(),
            per_width: stats,
        });
        Ok((self.norms.len() - 1, scales, shifts))
    }

    /// All parameter values concatenated in store order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    /// Overwrites every parameter from a vector laid out like [`Self::flat_values`].
    pub fn set_flat_values(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = self.params.iter().map(|p| p.value.len()).sum();
        if values.len() != total {
            return Err(invalid!("{} values for {total} parameters", values.len()));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.len();
            for (dst, src) in p.value.iter_mut().zip(&values[offset..offset + n]) {
                *dst = *src;
            }
            offset += n;
        }
        Ok(())
    }

    /// Copies parameter values and running statistics from another store
    /// with identical layout.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() || self.norms.len() != other.norms.len() {
            return Err(invalid!("parameter store layouts differ"));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.value.shape() != b.value.shape() {
                return Err(invalid!("shape mismatch for {}", a.name));
            }
            a.value.assign(&b.value);
        }
        for (a, b) in self.norms.iter_mut().zip(&other.norms) {
            a.per_width.clone_from(&b.per_width);
        }
        Ok(())
    }
}

/// Gradient buffers aligned with a [`ParamStore`], always at full shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub tensors: Vec<ArrayD<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            tensors: store
                .params()
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in &mut self.tensors {
            t.mapv_inplace(|v| v * c);
        }
    }

    /// Flattened concatenation in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}
