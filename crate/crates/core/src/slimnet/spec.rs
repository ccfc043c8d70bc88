use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Linear,
    Conv2d,
    /// Batch normalization with one statistics/affine set per width.
    Norm,
    /// ReLU.
    Activation,
    /// Global average pooling from `[B, C, H, W]` to `[B, C]`.
    Pool,
}

/// Declarative description of one layer at full width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub c_in: usize,
    pub c_out: usize,
    #[serde(default)]
    pub slim_in: bool,
    #[serde(default)]
    pub slim_out: bool,
    #[serde(default)]
    pub bias: bool,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default = "default_one")]
    pub padding: usize,
}

fn default_kernel() -> usize {
    3
}

fn default_one() -> usize {
    1
}

impl LayerSpec {
    pub fn linear(c_in: usize, c_out: usize, slim_in: bool, slim_out: bool, bias: bool) -> Self {
        Self {
            kind: LayerKind::Linear,
            c_in,
            c_out,
            slim_in,
            slim_out,
            bias,
            kernel: 1,
            stride: 1,
            padding: 0,
        }
    }

    pub fn conv2d(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        slim_in: bool,
        slim_out: bool,
    ) -> Self {
        Self {
            kind: LayerKind::Conv2d,
            c_in,
            c_out,
            slim_in,
            slim_out,
            bias: false,
            kernel,
            stride,
            padding,
        }
    }

    fn passthrough(kind: LayerKind, channels: usize, slim: bool) -> Self {
        Self {
            kind,
            c_in: channels,
            c_out: channels,
            slim_in: slim,
            slim_out: slim,
            bias: false,
            kernel: 1,
            stride: 1,
            padding: 0,
        }
    }

    pub fn norm(channels: usize, slim: bool) -> Self {
        Self::passthrough(LayerKind::Norm, channels, slim)
    }

    pub fn relu(channels: usize, slim: bool) -> Self {
        Self::passthrough(LayerKind::Activation, channels, slim)
    }

    pub fn pool(channels: usize, slim: bool) -> Self {
        Self::passthrough(LayerKind::Pool, channels, slim)
    }

    pub fn has_weights(&self) -> bool {
        matches!(self.kind, LayerKind::Linear | LayerKind::Conv2d)
    }
}

/// Checks that a layer stack chains correctly.
///
/// `first_slim_in` is the expected slimmable-input flag of the first layer:
/// false for a backbone reading raw data, true for heads fed by a slimmed
/// backbone.
pub fn validate_stack(layers: &[LayerSpec], first_slim_in: bool) -> Result<()> {
    let Some(first) = layers.first() else {
        return Err(invalid!("layer stack is empty"));
    };
    if first.slim_in != first_slim_in {
        return Err(invalid!(
            "first layer slim_in must be {first_slim_in} (raw inputs are never sliced)"
        ));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.c_in == 0 || l.c_out == 0 {
            return Err(invalid!("layer {i}: channel counts must be positive"));
        }
        if !l.has_weights() && (l.c_in != l.c_out || l.slim_in != l.slim_out) {
            return Err(invalid!("layer {i}: {:?} must preserve channels", l.kind));
        }
        if l.kind == LayerKind::Conv2d && (l.kernel == 0 || l.stride == 0) {
            return Err(invalid!("layer {i}: kernel and stride must be positive"));
        }
        if i > 0 {
            let prev = &layers[i - 1];
            if prev.c_out != l.c_in {
                return Err(invalid!(
                    "layer {i}: c_in {} does not match previous c_out {}",
                    l.c_in,
                    prev.c_out
                ));
            }
            if prev.slim_out != l.slim_in {
                return Err(invalid!("layer {i}: slim_in disagrees with previous slim_out"));
            }
        }
    }
    Ok(())
}

/// Slimmable MLP backbone: `[linear, norm, relu]` per hidden size.
pub fn mlp_backbone(input_dim: usize, hidden: &[usize]) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut c_in = input_dim;
    for (i, &h) in hidden.iter().enumerate() {
        layers.push(LayerSpec::linear(c_in, h, i > 0, true, false));
        layers.push(LayerSpec::norm(h, true));
        layers.push(LayerSpec::relu(h, true));
        c_in = h;
    }
    layers
}

/// Small slimmable CNN: 3x3 conv blocks, stride 2 after the first, then
/// global average pooling.
pub fn cnn_backbone(in_channels: usize, channels: &[usize]) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut c_in = in_channels;
    for (i, &c) in channels.iter().enumerate() {
        let stride = if i == 0 { 1 } else { 2 };
        layers.push(LayerSpec::conv2d(c_in, c, 3, stride, 1, i > 0, true));
        layers.push(LayerSpec::norm(c, true));
        layers.push(LayerSpec::relu(c, true));
        c_in = c;
    }
    if let Some(&last) = channels.last() {
        layers.push(LayerSpec::pool(last, true));
    }
    layers
}

/// Two-layer head whose hidden layer is slimmable and whose output
/// dimension is fixed across widths.
///
/// `slim_input` is true when the head reads a slimmed feature vector.
pub fn mlp_head(
    input_dim: usize,
    hidden: usize,
    out_dim: usize,
    slim_input: bool,
    hidden_norm: bool,
) -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::linear(input_dim, hidden, slim_input, true, !hidden_norm)];
    if hidden_norm {
        layers.push(LayerSpec::norm(hidden, true));
    }
    layers.push(LayerSpec::relu(hidden, true));
    layers.push(LayerSpec::linear(hidden, out_dim, true, false, true));
    layers
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builders_validate() {
        validate_stack(&mlp_backbone(16, &[32, 32]), false).unwrap();
        validate_stack(&cnn_backbone(3, &[8, 16, 32]), false).unwrap();
        validate_stack(&mlp_head(32, 64, 8, true, false), true).unwrap();
    }

    #[test]
    fn rejects_sliced_raw_input() {
        let mut l = mlp_backbone(16, &[32]);
        l[0].slim_in = true;
        assert!(validate_stack(&l, false).is_err());
    }

    #[test]
    fn rejects_channel_mismatch() {
        let l = vec![
            LayerSpec::linear(4, 8, false, true, true),
            LayerSpec::linear(6, 2, true, false, true),
        ];
        assert!(validate_stack(&l, false).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let l = LayerSpec::conv2d(3, 8, 3, 1, 1, false, true);
        let s = toml::to_string(&l).unwrap();
        let back: LayerSpec = toml::from_str(&s).unwrap();
        assert_eq!(l, back);
        let parsed: LayerSpec = toml::from_str("kind = \"linear\"\nc_in = 4\nc_out = 2\n").unwrap();
        assert_eq!(parsed.kind, LayerKind::Linear);
        assert!(!parsed.slim_in);
    }
}
