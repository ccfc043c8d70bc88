use ndarray::{s, Array1, Array2, ArrayD, Axis, Ix2, Ix4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::{col2im, im2col, out_size};
use super::spec::{validate_stack, LayerKind, LayerSpec};
use super::store::{Grads, ParamId, ParamStore};
use super::width::{active_channels, WidthConfig};
use crate::error::{invalid, Result};

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated only through
    /// [`Stack::commit_stats`].
    Train,
    /// Running statistics of the active width.
    Eval,
}

#[derive(Debug, Clone)]
struct NormRef {
    buffers: usize,
    scale: Vec<ParamId>,
    shift: Vec<ParamId>,
}

#[derive(Debug, Clone)]
pub struct CompiledLayer {
    pub name: String,
    pub spec: LayerSpec,
    weight: Option<ParamId>,
    bias: Option<ParamId>,
    norm: Option<NormRef>,
}

impl CompiledLayer {
    pub fn weight(&self) -> Option<ParamId> {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    fn channels(&self, width: f64) -> Result<(usize, usize)> {
        let s = &self.spec;
        let a_in = if s.slim_in { active_channels(width, s.c_in)? } else { s.c_in };
        let a_out = if s.slim_out { active_channels(width, s.c_out)? } else { s.c_out };
        Ok((a_in, a_out))
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Linear {
        input: Array2<f64>,
    },
    Conv {
        cols: Array2<f64>,
        in_shape: [usize; 4],
        out_hw: (usize, usize),
    },
    Norm {
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
        shape4: Option<[usize; 4]>,
        batch_mean: Option<Array1<f64>>,
        batch_var: Option<Array1<f64>>,
    },
    Relu {
        mask: ArrayD<bool>,
    },
    Pool {
        in_shape: [usize; 4],
    },
}

/// Activations recorded by one forward pass of a [`Stack`].
#[derive(Debug, Clone)]
pub struct Tape {
    width: usize,
    mode: Mode,
    caches: Vec<Cache>,
}

impl Tape {
    pub fn width_index(&self) -> usize {
        self.width
    }
}

/// A sequential stack of slimmable layers bound to a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Stack {
    name: String,
    layers: Vec<CompiledLayer>,
}

fn to2(x: ArrayD<f64>) -> Result<Array2<f64>> {
    x.into_dimensionality::<Ix2>()
        .map_err(|_| invalid!("expected a 2-D activation"))
}

fn channels_last(x: ArrayD<f64>) -> Result<(Array2<f64>, [usize; 4])> {
    let x4 = x
        .into_dimensionality::<Ix4>()
        .map_err(|_| invalid!("expected a 4-D activation"))?;
    let (b, c, h, w) = x4.dim();
    let flat = x4
        .permuted_axes([0, 2, 3, 1])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * h * w, c))
        .expect("contiguous");
    Ok((flat, [b, c, h, w]))
}

fn channels_first(x: Array2<f64>, shape: [usize; 4]) -> ArrayD<f64> {
    let [b, c, h, w] = shape;
    x.into_shape_with_order((b, h, w, c))
        .expect("contiguous")
        .permuted_axes([0, 3, 1, 2])
        .as_standard_layout()
        .into_owned()
        .into_dyn()
}

impl Stack {
    /// Registers parameters for `specs` in `store` and returns the bound stack.
    pub fn build(
        name: &str,
        specs: &[LayerSpec],
        first_slim_in: bool,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        validate_stack(specs, first_slim_in)?;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let lname = format!("{name}.{i}");
            let mut layer = CompiledLayer {
                name: lname.clone(),
                spec: spec.clone(),
                weight: None,
                bias: None,
                norm: None,
            };
            match spec.kind {
                LayerKind::Linear => {
                    let shape = [spec.c_out, spec.c_in];
                    layer.weight = Some(store.push_weight(
                        &lname,
                        &shape,
                        spec.c_in,
                        [spec.slim_out, spec.slim_in],
                        rng,
                    ));
                }
                LayerKind::Conv2d => {
                    let shape = [spec.c_out, spec.c_in, spec.kernel, spec.kernel];
                    layer.weight = Some(store.push_weight(
                        &lname,
                        &shape,
                        spec.c_in * spec.kernel * spec.kernel,
                        [spec.slim_out, spec.slim_in],
                        rng,
                    ));
                }
                LayerKind::Norm => {
                    let (buffers, scale, shift) = store.push_norm(&lname, spec.c_out, spec.slim_out)?;
                    layer.norm = Some(NormRef {
                        buffers,
                        scale,
                        shift,
                    });
                }
                LayerKind::Activation | LayerKind::Pool => {}
            }
            if spec.has_weights() && spec.bias {
                let fan_in = match spec.kind {
                    LayerKind::Conv2d => spec.c_in * spec.kernel * spec.kernel,
                    _ => spec.c_in,
                };
                layer.bias = Some(store.push_bias(&lname, spec.c_out, fan_in, spec.slim_out, rng));
            }
            layers.push(layer);
        }
        Ok(Self {
            name: name.to_string(),
            layers,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[CompiledLayer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Output channels of the stack at `width`.
    pub fn output_dim(&self, width: f64) -> Result<usize> {
        self.layers.last().expect("non-empty stack").channels(width).map(|c| c.1)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.c_in
    }

    /// Last layer carrying weights, if any.
    pub fn last_weighted(&self) -> Option<&CompiledLayer> {
        self.layers.iter().rev().find(|l| l.weight.is_some())
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        input: &ArrayD<f64>,
        width_idx: usize,
        mode: Mode,
    ) -> Result<(ArrayD<f64>, Tape)> {
        let widths = store.widths();
        if width_idx >= widths.len() {
            return Err(invalid!("width index {width_idx} out of range"));
        }
        let width = widths.width(width_idx);
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a_in, a_out) = layer.channels(width)?;
            let channel_axis = 1;
            if x.ndim() < 2 || x.shape()[channel_axis] != a_in {
                return Err(invalid!(
                    "layer {}: expected {} input channels at width {}, got shape {:?}",
                    layer.name,
                    a_in,
                    width,
                    x.shape()
                ));
            }
            match layer.spec.kind {
                LayerKind::Linear => {
                    let xin = to2(x)?;
                    let w = store.param(layer.weight.unwrap()).value.view().into_dimensionality::<Ix2>().unwrap();
                    let w = w.slice(s![..a_out, ..a_in]);
                    let mut y = xin.dot(&w.t());
                    if let Some(b) = layer.bias {
                        let b = store.param(b).value.slice(s![..a_out]).to_owned();
                        y += &b;
                    }
                    caches.push(Cache::Linear { input: xin });
                    x = y.into_dyn();
                }
                LayerKind::Conv2d => {
                    let x4 = x
                        .into_dimensionality::<Ix4>()
                        .map_err(|_| invalid!("layer {}: conv expects [B, C, H, W]", layer.name))?;
                    let (b, _, h, w) = x4.dim();
                    let spec = &layer.spec;
                    let (oh, ow) = match (
                        out_size(h, spec.kernel, spec.stride, spec.padding),
                        out_size(w, spec.kernel, spec.stride, spec.padding),
                    ) {
                        (Some(oh), Some(ow)) => (oh, ow),
                        _ => return Err(invalid!("layer {}: input smaller than kernel", layer.name)),
                    };
                    let cols = im2col(x4.view(), spec.kernel, spec.stride, spec.padding, oh, ow);
                    let wmat = self.conv_matrix(store, layer, a_in, a_out);
                    let mut y = cols.dot(&wmat.t());
                    if let Some(bid) = layer.bias {
                        let bias = store.param(bid).value.slice(s![..a_out]).to_owned();
                        y += &bias;
                    }
                    caches.push(Cache::Conv {
                        cols,
                        in_shape: [b, a_in, h, w],
                        out_hw: (oh, ow),
                    });
                    x = channels_first(y, [b, a_out, oh, ow]);
                }
                LayerKind::Norm => {
                    let nr = layer.norm.as_ref().unwrap();
                    let (flat, shape4) = if x.ndim() == 4 {
                        let (f, s4) = channels_last(x)?;
                        (f, Some(s4))
                    } else {
                        (to2(x)?, None)
                    };
                    let gamma = store.param(nr.scale[width_idx]).value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                    let beta = store.param(nr.shift[width_idx]).value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                    let n = flat.nrows();
                    let (mean, var, batch_mean, batch_var) = match mode {
                        Mode::Train => {
                            if n < 2 {
                                return Err(invalid!("batch normalization needs at least 2 rows in train mode"));
                            }
                            let mean = flat.mean_axis(Axis(0)).unwrap();
                            let centered = &flat - &mean;
                            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
                            let unbiased = &var * (n as f64 / (n as f64 - 1.0));
                            (mean.clone(), var, Some(mean), Some(unbiased))
                        }
                        Mode::Eval => {
                            let stats = &store.norms()[nr.buffers].per_width[width_idx];
                            (stats.mean.clone(), stats.var.clone(), None, None)
                        }
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
                    let xhat = (&flat - &mean) * &inv_std;
                    let y = &xhat * &gamma + &beta;
                    caches.push(Cache::Norm {
                        xhat,
                        inv_std,
                        shape4,
                        batch_mean,
                        batch_var,
                    });
                    x = match shape4 {
                        Some(s4) => channels_first(y, s4),
                        None => y.into_dyn(),
                    };
                }
                LayerKind::Activation => {
                    let mask = x.mapv(|v| v > 0.0);
                    x.mapv_inplace(|v| v.max(0.0));
                    caches.push(Cache::Relu { mask });
                }
                LayerKind::Pool => {
                    let x4 = x
                        .into_dimensionality::<Ix4>()
                        .map_err(|_| invalid!("layer {}: pool expects [B, C, H, W]", layer.name))?;
                    let (b, c, h, w) = x4.dim();
                    let y = x4
                        .into_shape_with_order((b, c, h * w))
                        .expect("contiguous")
                        .mean_axis(Axis(2))
                        .unwrap();
                    caches.push(Cache::Pool {
                        in_shape: [b, c, h, w],
                    });
                    x = y.into_dyn();
                }
            }
        }
        Ok((
            x,
            Tape {
                width: width_idx,
                mode,
                caches,
            },
        ))
    }

    fn conv_matrix(&self, store: &ParamStore, layer: &CompiledLayer, a_in: usize, a_out: usize) -> Array2<f64> {
        let k = layer.spec.kernel;
        let w = store.param(layer.weight.unwrap()).value.view().into_dimensionality::<Ix4>().unwrap();
        w.slice(s![..a_out, ..a_in, .., ..])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((a_out, a_in * k * k))
            .expect("contiguous")
    }

    /// Back-propagates `grad_out` through the stack, accumulating parameter
    /// gradients into `grads`, and returns the gradient w.r.t. the input.
    pub fn backward(
        &self,
        store: &ParamStore,
        tape: &Tape,
        grad_out: ArrayD<f64>,
        grads: &mut Grads,
    ) -> Result<ArrayD<f64>> {
        if tape.caches.len() != self.layers.len() {
            return Err(invalid!("tape does not belong to stack {}", self.name));
        }
        let width_idx = tape.width;
        let width = store.widths().width(width_idx);
        let mut g = grad_out;
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            let (a_in, a_out) = layer.channels(width)?;
            g = match cache {
                Cache::Linear { input } => {
                    let g2 = to2(g)?;
                    let wid = layer.weight.unwrap();
                    let w = store.param(wid).value.view().into_dimensionality::<Ix2>().unwrap();
                    let w = w.slice(s![..a_out, ..a_in]);
                    let dw = g2.t().dot(input);
                    {
                        let mut gw = grads.tensors[wid].view_mut().into_dimensionality::<Ix2>().unwrap();
                        let mut gw = gw.slice_mut(s![..a_out, ..a_in]);
                        gw += &dw;
                    }
                    if let Some(bid) = layer.bias {
                        let db = g2.sum_axis(Axis(0));
                        let mut gb = grads.tensors[bid].slice_mut(s![..a_out]);
                        gb += &db;
                    }
                    g2.dot(&w).into_dyn()
                }
                Cache::Conv {
                    cols,
                    in_shape,
                    out_hw,
                } => {
                    let (flat, _) = channels_last(g)?;
                    let wid = layer.weight.unwrap();
                    let k = layer.spec.kernel;
                    let dw = flat.t().dot(cols);
                    let dw = dw.into_shape_with_order((a_out, a_in, k, k)).expect("contiguous");
                    {
                        let mut gw = grads.tensors[wid].view_mut().into_dimensionality::<Ix4>().unwrap();
                        let mut gw = gw.slice_mut(s![..a_out, ..a_in, .., ..]);
                        gw += &dw;
                    }
                    if let Some(bid) = layer.bias {
                        let db = flat.sum_axis(Axis(0));
                        let mut gb = grads.tensors[bid].slice_mut(s![..a_out]);
                        gb += &db;
                    }
                    let wmat = self.conv_matrix(store, layer, a_in, a_out);
                    let dcols = flat.dot(&wmat);
                    let spec = &layer.spec;
                    col2im(&dcols, *in_shape, spec.kernel, spec.stride, spec.padding, out_hw.0, out_hw.1)
                        .into_dyn()
                }
                Cache::Norm {
                    xhat,
                    inv_std,
                    shape4,
                    ..
                } => {
                    let nr = layer.norm.as_ref().unwrap();
                    let g2 = if shape4.is_some() { channels_last(g)?.0 } else { to2(g)? };
                    let sid = nr.scale[width_idx];
                    let gamma = store.param(sid).value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                    let dgamma = (&g2 * xhat).sum_axis(Axis(0));
                    let dbeta = g2.sum_axis(Axis(0));
                    grads.tensors[sid] += &dgamma.view().into_dyn();
                    grads.tensors[nr.shift[width_idx]] += &dbeta.view().into_dyn();
                    let dxhat = &g2 * &gamma;
                    let dx = match tape.mode {
                        Mode::Eval => dxhat * inv_std,
                        Mode::Train => {
                            let n = g2.nrows() as f64;
                            let sum_dxhat = dxhat.sum_axis(Axis(0));
                            let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
                            let inner = &dxhat * n - &sum_dxhat - &(xhat * &sum_dxhat_xhat);
                            inner * &(inv_std / n)
                        }
                    };
                    match shape4 {
                        Some(s4) => channels_first(dx, *s4),
                        None => dx.into_dyn(),
                    }
                }
                Cache::Relu { mask } => {
                    ndarray::Zip::from(&mut g).and(mask).for_each(|v, &m| {
                        if !m {
                            *v = 0.0;
                        }
                    });
                    g
                }
                Cache::Pool { in_shape } => {
                    let [b, c, h, w] = *in_shape;
                    let g2 = to2(g)?;
                    let scale = 1.0 / (h * w) as f64;
                    let mut out = ndarray::Array4::<f64>::zeros((b, c, h, w));
                    for ((bi, ci), &v) in g2.indexed_iter() {
                        out.slice_mut(s![bi, ci, .., ..]).fill(v * scale);
                    }
                    out.into_dyn()
                }
            };
        }
        Ok(g)
    }

    /// Folds the batch statistics recorded in `tape` into the running
    /// statistics of the tape's width. Other widths are untouched.
    pub fn commit_stats(&self, store: &mut ParamStore, tape: &Tape) {
        for (layer, cache) in self.layers.iter().zip(&tape.caches) {
            if let (
                Some(nr),
                Cache::Norm {
                    batch_mean: Some(m),
                    batch_var: Some(v),
                    ..
                },
            ) = (&layer.norm, cache)
            {
                let stats = &mut store.norms_mut()[nr.buffers].per_width[tape.width];
                stats.mean = &stats.mean * (1.0 - NORM_MOMENTUM) + m * NORM_MOMENTUM;
                stats.var = &stats.var * (1.0 - NORM_MOMENTUM) + v * NORM_MOMENTUM;
            }
        }
    }
}

/// Backbone, projection head and optional predictor of a slimmable network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub backbone: Vec<LayerSpec>,
    pub projector: Vec<LayerSpec>,
    #[serde(default)]
    pub predictor: Option<Vec<LayerSpec>>,
}

#[derive(Debug, Clone)]
pub struct SlimModel {
    pub backbone: Stack,
    pub projector: Stack,
    pub predictor: Option<Stack>,
}

/// Per-stack tapes of one student forward pass.
#[derive(Debug, Clone)]
pub struct ModelTape {
    backbone: Tape,
    projector: Tape,
    predictor: Option<Tape>,
}

impl ModelTape {
    pub fn width_index(&self) -> usize {
        self.backbone.width
    }
}

impl SlimModel {
    pub fn build(arch: &Architecture, widths: WidthConfig, rng: &mut impl Rng) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new(widths);
        let backbone = Stack::build("backbone", &arch.backbone, false, &mut store, rng)?;
        let feat = backbone.layers.last().unwrap().spec.clone();
        let proj_first = &arch.projector[0];
        if proj_first.c_in != feat.c_out || proj_first.slim_in != feat.slim_out {
            return Err(invalid!("projector input does not match backbone output"));
        }
        let projector = Stack::build("projector", &arch.projector, feat.slim_out, &mut store, rng)?;
        let predictor = match &arch.predictor {
            Some(p) => {
                let last = projector.layers.last().unwrap().spec.clone();
                if p[0].c_in != last.c_out {
                    return Err(invalid!("predictor input does not match projector output"));
                }
                Some(Stack::build("predictor", p, last.slim_out, &mut store, rng)?)
            }
            None => None,
        };
        Ok((
            Self {
                backbone,
                projector,
                predictor,
            },
            store,
        ))
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            backbone: self.backbone.specs(),
            projector: self.projector.specs(),
            predictor: self.predictor.as_ref().map(|p| p.specs()),
        }
    }

    /// The final weighted layer nearest to the loss on the student path.
    pub fn last_linear(&self) -> &CompiledLayer {
        self.predictor
            .as_ref()
            .unwrap_or(&self.projector)
            .last_weighted()
            .expect("head has a weighted layer")
    }

    pub fn stacks(&self) -> impl Iterator<Item = &Stack> {
        [Some(&self.backbone), Some(&self.projector), self.predictor.as_ref()]
            .into_iter()
            .flatten()
    }

    /// Backbone features `h` at a width.
    pub fn features(&self, store: &ParamStore, input: &ArrayD<f64>, width_idx: usize, mode: Mode) -> Result<Array2<f64>> {
        let (h, _) = self.backbone.forward(store, input, width_idx, mode)?;
        to2(h)
    }

    /// Student path: backbone, projector and (when present) predictor.
    pub fn forward_student(
        &self,
        store: &ParamStore,
        input: &ArrayD<f64>,
        width_idx: usize,
        mode: Mode,
    ) -> Result<(Array2<f64>, ModelTape)> {
        let (h, tb) = self.backbone.forward(store, input, width_idx, mode)?;
        let (z, tp) = self.projector.forward(store, &h, width_idx, mode)?;
        let (z, tq) = match &self.predictor {
            Some(pred) => {
                let (z, t) = pred.forward(store, &z, width_idx, mode)?;
                (z, Some(t))
            }
            None => (z, None),
        };
        Ok((
            to2(z)?,
            ModelTape {
                backbone: tb,
                projector: tp,
                predictor: tq,
            },
        ))
    }

    /// Target path: backbone and projector only.
    pub fn forward_target(
        &self,
        store: &ParamStore,
        input: &ArrayD<f64>,
        width_idx: usize,
        mode: Mode,
    ) -> Result<(Array2<f64>, ModelTape)> {
        let (h, tb) = self.backbone.forward(store, input, width_idx, mode)?;
        let (z, tp) = self.projector.forward(store, &h, width_idx, mode)?;
        Ok((
            to2(z)?,
            ModelTape {
                backbone: tb,
                projector: tp,
                predictor: None,
            },
        ))
    }

    pub fn backward(&self, store: &ParamStore, tape: &ModelTape, grad_z: Array2<f64>, grads: &mut Grads) -> Result<()> {
        let mut g = grad_z.into_dyn();
        if let (Some(pred), Some(t)) = (&self.predictor, &tape.predictor) {
            g = pred.backward(store, t, g, grads)?;
        }
        g = self.projector.backward(store, &tape.projector, g, grads)?;
        self.backbone.backward(store, &tape.backbone, g, grads)?;
        Ok(())
    }

    pub fn commit_stats(&self, store: &mut ParamStore, tape: &ModelTape) {
        self.backbone.commit_stats(store, &tape.backbone);
        self.projector.commit_stats(store, &tape.projector);
        if let (Some(pred), Some(t)) = (&self.predictor, &tape.predictor) {
            pred.commit_stats(store, t);
        }
    }
}

/// Runs a single stack at `width`, rejecting widths the store does not know.
pub fn slim_forward(store: &ParamStore, stack: &Stack, input: &ArrayD<f64>, width: f64, mode: Mode) -> Result<ArrayD<f64>> {
    let idx = store.widths().index_of(width)?;
    if input.ndim() < 2 || input.shape()[1] != stack.input_dim() {
        return Err(invalid!(
            "input has {:?} channels, stack expects {}",
            input.shape().get(1),
            stack.input_dim()
        ));
    }
    Ok(stack.forward(store, input, idx, mode)?.0)
}
