//! Width-switchable layers with nested weight sharing.
//!
//! Every slimmable layer keeps its full-width tensors; running at width `w`
//! uses the leading `active_channels(w, C)` input/output channels, so the
//! parameters of a narrower network are always a prefix block of a wider
//! one. Normalization layers keep one set of running statistics and affine
//! parameters per width.

mod conv;
mod net;
mod partition;
mod spec;
mod store;
mod width;

pub use net::{slim_forward, Architecture, CompiledLayer, Mode, ModelTape, SlimModel, Stack, Tape, NORM_EPS, NORM_MOMENTUM};
pub use partition::{param_partition, partition_key, ParamSet, PartitionMap};
pub use spec::{cnn_backbone, mlp_backbone, mlp_head, validate_stack, LayerKind, LayerSpec};
pub use store::{Grads, NormBuffers, Param, ParamId, ParamRole, ParamStore, RunningStats};
pub use width::{active_channels, width_label, WidthConfig};
