//! Interference diagnostics: gradient-norm ratios between parameter
//! partitions, PCA of last-layer gradient directions, loss-surface slices and
//! trajectory projections, plus SVG/CSV output for all of them.

mod grad;
mod pca;
pub mod plot;
mod surface;

pub use grad::{grad_norm_ratio, median, GradSnapshot, NormRatio, VectorRef};
pub use pca::{grad_direction_pca, trajectory_projection, TrajectoryProjection, TrajectoryRecord};
pub use surface::{
    grid_coords, loss_surface_slice, random_direction, random_directions, store_shapes, Normalization, SurfaceGrid,
};
