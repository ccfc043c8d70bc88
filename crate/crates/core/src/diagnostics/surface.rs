use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::slimnet::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Rescale each output filter of the direction to the norm of the
    /// matching filter of θ*; 1-D tensors get a zero direction.
    #[default]
    Filter,
    None,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter" => Ok(Self::Filter),
            "none" => Ok(Self::None),
            other => Err(invalid!("unknown normalization {other:?} (expected filter|none)")),
        }
    }
}

/// Tensor shapes of a store, in the order used by [`ParamStore::flat_values`].
pub fn store_shapes(store: &ParamStore) -> Vec<Vec<usize>> {
    store.params().iter().map(|p| p.value.shape().to_vec()).collect()
}

/// One Gaussian direction over a flattened parameter vector.
pub fn random_direction(theta: &[f64], shapes: &[Vec<usize>], normalization: Normalization, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if total != theta.len() {
        return Err(invalid!("shapes cover {total} values, θ has {}", theta.len()));
    }
    let mut d: Vec<f64> = (0..total).map(|_| StandardNormal.sample(rng)).collect();
    if normalization == Normalization::None {
        return Ok(d);
    }
    let mut offset = 0;
    for shape in shapes {
        let n: usize = shape.iter().product();
        let block = &mut d[offset..offset + n];
        if shape.len() < 2 {
            block.fill(0.0);
        } else {
            let row = n / shape[0].max(1);
            for (f, chunk) in block.chunks_mut(row.max(1)).enumerate() {
                let start = offset + f * row;
                let t_norm = theta[start..start + chunk.len()].iter().map(|a| a * a).sum::<f64>().sqrt();
                let d_norm = chunk.iter().map(|a| a * a).sum::<f64>().sqrt();
                let scale = if d_norm > 0.0 { t_norm / d_norm } else { 0.0 };
                chunk.iter_mut().for_each(|a| *a *= scale);
            }
        }
        offset += n;
    }
    Ok(d)
}

/// A pair of directions drawn from a seeded stream.
pub fn random_directions(theta: &[f64], shapes: &[Vec<usize>], normalization: Normalization, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_direction(theta, shapes, normalization, &mut rng)?;
    let v = random_direction(theta, shapes, normalization, &mut rng)?;
    Ok((u, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `values[i][j]` is the loss at `θ* + alphas[i]·u + betas[j]·v`.
    pub values: Vec<Vec<f64>>,
    pub center_loss: f64,
}

/// `A·(2i − (R−1))/(R−1)` for `i = 0..R`; the middle entry of an odd grid is
/// exactly zero.
pub fn grid_coords(resolution: usize, range: f64) -> Vec<f64> {
    let r = (resolution - 1) as f64;
    (0..resolution)
        .map(|i| {
            let num = 2 * i as i64 - (resolution as i64 - 1);
            range * num as f64 / r
        })
        .collect()
}

/// Evaluates `loss` on the plane spanned by `u` and `v` around `theta`.
pub fn loss_surface_slice<F>(theta: &[f64], u: &[f64], v: &[f64], resolution: usize, range: f64, mut loss: F) -> Result<SurfaceGrid>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if resolution < 3 {
        return Err(invalid!("grid resolution must be at least 3, got {resolution}"));
    }
    if !(range.is_finite() && range > 0.0) {
        return Err(invalid!("grid range must be positive, got {range}"));
    }
    if u.len() != theta.len() || v.len() != theta.len() {
        return Err(invalid!("direction length differs from θ ({})", theta.len()));
    }
    let center_loss = loss(theta)?;
    if !center_loss.is_finite() {
        return Err(Error::InvalidState(format!("loss at θ* is {center_loss}")));
    }
    let coords = grid_coords(resolution, range);
    let mut point = vec![0.0; theta.len()];
    let mut values = Vec::with_capacity(resolution);
    for &a in &coords {
        let mut row = Vec::with_capacity(resolution);
        for &b in &coords {
            for k in 0..theta.len() {
                point[k] = theta[k] + a * u[k] + b * v[k];
            }
            row.push(loss(&point)?);
        }
        values.push(row);
    }
    Ok(SurfaceGrid {
        alphas: coords.clone(),
        betas: coords,
        values,
        center_loss,
    })
}
