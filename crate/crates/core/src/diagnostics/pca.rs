use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Top-2 principal directions of a sequence of vectors and the 2-D
/// coordinates of each sample along them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub mean: Vec<f64>,
    /// Unit-norm components; a component is all zeros when the samples
    /// have no variance along any further direction.
    pub components: [Vec<f64>; 2],
    pub projections: Vec<[f64; 2]>,
    /// Sample variance along each component.
    pub explained_variance: [f64; 2],
    /// Fraction of total variance captured by the two components.
    pub explained_ratio: f64,
}

fn to_matrix(samples: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = samples.first().map_or(0, Vec::len);
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(invalid!("samples must be non-empty and share one dimension"));
    }
    Ok(DMatrix::from_fn(samples.len(), d, |i, j| samples[i][j]))
}

/// Top-2 directions of the rows of `x` (already centered as desired).
fn top2(x: &DMatrix<f64>) -> ([Vec<f64>; 2], [f64; 2], f64) {
    let (n, d) = x.shape();
    let mut comps = [vec![0.0; d], vec![0.0; d]];
    let mut eig_vals = [0.0; 2];
    let total: f64 = x.norm_squared();
    if total == 0.0 {
        return (comps, eig_vals, 0.0);
    }
    // eigen-decompose the smaller of the two Gram matrices
    let (values, vectors, via_rows) = if n <= d {
        let e = SymmetricEigen::new(x * x.transpose());
        (e.eigenvalues, e.eigenvectors, true)
    } else {
        let e = SymmetricEigen::new(x.transpose() * x);
        (e.eigenvalues, e.eigenvectors, false)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let tol = total * 1e-14;
    for k in 0..2.min(order.len()) {
        let lambda = values[order[k]];
        if lambda <= tol {
            continue;
        }
        let v = vectors.column(order[k]);
        let mut c: Vec<f64> = if via_rows {
            (x.transpose() * v / lambda.sqrt()).iter().copied().collect()
        } else {
            v.iter().copied().collect()
        };
        let norm = c.iter().map(|a| a * a).sum::<f64>().sqrt();
        c.iter_mut().for_each(|a| *a /= norm);
        // sign convention: the largest-magnitude entry is positive
        let big = c.iter().copied().fold(0.0f64, |m, a| if a.abs() > m.abs() { a } else { m });
        if big < 0.0 {
            c.iter_mut().for_each(|a| *a = -*a);
        }
        comps[k] = c;
        eig_vals[k] = lambda;
    }
    (comps, eig_vals, total)
}

fn project(x: &DMatrix<f64>, comps: &[Vec<f64>; 2]) -> Vec<[f64; 2]> {
    x.row_iter()
        .map(|r| {
            let p = |c: &Vec<f64>| r.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [p(&comps[0]), p(&comps[1])]
        })
        .collect()
}

/// Mean-centered PCA of gradient (or parameter) samples, in sampling order.
pub fn grad_direction_pca(samples: &[Vec<f64>]) -> Result<TrajectoryRecord> {
    if samples.len() < 3 {
        return Err(invalid!("PCA needs at least 3 samples, got {}", samples.len()));
    }
    let x = to_matrix(samples)?;
    let n = x.nrows();
    let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / n as f64).collect();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let (components, eig, total) = top2(&centered);
    let projections = project(&centered, &components);
    let denom = (n - 1) as f64;
    Ok(TrajectoryRecord {
        mean,
        components,
        projections,
        explained_variance: [eig[0] / denom, eig[1] / denom],
        explained_ratio: if total > 0.0 { (eig[0] + eig[1]) / total } else { 1.0 },
    })
}

/// Checkpoints projected onto the principal directions of their offsets
/// from the final parameters `theta_star`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryProjection {
    pub directions: [Vec<f64>; 2],
    pub points: Vec<[f64; 2]>,
    pub explained_ratio: f64,
}

/// The directions come from PCA of the centered offsets; the raw offsets are
/// projected, so `theta_star` itself maps to the origin.
pub fn trajectory_projection(checkpoints: &[Vec<f64>], theta_star: &[f64]) -> Result<TrajectoryProjection> {
    if checkpoints.len() < 2 {
        return Err(invalid!("need at least 2 checkpoints"));
    }
    let diffs: Vec<Vec<f64>> = checkpoints
        .iter()
        .map(|c| {
            if c.len() != theta_star.len() {
                return Err(invalid!("checkpoint has {} values, final parameters {}", c.len(), theta_star.len()));
            }
            Ok(c.iter().zip(theta_star).map(|(a, b)| a - b).collect())
        })
        .collect::<Result<_>>()?;
    let x = to_matrix(&diffs)?;
    let n = x.nrows();
    let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / n as f64).collect();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let (directions, eig, total) = top2(&centered);
    Ok(TrajectoryProjection {
        points: project(&x, &directions),
        directions,
        explained_ratio: if total > 0.0 { (eig[0] + eig[1]) / total } else { 1.0 },
    })
}
