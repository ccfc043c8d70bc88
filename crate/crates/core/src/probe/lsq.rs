use std::ops::AddAssign;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// Gram matrices with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e8;

pub fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// 2-norm condition number of a symmetric matrix.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn spd_factor(a: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let condition = condition_number(a);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned {
            condition,
            context: context.to_string(),
        });
    }
    Cholesky::new(a.clone()).ok_or_else(|| Error::IllConditioned {
        condition,
        context: format!("{context} is not positive definite"),
    })
}

/// Inverse of a symmetric positive-definite matrix, gated on its condition.
pub fn spd_inverse(a: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    Ok(spd_factor(a, context)?.inverse())
}

/// Least-squares solution `θ = (XᵀX)⁻¹XᵀT`.
pub fn fit_least_squares(x: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != t.nrows() {
        return Err(invalid!("X has {} rows, T has {}", x.nrows(), t.nrows()));
    }
    let gram = x.transpose() * x;
    Ok(spd_factor(&gram, "XᵀX")?.solve(&(x.transpose() * t)))
}

/// `‖Xθ − T‖²` summed over all entries.
pub fn squared_loss(x: &DMatrix<f64>, theta: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    (x * theta - t).norm_squared()
}

/// A shared-probe least-squares instance: full-width features `X`,
/// sub-width features `X1` and targets `T`.
#[derive(Debug, Clone)]
pub struct ProbeProblem {
    pub x: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub d1: usize,
}

impl ProbeProblem {
    pub fn new(x: DMatrix<f64>, x1: DMatrix<f64>, t: DMatrix<f64>, d1: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if d1 == 0 || d1 >= d {
            return Err(invalid!("d1 = {d1} must lie in [1, {}]", d.saturating_sub(1)));
        }
        if x1.shape() != (n, d1) {
            return Err(invalid!("X1 is {:?}, expected ({n}, {d1})", x1.shape()));
        }
        if t.nrows() != n || t.ncols() == 0 {
            return Err(invalid!("T is {:?}, expected {n} rows", t.shape()));
        }
        if n < d {
            return Err(invalid!("need N ≥ d, got N = {n}, d = {d}"));
        }
        Ok(Self { x, x1, t, d1 })
    }

    /// Independent standard-normal `X`, `X1` and `T`.
    pub fn random(n: usize, d: usize, d1: usize, c: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut g = |r, k| DMatrix::from_fn(r, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = g(n, d);
        let x1 = g(n, d1);
        let t = g(n, c);
        Self::new(x, x1, t, d1)
    }

    /// An instance that satisfies the shared-probe condition: `X1 = X11` and
    /// the trailing block is orthogonal to it (`X11ᵀX12 = 0`), which makes
    /// `XᵀX` block diagonal.
    pub fn satisfying_condition(n: usize, d: usize, d1: usize, c: usize, rng: &mut impl Rng) -> Result<Self> {
        let raw = DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x11 = raw.columns(0, d1).into_owned();
        let q = x11.clone().qr().q();
        // project the trailing columns onto the orthogonal complement of X11
        let tail = raw.columns(d1, d - d1).into_owned();
        let x12 = &tail - &q * (q.transpose() * &tail);
        let mut x = DMatrix::zeros(n, d);
        x.columns_mut(0, d1).copy_from(&x11);
        x.columns_mut(d1, d - d1).copy_from(&x12);
        let t = DMatrix::from_fn(n, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::new(x, x11, t, d1)
    }

    pub fn x11(&self) -> DMatrix<f64> {
        self.x.columns(0, self.d1).into_owned()
    }

    pub fn x12(&self) -> DMatrix<f64> {
        let d = self.x.ncols();
        self.x.columns(self.d1, d - self.d1).into_owned()
    }
}

/// Blocks of `B = (XᵀX)⁻¹` split after `d1` rows and columns.
#[derive(Debug, Clone)]
pub struct BlockInverse {
    pub b11: DMatrix<f64>,
    pub b12: DMatrix<f64>,
    pub b21: DMatrix<f64>,
    pub b22: DMatrix<f64>,
}

impl BlockInverse {
    pub fn assemble(&self) -> DMatrix<f64> {
        let (d1, d2) = (self.b11.nrows(), self.b22.nrows());
        let mut b = DMatrix::zeros(d1 + d2, d1 + d2);
        b.view_mut((0, 0), (d1, d1)).copy_from(&self.b11);
        b.view_mut((0, d1), (d1, d2)).copy_from(&self.b12);
        b.view_mut((d1, 0), (d2, d1)).copy_from(&self.b21);
        b.view_mut((d1, d1), (d2, d2)).copy_from(&self.b22);
        b
    }

    /// Max-abs residuals of the four block equations of `XᵀX·B = I`.
    pub fn identity_residuals(&self, x: &DMatrix<f64>) -> [f64; 4] {
        let d1 = self.b11.nrows();
        let d = x.ncols();
        let x11 = x.columns(0, d1);
        let x12 = x.columns(d1, d - d1);
        let a11 = x11.transpose() * x11;
        let a12 = x11.transpose() * x12;
        let a21 = x12.transpose() * x11;
        let a22 = x12.transpose() * x12;
        let max_abs = |m: DMatrix<f64>| m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        [
            max_abs(&a11 * &self.b11 + &a12 * &self.b21 - DMatrix::identity(d1, d1)),
            max_abs(&a11 * &self.b12 + &a12 * &self.b22),
            max_abs(&a21 * &self.b11 + &a22 * &self.b21),
            max_abs(&a21 * &self.b12 + &a22 * &self.b22 - DMatrix::identity(d - d1, d - d1)),
        ]
    }
}

/// Block inverse of `XᵀX` built from the Schur complement of `X12ᵀX12`.
pub fn block_inverse(x: &DMatrix<f64>, d1: usize) -> Result<BlockInverse> {
    let d = x.ncols();
    if d1 == 0 || d1 >= d {
        return Err(invalid!("d1 = {d1} must lie in [1, {}]", d.saturating_sub(1)));
    }
    let x11 = x.columns(0, d1);
    let x12 = x.columns(d1, d - d1);
    let a11 = x11.transpose() * x11;
    let a12 = x11.transpose() * x12;
    let a22_inv = spd_inverse(&(x12.transpose() * x12), "X12ᵀX12")?;
    let schur = &a11 - &a12 * &a22_inv * a12.transpose();
    let b11 = spd_inverse(&schur, "Schur complement of X12ᵀX12")?;
    let b21 = -(&a22_inv * a12.transpose() * &b11);
    let b12 = b21.transpose();
    let b22 = &a22_inv * (DMatrix::identity(d - d1, d - d1) - a12.transpose() * &b12);
    Ok(BlockInverse { b11, b12, b21, b22 })
}

/// Left and right sides of the shared-probe condition and their gap.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    /// `θ11` implied by the full-width fit.
    pub left: DMatrix<f64>,
    /// `θ11` fitted on the sub-width features alone.
    pub right: DMatrix<f64>,
    pub residual: DMatrix<f64>,
    pub mean_abs: f64,
    pub total_abs: f64,
    /// Max-abs gap between the two algebraic forms of `left`.
    pub form_agreement: f64,
}

pub fn shared_probe_condition(problem: &ProbeProblem) -> Result<ConditionReport> {
    let x11 = problem.x11();
    let x12 = problem.x12();
    let blocks = block_inverse(&problem.x, problem.d1)?;
    let a22_inv = spd_inverse(&(x12.transpose() * &x12), "X12ᵀX12")?;
    let projected = x11.transpose() - x11.transpose() * &x12 * &a22_inv * x12.transpose();
    let left = &blocks.b11 * projected * &problem.t;
    let direct = (&blocks.b11 * x11.transpose() + &blocks.b12 * x12.transpose()) * &problem.t;
    let right = fit_least_squares(&problem.x1, &problem.t)?;
    let residual = &left - &right;
    let total_abs: f64 = residual.iter().map(|v| v.abs()).sum();
    let form_agreement = (&left - &direct).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(ConditionReport {
        mean_abs: total_abs / residual.len() as f64,
        total_abs,
        left,
        right,
        residual,
        form_agreement,
    })
}

/// Total least-squares loss (full width plus sub-width) of three probe
/// designs on one instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LsqProbeLosses {
    /// Independent heads per width.
    pub switchable: f64,
    /// One head fit on the full width; the sub-width reuses its top block.
    pub slimmable: f64,
    /// One head fit to minimize the sum of both residuals.
    pub joint: f64,
}

pub fn lsq_probe_losses(problem: &ProbeProblem) -> Result<LsqProbeLosses> {
    let (x, x1, t, d1) = (&problem.x, &problem.x1, &problem.t, problem.d1);
    let theta = fit_least_squares(x, t)?;
    let full = squared_loss(x, &theta, t);
    let theta1 = fit_least_squares(x1, t)?;
    let switchable = full + squared_loss(x1, &theta1, t);
    let theta11 = theta.rows(0, d1).into_owned();
    let slimmable = full + squared_loss(x1, &theta11, t);

    let mut lhs = x.transpose() * x;
    let sub_gram = x1.transpose() * x1;
    lhs.view_mut((0, 0), (d1, d1)).add_assign(&sub_gram);
    let mut rhs = x.transpose() * t;
    rhs.rows_mut(0, d1).add_assign(&(x1.transpose() * t));
    let joint_theta = spd_factor(&lhs, "joint normal equations")?.solve(&rhs);
    let joint = squared_loss(x, &joint_theta, t) + squared_loss(x1, &joint_theta.rows(0, d1).into_owned(), t);
    Ok(LsqProbeLosses {
        switchable,
        slimmable,
        joint,
    })
}
