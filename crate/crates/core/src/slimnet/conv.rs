//! im2col / col2im helpers for 2-D convolution over `[B, C, H, W]` tensors.

use ndarray::{Array2, Array4, ArrayView4};

pub(crate) fn out_size(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfolds patches into rows ordered `(b, oy, ox)` with columns `(c, ky, kx)`.
pub(crate) fn im2col(
    x: ArrayView4<f64>,
    kernel: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (b, c, h, w) = x.dim();
    let kk = kernel * kernel;
    let mut cols = Array2::<f64>::zeros((b * oh * ow, c * kk));
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (bi * oh + oy) * ow + ox;
                let mut out = cols.row_mut(row);
                for ci in 0..c {
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            out[ci * kk + ky * kernel + kx] = x[[bi, ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im(
    cols: &Array2<f64>,
    shape: [usize; 4],
    kernel: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
) -> Array4<f64> {
    let [b, c, h, w] = shape;
    let kk = kernel * kernel;
    let mut x = Array4::<f64>::zeros((b, c, h, w));
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = cols.row((bi * oh + oy) * ow + ox);
                for ci in 0..c {
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            x[[bi, ci, iy as usize, ix as usize]] += row[ci * kk + ky * kernel + kx];
                        }
                    }
                }
            }
        }
    }
    x
}
