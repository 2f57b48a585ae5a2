//! im2col-style patch extraction.
//!
//! `unfold` turns a `[C, H, W]` feature map into a `[C*k*k, H_out*W_out]`
//! matrix whose column `j` is the receptive field of output position `j`
//! (row-major over `(oh, ow)`). Rows are ordered `(c, kh, kw)`, matching a
//! conv weight stored as `[C_out, C*k*k]`, so a convolution is
//! `W * unfold(A)`. `fold` is the adjoint (scatter-add) and is used to
//! push gradients back to the input.

use super::Tensor;
use crate::error::{invalid, shape_err, Result};

/// Output spatial extent of a convolution along one axis.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return invalid("kernel and stride must be >= 1");
    }
    let padded = input + 2 * padding;
    if kernel > padded {
        return invalid(format!("kernel {kernel} larger than padded input {padded}"));
    }
    Ok((padded - kernel) / stride + 1)
}

fn chw(input: &Tensor) -> Result<(usize, usize, usize)> {
    match input.shape()[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => shape_err("unfold", format!("expected [C, H, W], got {:?}", input.shape())),
    }
}

pub fn unfold(input: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let (c, h, w) = chw(input)?;
    let ho = conv_output_size(h, kernel, stride, padding)?;
    let wo = conv_output_size(w, kernel, stride, padding)?;
    let cols = ho * wo;
    let x = input.values();
    let mut out = vec![0.0; c * kernel * kernel * cols];
    for ci in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ci * kernel + ki) * kernel + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - padding as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for ow in 0..wo {
                        let iw = (ow * stride + kj) as isize - padding as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        dst[oh * wo + ow] = x[(ci * h + ih as usize) * w + iw as usize];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c * kernel * kernel, cols], out)
}

/// Scatter-add columns back onto a `[C, H, W]` map; adjoint of [`unfold`].
pub fn fold(
    cols: &Tensor,
    shape: (usize, usize, usize),
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (c, h, w) = shape;
    let ho = conv_output_size(h, kernel, stride, padding)?;
    let wo = conv_output_size(w, kernel, stride, padding)?;
    let n = ho * wo;
    if cols.shape() != [c * kernel * kernel, n] {
        return shape_err(
            "fold",
            format!("expected [{}, {}], got {:?}", c * kernel * kernel, n, cols.shape()),
        );
    }
    let src = cols.values();
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (ci * kernel + ki) * kernel + kj;
                let line = &src[row * n..(row + 1) * n];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - padding as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for ow in 0..wo {
                        let iw = (ow * stride + kj) as isize - padding as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        out[(ci * h + ih as usize) * w + iw as usize] += line[oh * wo + ow];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}
