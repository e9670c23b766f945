//! Forward/backward kernels on raw buffers. Layouts: FC weights `[in, out]`,
//! images NHWC, conv kernels `[k, k, cin, cout]`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Exp,
}

/// Geometry of one conv2d application.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::Shape("conv2d expects NHWC input and [k,k,cin,cout] kernel".into()));
        }
        let (batch, h, w, cin) = (input[0], input[1], input[2], input[3]);
        let (k, k2, kc, cout) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if k != k2 || k % 2 == 0 {
            return Err(Error::Config(alloc::format!("kernel must be square and odd, got {k}x{k2}")));
        }
        if kc != cin {
            return Err(Error::Shape(alloc::format!("kernel expects {kc} input channels, input has {cin}")));
        }
        if stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        let pad = match padding {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        };
        if k > h + 2 * pad || k > w + 2 * pad {
            return Err(Error::Config(alloc::format!(
                "kernel {k}x{k} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Ok(ConvGeom { batch, h, w, cin, k, cout, stride, pad, oh, ow })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.oh, self.ow, self.cout]
    }

    fn rows(&self) -> usize {
        self.batch * self.oh * self.ow
    }

    fn cols(&self) -> usize {
        self.k * self.k * self.cin
    }
}

/// `out[b, j] = sum_i x[b, i] * w[i, j] + bias[j]`.
pub fn fc_forward<T: Scalar>(x: &[T], w: &[T], bias: &[T], batch: usize, nin: usize, nout: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(batch * nout);
    for _ in 0..batch {
        out.extend_from_slice(bias);
    }
    T::gemm(batch, nin, nout, x, nin as isize, 1, w, nout as isize, 1, T::one(), &mut out, nout as isize, 1);
    out
}

/// Accumulates weight/bias gradients and, when `want_gx`, returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn fc_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    gout: &[T],
    batch: usize,
    nin: usize,
    nout: usize,
    gw: &mut [T],
    gb: &mut [T],
    want_gx: bool,
) -> Option<Vec<T>> {
    // gw += x^T gout
    T::gemm(nin, batch, nout, x, 1, nin as isize, gout, nout as isize, 1, T::one(), gw, nout as isize, 1);
    for row in gout.chunks_exact(nout) {
        for (g, &v) in gb.iter_mut().zip(row) {
            *g = *g + v;
        }
    }
    if !want_gx {
        return None;
    }
    // gx = gout w^T
    let mut gx = vec![T::zero(); batch * nin];
    T::gemm(batch, nout, nin, gout, nout as isize, 1, w, 1, nout as isize, T::zero(), &mut gx, nin as isize, 1);
    Some(gx)
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.cols();
    let mut col = vec![T::zero(); g.rows() * cols];
    let mut r = 0;
    for b in 0..g.batch {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut col[r * cols..(r + 1) * cols];
                for ky in 0..g.k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = ((b * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        let o = (ky * g.k + kx) * g.cin;
                        dst[o..o + g.cin].copy_from_slice(&x[src..src + g.cin]);
                    }
                }
                r += 1;
            }
        }
    }
    col
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom) -> Vec<T> {
    let cols = g.cols();
    let mut x = vec![T::zero(); g.batch * g.h * g.w * g.cin];
    let mut r = 0;
    for b in 0..g.batch {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &col[r * cols..(r + 1) * cols];
                for ky in 0..g.k {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = ((b * g.h + iy as usize) * g.w + ix as usize) * g.cin;
                        let o = (ky * g.k + kx) * g.cin;
                        for c in 0..g.cin {
                            x[dst + c] = x[dst + c] + src[o + c];
                        }
                    }
                }
                r += 1;
            }
        }
    }
    x
}

pub fn conv2d_forward<T: Scalar>(x: &[T], kernel: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let col = im2col(x, g);
    let rows = g.rows();
    let mut out = Vec::with_capacity(rows * g.cout);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    let (cols, n) = (g.cols(), g.cout);
    T::gemm(rows, cols, n, &col, cols as isize, 1, kernel, n as isize, 1, T::one(), &mut out, n as isize, 1);
    out
}

/// Accumulates kernel/bias gradients and, when `want_gx`, returns the input gradient.
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    gout: &[T],
    g: &ConvGeom,
    gk: &mut [T],
    gb: &mut [T],
    want_gx: bool,
) -> Option<Vec<T>> {
    let col = im2col(x, g);
    let (rows, cols, n) = (g.rows(), g.cols(), g.cout);
    T::gemm(cols, rows, n, &col, 1, cols as isize, gout, n as isize, 1, T::one(), gk, n as isize, 1);
    for row in gout.chunks_exact(n) {
        for (acc, &v) in gb.iter_mut().zip(row) {
            *acc = *acc + v;
        }
    }
    if !want_gx {
        return None;
    }
    let mut gcol = vec![T::zero(); rows * cols];
    T::gemm(rows, n, cols, gout, n as isize, 1, kernel, 1, n as isize, T::zero(), &mut gcol, cols as isize, 1);
    Some(col2im(&gcol, g))
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn activate<T: Scalar>(x: &[T], kind: Activation) -> Vec<T> {
    match kind {
        Activation::Relu => x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
        Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
        Activation::Exp => x.iter().map(|&v| v.exp()).collect(),
    }
}

/// Input gradient of an activation given its output `y`.
pub fn activate_backward<T: Scalar>(y: &[T], gout: &[T], kind: Activation) -> Vec<T> {
    match kind {
        Activation::Relu => y.iter().zip(gout).map(|(&y, &g)| if y > T::zero() { g } else { T::zero() }).collect(),
        Activation::Sigmoid => y.iter().zip(gout).map(|(&y, &g)| g * y * (T::one() - y)).collect(),
        Activation::Exp => y.iter().zip(gout).map(|(&y, &g)| g * y).collect(),
    }
}

/// Single-sample fully connected layer on rank-1/rank-2 tensors.
pub fn fc<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (ws, n) = (weights.shape(), input.len());
    if input.shape().len() != 1 || ws.len() != 2 || ws[0] != n || bias.shape() != [ws[1]] {
        return Err(Error::Config(alloc::format!(
            "fc shapes: input {:?}, weights {:?}, bias {:?}",
            input.shape(),
            ws,
            bias.shape()
        )));
    }
    Tensor::new(&[ws[1]], fc_forward(input.data(), weights.data(), bias.data(), 1, n, ws[1]))
}

/// Single-image conv2d on an `H x W x Cin` tensor.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.len() != 3 {
        return Err(Error::Config(alloc::format!("conv2d input must be HxWxC, got {s:?}")));
    }
    let g = ConvGeom::new(&[1, s[0], s[1], s[2]], kernels.shape(), stride, padding)?;
    if bias.len() != g.cout {
        return Err(Error::Config(alloc::format!("bias has {} entries, kernel has {} outputs", bias.len(), g.cout)));
    }
    Tensor::new(&[g.oh, g.ow, g.cout], conv2d_forward(input.data(), kernels.data(), bias.data(), &g))
}

pub fn activation<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    Tensor::new(input.shape(), activate(input.data(), kind)).expect("same shape")
}
