use serde::{Deserialize, Serialize};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Square-kernel 2-D convolution (cross-correlation) with zero
/// same-padding of `(L - 1) / 2` and stride 1 or 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer<T = f32> {
    out_channels: usize,
    in_channels: usize,
    kernel_size: usize,
    stride: usize,
    /// `P x Q x L x L`, row-major.
    weights: Vec<T>,
    bias: Option<Vec<T>>,
}

impl<T: Real> ConvLayer<T> {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        stride: usize,
        weights: Vec<T>,
        bias: Option<Vec<T>>,
    ) -> Result<Self> {
        if kernel_size % 2 == 0 {
            return Err(Error::config(format!("kernel size {kernel_size} is not odd")));
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::config(format!("stride {stride} is not 1 or 2")));
        }
        let expected = out_channels * in_channels * kernel_size * kernel_size;
        if weights.len() != expected {
            return Err(Error::shape(format!(
                "conv weights have length {}, expected {expected}",
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(Error::shape("conv bias length differs from out_channels"));
            }
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_size,
            stride,
            weights,
            bias,
        })
    }

    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        kernel_size: usize,
        stride: usize,
        with_bias: bool,
    ) -> Result<Self> {
        Self::new(
            out_channels,
            in_channels,
            kernel_size,
            stride,
            vec![T::zero(); out_channels * in_channels * kernel_size * kernel_size],
            with_bias.then(|| vec![T::zero(); out_channels]),
        )
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> Option<&[T]> {
        self.bias.as_deref()
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [T], Option<&mut [T]>) {
        (&mut self.weights, self.bias.as_deref_mut())
    }

    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (height.div_ceil(self.stride), width.div_ceil(self.stride))
    }

    pub fn cast<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kernel_size: self.kernel_size,
            stride: self.stride,
            weights: self.weights.iter().map(|v| U::of(v.as_f64())).collect(),
            bias: self
                .bias
                .as_ref()
                .map(|b| b.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }
}

pub fn conv2d<T: Real>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    if x.channels() != layer.in_channels {
        return Err(Error::shape(format!(
            "conv2d: input has {} channels, layer expects {}",
            x.channels(),
            layer.in_channels
        )));
    }
    conv2d_unchecked(x, layer).ensure_finite("conv2d")
}

/// [`conv2d`] without the channel and finiteness checks.
pub fn conv2d_unchecked<T: Real>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Tensor<T> {
    let (oh, ow) = layer.output_dims(x.height(), x.width());
    let n = oh * ow;
    let k = layer.fan_in();
    let p = layer.out_channels;
    let cols = im2col(x, layer, oh, ow);

    let mut out = vec![T::zero(); p * n];
    if let Some(bias) = &layer.bias {
        for (row, &b) in out.chunks_exact_mut(n).zip(bias) {
            row.fill(b);
        }
    }
    T::gemm(
        p,
        k,
        n,
        T::one(),
        &layer.weights,
        k as isize,
        1,
        &cols,
        n as isize,
        1,
        T::one(),
        &mut out,
        n as isize,
        1,
    );
    Tensor::from_raw(p, oh, ow, out)
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

/// Reverse-mode pass through [`conv2d`]. `grad_out` is the loss gradient
/// with respect to the layer output; `x` is the input of the forward pass.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
    want_params: bool,
) -> ConvGrads<T> {
    let (oh, ow) = (grad_out.height(), grad_out.width());
    let n = oh * ow;
    let k = layer.fan_in();
    let p = layer.out_channels;
    debug_assert_eq!(grad_out.channels(), p);
    let g = grad_out.data();

    let (weights, bias) = if want_params {
        let cols = im2col(x, layer, oh, ow);
        let mut gw = vec![T::zero(); p * k];
        // gW = gOut (p x n) * cols^T (n x k)
        T::gemm(
            p,
            n,
            k,
            T::one(),
            g,
            n as isize,
            1,
            &cols,
            1,
            n as isize,
            T::zero(),
            &mut gw,
            k as isize,
            1,
        );
        let gb = layer
            .bias
            .as_ref()
            .map(|_| g.chunks_exact(n).map(|row| row.iter().copied().sum()).collect());
        (Some(gw), gb)
    } else {
        (None, None)
    };

    let input = want_input.then(|| {
        let mut gcols = vec![T::zero(); k * n];
        // gCols = W^T (k x p) * gOut (p x n)
        T::gemm(
            k,
            p,
            n,
            T::one(),
            &layer.weights,
            1,
            k as isize,
            g,
            n as isize,
            1,
            T::zero(),
            &mut gcols,
            n as isize,
            1,
        );
        col2im(&gcols, layer, x.channels(), x.height(), x.width(), oh, ow)
    });

    ConvGrads {
        input,
        weights,
        bias,
    }
}

/// Unfolds receptive fields into a `(Q*L*L) x (OH*OW)` matrix.
fn im2col<T: Real>(x: &Tensor<T>, layer: &ConvLayer<T>, oh: usize, ow: usize) -> Vec<T> {
    let (q, h, w) = x.shape();
    let l = layer.kernel_size;
    let s = layer.stride;
    let pad = layer.padding() as isize;
    let n = oh * ow;
    let mut cols = vec![T::zero(); q * l * l * n];
    let src = x.data();
    for c in 0..q {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for ky in 0..l {
            for kx in 0..l {
                let row = ((c * l + ky) * l + kx) * n;
                for oy in 0..oh {
                    let iy = (oy * s) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto the input grid.
fn col2im<T: Real>(
    cols: &[T],
    layer: &ConvLayer<T>,
    q: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Tensor<T> {
    let l = layer.kernel_size;
    let s = layer.stride;
    let pad = layer.padding() as isize;
    let n = oh * ow;
    let mut out = vec![T::zero(); q * h * w];
    for c in 0..q {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..l {
            for kx in 0..l {
                let row = ((c * l + ky) * l + kx) * n;
                for oy in 0..oh {
                    let iy = (oy * s) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src = &cols[row + oy * ow..row + (oy + 1) * ow];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * s) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_raw(q, h, w, out)
}
