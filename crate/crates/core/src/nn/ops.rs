//! Layer kernels.
//!
//! Every reduction runs in binary32 with a fixed loop order so that two
//! evaluations of the same bits produce the same bits. Convolution sums
//! over input channel, then kernel row, then kernel column, and adds the
//! bias last; fully connected layers sum inputs in ascending order and add
//! the bias last. Zero padding contributes no terms.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn weight_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w
    }

    /// Output spatial size for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::Shape("convolution stride must be at least 1".into()));
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::Shape(format!(
                "{}x{} kernel does not fit {h}x{w} input with padding {}",
                self.kernel_h, self.kernel_w, self.padding
            )));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    #[inline]
    pub(crate) fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel_h + ky) * self.kernel_w + kx
    }
}

/// 2-D convolution `O(q) = b(q) + sum_p K(q, p) * I(p)` (cross-correlation
/// form, as in every mainstream framework).
///
/// `kernels` has shape `[C_out, C_in, kh, kw]` and `input` `[C_in, H, W]`.
pub fn conv2d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &[f32],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let &[out_channels, in_channels, kernel_h, kernel_w] = kernels.shape() else {
        return Err(Error::Shape(format!(
            "kernels must be rank 4 [C_out, C_in, kh, kw], got {:?}",
            kernels.shape()
        )));
    };
    let geometry = ConvGeometry {
        in_channels,
        out_channels,
        kernel_h,
        kernel_w,
        stride,
        padding,
    };
    conv2d_raw(input, &geometry, kernels.data(), bias)
}

pub(crate) fn conv2d_raw(
    input: &Tensor,
    g: &ConvGeometry,
    weights: &[f32],
    bias: &[f32],
) -> Result<Tensor> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::Shape(format!(
            "convolution input must be rank 3 [C, H, W], got {:?}",
            input.shape()
        )));
    };
    if c != g.in_channels {
        return Err(Error::Shape(format!(
            "convolution expects {} input channels, got {c}",
            g.in_channels
        )));
    }
    if weights.len() != g.weight_count() || bias.len() != g.out_channels {
        return Err(Error::Shape(format!(
            "convolution expects {} weights and {} biases, got {} and {}",
            g.weight_count(),
            g.out_channels,
            weights.len(),
            bias.len()
        )));
    }
    let (oh, ow) = g.output_hw(h, w)?;
    let x = input.data();
    let mut out = Vec::with_capacity(g.out_channels * oh * ow);
    for oc in 0..g.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for ic in 0..c {
                    for ky in 0..g.kernel_h {
                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..g.kernel_w {
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xv = x[(ic * h + iy as usize) * w + ix as usize];
                            acc += weights[g.weight_index(oc, ic, ky, kx)] * xv;
                        }
                    }
                }
                out.push(acc + bias[oc]);
            }
        }
    }
    Tensor::new(vec![g.out_channels, oh, ow], out)
}

/// `O_j = sum_i I_i * w[i][j] + b_j`, with `weights` row-major `[N][M]`.
pub fn fully_connected(input: &[f32], weights: &[f32], bias: &[f32]) -> Result<Vec<f32>> {
    let n = input.len();
    let m = bias.len();
    if weights.len() != n * m {
        return Err(Error::Shape(format!(
            "fully connected layer with {n} inputs and {m} outputs needs {} weights, got {}",
            n * m,
            weights.len()
        )));
    }
    Ok((0..m)
        .map(|j| {
            let mut acc = 0.0f32;
            for (i, &xi) in input.iter().enumerate() {
                acc += xi * weights[i * m + j];
            }
            acc + bias[j]
        })
        .collect())
}

/// `max(0, x)` elementwise; NaN passes through unchanged.
pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = relu_scalar(*v));
    out
}

#[inline]
pub(crate) fn relu_scalar(v: f32) -> f32 {
    if v > 0.0 || v.is_nan() {
        v
    } else {
        0.0
    }
}

fn pool_dims(input: &Tensor, kernel: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize)> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::Shape(format!(
            "pooling input must be rank 3 [C, H, W], got {:?}",
            input.shape()
        )));
    };
    if kernel == 0 || stride == 0 {
        return Err(Error::Shape("pooling kernel and stride must be at least 1".into()));
    }
    if h < kernel || w < kernel {
        return Err(Error::Shape(format!(
            "{kernel}x{kernel} pooling window does not fit {h}x{w} input"
        )));
    }
    Ok((c, h, w, (h - kernel) / stride + 1, (w - kernel) / stride + 1))
}

/// Max pooling over square windows. A NaN anywhere in a window makes the
/// window's output NaN.
pub fn max_pool(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w, oh, ow) = pool_dims(input, kernel, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                'window: for ky in 0..kernel {
                    for kx in 0..kernel {
                        let v = x[(ch * h + oy * stride + ky) * w + ox * stride + kx];
                        if v.is_nan() {
                            best = v;
                            break 'window;
                        }
                        if v > best {
                            best = v;
                        }
                    }
                }
                out.push(best);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Average pooling over square windows; the window sum is accumulated in
/// row-major order and divided once.
pub fn avg_pool(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let (c, h, w, oh, ow) = pool_dims(input, kernel, stride)?;
    let x = input.data();
    let area = (kernel * kernel) as f32;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f32;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        acc += x[(ch * h + oy * stride + ky) * w + ox * stride + kx];
                    }
                }
                out.push(acc / area);
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Per-channel `x * scale[c] + shift[c]`, channel being the leading dimension.
pub fn affine_norm(input: &Tensor, scale: &[f32], shift: &[f32]) -> Result<Tensor> {
    let channels = *input
        .shape()
        .first()
        .ok_or_else(|| Error::Shape("affine norm needs at least rank 1".into()))?;
    if scale.len() != channels || shift.len() != channels {
        return Err(Error::Shape(format!(
            "affine norm over {channels} channels got {} scales and {} shifts",
            scale.len(),
            shift.len()
        )));
    }
    let per_channel = input.len() / channels;
    let mut out = input.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let ch = i / per_channel;
        *v = *v * scale[ch] + shift[ch];
    }
    Ok(out)
}

pub fn flatten(input: Tensor) -> Tensor {
    let n = input.len();
    input.reshape(vec![n]).expect("flatten preserves element count")
}
