use std::fmt;

use crate::error::{Error, Result};
use crate::nn::ops::ConvGeometry;

/// One layer of a feedforward network.
///
/// Batch normalization is folded into [`LayerSpec::AffineNorm`]; its
/// weights are the per-channel scales and its biases the shifts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d(ConvGeometry),
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    AffineNorm {
        channels: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn conv2d(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Self {
        LayerSpec::Conv2d(ConvGeometry {
            in_channels,
            out_channels,
            kernel_h: kernel.0,
            kernel_w: kernel.1,
            stride,
            padding,
        })
    }

    pub fn fully_connected(in_features: usize, out_features: usize) -> Self {
        LayerSpec::FullyConnected {
            in_features,
            out_features,
        }
    }

    pub fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d(g) => g.weight_count(),
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => in_features * out_features,
            LayerSpec::AffineNorm { channels } => channels,
            _ => 0,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d(g) => g.out_channels,
            LayerSpec::FullyConnected { out_features, .. } => out_features,
            LayerSpec::AffineNorm { channels } => channels,
            _ => 0,
        }
    }

    pub fn is_parameterized(&self) -> bool {
        self.weight_count() + self.bias_count() > 0
    }

    /// Stable lowercase type tag, as used in model manifests.
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d(_) => "conv2d",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::AvgPool { .. } => "avg_pool",
            LayerSpec::AffineNorm { .. } => "affine_norm",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Shape produced by this layer for the given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d(g) => {
                let &[c, h, w] = input else {
                    return Err(Error::Shape(format!(
                        "conv2d expects [C, H, W] input, got {input:?}"
                    )));
                };
                if c != g.in_channels {
                    return Err(Error::Shape(format!(
                        "conv2d expects {} input channels, got {c}",
                        g.in_channels
                    )));
                }
                let (oh, ow) = g.output_hw(h, w)?;
                Ok(vec![g.out_channels, oh, ow])
            }
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => {
                if input != [in_features] {
                    return Err(Error::Shape(format!(
                        "fully connected layer expects [{in_features}] input, got {input:?}"
                    )));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool { kernel, stride } | LayerSpec::AvgPool { kernel, stride } => {
                let &[c, h, w] = input else {
                    return Err(Error::Shape(format!(
                        "pooling expects [C, H, W] input, got {input:?}"
                    )));
                };
                if kernel == 0 || stride == 0 || h < kernel || w < kernel {
                    return Err(Error::Shape(format!(
                        "pooling kernel {kernel} stride {stride} does not fit {h}x{w} input"
                    )));
                }
                Ok(vec![c, (h - kernel) / stride + 1, (w - kernel) / stride + 1])
            }
            LayerSpec::AffineNorm { channels } => {
                if input.first() != Some(&channels) {
                    return Err(Error::Shape(format!(
                        "affine norm over {channels} channels got input {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d(g) => write!(
                f,
                "conv2d({}->{}, {}x{}, stride {}, pad {})",
                g.in_channels, g.out_channels, g.kernel_h, g.kernel_w, g.stride, g.padding
            ),
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => write!(f, "fully_connected({in_features}->{out_features})"),
            LayerSpec::MaxPool { kernel, stride } => write!(f, "max_pool({kernel}, stride {stride})"),
            LayerSpec::AvgPool { kernel, stride } => write!(f, "avg_pool({kernel}, stride {stride})"),
            LayerSpec::AffineNorm { channels } => write!(f, "affine_norm({channels})"),
            other => f.write_str(other.type_name()),
        }
    }
}
