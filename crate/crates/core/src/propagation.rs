//! Closed-form output perturbation caused by sign flips.
//!
//! A sign flip turns a parameter `w` into `-w`, i.e. adds `-2w`. In a
//! network without activations the output is linear in every single
//! parameter, so the output change is `-2w` times the parameter's
//! coefficient: the upstream activation it multiplies and the downstream
//! weight products that carry it to the output. This module evaluates
//! those coefficients directly as sums over weight products and checks
//! nothing against the inference engine itself; tests compare the two.
//!
//! All deltas are `perturbed - original` and are computed in `f64`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::bitflip::{BitAddress, ParamKind, SIGN_BIT};
use crate::engine::{evaluate, KindFilter, Metric};
use crate::error::{Error, Result};
use crate::model_io::LabeledDataset;
use crate::nn::{ConvGeometry, LayerParams, LayerSpec, Model, Network};
use crate::tensor::Tensor;

/// A chain of fully connected layers with no activations.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearChainNet {
    dims: Vec<usize>,
    weights: Vec<Vec<f32>>,
    biases: Option<Vec<Vec<f32>>>,
}

impl LinearChainNet {
    /// `dims[l] -> dims[l + 1]` for each layer; `weights[l]` is row-major
    /// `[dims[l]][dims[l + 1]]`.
    pub fn new(dims: Vec<usize>, weights: Vec<Vec<f32>>) -> Result<Self> {
        if dims.len() < 2 || dims.len() != weights.len() + 1 {
            return Err(Error::Shape(format!(
                "{} widths cannot describe {} layers",
                dims.len(),
                weights.len()
            )));
        }
        for (l, w) in weights.iter().enumerate() {
            if w.len() != dims[l] * dims[l + 1] {
                return Err(Error::Shape(format!(
                    "layer {l} maps {} -> {} and needs {} weights, got {}",
                    dims[l],
                    dims[l + 1],
                    dims[l] * dims[l + 1],
                    w.len()
                )));
            }
        }
        Ok(LinearChainNet {
            dims,
            weights,
            biases: None,
        })
    }

    pub fn with_biases(mut self, biases: Vec<Vec<f32>>) -> Result<Self> {
        if biases.len() != self.weights.len()
            || biases.iter().enumerate().any(|(l, b)| b.len() != self.dims[l + 1])
        {
            return Err(Error::Shape("bias vectors do not match layer widths".into()));
        }
        self.biases = Some(biases);
        Ok(self)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn weights(&self) -> &[Vec<f32>] {
        &self.weights
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    /// The same chain as an inference network (zero biases if none were given).
    pub fn to_network(&self) -> Result<Network> {
        let layers = (0..self.depth())
            .map(|l| LayerSpec::fully_connected(self.dims[l], self.dims[l + 1]))
            .collect();
        let params = (0..self.depth())
            .map(|l| {
                let b = match &self.biases {
                    Some(b) => b[l].clone(),
                    None => vec![0.0; self.dims[l + 1]],
                };
                LayerParams::new(self.weights[l].clone(), b)
            })
            .collect();
        Network::new(vec![self.dims[0]], layers, params)
    }

    /// Activations entering layer `layer`.
    fn upstream(&self, input: &[f32], layer: usize) -> Vec<f64> {
        let mut a: Vec<f64> = input.iter().map(|&v| v as f64).collect();
        for l in 0..layer {
            let m = self.dims[l + 1];
            a = (0..m)
                .map(|j| {
                    let b = self.biases.as_ref().map_or(0.0, |b| b[l][j] as f64);
                    b + a.iter().enumerate().map(|(i, ai)| ai * self.weights[l][i * m + j] as f64).sum::<f64>()
                })
                .collect();
        }
        a
    }

    /// Sum of weight-path products from output `j` of `layer` to each final output.
    fn downstream(&self, layer: usize, j: usize) -> Vec<f64> {
        let mut d = vec![0.0f64; self.dims[layer + 1]];
        d[j] = 1.0;
        for l in layer + 1..self.depth() {
            let m = self.dims[l + 1];
            d = (0..m)
                .map(|k| d.iter().enumerate().map(|(i, di)| di * self.weights[l][i * m + k] as f64).sum())
                .collect();
        }
        d
    }
}

/// Output change of a linear chain when the sign of one weight flips.
///
/// For weight `w` connecting input `i` to output `j` of layer `l`, the
/// final output `k` moves by `-2 * w * a_i * D[j][k]`, where `a_i` is the
/// activation entering layer `l` and `D = W_{l+1} ... W_L`.
pub fn fc_sign_flip_delta(chain: &LinearChainNet, flipped: BitAddress, input: &[f32]) -> Result<Vec<f64>> {
    if flipped.bit as u32 != SIGN_BIT {
        return Err(Error::InvalidAddress {
            address: flipped,
            reason: "closed form covers sign flips only".into(),
        });
    }
    if flipped.kind != ParamKind::Weight {
        return Err(Error::InvalidAddress {
            address: flipped,
            reason: "closed form covers weights only".into(),
        });
    }
    let l = flipped.layer;
    if l >= chain.depth() || flipped.element >= chain.weights[l].len() {
        return Err(Error::InvalidAddress {
            address: flipped,
            reason: "no such weight in the chain".into(),
        });
    }
    if input.len() != chain.dims[0] {
        return Err(Error::Shape(format!(
            "chain expects {} inputs, got {}",
            chain.dims[0],
            input.len()
        )));
    }
    let m = chain.dims[l + 1];
    let (i, j) = (flipped.element / m, flipped.element % m);
    let w = chain.weights[l][flipped.element] as f64;
    let a = chain.upstream(input, l)[i];
    Ok(chain.downstream(l, j).into_iter().map(|d| -2.0 * w * a * d).collect())
}

/// One convolution layer's geometry and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub geometry: ConvGeometry,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl ConvLayer {
    pub fn new(geometry: ConvGeometry, weights: Vec<f32>, biases: Vec<f32>) -> Result<Self> {
        if weights.len() != geometry.weight_count() || biases.len() != geometry.out_channels {
            return Err(Error::Shape(format!(
                "convolution needs {} weights and {} biases, got {} and {}",
                geometry.weight_count(),
                geometry.out_channels,
                weights.len(),
                biases.len()
            )));
        }
        Ok(ConvLayer {
            geometry,
            weights,
            biases,
        })
    }

    fn weight(&self, oc: usize, ic: usize, r: usize, s: usize) -> f64 {
        self.weights[self.geometry.weight_index(oc, ic, r, s)] as f64
    }

    fn check_index(&self, idx: ConvWeightIndex) -> Result<()> {
        let g = &self.geometry;
        if idx.out_channel >= g.out_channels || idx.in_channel >= g.in_channels || idx.row >= g.kernel_h || idx.col >= g.kernel_w {
            return Err(Error::Shape(format!("weight index {idx:?} outside kernel tensor")));
        }
        Ok(())
    }

    /// Input coordinate read by output `(y, x)` at kernel tap `(r, s)`, if
    /// it is not in the zero padding.
    fn tap(&self, y: usize, x: usize, r: usize, s: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        let g = &self.geometry;
        let iy = (y * g.stride + r).checked_sub(g.padding)?;
        let ix = (x * g.stride + s).checked_sub(g.padding)?;
        (iy < h && ix < w).then_some((iy, ix))
    }
}

/// Position of one weight `w[out][in][row][col]` in a convolution kernel tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvWeightIndex {
    pub out_channel: usize,
    pub in_channel: usize,
    pub row: usize,
    pub col: usize,
}

/// A kernel-shaped mask with a single 1 at `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectorKernel {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub row: usize,
    pub col: usize,
}

impl SelectorKernel {
    pub fn new(kernel_h: usize, kernel_w: usize, row: usize, col: usize) -> Result<Self> {
        if row >= kernel_h || col >= kernel_w {
            return Err(Error::Shape(format!(
                "selector position ({row}, {col}) outside {kernel_h}x{kernel_w} kernel"
            )));
        }
        Ok(SelectorKernel {
            kernel_h,
            kernel_w,
            row,
            col,
        })
    }

    pub fn mask(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.kernel_h * self.kernel_w];
        m[self.row * self.kernel_w + self.col] = 1.0;
        m
    }
}

/// `[C, H, W]` map of `f64` deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMap {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl DeltaMap {
    fn zeros(shape: [usize; 3]) -> Self {
        DeltaMap {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }

    fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape[1] * self.shape[2];
        &self.data[c * n..(c + 1) * n]
    }
}

fn chw(input: &Tensor, channels: usize) -> Result<(usize, usize)> {
    match *input.shape() {
        [c, h, w] if c == channels => Ok((h, w)),
        _ => Err(Error::Shape(format!(
            "expected [{channels}, H, W] feature maps, got {:?}",
            input.shape()
        ))),
    }
}

/// Correlates one `h x w` plane with a `kh x kw` kernel under the layer's
/// stride and zero padding.
fn correlate_plane(layer: &ConvLayer, plane: &[f64], (h, w): (usize, usize), kernel: &[f64]) -> Result<Vec<f64>> {
    let g = &layer.geometry;
    let (oh, ow) = g.output_hw(h, w)?;
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for r in 0..g.kernel_h {
                for s in 0..g.kernel_w {
                    if let Some((iy, ix)) = layer.tap(y, x, r, s, h, w) {
                        acc += kernel[r * g.kernel_w + s] * plane[iy * w + ix];
                    }
                }
            }
            out[y * ow + x] = acc;
        }
    }
    Ok(out)
}

/// Output change of a convolution layer when weight `w[q][p][r][s]`
/// flips sign: `-2 w (IF_p (x) S_rs)` on output channel `q`, zero elsewhere.
pub fn conv_weight_sign_flip_delta(layer: &ConvLayer, flipped: ConvWeightIndex, input: &Tensor) -> Result<DeltaMap> {
    layer.check_index(flipped)?;
    let g = &layer.geometry;
    let (h, w) = chw(input, g.in_channels)?;
    let (oh, ow) = g.output_hw(h, w)?;
    let selector = SelectorKernel::new(g.kernel_h, g.kernel_w, flipped.row, flipped.col)?;
    let plane: Vec<f64> = input.data()[flipped.in_channel * h * w..(flipped.in_channel + 1) * h * w]
        .iter()
        .map(|&v| v as f64)
        .collect();
    let shifted = correlate_plane(layer, &plane, (h, w), &selector.mask())?;
    let omega = layer.weight(flipped.out_channel, flipped.in_channel, flipped.row, flipped.col);
    let mut delta = DeltaMap::zeros([g.out_channels, oh, ow]);
    for (i, v) in shifted.into_iter().enumerate() {
        delta.data[flipped.out_channel * oh * ow + i] = -2.0 * omega * v;
    }
    Ok(delta)
}

/// Output change of a convolution layer when bias `b[q]` flips sign:
/// `-2 b_q` across all of output channel `q`.
pub fn conv_bias_sign_flip_delta(layer: &ConvLayer, out_channel: usize, input_hw: (usize, usize)) -> Result<DeltaMap> {
    let g = &layer.geometry;
    if out_channel >= g.out_channels {
        return Err(Error::Shape(format!(
            "bias index {out_channel} outside {} output channels",
            g.out_channels
        )));
    }
    let (oh, ow) = g.output_hw(input_hw.0, input_hw.1)?;
    let mut delta = DeltaMap::zeros([g.out_channels, oh, ow]);
    let b = layer.biases[out_channel] as f64;
    for v in &mut delta.data[out_channel * oh * ow..(out_channel + 1) * oh * ow] {
        *v = -2.0 * b;
    }
    Ok(delta)
}

/// Original (unflipped) layer output in `f64`.
fn conv_forward_f64(layer: &ConvLayer, input: &[f64], (c, h, w): (usize, usize, usize)) -> Result<(Vec<f64>, [usize; 3])> {
    let g = &layer.geometry;
    let (oh, ow) = g.output_hw(h, w)?;
    let mut out = DeltaMap::zeros([g.out_channels, oh, ow]);
    for q in 0..g.out_channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = layer.biases[q] as f64;
                for p in 0..c {
                    for r in 0..g.kernel_h {
                        for s in 0..g.kernel_w {
                            if let Some((iy, ix)) = layer.tap(y, x, r, s, h, w) {
                                acc += layer.weight(q, p, r, s) * input[(p * h + iy) * w + ix];
                            }
                        }
                    }
                }
                *out.at_mut(q, y, x) = acc;
            }
        }
    }
    Ok((out.data, out.shape))
}

/// Change at one output position of an activation-free three-layer
/// convolution stack when the sign of one weight flips.
///
/// `flipped_layer` is 0, 1 or 2 (first, second, third convolution) and
/// `position` is `(channel, row, col)` in the third layer's output. For a
/// first-layer flip of `w1[q1][p][r][s]` the change is the five-fold sum
///
/// `-2 w1 * sum_{q2, r3, s3, i2, j2} w3[c][q2][r3][s3] w2[q2][q1][i2][j2] I[p][..]`
///
/// over every kernel tap whose index chain stays out of the padding. For a
/// second-layer flip of `w2[q2][p1][i][j]` the first layer's original
/// output channel `p1` takes the place of the input plane.
pub fn conv_stack_delta(
    stack: &[ConvLayer; 3],
    flipped_layer: usize,
    flipped: ConvWeightIndex,
    input: &Tensor,
    position: (usize, usize, usize),
) -> Result<f64> {
    if flipped_layer > 2 {
        return Err(Error::Shape(format!("stack has 3 layers, got layer {flipped_layer}")));
    }
    stack[flipped_layer].check_index(flipped)?;
    let (h0, w0) = chw(input, stack[0].geometry.in_channels)?;
    for l in 1..3 {
        if stack[l].geometry.in_channels != stack[l - 1].geometry.out_channels {
            return Err(Error::Shape(format!(
                "layer {l} expects {} channels, previous layer produces {}",
                stack[l].geometry.in_channels,
                stack[l - 1].geometry.out_channels
            )));
        }
    }
    let (h1, w1) = stack[0].geometry.output_hw(h0, w0)?;
    let (h2, w2) = stack[1].geometry.output_hw(h1, w1)?;
    let (h3, w3) = stack[2].geometry.output_hw(h2, w2)?;
    let (c, y, x) = position;
    if c >= stack[2].geometry.out_channels || y >= h3 || x >= w3 {
        return Err(Error::Shape(format!(
            "output position {position:?} outside [{}, {h3}, {w3}]",
            stack[2].geometry.out_channels
        )));
    }
    let input64: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
    let ConvWeightIndex {
        out_channel: q,
        in_channel: p,
        row: r,
        col: s,
    } = flipped;
    let (l1, l2, l3) = (&stack[0], &stack[1], &stack[2]);
    let (g2, g3) = (&l2.geometry, &l3.geometry);

    let sum = match flipped_layer {
        0 => {
            let plane = &input64[p * h0 * w0..(p + 1) * h0 * w0];
            let mut acc = 0.0;
            for q2 in 0..g3.in_channels {
                for r3 in 0..g3.kernel_h {
                    for s3 in 0..g3.kernel_w {
                        let Some((y2, x2)) = l3.tap(y, x, r3, s3, h2, w2) else { continue };
                        for i2 in 0..g2.kernel_h {
                            for j2 in 0..g2.kernel_w {
                                let Some((y1, x1)) = l2.tap(y2, x2, i2, j2, h1, w1) else { continue };
                                let Some((y0, x0)) = l1.tap(y1, x1, r, s, h0, w0) else { continue };
                                acc += l3.weight(c, q2, r3, s3) * l2.weight(q2, q, i2, j2) * plane[y0 * w0 + x0];
                            }
                        }
                    }
                }
            }
            -2.0 * l1.weight(q, p, r, s) * acc
        }
        1 => {
            let (of1, _) = conv_forward_f64(l1, &input64, (l1.geometry.in_channels, h0, w0))?;
            let plane = &of1[p * h1 * w1..(p + 1) * h1 * w1];
            let mut acc = 0.0;
            for r3 in 0..g3.kernel_h {
                for s3 in 0..g3.kernel_w {
                    let Some((y2, x2)) = l3.tap(y, x, r3, s3, h2, w2) else { continue };
                    let Some((y1, x1)) = l2.tap(y2, x2, r, s, h1, w1) else { continue };
                    acc += l3.weight(c, q, r3, s3) * plane[y1 * w1 + x1];
                }
            }
            -2.0 * l2.weight(q, p, r, s) * acc
        }
        _ => {
            if q != c {
                return Ok(0.0);
            }
            let (of1, _) = conv_forward_f64(l1, &input64, (l1.geometry.in_channels, h0, w0))?;
            let (of2, _) = conv_forward_f64(l2, &of1, (g2.in_channels, h1, w1))?;
            let plane = &of2[p * h2 * w2..(p + 1) * h2 * w2];
            let v = l3.tap(y, x, r, s, h2, w2).map_or(0.0, |(y2, x2)| plane[y2 * w2 + x2]);
            -2.0 * l3.weight(q, p, r, s) * v
        }
    };
    Ok(sum)
}

/// Per-layer summary of sign-flip sensitivity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSensitivity {
    pub layer: usize,
    pub bit_class: String,
    pub flips: usize,
    pub mean_abs_delta_p: f64,
    pub max_abs_delta_p: f64,
    /// Fraction of flips that change at least one logit bit on some sample.
    pub reach_fraction: f64,
    /// Largest `|logit' - logit|` observed; infinite if any logit became non-finite.
    pub max_abs_logit_delta: f64,
}

/// Flips the sign of every parameter of the selected kinds in every
/// parameterized layer and summarizes, per layer, how much the metric moved
/// and how often the perturbation reached the logits at all.
pub fn layer_sensitivity_profile(
    network: &Network,
    dataset: &LabeledDataset,
    metric: &dyn Metric,
    kinds: KindFilter,
) -> Result<Vec<LayerSensitivity>> {
    let p_original = evaluate(network, dataset, metric)?;
    let base_logits = dataset
        .samples()
        .iter()
        .map(|s| network.forward(s))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for (layer, spec) in network.layers().iter().enumerate() {
        if !spec.is_parameterized() {
            continue;
        }
        let addresses: Vec<BitAddress> = [ParamKind::Weight, ParamKind::Bias]
            .into_iter()
            .filter(|k| kinds.matches(*k))
            .flat_map(|kind| {
                (0..network.len_of(layer, kind)).map(move |element| BitAddress {
                    layer,
                    kind,
                    element,
                    bit: SIGN_BIT as u8,
                })
            })
            .collect();
        if addresses.is_empty() {
            continue;
        }
        let per_flip = addresses
            .par_iter()
            .map(|&a| -> Result<(f64, bool, f64)> {
                let view = network.with_flip(a)?;
                let dp = (p_original - evaluate(&view, dataset, metric)?).abs();
                let mut reached = false;
                let mut max_delta = 0.0f64;
                for (sample, base) in dataset.samples().iter().zip(&base_logits) {
                    let logits = view.forward(sample)?;
                    for (a, b) in logits.iter().zip(base) {
                        if a.to_bits() != b.to_bits() {
                            reached = true;
                            let d = (*a as f64 - *b as f64).abs();
                            max_delta = if d.is_nan() { f64::INFINITY } else { max_delta.max(d) };
                        }
                    }
                }
                Ok((dp, reached, max_delta))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per_flip.len() as f64;
        out.push(LayerSensitivity {
            layer,
            bit_class: "sign".into(),
            flips: per_flip.len(),
            mean_abs_delta_p: per_flip.iter().map(|f| f.0).sum::<f64>() / n,
            max_abs_delta_p: per_flip.iter().map(|f| f.0).fold(0.0, f64::max),
            reach_fraction: per_flip.iter().filter(|f| f.1).count() as f64 / n,
            max_abs_logit_delta: per_flip.iter().map(|f| f.2).fold(0.0, f64::max),
        });
    }
    Ok(out)
}

/// CSV columns: `layer,bit_class,mean_abs_delta_p,max_abs_delta_p,reach_fraction`.
pub fn write_profile_csv<W: Write>(writer: W, profile: &[LayerSensitivity]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["layer", "bit_class", "mean_abs_delta_p", "max_abs_delta_p", "reach_fraction"])?;
    for p in profile {
        w.write_record([
            p.layer.to_string(),
            p.bit_class.clone(),
            p.mean_abs_delta_p.to_string(),
            p.max_abs_delta_p.to_string(),
            p.reach_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops::conv2d;

    fn identity_chain(n: usize, depth: usize) -> LinearChainNet {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        LinearChainNet::new(vec![n; depth + 1], vec![w; depth]).unwrap()
    }

    fn sign(layer: usize, element: usize) -> BitAddress {
        BitAddress::new(layer, ParamKind::Weight, element, 31).unwrap()
    }

    #[test]
    fn identity_chain_flip() {
        let chain = identity_chain(2, 3);
        // first layer, input 2 -> output 2 (element 3 of the 2x2 matrix)
        let d = fc_sign_flip_delta(&chain, sign(0, 3), &[0.0, 1.0]).unwrap();
        assert_eq!(d, vec![0.0, -2.0]);
    }

    #[test]
    fn zero_input_gives_zero_delta() {
        let chain = LinearChainNet::new(vec![2, 2, 2], vec![vec![0.3, -1.2, 0.7, 2.0], vec![1.5, 0.1, -0.4, 0.9]]).unwrap();
        for l in 0..2 {
            for e in 0..4 {
                let d = fc_sign_flip_delta(&chain, sign(l, e), &[0.0, 0.0]).unwrap();
                assert!(d.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn rejects_non_sign_and_bias() {
        let chain = identity_chain(2, 2);
        let exp = BitAddress::new(0, ParamKind::Weight, 0, 30).unwrap();
        assert!(fc_sign_flip_delta(&chain, exp, &[1.0, 1.0]).is_err());
        let bias = BitAddress::new(0, ParamKind::Bias, 0, 31).unwrap();
        assert!(fc_sign_flip_delta(&chain, bias, &[1.0, 1.0]).is_err());
        assert!(fc_sign_flip_delta(&chain, sign(5, 0), &[1.0, 1.0]).is_err());
    }

    #[test]
    fn two_two_two_two_chain_matches_hand_expansion() {
        // w[l][i][j]: layer l, input i, output j (0-based here)
        let w1 = vec![0.5f32, -1.0, 2.0, 0.25];
        let w2 = vec![1.5f32, 0.5, -0.75, 2.0];
        let w3 = vec![-1.0f32, 0.5, 3.0, 1.25];
        let chain = LinearChainNet::new(vec![2, 2, 2, 2], vec![w1.clone(), w2.clone(), w3.clone()]).unwrap();
        let input = [0.8f32, -1.5];
        let at = |w: &Vec<f32>, i: usize, j: usize| w[i * 2 + j] as f64;
        // flip w1[1][1]: delta_3j = -2 (w3[0][j] w2[1][0] + w3[1][j] w2[1][1]) w1[1][1] I_1
        let d = fc_sign_flip_delta(&chain, sign(0, 3), &input).unwrap();
        for (j, dj) in d.iter().enumerate() {
            let expect = -2.0
                * (at(&w3, 0, j) * at(&w2, 1, 0) + at(&w3, 1, j) * at(&w2, 1, 1))
                * at(&w1, 1, 1)
                * input[1] as f64;
            assert!((dj - expect).abs() < 1e-12);
        }
        // flip w2[1][1]: delta_3j = -2 w3[1][j] w2[1][1] (w1[0][1] I_0 + w1[1][1] I_1)
        let d = fc_sign_flip_delta(&chain, sign(1, 3), &input).unwrap();
        for (j, dj) in d.iter().enumerate() {
            let expect = -2.0
                * at(&w3, 1, j)
                * at(&w2, 1, 1)
                * (at(&w1, 0, 1) * input[0] as f64 + at(&w1, 1, 1) * input[1] as f64);
            assert!((dj - expect).abs() < 1e-12);
        }
    }

    fn conv(ic: usize, oc: usize, k: usize, stride: usize, pad: usize, weights: Vec<f32>, biases: Vec<f32>) -> ConvLayer {
        ConvLayer::new(
            ConvGeometry {
                in_channels: ic,
                out_channels: oc,
                kernel_h: k,
                kernel_w: k,
                stride,
                padding: pad,
            },
            weights,
            biases,
        )
        .unwrap()
    }

    #[test]
    fn center_weight_flip_on_ones() {
        let w = 0.75f32;
        let mut k = vec![0.1f32; 9];
        k[4] = w;
        let layer = conv(1, 1, 3, 1, 1, k, vec![0.0]);
        let input = Tensor::new(vec![1, 3, 3], vec![1.0; 9]).unwrap();
        let idx = ConvWeightIndex {
            out_channel: 0,
            in_channel: 0,
            row: 1,
            col: 1,
        };
        let d = conv_weight_sign_flip_delta(&layer, idx, &input).unwrap();
        assert_eq!(d.shape, [1, 3, 3]);
        // the center tap reads the input at the output position: all ones
        for v in &d.data {
            assert_eq!(*v, -2.0 * w as f64);
        }
        // a corner tap falls into the padding along two edges
        let corner = conv_weight_sign_flip_delta(
            &layer,
            ConvWeightIndex { row: 0, col: 0, ..idx },
            &input,
        )
        .unwrap();
        assert_eq!(corner.at(0, 0, 0), 0.0);
        assert_eq!(corner.at(0, 1, 1), -0.2f32 as f64);
    }

    #[test]
    fn zero_weight_gives_zero_map() {
        let layer = conv(2, 2, 2, 1, 0, vec![0.0; 16], vec![1.0, 2.0]);
        let input = Tensor::new(vec![2, 3, 3], (0..18).map(|v| v as f32).collect()).unwrap();
        let idx = ConvWeightIndex {
            out_channel: 1,
            in_channel: 0,
            row: 1,
            col: 0,
        };
        let d = conv_weight_sign_flip_delta(&layer, idx, &input).unwrap();
        assert!(d.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn weight_flip_touches_one_channel() {
        let layer = conv(2, 3, 2, 1, 0, (0..24).map(|v| v as f32 * 0.1 - 1.0).collect(), vec![0.0; 3]);
        let input = Tensor::new(vec![2, 3, 3], (0..18).map(|v| v as f32 * 0.3).collect()).unwrap();
        let idx = ConvWeightIndex {
            out_channel: 1,
            in_channel: 1,
            row: 0,
            col: 1,
        };
        let d = conv_weight_sign_flip_delta(&layer, idx, &input).unwrap();
        assert!(d.channel(0).iter().chain(d.channel(2)).all(|v| *v == 0.0));
        assert!(d.channel(1).iter().all(|v| *v != 0.0));
    }

    #[test]
    fn bias_flip_is_uniform() {
        let layer = conv(1, 2, 2, 1, 0, vec![0.5; 8], vec![1.5, 0.0]);
        let d = conv_bias_sign_flip_delta(&layer, 0, (3, 3)).unwrap();
        assert_eq!(d.channel(0), &[-3.0; 4]);
        assert_eq!(d.channel(1), &[0.0; 4]);
        let d = conv_bias_sign_flip_delta(&layer, 1, (3, 3)).unwrap();
        assert!(d.data.iter().all(|v| *v == 0.0));
        assert!(conv_bias_sign_flip_delta(&layer, 2, (3, 3)).is_err());
    }

    #[test]
    fn bias_flip_matches_forward_exactly_on_dyadic_values() {
        let layer = conv(1, 2, 2, 1, 0, vec![0.5, -0.25, 1.0, 0.125, 2.0, 0.5, -1.0, 0.75], vec![1.5, -0.375]);
        let input = Tensor::new(vec![1, 3, 3], vec![1.0, 0.5, -2.0, 0.25, 1.0, 3.0, -0.5, 0.0, 1.5]).unwrap();
        let k = Tensor::new(vec![2, 1, 2, 2], layer.weights.clone()).unwrap();
        let base = conv2d(&input, &k, &layer.biases, 1, 0).unwrap();
        for q in 0..2 {
            let mut b = layer.biases.clone();
            b[q] = -b[q];
            let flipped = conv2d(&input, &k, &b, 1, 0).unwrap();
            let d = conv_bias_sign_flip_delta(&layer, q, (3, 3)).unwrap();
            for (i, (a, o)) in flipped.data().iter().zip(base.data()).enumerate() {
                assert_eq!((*a - *o) as f64, d.data[i]);
            }
        }
    }

    #[test]
    fn stack_of_unit_kernels() {
        let one = || conv(1, 1, 1, 1, 0, vec![1.0], vec![0.0]);
        let stack = [one(), one(), one()];
        let input = Tensor::new(vec![1, 3, 3], vec![1.0; 9]).unwrap();
        let idx = ConvWeightIndex {
            out_channel: 0,
            in_channel: 0,
            row: 0,
            col: 0,
        };
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(conv_stack_delta(&stack, 0, idx, &input, (0, y, x)).unwrap(), -2.0);
            }
        }
        assert!(conv_stack_delta(&stack, 0, idx, &input, (0, 3, 0)).is_err());
        assert!(conv_stack_delta(&stack, 3, idx, &input, (0, 0, 0)).is_err());
    }

    #[test]
    fn zero_last_layer_kills_delta() {
        let stack = [
            conv(1, 2, 2, 1, 0, vec![0.5; 8], vec![0.1, 0.2]),
            conv(2, 2, 2, 1, 0, vec![-0.5; 16], vec![0.3, 0.4]),
            conv(2, 1, 2, 1, 0, vec![0.0; 8], vec![1.0]),
        ];
        let input = Tensor::new(vec![1, 5, 5], (0..25).map(|v| v as f32).collect()).unwrap();
        for layer in 0..2 {
            let idx = ConvWeightIndex {
                out_channel: 1,
                in_channel: 0,
                row: 1,
                col: 1,
            };
            assert_eq!(conv_stack_delta(&stack, layer, idx, &input, (0, 1, 1)).unwrap(), 0.0);
        }
    }

    #[test]
    fn delta_scales_with_weight() {
        let chain = LinearChainNet::new(vec![2, 2, 2], vec![vec![0.3, -1.2, 0.7, 2.0], vec![1.5, 0.1, -0.4, 0.9]]).unwrap();
        let mut doubled = chain.clone();
        doubled.weights[0][2] *= 2.0;
        let a = fc_sign_flip_delta(&chain, sign(0, 2), &[1.0, -0.5]).unwrap();
        let b = fc_sign_flip_delta(&doubled, sign(0, 2), &[1.0, -0.5]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }
}
