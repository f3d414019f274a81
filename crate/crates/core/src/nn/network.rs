use sha2::{Digest, Sha256};

use crate::bitflip::{BitAddress, ParamKind};
use crate::error::{Error, Result};
use crate::nn::layer::LayerSpec;
use crate::nn::ops;
use crate::tensor::Tensor;

/// Weights and biases of one layer, flattened in canonical order.
///
/// Convolution weights are `[C_out, C_in, kh, kw]`, fully connected
/// weights `[in][out]`, affine-norm weights the per-channel scales.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl LayerParams {
    pub fn new(weights: Vec<f32>, biases: Vec<f32>) -> Self {
        LayerParams { weights, biases }
    }

    pub fn get(&self, kind: ParamKind) -> &[f32] {
        match kind {
            ParamKind::Weight => &self.weights,
            ParamKind::Bias => &self.biases,
        }
    }

    pub fn get_mut(&mut self, kind: ParamKind) -> &mut Vec<f32> {
        match kind {
            ParamKind::Weight => &mut self.weights,
            ParamKind::Bias => &mut self.biases,
        }
    }
}

/// Location of one stored parameter word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WordAddress {
    pub layer: usize,
    pub kind: ParamKind,
    pub element: usize,
}

impl From<BitAddress> for WordAddress {
    fn from(a: BitAddress) -> Self {
        WordAddress {
            layer: a.layer,
            kind: a.kind,
            element: a.element,
        }
    }
}

/// Anything that maps an input tensor to a logit vector.
pub trait Model: Sync {
    fn forward(&self, input: &Tensor) -> Result<Vec<f32>>;
}

/// A feedforward network: an ordered layer list plus its parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<LayerParams>,
    // canonical word offset of each layer's weights
    offsets: Vec<usize>,
}

impl Network {
    /// Builds a network, checking that consecutive layer shapes chain and
    /// that every layer carries exactly the parameters its spec implies.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, params: Vec<LayerParams>) -> Result<Self> {
        if params.len() != layers.len() {
            return Err(Error::CountMismatch(format!(
                "{} layers but {} parameter sets",
                layers.len(),
                params.len()
            )));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
        }
        let mut shape = input_shape.clone();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for (i, (layer, p)) in layers.iter().zip(&params).enumerate() {
            shape = layer.output_shape(&shape).map_err(|e| e.in_layer(i))?;
            if p.weights.len() != layer.weight_count() || p.biases.len() != layer.bias_count() {
                return Err(Error::CountMismatch(format!(
                    "layer {i} ({layer}) needs {} weights and {} biases, got {} and {}",
                    layer.weight_count(),
                    layer.bias_count(),
                    p.weights.len(),
                    p.biases.len()
                )));
            }
            offsets.push(offset);
            offset += p.weights.len() + p.biases.len();
        }
        Ok(Network {
            input_shape,
            layers,
            params,
            offsets,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn layer_params(&self, layer: usize) -> Option<&LayerParams> {
        self.params.get(layer)
    }

    /// Shape of the final layer's output.
    pub fn output_shape(&self) -> Vec<usize> {
        self.layers
            .iter()
            .try_fold(self.input_shape.clone(), |s, l| l.output_shape(&s))
            .expect("shapes validated at construction")
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.weights.len() + p.biases.len()).sum()
    }

    pub fn bit_count(&self) -> usize {
        self.parameter_count() * 32
    }

    /// Number of stored words of one kind in one layer.
    pub fn len_of(&self, layer: usize, kind: ParamKind) -> usize {
        self.params.get(layer).map_or(0, |p| p.get(kind).len())
    }

    /// Canonical flat word index: layers in order, weights before biases.
    pub fn word_index(&self, word: WordAddress) -> Result<usize> {
        self.check_word(word)?;
        let base = self.offsets[word.layer];
        Ok(match word.kind {
            ParamKind::Weight => base + word.element,
            ParamKind::Bias => base + self.params[word.layer].weights.len() + word.element,
        })
    }

    /// Inverse of [`Network::word_index`].
    pub fn word_at(&self, index: usize) -> Option<WordAddress> {
        let layer = (0..self.layers.len()).find(|&l| {
            let start = self.offsets[l];
            index >= start && index < start + self.params[l].weights.len() + self.params[l].biases.len()
        })?;
        let local = index - self.offsets[layer];
        let nw = self.params[layer].weights.len();
        Some(if local < nw {
            WordAddress {
                layer,
                kind: ParamKind::Weight,
                element: local,
            }
        } else {
            WordAddress {
                layer,
                kind: ParamKind::Bias,
                element: local - nw,
            }
        })
    }

    /// All word addresses in canonical order.
    pub fn words(&self) -> impl Iterator<Item = WordAddress> + '_ {
        self.params.iter().enumerate().flat_map(|(layer, p)| {
            [ParamKind::Weight, ParamKind::Bias]
                .into_iter()
                .flat_map(move |kind| (0..p.get(kind).len()).map(move |element| WordAddress { layer, kind, element }))
        })
    }

    fn check_word(&self, word: WordAddress) -> Result<()> {
        let len = self.len_of(word.layer, word.kind);
        if word.element >= len {
            return Err(Error::InvalidAddress {
                address: BitAddress {
                    layer: word.layer,
                    kind: word.kind,
                    element: word.element,
                    bit: 0,
                },
                reason: if word.layer >= self.layers.len() {
                    format!("network has {} layers", self.layers.len())
                } else {
                    format!("layer has {len} {}s", word.kind)
                },
            });
        }
        Ok(())
    }

    pub fn check_address(&self, address: BitAddress) -> Result<()> {
        if address.bit > 31 {
            return Err(Error::BitIndex(address.bit as u32));
        }
        self.check_word(address.into()).map_err(|_| Error::InvalidAddress {
            address,
            reason: if address.layer >= self.layers.len() {
                format!("network has {} layers", self.layers.len())
            } else {
                format!(
                    "layer {} has {} {}s",
                    address.layer,
                    self.len_of(address.layer, address.kind),
                    address.kind
                )
            },
        })
    }

    pub fn parameter(&self, word: WordAddress) -> Result<f32> {
        self.check_word(word)?;
        Ok(self.params[word.layer].get(word.kind)[word.element])
    }

    pub fn set_parameter(&mut self, word: WordAddress, value: f32) -> Result<()> {
        self.check_word(word)?;
        self.params[word.layer].get_mut(word.kind)[word.element] = value;
        Ok(())
    }

    /// Flips one stored bit in place.
    pub fn flip(&mut self, address: BitAddress) -> Result<()> {
        self.check_address(address)?;
        let v = &mut self.params[address.layer].get_mut(address.kind)[address.element];
        *v = f32::from_bits(v.to_bits() ^ (1 << address.bit));
        Ok(())
    }

    /// A read-only view of this network with one parameter word replaced.
    ///
    /// Only the affected layer's parameters are copied.
    pub fn with_word(&self, word: WordAddress, value: f32) -> Result<PatchedNetwork<'_>> {
        self.check_word(word)?;
        let mut params = self.params[word.layer].clone();
        params.get_mut(word.kind)[word.element] = value;
        Ok(PatchedNetwork {
            base: self,
            layer: word.layer,
            params,
        })
    }

    /// A view of this network with a single bit flipped.
    pub fn with_flip(&self, address: BitAddress) -> Result<PatchedNetwork<'_>> {
        self.check_address(address)?;
        let old = self.params[address.layer].get(address.kind)[address.element];
        self.with_word(address.into(), f32::from_bits(old.to_bits() ^ (1 << address.bit)))
    }

    /// Parameter words in canonical order, as raw bits.
    pub fn canonical_bits(&self) -> Vec<u32> {
        self.params
            .iter()
            .flat_map(|p| p.weights.iter().chain(&p.biases).map(|v| v.to_bits()))
            .collect()
    }

    /// SHA-256 over the layer descriptors and every parameter bit.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.input_shape).as_bytes());
        for l in &self.layers {
            h.update(l.to_string().as_bytes());
            h.update(b";");
        }
        for w in self.canonical_bits() {
            h.update(w.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn params_for(&self, layer: usize) -> &LayerParams {
        &self.params[layer]
    }
}

impl Model for Network {
    fn forward(&self, input: &Tensor) -> Result<Vec<f32>> {
        run_layers(&self.input_shape, &self.layers, |l| self.params_for(l), input)
    }
}

/// A network with one layer's parameters overridden, borrowing the rest.
#[derive(Debug)]
pub struct PatchedNetwork<'a> {
    base: &'a Network,
    layer: usize,
    params: LayerParams,
}

impl Model for PatchedNetwork<'_> {
    fn forward(&self, input: &Tensor) -> Result<Vec<f32>> {
        run_layers(
            &self.base.input_shape,
            &self.base.layers,
            |l| {
                if l == self.layer {
                    &self.params
                } else {
                    self.base.params_for(l)
                }
            },
            input,
        )
    }
}

fn run_layers<'p>(
    input_shape: &[usize],
    layers: &[LayerSpec],
    params: impl Fn(usize) -> &'p LayerParams,
    input: &Tensor,
) -> Result<Vec<f32>> {
    if input.shape() != input_shape {
        return Err(Error::Shape(format!(
            "network expects input {input_shape:?}, got {:?}",
            input.shape()
        )));
    }
    let mut x = input.clone();
    for (i, layer) in layers.iter().enumerate() {
        x = apply_layer(layer, params(i), x).map_err(|e| e.in_layer(i))?;
    }
    Ok(x.into_data())
}

fn apply_layer(layer: &LayerSpec, p: &LayerParams, x: Tensor) -> Result<Tensor> {
    match *layer {
        LayerSpec::Conv2d(g) => ops::conv2d_raw(&x, &g, &p.weights, &p.biases),
        LayerSpec::FullyConnected { in_features, .. } => {
            if x.shape() != [in_features] {
                return Err(Error::Shape(format!(
                    "fully connected layer expects [{in_features}] input, got {:?}",
                    x.shape()
                )));
            }
            Tensor::vector(ops::fully_connected(x.data(), &p.weights, &p.biases)?)
        }
        LayerSpec::Relu => Ok(ops::relu(&x)),
        LayerSpec::MaxPool { kernel, stride } => ops::max_pool(&x, kernel, stride),
        LayerSpec::AvgPool { kernel, stride } => ops::avg_pool(&x, kernel, stride),
        LayerSpec::AffineNorm { .. } => ops::affine_norm(&x, &p.weights, &p.biases),
        LayerSpec::Flatten => Ok(ops::flatten(x)),
    }
}

/// Outcome of arg-maxing a logit vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Class(usize),
    /// Some logit was NaN; never counts as correct.
    Invalid,
}

impl Prediction {
    pub fn is(&self, label: usize) -> bool {
        *self == Prediction::Class(label)
    }
}

/// Arg-max with ties going to the lowest index.
pub fn predict(logits: &[f32]) -> Result<Prediction> {
    if logits.is_empty() {
        return Err(Error::EmptyLogits);
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Ok(Prediction::Invalid);
    }
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    Ok(Prediction::Class(best))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fc_identity(n: usize) -> Network {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Network::new(
            vec![1, 1, n],
            vec![LayerSpec::Flatten, LayerSpec::fully_connected(n, n)],
            vec![LayerParams::default(), LayerParams::new(w, vec![0.0; n])],
        )
        .unwrap()
    }

    #[test]
    fn predict_rules() {
        assert_eq!(predict(&[0.1, 0.9, 0.3]).unwrap(), Prediction::Class(1));
        assert_eq!(predict(&[0.5, 0.5]).unwrap(), Prediction::Class(0));
        assert_eq!(predict(&[f32::NAN, 7.0]).unwrap(), Prediction::Invalid);
        assert!(matches!(predict(&[]), Err(Error::EmptyLogits)));
        assert_eq!(
            predict(&[f32::INFINITY, f32::INFINITY]).unwrap(),
            Prediction::Class(0)
        );
    }

    #[test]
    fn flatten_then_identity() {
        let net = fc_identity(3);
        let x = Tensor::new(vec![1, 1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn relu_only_network() {
        let net = Network::new(vec![3], vec![LayerSpec::Relu], vec![LayerParams::default()]).unwrap();
        let x = Tensor::vector(vec![-1.0, -2.0, -0.1]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn rejects_incompatible_layers_naming_index() {
        let err = Network::new(
            vec![4],
            vec![LayerSpec::Relu, LayerSpec::fully_connected(3, 2)],
            vec![LayerParams::default(), LayerParams::new(vec![0.0; 6], vec![0.0; 2])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Layer { index: 1, .. }), "{err}");
        assert!(err.to_string().starts_with("layer 1"));

        let net = fc_identity(2);
        let bad = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert!(net.forward(&bad).is_err());
    }

    #[test]
    fn rejects_wrong_parameter_counts() {
        let err = Network::new(
            vec![2],
            vec![LayerSpec::fully_connected(2, 2)],
            vec![LayerParams::new(vec![0.0; 3], vec![0.0; 2])],
        );
        assert!(matches!(err, Err(Error::CountMismatch(_))));
    }

    #[test]
    fn word_indexing_round_trips() {
        let net = Network::new(
            vec![1, 4, 4],
            vec![
                LayerSpec::conv2d(1, 2, (2, 2), 1, 0),
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::fully_connected(18, 3),
            ],
            vec![
                LayerParams::new(vec![0.0; 8], vec![0.0; 2]),
                LayerParams::default(),
                LayerParams::default(),
                LayerParams::new(vec![0.0; 54], vec![0.0; 3]),
            ],
        )
        .unwrap();
        let words: Vec<_> = net.words().collect();
        assert_eq!(words.len(), net.parameter_count());
        for (i, w) in words.iter().enumerate() {
            assert_eq!(net.word_index(*w).unwrap(), i);
            assert_eq!(net.word_at(i), Some(*w));
        }
        assert_eq!(net.word_at(words.len()), None);
    }

    #[test]
    fn patched_view_leaves_base_untouched() {
        let net = fc_identity(2);
        let before = net.fingerprint();
        let addr = BitAddress::new(1, ParamKind::Weight, 0, 31).unwrap();
        let view = net.with_flip(addr).unwrap();
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 1.0]).unwrap();
        assert_eq!(view.forward(&x).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(net.forward(&x).unwrap(), vec![1.0, 1.0]);
        assert_eq!(net.fingerprint(), before);
        assert!(net.with_flip(BitAddress::new(0, ParamKind::Weight, 0, 3).unwrap()).is_err());
    }
}
