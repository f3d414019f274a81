//! Model manifest (TOML) plus raw little-endian binary32 parameter blob.
//!
//! The blob is the concatenation of every parameterized layer's weights
//! followed by its biases, layers in network order. That order defines the
//! canonical flat index used by [`crate::bitflip::BitAddress`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{ConvGeometry, LayerParams, LayerSpec, Network};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpan {
    pub offset: usize,
    pub count: usize,
}

#[derive(Debug, Deserialize)]
struct RawLayer {
    #[serde(rename = "type")]
    kind: String,
    in_channels: Option<usize>,
    out_channels: Option<usize>,
    kernel_h: Option<usize>,
    kernel_w: Option<usize>,
    stride: Option<usize>,
    padding: Option<usize>,
    in_features: Option<usize>,
    out_features: Option<usize>,
    kernel: Option<usize>,
    channels: Option<usize>,
    weights: Option<BlobSpan>,
    biases: Option<BlobSpan>,
}

#[derive(Debug, Deserialize)]
struct RawManifest {
    format_version: u32,
    input_shape: Vec<usize>,
    blob_words: usize,
    blob_sha256: String,
    #[serde(default)]
    layers: Vec<RawLayer>,
}

fn field(layer: usize, name: &str, v: Option<usize>) -> Result<usize> {
    v.ok_or_else(|| Error::Manifest(format!("layer {layer}: missing field `{name}`")))
}

impl RawLayer {
    fn to_spec(&self, i: usize) -> Result<LayerSpec> {
        Ok(match self.kind.as_str() {
            "conv2d" => LayerSpec::Conv2d(ConvGeometry {
                in_channels: field(i, "in_channels", self.in_channels)?,
                out_channels: field(i, "out_channels", self.out_channels)?,
                kernel_h: field(i, "kernel_h", self.kernel_h)?,
                kernel_w: field(i, "kernel_w", self.kernel_w)?,
                stride: field(i, "stride", self.stride)?,
                padding: field(i, "padding", self.padding)?,
            }),
            "fully_connected" => LayerSpec::FullyConnected {
                in_features: field(i, "in_features", self.in_features)?,
                out_features: field(i, "out_features", self.out_features)?,
            },
            "relu" => LayerSpec::Relu,
            "max_pool" => LayerSpec::MaxPool {
                kernel: field(i, "kernel", self.kernel)?,
                stride: field(i, "stride", self.stride)?,
            },
            "avg_pool" => LayerSpec::AvgPool {
                kernel: field(i, "kernel", self.kernel)?,
                stride: field(i, "stride", self.stride)?,
            },
            "affine_norm" => LayerSpec::AffineNorm {
                channels: field(i, "channels", self.channels)?,
            },
            "flatten" => LayerSpec::Flatten,
            other => return Err(Error::UnknownLayerType(other.to_string())),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses a manifest document and a blob into a network.
pub fn parse_model(manifest: &str, blob: &[u8]) -> Result<Network> {
    let raw: RawManifest = toml::from_str(manifest).map_err(|e| Error::Manifest(e.to_string()))?;
    if raw.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(raw.format_version));
    }
    let specs = raw
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| l.to_spec(i))
        .collect::<Result<Vec<_>>>()?;

    if !blob.len().is_multiple_of(4) || blob.len() / 4 != raw.blob_words {
        return Err(Error::CountMismatch(format!(
            "manifest declares {} blob words ({} bytes), blob has {} bytes",
            raw.blob_words,
            raw.blob_words * 4,
            blob.len()
        )));
    }
    let actual = sha256_hex(blob);
    if !actual.eq_ignore_ascii_case(raw.blob_sha256.trim()) {
        return Err(Error::Checksum {
            expected: raw.blob_sha256,
            actual,
        });
    }
    let words: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();

    let mut spans: Vec<(BlobSpan, usize)> = Vec::new();
    let mut params = Vec::with_capacity(specs.len());
    for (i, (spec, raw_layer)) in specs.iter().zip(&raw.layers).enumerate() {
        let mut take = |span: Option<BlobSpan>, need: usize, what: &str| -> Result<Vec<f32>> {
            let span = match span {
                None if need == 0 => return Ok(Vec::new()),
                None => {
                    return Err(Error::CountMismatch(format!(
                        "layer {i} ({spec}) needs {need} {what} but declares none"
                    )))
                }
                Some(s) => s,
            };
            if span.count != need {
                return Err(Error::CountMismatch(format!(
                    "layer {i} ({spec}) needs {need} {what}, manifest declares {}",
                    span.count
                )));
            }
            let end = span.offset.checked_add(span.count).filter(|&e| e <= words.len()).ok_or_else(|| {
                Error::CountMismatch(format!(
                    "layer {i} {what} span {}+{} exceeds blob of {} words",
                    span.offset,
                    span.count,
                    words.len()
                ))
            })?;
            if span.count > 0 {
                spans.push((span, i));
            }
            Ok(words[span.offset..end].to_vec())
        };
        let weights = take(raw_layer.weights, spec.weight_count(), "weights")?;
        let biases = take(raw_layer.biases, spec.bias_count(), "biases")?;
        params.push(LayerParams::new(weights, biases));
    }
    spans.sort_by_key(|(s, _)| s.offset);
    for pair in spans.windows(2) {
        let (a, la) = pair[0];
        let (b, lb) = pair[1];
        if a.offset + a.count > b.offset {
            return Err(Error::Manifest(format!(
                "parameter spans of layers {la} and {lb} overlap"
            )));
        }
    }
    Network::new(raw.input_shape, specs, params)
}

/// Loads a network from a manifest and its parameter blob.
pub fn load_model(manifest_path: impl AsRef<Path>, blob_path: impl AsRef<Path>) -> Result<Network> {
    let manifest_path = manifest_path.as_ref();
    let blob_path = blob_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::file(manifest_path, e))?;
    let blob = fs::read(blob_path).map_err(|e| Error::file(blob_path, e))?;
    parse_model(&text, &blob)
}

/// Serializes a network into `(manifest text, blob bytes)`.
///
/// `notes` become leading `#` comment lines (provenance, accuracy, ...).
pub fn render_model(network: &Network, notes: &[String]) -> (String, Vec<u8>) {
    let blob: Vec<u8> = network
        .canonical_bits()
        .into_iter()
        .flat_map(u32::to_le_bytes)
        .collect();
    let mut m = String::new();
    for n in notes {
        for line in n.lines() {
            let _ = writeln!(m, "# {line}");
        }
    }
    let _ = writeln!(m, "format_version = {FORMAT_VERSION}");
    let _ = writeln!(m, "input_shape = {:?}", network.input_shape());
    let _ = writeln!(m, "blob_words = {}", blob.len() / 4);
    let _ = writeln!(m, "blob_sha256 = \"{}\"", sha256_hex(&blob));
    let mut offset = 0;
    for (layer, p) in network.layers().iter().zip(network.params()) {
        let _ = writeln!(m, "\n[[layers]]\ntype = \"{}\"", layer.type_name());
        match *layer {
            LayerSpec::Conv2d(g) => {
                let _ = writeln!(
                    m,
                    "in_channels = {}\nout_channels = {}\nkernel_h = {}\nkernel_w = {}\nstride = {}\npadding = {}",
                    g.in_channels, g.out_channels, g.kernel_h, g.kernel_w, g.stride, g.padding
                );
            }
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => {
                let _ = writeln!(m, "in_features = {in_features}\nout_features = {out_features}");
            }
            LayerSpec::MaxPool { kernel, stride } | LayerSpec::AvgPool { kernel, stride } => {
                let _ = writeln!(m, "kernel = {kernel}\nstride = {stride}");
            }
            LayerSpec::AffineNorm { channels } => {
                let _ = writeln!(m, "channels = {channels}");
            }
            LayerSpec::Relu | LayerSpec::Flatten => {}
        }
        if layer.is_parameterized() {
            let _ = writeln!(m, "weights = {{ offset = {offset}, count = {} }}", p.weights.len());
            offset += p.weights.len();
            let _ = writeln!(m, "biases = {{ offset = {offset}, count = {} }}", p.biases.len());
            offset += p.biases.len();
        }
    }
    (m, blob)
}

pub fn save_model(network: &Network, manifest_path: impl AsRef<Path>, blob_path: impl AsRef<Path>) -> Result<()> {
    save_model_with_notes(network, manifest_path, blob_path, &[])
}

pub fn save_model_with_notes(
    network: &Network,
    manifest_path: impl AsRef<Path>,
    blob_path: impl AsRef<Path>,
    notes: &[String],
) -> Result<()> {
    let (manifest, blob) = render_model(network, notes);
    let (mp, bp) = (manifest_path.as_ref(), blob_path.as_ref());
    fs::write(bp, blob).map_err(|e| Error::file(bp, e))?;
    fs::write(mp, manifest).map_err(|e| Error::file(mp, e))?;
    Ok(())
}

/// Leading `#` comment lines of a manifest, without the marker.
pub fn manifest_notes(manifest: &str) -> Vec<String> {
    manifest
        .lines()
        .map_while(|l| l.strip_prefix('#'))
        .map(|l| l.strip_prefix(' ').unwrap_or(l).to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitflip::ParamKind;
    use crate::nn::WordAddress;

    fn small_net() -> Network {
        Network::new(
            vec![1, 3, 3],
            vec![
                LayerSpec::conv2d(1, 2, (2, 2), 1, 0),
                LayerSpec::AffineNorm { channels: 2 },
                LayerSpec::Relu,
                LayerSpec::AvgPool { kernel: 2, stride: 1 },
                LayerSpec::Flatten,
                LayerSpec::fully_connected(2, 2),
            ],
            vec![
                LayerParams::new((0..8).map(|v| v as f32 * 0.25 - 1.0).collect(), vec![0.5, -0.5]),
                LayerParams::new(vec![1.5, 0.75], vec![0.0, 0.125]),
                LayerParams::default(),
                LayerParams::default(),
                LayerParams::default(),
                LayerParams::new(vec![1.0, -1.0, 2.0, 0.5], vec![0.1, 0.2]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_special_bits() {
        let mut net = small_net();
        let specials = [0x7fc0_dead, 0xff80_0000, 0x0000_0001, 0x8000_0000];
        for (i, bits) in specials.into_iter().enumerate() {
            net.set_parameter(
                WordAddress {
                    layer: 0,
                    kind: ParamKind::Weight,
                    element: i,
                },
                f32::from_bits(bits),
            )
            .unwrap();
        }
        let (m, b) = render_model(&net, &["fixture".into()]);
        let back = parse_model(&m, &b).unwrap();
        assert_eq!(back.canonical_bits(), net.canonical_bits());
        assert_eq!(back.layers(), net.layers());
        assert_eq!(manifest_notes(&m), vec!["fixture".to_string()]);
    }

    #[test]
    fn distinct_errors() {
        let net = small_net();
        let (m, b) = render_model(&net, &[]);

        let truncated = &b[..b.len() - 4];
        assert!(matches!(parse_model(&m, truncated), Err(Error::CountMismatch(_))));

        let mut flipped = b.clone();
        flipped[3] ^= 0x10;
        assert!(matches!(parse_model(&m, &flipped), Err(Error::Checksum { .. })));

        let bad_sum = m.replace(&sha256_hex(&b), &"0".repeat(64));
        assert!(matches!(parse_model(&bad_sum, &b), Err(Error::Checksum { .. })));

        let unknown = m.replace("type = \"relu\"", "type = \"gelu\"");
        assert!(matches!(parse_model(&unknown, &b), Err(Error::UnknownLayerType(t)) if t == "gelu"));

        let version = m.replace("format_version = 1", "format_version = 9");
        assert!(matches!(parse_model(&version, &b), Err(Error::UnsupportedVersion(9))));

        let count = m.replace("offset = 0, count = 8", "offset = 0, count = 7");
        assert!(matches!(parse_model(&count, &b), Err(Error::CountMismatch(_))));

        let overlap = m.replace("offset = 8, count = 2", "offset = 7, count = 2");
        assert!(matches!(parse_model(&overlap, &b), Err(Error::Manifest(_))));
    }
}
