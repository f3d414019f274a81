mod common;

use std::fs;

use common::*;
use seufi::model_io::{load_dataset, load_model, manifest_notes, parse_model, render_model, save_dataset, save_model_with_notes};
use seufi::nn::LayerSpec;
use seufi::{Error, LabeledDataset, Model};

#[test]
fn tiny_fc_layout() {
    let (net, dataset) = load_fixture("tiny_fc");
    assert_eq!(net.layers().len(), 2);
    assert!(matches!(net.layers()[0], LayerSpec::Flatten));
    let p = net.layer_params(1).unwrap();
    assert_eq!(p.weights.len(), 6);
    assert_eq!(p.biases.len(), 2);
    assert_eq!(net.parameter_count(), 8);
    assert_eq!(dataset.len(), 4);
}

#[test]
fn fixture_blobs_are_little_endian_f32() {
    let (net, _) = load_fixture("mlp");
    let blob = fs::read(fixture("mlp.bin")).unwrap();
    let words: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    assert_eq!(words, flat_params(&net));
}

#[test]
fn round_trip_is_bit_exact() {
    let (net, _) = load_fixture("cnn");
    let dir = tempfile::tempdir().unwrap();
    let (m, b) = (dir.path().join("cnn.manifest"), dir.path().join("cnn.bin"));
    save_model_with_notes(&net, &m, &b, &["flipped nothing".to_string()]).unwrap();
    let back = load_model(&m, &b).unwrap();
    assert_eq!(back.fingerprint(), net.fingerprint());
    assert_eq!(fs::read(&b).unwrap(), fs::read(fixture("cnn.bin")).unwrap());
    assert_eq!(manifest_notes(&fs::read_to_string(&m).unwrap()), vec!["flipped nothing".to_string()]);
}

#[test]
fn truncated_blob_is_a_count_mismatch() {
    let manifest = fs::read_to_string(fixture("tiny_fc.manifest")).unwrap();
    let blob = fs::read(fixture("tiny_fc.bin")).unwrap();
    let err = parse_model(&manifest, &blob[..blob.len() - 4]).unwrap_err();
    assert!(matches!(err, Error::CountMismatch(_)), "{err}");
}

#[test]
fn corrupted_blob_fails_the_checksum() {
    let manifest = fs::read_to_string(fixture("tiny_fc.manifest")).unwrap();
    let mut blob = fs::read(fixture("tiny_fc.bin")).unwrap();
    blob[5] ^= 0x10;
    let err = parse_model(&manifest, &blob).unwrap_err();
    assert!(matches!(err, Error::Checksum { .. }), "{err}");
}

#[test]
fn rendered_manifest_parses_back() {
    let (net, _) = load_fixture("mlp");
    let (manifest, blob) = render_model(&net, &[]);
    let back = parse_model(&manifest, &blob).unwrap();
    let x = seufi::Tensor::vector(vec![0.5, -1.0, 0.25, 2.0]).unwrap();
    assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
}

#[test]
fn empty_dataset_is_legal_on_disk() {
    let empty = LabeledDataset::new(vec![3], vec![], vec![], 2).unwrap();
    assert!(empty.is_empty());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.dataset");
    save_dataset(&empty, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.len(), 0);
    assert_eq!(back.sample_shape(), &[3]);
}

#[test]
fn missing_file_names_the_path() {
    let err = load_dataset("/nonexistent/x.dataset").unwrap_err();
    assert!(err.to_string().contains("/nonexistent/x.dataset"), "{err}");
}
