//! Labeled sample sets.
//!
//! Layout, all integers little-endian:
//!
//! | bytes            | content                                  |
//! |------------------|------------------------------------------|
//! | 8                | magic `SEUDSET1`                         |
//! | 4                | rank `k`                                 |
//! | 4 * k            | sample dimensions                        |
//! | 4                | sample count `n`                         |
//! | 4                | class count                              |
//! | 4 * n * prod(dims) | samples, binary32, row-major, in order |
//! | n                | labels, one unsigned byte each           |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"SEUDSET1";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    sample_shape: Vec<usize>,
    samples: Vec<Tensor>,
    labels: Vec<u8>,
    classes: u32,
}

impl LabeledDataset {
    pub fn new(sample_shape: Vec<usize>, samples: Vec<Tensor>, labels: Vec<u8>, classes: u32) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::CountMismatch(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if let Some(s) = samples.iter().find(|s| s.shape() != sample_shape.as_slice()) {
            return Err(Error::Shape(format!(
                "sample of shape {:?} in a dataset of {sample_shape:?}",
                s.shape()
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as u32 >= classes) {
            return Err(Error::LabelOutOfRange { index, label, classes });
        }
        Ok(LabeledDataset {
            sample_shape,
            samples,
            labels,
            classes,
        })
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn samples(&self) -> &[Tensor] {
        &self.samples
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn classes(&self) -> u32 {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, usize)> {
        self.samples.iter().zip(self.labels.iter().map(|&l| l as usize))
    }

    /// The first `n` samples.
    pub fn truncated(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            sample_shape: self.sample_shape.clone(),
            samples: self.samples[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
        }
    }

    /// SHA-256 of the serialized dataset.
    pub fn fingerprint(&self) -> String {
        crate::model_io::sha256_hex(&self.to_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(self.sample_shape.len() as u32).to_le_bytes());
        for &d in &self.sample_shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.samples.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.classes.to_le_bytes());
        for s in &self.samples {
            for v in s.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic").map_err(|_| Error::BadMagic)? != DATASET_MAGIC {
            return Err(Error::BadMagic);
        }
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!("invalid sample dimensions {shape:?}")));
        }
        let count = r.u32("sample count")? as usize;
        let classes = r.u32("class count")?;
        let per = shape.iter().product::<usize>();
        let payload = r.take(count * per * 4, "sample payload")?;
        let labels = r.take(count, "label block")?.to_vec();
        if r.pos != bytes.len() {
            return Err(Error::CountMismatch(format!(
                "{} trailing bytes after label block",
                bytes.len() - r.pos
            )));
        }
        let samples = payload
            .chunks_exact(per * 4)
            .map(|chunk| {
                let data = chunk
                    .chunks_exact(4)
                    .map(|c| f32::from_bits(u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                    .collect();
                Tensor::new(shape.clone(), data)
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(shape, samples, labels, classes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Truncated(format!("dataset ends inside the {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    LabeledDataset::from_bytes(&bytes)
}

pub fn save_dataset(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset.to_bytes()).map_err(|e| Error::file(path, e))
}
