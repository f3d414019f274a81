//! Single-bit fault scans.
//!
//! For every selected bit: flip it, evaluate the whole dataset on the
//! perturbed network, and record the performance drop. The base network is
//! never mutated; each evaluation borrows it read-only and copies only the
//! layer that holds the flipped word.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitflip::{BitAddress, ParamKind};
use crate::engine::metric::{evaluate, Metric};
use crate::engine::scope::ScanScope;
use crate::error::{Error, Result};
use crate::model_io::LabeledDataset;
use crate::nn::Network;

/// One bit's injected-fault evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResult {
    pub address: BitAddress,
    pub p_original: f64,
    pub p_sipp: f64,
    /// `p_original - p_sipp`; negative when the flip happens to help.
    pub delta_p: f64,
}

impl PerturbationResult {
    pub fn new(address: BitAddress, p_original: f64, p_sipp: f64) -> Self {
        PerturbationResult {
            address,
            p_original,
            p_sipp,
            delta_p: p_original - p_sipp,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    /// Worker threads; 0 uses rayon's default.
    pub workers: usize,
    /// Append-only result log; an existing compatible log is resumed.
    pub checkpoint: Option<PathBuf>,
    /// Addresses evaluated between checkpoint flushes.
    pub chunk_size: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            workers: 0,
            checkpoint: None,
            chunk_size: 512,
        }
    }
}

impl ScanOptions {
    pub fn workers(workers: usize) -> Self {
        ScanOptions {
            workers,
            ..ScanOptions::default()
        }
    }
}

/// Evaluates the network with exactly one bit flipped.
pub fn evaluate_flip(
    network: &Network,
    dataset: &LabeledDataset,
    metric: &dyn Metric,
    address: BitAddress,
    p_original: f64,
) -> Result<PerturbationResult> {
    let perturbed = network.with_flip(address)?;
    let p = evaluate(&perturbed, dataset, metric)?;
    Ok(PerturbationResult::new(address, p_original, p))
}

/// Scans every bit selected by `scope`, returning results in canonical
/// address order. Output is identical for any worker count.
pub fn scan(
    network: &Network,
    dataset: &LabeledDataset,
    scope: &ScanScope,
    metric: &dyn Metric,
    options: &ScanOptions,
) -> Result<Vec<PerturbationResult>> {
    let addresses = scope.enumerate(network)?;
    if addresses.is_empty() {
        return Err(Error::EmptyScope);
    }
    let p_original = evaluate(network, dataset, metric)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let run = |chunk: &[BitAddress]| -> Result<Vec<PerturbationResult>> {
        pool.install(|| {
            chunk
                .par_iter()
                .map(|&a| evaluate_flip(network, dataset, metric, a, p_original))
                .collect()
        })
    };

    let Some(path) = &options.checkpoint else {
        return run(&addresses);
    };

    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        network: network.fingerprint(),
        dataset: dataset.fingerprint(),
        scope: scope.key(),
        metric: metric.name().to_string(),
    };
    let mut log = Checkpoint::open(path, header, p_original)?;
    let mut results: Vec<PerturbationResult> = Vec::with_capacity(addresses.len());
    let pending: Vec<BitAddress> = addresses
        .iter()
        .copied()
        .filter(|a| !log.done.contains_key(a))
        .collect();
    for chunk in pending.chunks(options.chunk_size.max(1)) {
        let fresh = run(chunk)?;
        log.append(&fresh)?;
    }
    for a in &addresses {
        let p_sipp = log.done[a];
        results.push(PerturbationResult::new(*a, p_original, p_sipp));
    }
    Ok(results)
}

/// Worst-case drop and its address; ties go to the lowest address.
pub fn ssipp(results: &[PerturbationResult]) -> Result<(f64, BitAddress)> {
    let mut best: Option<&PerturbationResult> = None;
    for r in results {
        best = match best {
            None => Some(r),
            Some(b) if r.delta_p > b.delta_p || (r.delta_p == b.delta_p && r.address < b.address) => Some(r),
            keep => keep,
        };
    }
    best.map(|b| (b.delta_p, b.address)).ok_or(Error::EmptyResults)
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    network: String,
    dataset: String,
    scope: String,
    metric: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Header(CheckpointHeader),
    Result {
        layer: usize,
        kind: ParamKind,
        element: usize,
        bit: u8,
        p_sipp: f64,
    },
    Progress {
        completed: usize,
        max_delta_p: Option<f64>,
        argmax: Option<BitAddress>,
    },
}

/// JSON-lines scan log: a header, then result records in ascending address
/// order, each flushed chunk followed by a progress record with the running
/// maximum. A torn final line from an interrupted write is discarded on
/// resume.
struct Checkpoint {
    path: PathBuf,
    file: File,
    done: BTreeMap<BitAddress, f64>,
    p_original: f64,
    best: Option<(f64, BitAddress)>,
}

impl Checkpoint {
    fn open(path: &Path, header: CheckpointHeader, p_original: f64) -> Result<Self> {
        let fail = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        let mut done = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| Error::file(path, e))?);
            let mut lines = reader.lines();
            match lines.next().transpose()?.map(|l| serde_json::from_str::<Record>(&l)) {
                Some(Ok(Record::Header(h))) if h == header => {}
                Some(Ok(Record::Header(h))) => {
                    return Err(fail(format!(
                        "belongs to a different scan (network {}, scope {}); remove it to start over",
                        h.network, h.scope
                    )))
                }
                None => {}
                _ => return Err(fail("missing header record".into())),
            }
            for line in lines {
                let line = line?;
                match serde_json::from_str::<Record>(&line) {
                    Ok(Record::Result {
                        layer,
                        kind,
                        element,
                        bit,
                        p_sipp,
                    }) => {
                        done.insert(
                            BitAddress {
                                layer,
                                kind,
                                element,
                                bit,
                            },
                            p_sipp,
                        );
                    }
                    Ok(_) => {}
                    Err(_) => break,
                }
            }
        }
        // rewrite the surviving prefix so appends start on a clean line
        let mut file = File::create(path).map_err(|e| Error::file(path, e))?;
        writeln!(file, "{}", serde_json::to_string(&Record::Header(header))?)?;
        let mut cp = Checkpoint {
            path: path.to_path_buf(),
            file,
            done: BTreeMap::new(),
            p_original,
            best: None,
        };
        let restored: Vec<PerturbationResult> = done
            .into_iter()
            .map(|(a, p)| PerturbationResult::new(a, p_original, p))
            .collect();
        cp.append(&restored)?;
        drop(cp.file);
        cp.file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::file(path, e))?;
        Ok(cp)
    }

    fn write_records(&mut self, records: &[(BitAddress, f64)]) -> Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for &(a, p_sipp) in records {
            buf.push_str(&serde_json::to_string(&Record::Result {
                layer: a.layer,
                kind: a.kind,
                element: a.element,
                bit: a.bit,
                p_sipp,
            })?);
            buf.push('\n');
            self.done.insert(a, p_sipp);
        }
        buf.push_str(&serde_json::to_string(&Record::Progress {
            completed: self.done.len(),
            max_delta_p: self.best.map(|b| b.0),
            argmax: self.best.map(|b| b.1),
        })?);
        buf.push('\n');
        self.file
            .write_all(buf.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::file(&self.path, e))
    }

    fn append(&mut self, fresh: &[PerturbationResult]) -> Result<()> {
        for r in fresh {
            debug_assert_eq!(r.p_original, self.p_original);
            let better = match self.best {
                None => true,
                Some((d, a)) => r.delta_p > d || (r.delta_p == d && r.address < a),
            };
            if better {
                self.best = Some((r.delta_p, r.address));
            }
        }
        let records: Vec<_> = fresh.iter().map(|r| (r.address, r.p_sipp)).collect();
        self.write_records(&records)
    }
}

/// Removes a checkpoint file if present.
pub fn clear_checkpoint(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::file(path, e)),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(layer: usize, element: usize, bit: u32) -> BitAddress {
        BitAddress::new(layer, ParamKind::Weight, element, bit).unwrap()
    }

    #[test]
    fn ssipp_picks_max() {
        let rs = [
            PerturbationResult::new(addr(0, 0, 0), 1.0, 1.0),
            PerturbationResult::new(addr(0, 1, 0), 1.0, 0.9),
            PerturbationResult::new(addr(0, 2, 0), 1.0, 0.95),
        ];
        let (v, a) = ssipp(&rs).unwrap();
        assert_eq!(a, addr(0, 1, 0));
        assert!((v - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ssipp_ties_go_to_lowest_address() {
        let rs = [
            PerturbationResult::new(addr(1, 0, 3), 0.5, 0.5),
            PerturbationResult::new(addr(0, 4, 31), 0.5, 0.5),
            PerturbationResult::new(addr(0, 4, 2), 0.5, 0.5),
        ];
        assert_eq!(ssipp(&rs).unwrap(), (0.0, addr(0, 4, 2)));
        assert!(matches!(ssipp(&[]), Err(Error::EmptyResults)));
    }

    #[test]
    fn negative_drops_never_win() {
        let rs = [
            PerturbationResult::new(addr(0, 0, 0), 0.5, 0.75),
            PerturbationResult::new(addr(0, 1, 0), 0.5, 0.5),
        ];
        assert_eq!(ssipp(&rs).unwrap(), (0.0, addr(0, 1, 0)));
        assert_eq!(rs[0].delta_p, -0.25);
    }
}
