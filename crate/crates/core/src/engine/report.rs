//! Scan reports: per-bit CSV rows and a JSON summary.
//!
//! CSV columns (schema 1): `layer,kind,element,bit,bit_class,p_sipp,delta_p`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::bitflip::{BitAddress, ParamKind};
use crate::engine::scan::{ssipp, PerturbationResult};
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Who produced a report and from what.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub network_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddressRecord {
    pub layer: usize,
    pub kind: ParamKind,
    pub element: usize,
    pub bit: u8,
    pub bit_class: String,
}

impl From<BitAddress> for AddressRecord {
    fn from(a: BitAddress) -> Self {
        AddressRecord {
            layer: a.layer,
            kind: a.kind,
            element: a.element,
            bit: a.bit,
            bit_class: a.class().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMax {
    pub group: String,
    pub ssipp: f64,
    pub argmax: AddressRecord,
    pub bits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    #[serde(flatten)]
    pub address: AddressRecord,
    pub p_sipp: f64,
    pub delta_p: f64,
}

/// Summary of one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsippReport {
    pub schema_version: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub provenance: Option<Provenance>,
    pub scope: String,
    pub metric: String,
    pub p_original: f64,
    pub evaluated_bits: usize,
    pub ssipp: f64,
    pub argmax: AddressRecord,
    pub per_layer: Vec<GroupMax>,
    pub per_bit_class: Vec<GroupMax>,
    pub per_bit_family: Vec<GroupMax>,
    /// Highest-drop results, worst first; every result when no limit was set.
    pub top: Vec<ResultRow>,
}

impl SsippReport {
    pub fn build(
        scope: &str,
        metric: &str,
        results: &[PerturbationResult],
        top_k: Option<usize>,
    ) -> Result<Self> {
        let (value, argmax) = ssipp(results)?;
        let per_layer = group_maxima(results, |r| r.address.layer)?;
        let per_bit_class = group_maxima(results, |r| r.address.class())?;
        let per_bit_family = group_maxima(results, |r| r.address.class().family())?;

        let mut ranked: Vec<&PerturbationResult> = results.iter().collect();
        ranked.sort_by(|a, b| {
            b.delta_p
                .partial_cmp(&a.delta_p)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.address.cmp(&b.address))
        });
        let top = ranked
            .into_iter()
            .take(top_k.unwrap_or(usize::MAX))
            .map(|r| ResultRow {
                address: r.address.into(),
                p_sipp: r.p_sipp,
                delta_p: r.delta_p,
            })
            .collect();
        Ok(SsippReport {
            schema_version: REPORT_SCHEMA_VERSION,
            provenance: None,
            scope: scope.to_string(),
            metric: metric.to_string(),
            p_original: results[0].p_original,
            evaluated_bits: results.len(),
            ssipp: value,
            argmax: argmax.into(),
            per_layer,
            per_bit_class,
            per_bit_family,
            top,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn group_maxima<K: Ord + ToString>(
    results: &[PerturbationResult],
    key: impl Fn(&PerturbationResult) -> K,
) -> Result<Vec<GroupMax>> {
    let mut groups: BTreeMap<K, Vec<PerturbationResult>> = BTreeMap::new();
    for r in results {
        groups.entry(key(r)).or_default().push(*r);
    }
    groups
        .into_iter()
        .map(|(g, rs)| {
            let (v, a) = ssipp(&rs)?;
            Ok(GroupMax {
                group: g.to_string(),
                ssipp: v,
                argmax: a.into(),
                bits: rs.len(),
            })
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    layer: usize,
    kind: ParamKind,
    element: usize,
    bit: u8,
    bit_class: String,
    p_sipp: f64,
    delta_p: f64,
}

/// Writes one CSV row per result, in the given order.
pub fn write_results_csv<W: Write>(writer: W, results: &[PerturbationResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in results {
        w.serialize(CsvRow {
            layer: r.address.layer,
            kind: r.address.kind,
            element: r.address.element,
            bit: r.address.bit,
            bit_class: r.address.class().to_string(),
            p_sipp: r.p_sipp,
            delta_p: r.delta_p,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads results back from CSV. The CSV does not store the reference
/// performance, so `p_original` is taken as `p_sipp + delta_p`.
pub fn read_results_csv<R: Read>(reader: R) -> Result<Vec<PerturbationResult>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            if row.bit > 31 {
                return Err(Error::BitIndex(row.bit as u32));
            }
            Ok(PerturbationResult {
                address: BitAddress {
                    layer: row.layer,
                    kind: row.kind,
                    element: row.element,
                    bit: row.bit,
                },
                p_original: row.p_sipp + row.delta_p,
                p_sipp: row.p_sipp,
                delta_p: row.delta_p,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(layer: usize, element: usize, bit: u32, p: f64) -> PerturbationResult {
        PerturbationResult::new(BitAddress::new(layer, ParamKind::Weight, element, bit).unwrap(), 0.9, p)
    }

    #[test]
    fn group_maxima_are_consistent() {
        let rs = vec![r(0, 0, 31, 0.5), r(0, 1, 30, 0.1), r(2, 0, 31, 0.8), r(2, 0, 3, 0.9)];
        let rep = SsippReport::build("all", "top1_accuracy", &rs, Some(2)).unwrap();
        assert!((rep.ssipp - 0.8).abs() < 1e-12);
        assert_eq!(rep.argmax.element, 1);
        assert_eq!(rep.per_layer.len(), 2);
        assert_eq!(rep.per_layer[0].group, "0");
        assert_eq!(rep.per_layer[1].group, "2");
        assert!((rep.per_layer[1].ssipp - 0.1).abs() < 1e-12);
        let sign = rep.per_bit_class.iter().find(|g| g.group == "sign").unwrap();
        assert!((sign.ssipp - 0.4).abs() < 1e-12);
        let overall = rep.per_layer.iter().map(|g| g.ssipp).fold(f64::MIN, f64::max);
        assert_eq!(overall, rep.ssipp);
        assert_eq!(rep.top.len(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let rs = vec![r(0, 0, 31, 0.5), r(1, 7, 0, 0.875)];
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &rs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("layer,kind,element,bit,bit_class,p_sipp,delta_p\n"));
        assert!(text.contains("0,weight,0,31,sign,0.5,"));
        let back = read_results_csv(buf.as_slice()).unwrap();
        for (a, b) in back.iter().zip(&rs) {
            assert_eq!(a.address, b.address);
            assert_eq!(a.delta_p, b.delta_p);
            assert_eq!(a.p_sipp, b.p_sipp);
        }
    }
}
