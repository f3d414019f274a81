//! Overhead against residual sensitivity.

use std::io::Write;

use serde::Serialize;

use super::policy::{ProtectionPolicy, Scheme};
use super::storage::{overhead_report, LogicCostModel, ProtectionMap};
use crate::bitflip::BitAddress;
use crate::engine::PerturbationResult;
use crate::error::{Error, Result};
use crate::nn::Network;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub policy: String,
    pub scheme: Scheme,
    pub group_width: usize,
    pub protected_bits: usize,
    pub relative_storage: f64,
    pub normalized_storage: f64,
    pub normalized_logic: f64,
    /// Largest ΔP over the scanned bits, with protected bits counted as 0.
    pub residual_ssipp: f64,
    pub normalized_ssipp: f64,
    pub residual_argmax: Option<BitAddress>,
}

/// Curve plus the references its normalized values are relative to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffCurve {
    pub unprotected_ssipp: f64,
    pub scanned_bits: usize,
    pub cost_model: LogicCostModel,
    pub points: Vec<TradeoffPoint>,
}

/// Residual sensitivity under one protection map.
pub fn residual_ssipp(
    network: &Network,
    map: &ProtectionMap,
    results: &[PerturbationResult],
) -> Result<(f64, Option<BitAddress>)> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let mut best: Option<(f64, Option<BitAddress>)> = None;
    for r in results {
        let (dp, at) = if map.is_protected(network, r.address)? {
            (0.0, None)
        } else {
            (r.delta_p, Some(r.address))
        };
        // Results arrive in canonical order; the first maximum wins.
        if best.is_none_or(|(b, _)| dp > b) {
            best = Some((dp, at));
        }
    }
    Ok(best.expect("results are non-empty"))
}

/// Evaluates each policy in order against one set of scan results.
pub fn tradeoff_curve(
    network: &Network,
    results: &[PerturbationResult],
    policies: &[ProtectionPolicy],
    cost: &LogicCostModel,
) -> Result<TradeoffCurve> {
    cost.validate()?;
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let mut sorted = results.to_vec();
    sorted.sort_by_key(|r| r.address);
    let unprotected = sorted.iter().map(|r| r.delta_p).fold(f64::NEG_INFINITY, f64::max);
    if unprotected.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::Normalization(format!(
            "unprotected SSIPP is {unprotected}, so residual SSIPP cannot be normalized; \
             scan more bits or use a dataset on which some flip lowers the metric"
        )));
    }
    let points = policies
        .iter()
        .map(|p| {
            let map = ProtectionMap::build(network, p)?;
            let (residual, argmax) = residual_ssipp(network, &map, &sorted)?;
            let o = overhead_report(p, network, cost)?;
            Ok(TradeoffPoint {
                policy: p.name.clone(),
                scheme: p.scheme,
                group_width: p.group_width,
                protected_bits: o.protected_bits,
                relative_storage: o.relative_storage,
                normalized_storage: o.normalized_storage,
                normalized_logic: o.normalized_logic,
                residual_ssipp: residual,
                normalized_ssipp: residual / unprotected,
                residual_argmax: argmax,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TradeoffCurve {
        unprotected_ssipp: unprotected,
        scanned_bits: sorted.len(),
        cost_model: *cost,
        points,
    })
}

/// CSV with one row per point.
pub fn write_tradeoff_csv<W: Write>(writer: W, curve: &TradeoffCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "policy",
        "scheme",
        "group_width",
        "protected_bits",
        "relative_storage",
        "normalized_storage",
        "normalized_logic",
        "residual_ssipp",
        "normalized_ssipp",
    ])?;
    for p in &curve.points {
        w.write_record([
            p.policy.clone(),
            p.scheme.to_string(),
            p.group_width.to_string(),
            p.protected_bits.to_string(),
            p.relative_storage.to_string(),
            p.normalized_storage.to_string(),
            p.normalized_logic.to_string(),
            p.residual_ssipp.to_string(),
            p.normalized_ssipp.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
