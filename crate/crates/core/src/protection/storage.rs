//! Protected parameter storage: which bits are covered, what it costs and
//! what a single upset in the stored representation reads back as.
//!
//! TMR protects whole 32-bit words. ECC splits the canonical bit stream
//! (word `i`, bit `b` at stream position `32 i + b`) into consecutive groups
//! of `d` data bits; the last group may be shorter. A word or group with
//! any selected bit is protected in full.

use serde::Serialize;

use super::codec::{data_position, hamming_decode, hamming_encode, required_parity_bits, tmr_vote};
use super::policy::{ProtectionPolicy, Scheme};
use crate::bitflip::BitAddress;
use crate::error::{Error, Result};
use crate::nn::{Network, WordAddress};

/// Protection status of every stored bit under one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectionMap {
    scheme: Scheme,
    group_width: usize,
    words: usize,
    /// TMR: one flag per word. ECC: one flag per group.
    protected: Vec<bool>,
    selected_bits: usize,
}

impl ProtectionMap {
    pub fn build(network: &Network, policy: &ProtectionPolicy) -> Result<Self> {
        policy.validate()?;
        let words = network.parameter_count();
        let d = policy.group_width;
        let units = match policy.scheme {
            Scheme::Tmr => words,
            Scheme::HammingEcc => (words * 32).div_ceil(d),
        };
        let mut protected = vec![false; units];
        let mut selected_bits = 0;
        for (i, word) in network.words().enumerate() {
            let mask = policy.word_mask(word.layer, word.kind);
            if mask == 0 {
                continue;
            }
            selected_bits += mask.count_ones() as usize;
            match policy.scheme {
                Scheme::Tmr => protected[i] = true,
                Scheme::HammingEcc => {
                    for b in (0..32).filter(|b| mask >> b & 1 == 1) {
                        protected[(i * 32 + b) / d] = true;
                    }
                }
            }
        }
        Ok(ProtectionMap {
            scheme: policy.scheme,
            group_width: d,
            words,
            protected,
            selected_bits,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn group_width(&self) -> usize {
        self.group_width
    }

    /// Number of ECC groups (TMR: number of words).
    pub fn unit_count(&self) -> usize {
        self.protected.len()
    }

    /// Data bits in ECC group `g`.
    pub fn group_len(&self, g: usize) -> usize {
        let total = self.words * 32;
        (total - g * self.group_width).min(self.group_width)
    }

    /// Bits matched by the policy's rules, before promotion.
    pub fn selected_bits(&self) -> usize {
        self.selected_bits
    }

    /// Bits that end up protected after word or group promotion.
    pub fn protected_bits(&self) -> usize {
        match self.scheme {
            Scheme::Tmr => self.protected.iter().filter(|p| **p).count() * 32,
            Scheme::HammingEcc => self.protected_groups().map(|g| self.group_len(g)).sum(),
        }
    }

    pub fn protected_words(&self) -> usize {
        match self.scheme {
            Scheme::Tmr => self.protected.iter().filter(|p| **p).count(),
            Scheme::HammingEcc => (0..self.words)
                .filter(|w| {
                    let first = w * 32 / self.group_width;
                    let last = (w * 32 + 31) / self.group_width;
                    (first..=last).any(|g| self.protected[g])
                })
                .count(),
        }
    }

    pub fn protected_groups(&self) -> impl Iterator<Item = usize> + '_ {
        self.protected.iter().enumerate().filter(|(_, p)| **p).map(|(g, _)| g)
    }

    fn stream_position(&self, network: &Network, address: BitAddress) -> Result<usize> {
        network.check_address(address)?;
        Ok(network.word_index(address.into())? * 32 + address.bit as usize)
    }

    pub fn is_protected(&self, network: &Network, address: BitAddress) -> Result<bool> {
        let pos = self.stream_position(network, address)?;
        Ok(match self.scheme {
            Scheme::Tmr => self.protected[pos / 32],
            Scheme::HammingEcc => self.protected[pos / self.group_width],
        })
    }

    /// Parity bits held by ECC group `g` (0 if unprotected or under TMR).
    pub fn parity_bits_of(&self, g: usize) -> usize {
        match self.scheme {
            Scheme::HammingEcc if self.protected.get(g).copied().unwrap_or(false) => {
                required_parity_bits(self.group_len(g))
            }
            _ => 0,
        }
    }
}

/// Constants of the protection-logic proxy model.
///
/// TMR costs one 32-bit majority voter per protected word, `c_vote` per bit.
/// An ECC group of `d` data bits and `r` parity bits costs
/// `c_xor * d * ceil(log2(d + r))` for its encoder and decoder. The units are
/// abstract; the defaults put full ECC at 3.5 times full TMR for 32-bit groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct LogicCostModel {
    pub c_vote: f64,
    pub c_xor: f64,
}

impl Default for LogicCostModel {
    fn default() -> Self {
        LogicCostModel {
            c_vote: 1.0,
            c_xor: 7.0 / 12.0,
        }
    }
}

impl LogicCostModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_vote", self.c_vote), ("c_xor", self.c_xor)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidCostModel(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    pub fn voter_cost(&self) -> f64 {
        self.c_vote * 32.0
    }

    pub fn codec_cost(&self, d: usize) -> f64 {
        let n = d + required_parity_bits(d);
        let depth = usize::BITS - (n - 1).leading_zeros();
        self.c_xor * d as f64 * depth as f64
    }
}

/// Storage and logic cost of one policy on one network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverheadReport {
    pub policy: String,
    pub scheme: Scheme,
    pub group_width: usize,
    pub selected_bits: usize,
    pub protected_bits: usize,
    pub raw_bits: usize,
    pub added_bits: usize,
    /// `added_bits / raw_bits`.
    pub relative_storage: f64,
    pub logic_units: f64,
    /// Added bits when every bit is protected with the same scheme and width.
    pub full_added_bits: usize,
    pub full_logic_units: f64,
    pub normalized_storage: f64,
    pub normalized_logic: f64,
}

fn added_bits(map: &ProtectionMap) -> usize {
    match map.scheme {
        Scheme::Tmr => map.protected_bits() * 2,
        Scheme::HammingEcc => map.protected_groups().map(|g| map.parity_bits_of(g)).sum(),
    }
}

fn logic_units(map: &ProtectionMap, cost: &LogicCostModel) -> f64 {
    match map.scheme {
        Scheme::Tmr => map.protected_words() as f64 * cost.voter_cost(),
        Scheme::HammingEcc => map.protected_groups().map(|g| cost.codec_cost(map.group_len(g))).fold(0.0, |a, c| a + c),
    }
}

/// Protection-logic units for a policy under a cost model.
pub fn logic_overhead(policy: &ProtectionPolicy, network: &Network, cost: &LogicCostModel) -> Result<f64> {
    cost.validate()?;
    Ok(logic_units(&ProtectionMap::build(network, policy)?, cost))
}

/// Storage overhead with logic costed by the default model.
pub fn storage_overhead(policy: &ProtectionPolicy, network: &Network) -> Result<OverheadReport> {
    overhead_report(policy, network, &LogicCostModel::default())
}

pub fn overhead_report(policy: &ProtectionPolicy, network: &Network, cost: &LogicCostModel) -> Result<OverheadReport> {
    cost.validate()?;
    let map = ProtectionMap::build(network, policy)?;
    let full_policy = ProtectionPolicy::full("full", policy.scheme).with_group_width(policy.group_width);
    let full = ProtectionMap::build(network, &full_policy)?;
    let raw_bits = network.bit_count();
    let added = added_bits(&map);
    let full_added = added_bits(&full);
    let logic = logic_units(&map, cost);
    let full_logic = logic_units(&full, cost);
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(OverheadReport {
        policy: policy.name.clone(),
        scheme: policy.scheme,
        group_width: policy.group_width,
        selected_bits: map.selected_bits(),
        protected_bits: map.protected_bits(),
        raw_bits,
        added_bits: added,
        relative_storage: ratio(added as f64, raw_bits as f64),
        logic_units: logic,
        full_added_bits: full_added,
        full_logic_units: full_logic,
        normalized_storage: ratio(added as f64, full_added as f64),
        normalized_logic: ratio(logic, full_logic),
    })
}

/// Full-ECC logic divided by full-TMR logic for a network.
pub fn ecc_tmr_logic_ratio(network: &Network, group_width: usize, cost: &LogicCostModel) -> Result<f64> {
    let ecc = logic_overhead(
        &ProtectionPolicy::full("ecc", Scheme::HammingEcc).with_group_width(group_width),
        network,
        cost,
    )?;
    let tmr = logic_overhead(&ProtectionPolicy::full("tmr", Scheme::Tmr), network, cost)?;
    Ok(ecc / tmr)
}

/// ECC added storage relative to TMR added storage for one group of `d` bits.
pub fn ecc_tmr_storage_ratio(d: usize) -> f64 {
    required_parity_bits(d) as f64 / (2 * d) as f64
}

/// One upset in the stored representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageFault {
    /// A parameter bit; `copy` selects the TMR replica (0 when unreplicated).
    Data { address: BitAddress, copy: usize },
    /// Parity bit `index` (0-based, at codeword position `2^index`) of ECC group `group`.
    Parity { group: usize, index: usize },
}

/// A stored word as read back through the voter or decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecoveredWord {
    pub word: WordAddress,
    pub original: u32,
    pub recovered: u32,
}

fn stored_word(network: &Network, index: usize) -> Result<(WordAddress, u32)> {
    let word = network
        .word_at(index)
        .ok_or_else(|| Error::Shape(format!("no word at index {index}")))?;
    Ok((word, network.parameter(word)?.to_bits()))
}

/// Injects one storage fault and reads back every word it can affect.
pub fn inject_storage_fault(network: &Network, map: &ProtectionMap, fault: StorageFault) -> Result<Vec<RecoveredWord>> {
    match (map.scheme, fault) {
        (Scheme::Tmr, StorageFault::Data { address, copy }) => {
            let pos = map.stream_position(network, address)?;
            let (word, original) = stored_word(network, pos / 32)?;
            let copies = if map.protected[pos / 32] { 3 } else { 1 };
            if copy >= copies {
                return Err(Error::InvalidAddress {
                    address,
                    reason: format!("word is stored in {copies} cop{}", if copies == 1 { "y" } else { "ies" }),
                });
            }
            let mut stored = [original; 3];
            stored[copy] ^= 1 << address.bit;
            let recovered = if copies == 3 {
                tmr_vote(stored[0], stored[1], stored[2])
            } else {
                stored[0]
            };
            Ok(vec![RecoveredWord {
                word,
                original,
                recovered,
            }])
        }
        (Scheme::Tmr, StorageFault::Parity { .. }) => Err(Error::Shape("TMR storage holds no parity bits".into())),
        (Scheme::HammingEcc, StorageFault::Data { address, copy }) => {
            if copy != 0 {
                return Err(Error::InvalidAddress {
                    address,
                    reason: "ECC storage keeps a single copy".into(),
                });
            }
            let pos = map.stream_position(network, address)?;
            let g = pos / map.group_width;
            read_group(network, map, g, data_position(pos - g * map.group_width))
        }
        (Scheme::HammingEcc, StorageFault::Parity { group, index }) => {
            let r = map.parity_bits_of(group);
            if index >= r {
                return Err(Error::Shape(format!("group {group} holds {r} parity bits, no index {index}")));
            }
            read_group(network, map, group, 1 << index)
        }
    }
}

/// Encodes group `g` (if protected), flips codeword position `position`
/// and decodes. Unprotected groups store raw data, addressed by the same
/// data positions.
fn read_group(network: &Network, map: &ProtectionMap, g: usize, position: usize) -> Result<Vec<RecoveredWord>> {
    let d = map.group_width;
    let start = g * d;
    let len = map.group_len(g);
    let first = start / 32;
    let last = (start + len - 1) / 32;
    let words = (first..=last).map(|i| stored_word(network, i)).collect::<Result<Vec<_>>>()?;
    let bit_at = |p: usize| words[p / 32 - first].1 >> (p % 32) & 1 == 1;
    let data: Vec<bool> = (start..start + len).map(bit_at).collect();
    let read = if map.protected[g] {
        let mut cw = hamming_encode(&data)?;
        cw.flip(position)?;
        hamming_decode(&cw).data
    } else {
        let k = (0..len)
            .find(|&k| data_position(k) == position)
            .ok_or_else(|| Error::Shape(format!("unprotected group {g} has no stored position {position}")))?;
        let mut raw = data;
        raw[k] = !raw[k];
        raw
    };
    let mut recovered: Vec<u32> = words.iter().map(|w| w.1).collect();
    for (k, b) in read.into_iter().enumerate() {
        let p = start + k;
        let slot = &mut recovered[p / 32 - first];
        *slot = (*slot & !(1 << (p % 32))) | (b as u32) << (p % 32);
    }
    Ok(words
        .iter()
        .zip(recovered)
        .map(|(&(word, original), recovered)| RecoveredWord {
            word,
            original,
            recovered,
        })
        .collect())
}

/// Flips `address` in the stored representation (first copy under TMR,
/// its codeword bit under ECC) and returns the word read back.
pub fn apply_and_inject(network: &Network, map: &ProtectionMap, address: BitAddress) -> Result<u32> {
    let target = WordAddress::from(address);
    inject_storage_fault(network, map, StorageFault::Data { address, copy: 0 })?
        .into_iter()
        .find(|r| r.word == target)
        .map(|r| r.recovered)
        .ok_or_else(|| Error::Shape("fault did not reach its own word".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitflip::ParamKind;
    use crate::engine::{BitFilter, LayerFilter, Selector};
    use crate::nn::{LayerParams, LayerSpec};

    fn net() -> Network {
        // 2 layers: 6 + 2 and 4 + 2 words = 14 words
        Network::new(
            vec![3],
            vec![LayerSpec::fully_connected(3, 2), LayerSpec::fully_connected(2, 2)],
            vec![
                LayerParams::new(vec![0.5, -1.25, 2.0, 0.0, 3.5, -0.125], vec![1.0, -2.0]),
                LayerParams::new(vec![0.75, 1.5, -0.5, 4.0], vec![0.25, 0.0]),
            ],
        )
        .unwrap()
    }

    fn bits(b: BitFilter) -> Selector {
        Selector {
            bits: b,
            ..Selector::everything()
        }
    }

    fn addr(layer: usize, kind: ParamKind, element: usize, bit: u8) -> BitAddress {
        BitAddress::new(layer, kind, element, bit as u32).unwrap()
    }

    #[test]
    fn empty_policy_costs_nothing() {
        let n = net();
        for scheme in [Scheme::Tmr, Scheme::HammingEcc] {
            let r = storage_overhead(&ProtectionPolicy::new("none", scheme), &n).unwrap();
            assert_eq!((r.added_bits, r.protected_bits, r.logic_units), (0, 0, 0.0));
            assert_eq!(r.normalized_storage, 0.0);
        }
    }

    #[test]
    fn full_protection_storage() {
        let n = net();
        let tmr = storage_overhead(&ProtectionPolicy::full("t", Scheme::Tmr), &n).unwrap();
        assert_eq!(tmr.relative_storage, 2.0);
        assert_eq!(tmr.normalized_storage, 1.0);
        let ecc = storage_overhead(&ProtectionPolicy::full("e", Scheme::HammingEcc), &n).unwrap();
        assert_eq!(ecc.added_bits, 14 * 6);
        assert_eq!(ecc.relative_storage, 0.1875);
        assert_eq!(ecc.normalized_logic, 1.0);
    }

    #[test]
    fn ecc_groups_with_partial_tail() {
        let n = net();
        // 448 bits in groups of 100: four full groups and one of 48
        let p = ProtectionPolicy::full("e", Scheme::HammingEcc).with_group_width(100);
        let m = ProtectionMap::build(&n, &p).unwrap();
        assert_eq!(m.unit_count(), 5);
        assert_eq!(m.group_len(4), 48);
        let r = storage_overhead(&p, &n).unwrap();
        assert_eq!(r.added_bits, 4 * 7 + 6);
    }

    #[test]
    fn group_promotion() {
        let n = net();
        let sign0 = ProtectionPolicy::new("s", Scheme::HammingEcc)
            .with_group_width(64)
            .with_rule(Selector {
                layers: LayerFilter::only([0]),
                kinds: crate::engine::KindFilter::Weights,
                bits: BitFilter::sign(),
            });
        let m = ProtectionMap::build(&n, &sign0).unwrap();
        assert_eq!(m.selected_bits(), 6);
        // words 0..6 span bits 0..192, i.e. groups 0, 1, 2
        assert_eq!(m.protected_groups().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(m.protected_bits(), 192);
        // a fraction bit sharing a group with a protected sign bit is protected too
        assert!(m.is_protected(&n, addr(0, ParamKind::Weight, 0, 3)).unwrap());
        assert!(!m.is_protected(&n, addr(0, ParamKind::Bias, 0, 31)).unwrap());
    }

    #[test]
    fn tmr_word_promotion() {
        let n = net();
        let p = ProtectionPolicy::new("s", Scheme::Tmr).with_rule(bits(BitFilter::sign()));
        let m = ProtectionMap::build(&n, &p).unwrap();
        assert_eq!(m.protected_words(), 14);
        assert_eq!(m.protected_bits(), 14 * 32);
        assert!(m.is_protected(&n, addr(1, ParamKind::Bias, 1, 0)).unwrap());
    }

    #[test]
    fn logic_model() {
        let n = net();
        let cost = LogicCostModel::default();
        let ratio = ecc_tmr_logic_ratio(&n, 32, &cost).unwrap();
        assert!((ratio - 3.5).abs() < 1e-12);
        assert!((3.0..=4.0).contains(&ratio));
        let all = logic_overhead(&ProtectionPolicy::full("t", Scheme::Tmr), &n, &cost).unwrap();
        let layer0 = ProtectionPolicy::new("l0", Scheme::Tmr).with_rule(Selector {
            layers: LayerFilter::only([0]),
            ..Selector::everything()
        });
        let part = logic_overhead(&layer0, &n, &cost).unwrap();
        assert_eq!(all, 14.0 * cost.voter_cost());
        assert_eq!(part, 8.0 * cost.voter_cost());
        assert!(logic_overhead(&layer0, &n, &LogicCostModel { c_vote: 0.0, c_xor: 1.0 }).is_err());
        assert!(logic_overhead(&layer0, &n, &LogicCostModel { c_vote: 1.0, c_xor: -1.0 }).is_err());
        assert_eq!(ecc_tmr_storage_ratio(100), 0.035);
    }

    #[test]
    fn codec_cost_depth() {
        let cost = LogicCostModel { c_vote: 1.0, c_xor: 1.0 };
        assert_eq!(cost.codec_cost(4), 4.0 * 3.0);
        assert_eq!(cost.codec_cost(32), 32.0 * 6.0);
        assert_eq!(cost.codec_cost(100), 100.0 * 7.0);
        assert_eq!(cost.codec_cost(1), 2.0);
    }

    #[test]
    fn injection_masks_protected_bits() {
        let n = net();
        let exp = bits(BitFilter::exponent().union(BitFilter::sign()));
        for scheme in [Scheme::Tmr, Scheme::HammingEcc] {
            for d in [32, 7, 100] {
                let p = ProtectionPolicy::new("p", scheme).with_group_width(d).with_rule(exp.clone());
                let m = ProtectionMap::build(&n, &p).unwrap();
                for w in n.words() {
                    let original = n.parameter(w).unwrap().to_bits();
                    for bit in 0..32u8 {
                        let a = BitAddress {
                            layer: w.layer,
                            kind: w.kind,
                            element: w.element,
                            bit,
                        };
                        let got = apply_and_inject(&n, &m, a).unwrap();
                        if m.is_protected(&n, a).unwrap() {
                            assert_eq!(got, original, "{scheme} d={d} {a}");
                        } else {
                            assert_eq!(got, original ^ 1 << bit, "{scheme} d={d} {a}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn exponent_only_leaves_fraction_exposed() {
        let n = net();
        let p = ProtectionPolicy::new("p", Scheme::HammingEcc).with_rule(bits(BitFilter::exponent()));
        let m = ProtectionMap::build(&n, &p).unwrap();
        let a = addr(0, ParamKind::Weight, 1, 30);
        assert_eq!(apply_and_inject(&n, &m, a).unwrap(), (-1.25f32).to_bits());
        // with d = 32 every word is its own group, so the fraction is covered as well
        assert!(m.is_protected(&n, addr(0, ParamKind::Weight, 1, 3)).unwrap());
        let tiny = ProtectionPolicy::new("p", Scheme::HammingEcc)
            .with_group_width(8)
            .with_rule(bits(BitFilter::exponent()));
        let m = ProtectionMap::build(&n, &tiny).unwrap();
        let f = addr(0, ParamKind::Weight, 1, 3);
        assert!(!m.is_protected(&n, f).unwrap());
        assert_eq!(apply_and_inject(&n, &m, f).unwrap(), (-1.25f32).to_bits() ^ 8);
    }

    #[test]
    fn parity_and_copy_faults() {
        let n = net();
        let m = ProtectionMap::build(&n, &ProtectionPolicy::full("e", Scheme::HammingEcc).with_group_width(48)).unwrap();
        for g in 0..m.unit_count() {
            for index in 0..m.parity_bits_of(g) {
                for r in inject_storage_fault(&n, &m, StorageFault::Parity { group: g, index }).unwrap() {
                    assert_eq!(r.recovered, r.original);
                }
            }
        }
        assert!(inject_storage_fault(&n, &m, StorageFault::Parity { group: 0, index: 6 }).is_err());
        let a = addr(1, ParamKind::Weight, 3, 31);
        assert!(inject_storage_fault(&n, &m, StorageFault::Data { address: a, copy: 1 }).is_err());

        let t = ProtectionMap::build(&n, &ProtectionPolicy::full("t", Scheme::Tmr)).unwrap();
        for copy in 0..3 {
            let r = inject_storage_fault(&n, &t, StorageFault::Data { address: a, copy }).unwrap();
            assert_eq!(r[0].recovered, 4.0f32.to_bits());
        }
        assert!(inject_storage_fault(&n, &t, StorageFault::Data { address: a, copy: 3 }).is_err());
        assert!(inject_storage_fault(&n, &t, StorageFault::Parity { group: 0, index: 0 }).is_err());
        let none = ProtectionMap::build(&n, &ProtectionPolicy::new("n", Scheme::Tmr)).unwrap();
        assert!(inject_storage_fault(&n, &none, StorageFault::Data { address: a, copy: 1 }).is_err());
    }
}
