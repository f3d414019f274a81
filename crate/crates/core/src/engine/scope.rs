//! Selection of candidate bits.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitflip::{BitAddress, BitClass, ParamKind};
use crate::error::{Error, Result};
use crate::nn::Network;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LayerFilter {
    #[default]
    All,
    Only(BTreeSet<usize>),
}

impl LayerFilter {
    pub fn only(layers: impl IntoIterator<Item = usize>) -> Self {
        LayerFilter::Only(layers.into_iter().collect())
    }

    pub fn matches(&self, layer: usize) -> bool {
        match self {
            LayerFilter::All => true,
            LayerFilter::Only(set) => set.contains(&layer),
        }
    }
}

/// Parses `all` or a comma list of indices and inclusive ranges, e.g. `0-2,5`.
impl FromStr for LayerFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" || s == "*" {
            return Ok(LayerFilter::All);
        }
        let bad = |part: &str| Error::Scope(format!("bad layer selector `{part}`"));
        let mut set = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('-') {
                Some((a, b)) => {
                    let a: usize = a.trim().parse().map_err(|_| bad(part))?;
                    let b: usize = b.trim().parse().map_err(|_| bad(part))?;
                    if a > b {
                        return Err(bad(part));
                    }
                    set.extend(a..=b);
                }
                None => {
                    set.insert(part.parse().map_err(|_| bad(part))?);
                }
            }
        }
        Ok(LayerFilter::Only(set))
    }
}

impl fmt::Display for LayerFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerFilter::All => f.write_str("all"),
            LayerFilter::Only(set) => {
                let parts: Vec<String> = set.iter().map(usize::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KindFilter {
    Weights,
    Biases,
    #[default]
    Both,
}

impl KindFilter {
    pub fn matches(&self, kind: ParamKind) -> bool {
        matches!(
            (self, kind),
            (KindFilter::Both, _) | (KindFilter::Weights, ParamKind::Weight) | (KindFilter::Biases, ParamKind::Bias)
        )
    }
}

impl FromStr for KindFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "weights" | "weight" => Ok(KindFilter::Weights),
            "biases" | "bias" => Ok(KindFilter::Biases),
            "both" | "all" => Ok(KindFilter::Both),
            other => Err(Error::Scope(format!(
                "unknown parameter kind filter `{other}` (weights, biases, both)"
            ))),
        }
    }
}

impl fmt::Display for KindFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KindFilter::Weights => "weights",
            KindFilter::Biases => "biases",
            KindFilter::Both => "both",
        })
    }
}

/// A set of bit positions within a 32-bit word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitFilter(u32);

impl Default for BitFilter {
    fn default() -> Self {
        BitFilter::all()
    }
}

impl BitFilter {
    pub const fn all() -> Self {
        BitFilter(u32::MAX)
    }

    pub const fn none() -> Self {
        BitFilter(0)
    }

    pub const fn from_mask(mask: u32) -> Self {
        BitFilter(mask)
    }

    pub const fn sign() -> Self {
        BitFilter(1 << 31)
    }

    pub const fn exponent() -> Self {
        BitFilter(0x7f80_0000)
    }

    pub const fn fraction() -> Self {
        BitFilter(0x007f_ffff)
    }

    pub fn class(class: BitClass) -> Self {
        BitFilter(1 << class.bit_index())
    }

    pub fn mask(&self) -> u32 {
        self.0
    }

    pub fn contains(&self, bit: u32) -> bool {
        bit < 32 && self.0 & (1 << bit) != 0
    }

    pub fn union(self, other: BitFilter) -> BitFilter {
        BitFilter(self.0 | other.0)
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    /// Parses one token: `all`, `sign`, `exponent`, `fraction`,
    /// `exponent:K`, `fraction:K`, `ex1`, `frac1` or `bit:N`.
    pub fn parse_token(token: &str) -> Result<Self> {
        let t = token.trim().to_ascii_lowercase();
        Ok(match t.as_str() {
            "all" => BitFilter::all(),
            "none" => BitFilter::none(),
            "sign" => BitFilter::sign(),
            "exponent" => BitFilter::exponent(),
            "fraction" => BitFilter::fraction(),
            _ => {
                if let Some(n) = t.strip_prefix("bit:") {
                    let n: u32 = n
                        .parse()
                        .ok()
                        .filter(|&n| n < 32)
                        .ok_or_else(|| Error::Scope(format!("bad bit token `{token}`")))?;
                    BitFilter(1 << n)
                } else {
                    BitFilter::class(t.parse::<BitClass>()?)
                }
            }
        })
    }

    /// Union of comma- or list-separated tokens.
    pub fn parse_list<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        tokens
            .into_iter()
            .flat_map(|t| t.split(','))
            .filter(|t| !t.trim().is_empty())
            .try_fold(BitFilter::none(), |acc, t| Ok(acc.union(BitFilter::parse_token(t)?)))
    }
}

impl fmt::Display for BitFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#010x}", self.0)
    }
}

/// A (layer, kind, bit) selection rule.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Selector {
    pub layers: LayerFilter,
    pub kinds: KindFilter,
    pub bits: BitFilter,
}

impl Selector {
    pub fn everything() -> Self {
        Selector::default()
    }

    pub fn matches(&self, a: &BitAddress) -> bool {
        self.layers.matches(a.layer) && self.kinds.matches(a.kind) && self.bits.contains(a.bit as u32)
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layers={};kinds={};bits={}", self.layers, self.kinds, self.bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Sampling {
    #[default]
    Exhaustive,
    /// Keep each candidate independently with probability `fraction`.
    Random { fraction: f64, seed: u64 },
}

/// Which bits a scan visits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScanScope {
    pub selector: Selector,
    pub sampling: Sampling,
}

impl ScanScope {
    pub fn exhaustive(selector: Selector) -> Self {
        ScanScope {
            selector,
            sampling: Sampling::Exhaustive,
        }
    }

    /// Stable identity string, used to key checkpoints.
    pub fn key(&self) -> String {
        let sampling = match self.sampling {
            Sampling::Exhaustive => "exhaustive".to_string(),
            Sampling::Random { fraction, seed } => format!("random(fraction={fraction},seed={seed})"),
        };
        format!("{};sampling={sampling}", self.selector)
    }

    /// Candidate addresses in canonical order. Random sampling draws one
    /// uniform per candidate from a ChaCha8 stream seeded by `seed`, so the
    /// selection depends only on (network layout, scope).
    pub fn enumerate(&self, network: &Network) -> Result<Vec<BitAddress>> {
        if let Sampling::Random { fraction, .. } = self.sampling {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::Scope(format!("sampling fraction {fraction} outside [0, 1]")));
            }
        }
        let mut rng = match self.sampling {
            Sampling::Random { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Sampling::Exhaustive => None,
        };
        let mut out = Vec::new();
        for word in network.words() {
            if !self.selector.layers.matches(word.layer) || !self.selector.kinds.matches(word.kind) {
                continue;
            }
            for bit in 0..32u8 {
                if !self.selector.bits.contains(bit as u32) {
                    continue;
                }
                let keep = match (&mut rng, self.sampling) {
                    (Some(rng), Sampling::Random { fraction, .. }) => rng.gen::<f64>() < fraction,
                    _ => true,
                };
                if keep {
                    out.push(BitAddress {
                        layer: word.layer,
                        kind: word.kind,
                        element: word.element,
                        bit,
                    });
                }
            }
        }
        Ok(out)
    }
}

impl fmt::Display for ScanScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerParams, LayerSpec};

    fn net() -> Network {
        Network::new(
            vec![2],
            vec![LayerSpec::fully_connected(2, 2), LayerSpec::Relu, LayerSpec::fully_connected(2, 1)],
            vec![
                LayerParams::new(vec![1.0; 4], vec![0.0; 2]),
                LayerParams::default(),
                LayerParams::new(vec![1.0; 2], vec![0.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn layer_filter_parsing() {
        assert_eq!("all".parse::<LayerFilter>().unwrap(), LayerFilter::All);
        assert_eq!("0-2, 5".parse::<LayerFilter>().unwrap(), LayerFilter::only([0, 1, 2, 5]));
        assert!("3-1".parse::<LayerFilter>().is_err());
        assert!("x".parse::<LayerFilter>().is_err());
    }

    #[test]
    fn bit_tokens() {
        assert_eq!(BitFilter::parse_token("ex1").unwrap().mask(), 1 << 30);
        assert_eq!(BitFilter::parse_token("frac1").unwrap().mask(), 1 << 22);
        assert_eq!(BitFilter::parse_token("exponent:0").unwrap().mask(), 1 << 23);
        assert_eq!(BitFilter::parse_list(["sign,exponent"]).unwrap().mask(), 0xff80_0000);
        assert!(BitFilter::parse_token("bit:32").is_err());
        assert!(BitFilter::parse_token("mantissa").is_err());
    }

    #[test]
    fn exhaustive_enumeration_counts() {
        let n = net();
        let all = ScanScope::default().enumerate(&n).unwrap();
        assert_eq!(all.len(), n.bit_count());
        assert!(all.windows(2).all(|w| w[0] < w[1]));

        let scope = ScanScope::exhaustive(Selector {
            layers: LayerFilter::only([2]),
            kinds: KindFilter::Biases,
            bits: BitFilter::sign(),
        });
        let one = scope.enumerate(&n).unwrap();
        assert_eq!(one, vec![BitAddress::new(2, ParamKind::Bias, 0, 31).unwrap()]);
    }

    #[test]
    fn sampling_is_reproducible() {
        let n = net();
        let scope = |seed| ScanScope {
            selector: Selector::everything(),
            sampling: Sampling::Random { fraction: 0.3, seed },
        };
        let a = scope(7).enumerate(&n).unwrap();
        assert_eq!(a, scope(7).enumerate(&n).unwrap());
        assert_ne!(a, scope(8).enumerate(&n).unwrap());
        assert!(!a.is_empty() && a.len() < n.bit_count());
    }
}
