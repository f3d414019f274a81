//! Protection policies and the policy file format.
//!
//! ```toml
//! [[policy]]
//! name = "exponent+first-sign"
//! scheme = "ecc"          # or "tmr"
//! group_width = 32        # ECC data bits per codeword
//!
//! [[policy.rule]]
//! bits = ["exponent"]
//!
//! [[policy.rule]]
//! layers = "0"
//! kinds = "weights"
//! bits = ["sign"]
//! ```
//!
//! A rule left empty selects every bit. A policy without rules protects nothing.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::bitflip::BitAddress;
use crate::engine::{BitFilter, KindFilter, LayerFilter, Selector};
use crate::error::{Error, Result};

pub const DEFAULT_GROUP_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Tmr,
    #[serde(rename = "ecc")]
    HammingEcc,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Tmr => "tmr",
            Scheme::HammingEcc => "ecc",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tmr" => Ok(Scheme::Tmr),
            "ecc" | "hamming" => Ok(Scheme::HammingEcc),
            other => Err(Error::Policy {
                line: None,
                message: format!("unknown scheme `{other}` (tmr, ecc)"),
            }),
        }
    }
}

/// A named set of protected bits and the scheme that protects them.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtectionPolicy {
    pub name: String,
    pub scheme: Scheme,
    /// ECC data bits per codeword. Ignored by TMR.
    pub group_width: usize,
    /// A bit is protected if any rule matches it.
    pub rules: Vec<Selector>,
}

impl ProtectionPolicy {
    pub fn new(name: impl Into<String>, scheme: Scheme) -> Self {
        ProtectionPolicy {
            name: name.into(),
            scheme,
            group_width: DEFAULT_GROUP_WIDTH,
            rules: Vec::new(),
        }
    }

    /// Protects every bit.
    pub fn full(name: impl Into<String>, scheme: Scheme) -> Self {
        ProtectionPolicy::new(name, scheme).with_rule(Selector::everything())
    }

    pub fn with_rule(mut self, rule: Selector) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_group_width(mut self, d: usize) -> Self {
        self.group_width = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_width == 0 {
            return Err(Error::Policy {
                line: None,
                message: format!("policy `{}`: group width must be at least 1", self.name),
            });
        }
        Ok(())
    }

    /// Whether a rule selects this bit (before any word or group promotion).
    pub fn selects(&self, address: &BitAddress) -> bool {
        self.rules.iter().any(|r| r.matches(address))
    }

    /// Bits of the word at `(layer, kind)` selected by some rule.
    pub(crate) fn word_mask(&self, layer: usize, kind: crate::bitflip::ParamKind) -> u32 {
        self.rules
            .iter()
            .filter(|r| r.layers.matches(layer) && r.kinds.matches(kind))
            .fold(0, |m, r| m | r.bits.mask())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    policy: Vec<RawPolicy>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    name: Spanned<String>,
    scheme: Spanned<String>,
    group_width: Option<Spanned<i64>>,
    #[serde(default)]
    rule: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    layers: Option<Spanned<String>>,
    kinds: Option<Spanned<String>>,
    bits: Option<Vec<Spanned<String>>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses a policy file. Errors carry the 1-based line they refer to.
pub fn parse_policies(text: &str) -> Result<Vec<ProtectionPolicy>> {
    let raw: RawFile = toml::from_str(text).map_err(|e| Error::Policy {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let at = |span: std::ops::Range<usize>, message: String| Error::Policy {
        line: Some(line_of(text, span.start)),
        message,
    };
    let mut names = BTreeSet::new();
    let mut out = Vec::with_capacity(raw.policy.len());
    for p in raw.policy {
        let name = p.name.get_ref().trim().to_string();
        if name.is_empty() {
            return Err(at(p.name.span(), "policy name is empty".into()));
        }
        if !names.insert(name.clone()) {
            return Err(at(p.name.span(), format!("duplicate policy name `{name}`")));
        }
        let scheme = p
            .scheme
            .get_ref()
            .parse::<Scheme>()
            .map_err(|e| at(p.scheme.span(), e.to_string()))?;
        let group_width = match &p.group_width {
            None => DEFAULT_GROUP_WIDTH,
            Some(w) if *w.get_ref() >= 1 => *w.get_ref() as usize,
            Some(w) => return Err(at(w.span(), format!("group_width must be at least 1, got {}", w.get_ref()))),
        };
        let mut rules = Vec::with_capacity(p.rule.len());
        for r in p.rule {
            let layers = match &r.layers {
                Some(s) => s.get_ref().parse::<LayerFilter>().map_err(|e| at(s.span(), e.to_string()))?,
                None => LayerFilter::All,
            };
            let kinds = match &r.kinds {
                Some(s) => s.get_ref().parse::<KindFilter>().map_err(|e| at(s.span(), e.to_string()))?,
                None => KindFilter::Both,
            };
            let bits = match &r.bits {
                Some(tokens) => tokens.iter().try_fold(BitFilter::none(), |acc, t| {
                    BitFilter::parse_token(t.get_ref())
                        .map(|b| acc.union(b))
                        .map_err(|e| at(t.span(), e.to_string()))
                })?,
                None => BitFilter::all(),
            };
            rules.push(Selector { layers, kinds, bits });
        }
        out.push(ProtectionPolicy {
            name,
            scheme,
            group_width,
            rules,
        });
    }
    Ok(out)
}

pub fn load_policies(path: &Path) -> Result<Vec<ProtectionPolicy>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_policies(&text)
}
