//! The two rescoring caches and their statistics.
//!
//! [`QueryCache`] deduplicates LM queries by (history id, word). [`HiddenCache`]
//! maps a quantized (history vector, word) key to the full-precision GRU output
//! computed for the first input that claimed the key.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gru::HistoryVector;

/// How history vectors are coarsened before being used as hidden-cache keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum PrecisionMode {
    /// Exact bit pattern.
    Off,
    /// Round to this many decimal places (1..=6).
    Round(u8),
    /// One bit per element: set iff the element is >= 0.
    Sign,
}

impl PrecisionMode {
    pub fn round(places: u8) -> Result<Self> {
        if !(1..=6).contains(&places) {
            return Err(Error::Parameter(format!(
                "rounding precision must be 1..=6 decimal places, got {places}"
            )));
        }
        Ok(PrecisionMode::Round(places))
    }
}

impl fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrecisionMode::Off => f.write_str("off"),
            PrecisionMode::Round(k) => write!(f, "round:{k}"),
            PrecisionMode::Sign => f.write_str("sign"),
        }
    }
}

impl FromStr for PrecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(PrecisionMode::Off),
            "sign" => Ok(PrecisionMode::Sign),
            _ => {
                let places = s
                    .strip_prefix("round:")
                    .and_then(|k| k.parse::<u8>().ok())
                    .ok_or_else(|| {
                        Error::Parameter(format!(
                            "unknown precision '{s}', expected off | round:K | sign"
                        ))
                    })?;
                PrecisionMode::round(places)
            }
        }
    }
}

impl From<PrecisionMode> for String {
    fn from(mode: PrecisionMode) -> String {
        mode.to_string()
    }
}

impl TryFrom<String> for PrecisionMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum KeyCode {
    /// `f64::to_bits` of every element.
    Exact(Vec<u64>),
    /// `round_half_away_from_zero(h_i * 10^k)`.
    Rounded(Vec<i32>),
    /// Packed sign bits, element i at bit `i % 64` of word `i / 64`.
    Sign(Vec<u64>),
}

/// Hidden-cache key. Equality is exact integer equality of the code.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantizedKey {
    pub word: u32,
    pub code: KeyCode,
}

pub fn quantize(h: &[f64], mode: PrecisionMode, word: u32) -> Result<QuantizedKey> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("cannot quantize a non-finite history vector".into()));
    }
    let code = match mode {
        PrecisionMode::Off => KeyCode::Exact(h.iter().map(|v| v.to_bits()).collect()),
        PrecisionMode::Round(k) => {
            let scale = 10f64.powi(i32::from(k));
            let codes = h
                .iter()
                .map(|v| {
                    let q = (v * scale).round();
                    if q.abs() > f64::from(i32::MAX) {
                        return Err(Error::Input(format!(
                            "value {v} out of range for round:{k} quantization"
                        )));
                    }
                    // `as` maps -0.0 to 0
                    Ok(q as i32)
                })
                .collect::<Result<Vec<_>>>()?;
            KeyCode::Rounded(codes)
        }
        PrecisionMode::Sign => {
            let mut bits = vec![0u64; h.len().div_ceil(64)];
            for (i, v) in h.iter().enumerate() {
                if *v >= 0.0 {
                    bits[i / 64] |= 1 << (i % 64);
                }
            }
            KeyCode::Sign(bits)
        }
    };
    Ok(QuantizedKey { word, code })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryEntry {
    pub child: u32,
    /// `None` while the miss that reserved the key is still being computed.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dedup {
    Hit(QueryEntry),
    /// The key was absent and is now reserved for the given child id.
    Miss,
}

/// Exact (history id, word) deduplication.
#[derive(Debug, Default, Clone)]
pub struct QueryCache {
    entries: HashMap<(u32, u32), QueryEntry>,
}

impl QueryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn probe(&mut self, hist: u32, word: u32, child_on_miss: u32) -> Dedup {
        match self.entries.entry((hist, word)) {
            Entry::Occupied(e) => Dedup::Hit(*e.get()),
            Entry::Vacant(e) => {
                e.insert(QueryEntry {
                    child: child_on_miss,
                    score: None,
                });
                Dedup::Miss
            }
        }
    }

    pub fn get(&self, hist: u32, word: u32) -> Option<QueryEntry> {
        self.entries.get(&(hist, word)).copied()
    }

    pub fn fill(&mut self, hist: u32, word: u32, score: f64) -> Result<()> {
        match self.entries.get_mut(&(hist, word)) {
            Some(entry) if entry.score.is_none() => {
                entry.score = Some(score);
                Ok(())
            }
            Some(_) => Err(Error::Protocol(format!(
                "query ({hist}, {word}) already has a score"
            ))),
            None => Err(Error::Protocol(format!(
                "query ({hist}, {word}) was never reserved"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[derive(Debug, Clone)]
enum Slot {
    Reserved,
    Ready(HistoryVector),
}

#[derive(Debug, Clone, PartialEq)]
pub enum HiddenLookup {
    /// Full-precision state stored by the key's first occupant.
    Hit(HistoryVector),
    /// Key claimed by an earlier caller whose result is not inserted yet.
    InFlight,
    /// Key was absent; the caller now owns it and must insert exactly once.
    Pending,
}

#[derive(Debug, Default, Clone)]
pub struct HiddenCache {
    slots: HashMap<QuantizedKey, Slot>,
}

impl HiddenCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup(&mut self, key: &QuantizedKey) -> HiddenLookup {
        if let Some(slot) = self.slots.get(key) {
            return match slot {
                Slot::Ready(h) => HiddenLookup::Hit(h.clone()),
                Slot::Reserved => HiddenLookup::InFlight,
            };
        }
        self.slots.insert(key.clone(), Slot::Reserved);
        HiddenLookup::Pending
    }

    pub fn get(&self, key: &QuantizedKey) -> Option<&[f64]> {
        match self.slots.get(key) {
            Some(Slot::Ready(h)) => Some(h),
            _ => None,
        }
    }

    pub fn insert(&mut self, key: &QuantizedKey, state: HistoryVector) -> Result<()> {
        match self.slots.get_mut(key) {
            Some(slot @ Slot::Reserved) => {
                *slot = Slot::Ready(state);
                Ok(())
            }
            Some(Slot::Ready(_)) => Err(Error::Protocol(
                "hidden-cache key inserted twice".into(),
            )),
            None => Err(Error::Protocol(
                "hidden-cache insert for a key that was never looked up".into(),
            )),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn clear(&mut self) {
        self.slots.clear();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub total_queries: u64,
    pub query_cache_hits: u64,
    pub hidden_lookups: u64,
    pub hidden_hits: u64,
    pub unique_gru_computations: u64,
}

impl CacheStats {
    pub fn check_identities(&self) -> Result<()> {
        let ok = self.hidden_hits <= self.hidden_lookups
            && self.query_cache_hits <= self.total_queries
            && self.unique_gru_computations + self.hidden_hits == self.hidden_lookups
            && self.hidden_lookups + self.query_cache_hits == self.total_queries;
        if ok {
            Ok(())
        } else {
            Err(Error::Protocol(format!("inconsistent cache statistics: {self:?}")))
        }
    }

    pub fn query_hit_ratio(&self) -> Option<f64> {
        hit_ratio(self.query_cache_hits, self.total_queries).ok()
    }

    pub fn hidden_hit_ratio(&self) -> Option<f64> {
        hit_ratio(self.hidden_hits, self.hidden_lookups).ok()
    }
}

/// Percentage reduction of unique computations against a baseline count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RedundancyRate {
    /// Unrounded percentage.
    pub raw: f64,
}

impl RedundancyRate {
    /// Percentage rounded half away from zero to two decimals.
    pub fn rounded(&self) -> f64 {
        (self.raw * 100.0).round() / 100.0
    }
}

impl fmt::Display for RedundancyRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}%", self.rounded())
    }
}

pub fn redundancy_rate(baseline_count: u64, quantized_count: u64) -> Result<RedundancyRate> {
    if baseline_count == 0 {
        return Err(Error::UndefinedRate);
    }
    if quantized_count > baseline_count {
        return Err(Error::Parameter(format!(
            "quantized count {quantized_count} exceeds baseline {baseline_count}"
        )));
    }
    let saved = (baseline_count - quantized_count) as f64;
    Ok(RedundancyRate {
        raw: saved / baseline_count as f64 * 100.0,
    })
}

pub fn hit_ratio(hits: u64, lookups: u64) -> Result<f64> {
    if lookups == 0 {
        return Err(Error::Parameter("hit ratio undefined for zero lookups".into()));
    }
    if hits > lookups {
        return Err(Error::Parameter(format!("{hits} hits exceed {lookups} lookups")));
    }
    Ok(hits as f64 / lookups as f64)
}
