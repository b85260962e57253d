//! Fixed-width 256-bit register sets.
//!
//! Prefetch bit-vectors, liveness bit-vectors and interval working sets all
//! share this representation: bit `i` stands for architectural register `i`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Number of architectural registers a thread may be allocated.
pub const MAX_REGISTERS: usize = 256;

const WORDS: usize = MAX_REGISTERS / 64;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct RegSet([u64; WORDS]);

impl RegSet {
    pub const EMPTY: RegSet = RegSet([0; WORDS]);

    pub fn new() -> Self {
        Self::EMPTY
    }

    /// Panics if `reg >= 256`.
    pub fn insert(&mut self, reg: u16) -> bool {
        let (w, b) = split(reg);
        let was = self.0[w] & b != 0;
        self.0[w] |= b;
        !was
    }

    pub fn remove(&mut self, reg: u16) -> bool {
        let (w, b) = split(reg);
        let was = self.0[w] & b != 0;
        self.0[w] &= !b;
        was
    }

    pub fn contains(&self, reg: u16) -> bool {
        if reg as usize >= MAX_REGISTERS {
            return false;
        }
        let (w, b) = split(reg);
        self.0[w] & b != 0
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|&w| w == 0)
    }

    pub fn union(&self, other: &RegSet) -> RegSet {
        let mut out = *self;
        out.union_with(other);
        out
    }

    pub fn union_with(&mut self, other: &RegSet) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a |= *b;
        }
    }

    pub fn intersection(&self, other: &RegSet) -> RegSet {
        let mut out = *self;
        for (a, b) in out.0.iter_mut().zip(other.0.iter()) {
            *a &= *b;
        }
        out
    }

    pub fn difference(&self, other: &RegSet) -> RegSet {
        let mut out = *self;
        for (a, b) in out.0.iter_mut().zip(other.0.iter()) {
            *a &= !*b;
        }
        out
    }

    pub fn is_subset(&self, other: &RegSet) -> bool {
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a & !b == 0)
    }

    /// Ascending register indices.
    pub fn iter(&self) -> impl Iterator<Item = u16> + '_ {
        (0..WORDS).flat_map(move |w| {
            let mut word = self.0[w];
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let bit = word.trailing_zeros();
                word &= word - 1;
                Some((w * 64) as u16 + bit as u16)
            })
        })
    }

    /// 64 lowercase hex digits, most significant register first.
    pub fn to_hex(&self) -> String {
        self.0.iter().rev().map(|w| format!("{w:016x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<RegSet, ParseRegSetError> {
        let digits = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
        if digits.is_empty() || digits.len() > 64 {
            return Err(ParseRegSetError(s.to_string()));
        }
        let padded = format!("{digits:0>64}");
        let mut words = [0u64; WORDS];
        for (i, chunk) in padded.as_bytes().chunks(16).enumerate() {
            let text = std::str::from_utf8(chunk).map_err(|_| ParseRegSetError(s.to_string()))?;
            words[WORDS - 1 - i] =
                u64::from_str_radix(text, 16).map_err(|_| ParseRegSetError(s.to_string()))?;
        }
        Ok(RegSet(words))
    }
}

fn split(reg: u16) -> (usize, u64) {
    let r = reg as usize;
    assert!(r < MAX_REGISTERS, "register index {r} out of range");
    (r / 64, 1u64 << (r % 64))
}

impl FromIterator<u16> for RegSet {
    fn from_iter<I: IntoIterator<Item = u16>>(iter: I) -> Self {
        let mut s = RegSet::new();
        for r in iter {
            s.insert(r);
        }
        s
    }
}

impl Extend<u16> for RegSet {
    fn extend<I: IntoIterator<Item = u16>>(&mut self, iter: I) {
        for r in iter {
            self.insert(r);
        }
    }
}

impl fmt::Debug for RegSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|r| format!("R{r}"))).finish()
    }
}

impl fmt::Display for RegSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed 256-bit register vector `{0}`")]
pub struct ParseRegSetError(pub String);

impl FromStr for RegSet {
    type Err = ParseRegSetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RegSet::from_hex(s)
    }
}

// Serialized as a sorted list of register indices.
impl Serialize for RegSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for RegSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let regs = Vec::<u16>::deserialize(deserializer)?;
        if let Some(bad) = regs.iter().find(|&&r| r as usize >= MAX_REGISTERS) {
            return Err(serde::de::Error::custom(format!("register {bad} out of range")));
        }
        Ok(regs.into_iter().collect())
    }
}
