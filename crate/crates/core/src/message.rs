use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageParseError {
    #[error("invalid hex digit `{0}`")]
    Hex(char),
    #[error("invalid bit `{0}` (expected 0 or 1)")]
    Bit(char),
}

/// A message as an ordered string of bits, one per pulse.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        Self((0..len).map(|_| rng.random()).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn flipped(&self, index: usize) -> Self {
        let mut bits = self.0.clone();
        bits[index] = !bits[index];
        Self(bits)
    }

    /// MSB-first packing; the final byte is zero-padded.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0
            .chunks(8)
            .map(|c| {
                c.iter()
                    .enumerate()
                    .fold(0u8, |b, (i, &bit)| b | ((bit as u8) << (7 - i)))
            })
            .collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self(
            bytes
                .iter()
                .flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1 == 1))
                .collect(),
        )
    }

    /// Number of positions at which the two strings differ, plus the length difference.
    pub fn hamming(&self, other: &Self) -> usize {
        let common = self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count();
        common + self.len().abs_diff(other.len())
    }
}

impl From<Vec<bool>> for BitString {
    fn from(bits: Vec<bool>) -> Self {
        Self(bits)
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Accepts `0x`-prefixed hex (4 bits per digit) or a plain string of `0`/`1`.
impl FromStr for BitString {
    type Err = MessageParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
            let mut bits = Vec::with_capacity(hex.len() * 4);
            for c in hex.chars().filter(|c| *c != '_') {
                let v = c.to_digit(16).ok_or(MessageParseError::Hex(c))?;
                bits.extend((0..4).rev().map(|i| (v >> i) & 1 == 1));
            }
            return Ok(Self(bits));
        }
        s.chars()
            .filter(|c| *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(MessageParseError::Bit(other)),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Self)
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
