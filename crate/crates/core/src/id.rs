//! 160-bit identifiers and the XOR metric.
//!
//! Node IDs and data IDs share one key space. Identifiers are stored
//! big-endian, so the derived byte-wise ordering is the ordering of the
//! underlying unsigned integers.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ID_BITS: usize = 160;
pub const ID_BYTES: usize = ID_BITS / 8;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Identifier([u8; ID_BYTES]);

impl Identifier {
    pub const ZERO: Identifier = Identifier([0; ID_BYTES]);

    pub const fn from_bytes(bytes: [u8; ID_BYTES]) -> Self {
        Identifier(bytes)
    }

    /// Zero-extends `v` into the low 64 bits.
    pub fn from_u64(v: u64) -> Self {
        let mut bytes = [0; ID_BYTES];
        bytes[ID_BYTES - 8..].copy_from_slice(&v.to_be_bytes());
        Identifier(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; ID_BYTES] {
        &self.0
    }

    pub fn distance(&self, other: &Identifier) -> Distance {
        xor_distance(*self, *other)
    }

    /// Bit `i` counted from the most significant end.
    pub fn bit(&self, i: usize) -> bool {
        debug_assert!(i < ID_BITS);
        self.0[i / 8] & (0x80 >> (i % 8)) != 0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Identifier({})", &self.to_hex()[..10])
    }
}

impl FromStr for Identifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bytes = [0; ID_BYTES];
        hex::decode_to_slice(s, &mut bytes)
            .map_err(|e| Error::InvalidInput(format!("identifier {s:?}: {e}")))?;
        Ok(Identifier(bytes))
    }
}

/// XOR distance between two identifiers, ordered as an unsigned magnitude.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Distance([u8; ID_BYTES]);

impl Distance {
    pub const ZERO: Distance = Distance([0; ID_BYTES]);

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    pub fn as_bytes(&self) -> &[u8; ID_BYTES] {
        &self.0
    }

    pub fn leading_zeros(&self) -> u32 {
        let mut zeros = 0;
        for &b in &self.0 {
            if b != 0 {
                return zeros + b.leading_zeros();
            }
            zeros += 8;
        }
        zeros
    }

    /// floor(log2(d)), or `None` for the zero distance.
    pub fn ilog2(&self) -> Option<u32> {
        if self.is_zero() {
            None
        } else {
            Some(ID_BITS as u32 - 1 - self.leading_zeros())
        }
    }

    pub fn xor(&self, other: &Distance) -> Distance {
        let mut out = [0; ID_BYTES];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        Distance(out)
    }

    /// Lossy conversion, used for plotting and statistics only.
    pub fn to_f64(&self) -> f64 {
        self.0
            .iter()
            .fold(0.0, |acc, &b| acc * 256.0 + f64::from(b))
    }
}

impl fmt::Debug for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Distance({})", hex::encode(self.0))
    }
}

pub fn xor_distance(a: Identifier, b: Identifier) -> Distance {
    let mut out = [0; ID_BYTES];
    for (o, (x, y)) in out.iter_mut().zip(a.0.iter().zip(b.0.iter())) {
        *o = x ^ y;
    }
    Distance(out)
}

/// SHA-256 truncated to its first 160 bits.
pub fn hash_to_id(payload: &[u8]) -> Result<Identifier> {
    if payload.is_empty() {
        return Err(Error::InvalidInput("cannot hash an empty payload".into()));
    }
    let digest = Sha256::digest(payload);
    let mut bytes = [0; ID_BYTES];
    bytes.copy_from_slice(&digest[..ID_BYTES]);
    Ok(Identifier(bytes))
}

pub fn random_id<R: RngCore + ?Sized>(rng: &mut R) -> Identifier {
    let mut bytes = [0; ID_BYTES];
    rng.fill_bytes(&mut bytes);
    Identifier(bytes)
}
