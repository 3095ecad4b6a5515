use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Multihash prefix for sha2-256 with a 32-byte digest.
const MULTIHASH_PREFIX: [u8; 2] = [0x12, 0x20];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed content identifier {0:?}")]
pub struct MalformedCid(pub String);

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Content identifier: the SHA-256 digest of the stored bytes.
///
/// Text form is base58btc of `0x12 0x20 ‖ digest`, i.e. a multihash, which
/// is what a CIDv0 looks like (`Qm...`).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cid([u8; 32]);

impl Cid {
    pub fn of(bytes: &[u8]) -> Self {
        Self(sha256(bytes))
    }

    pub fn from_digest(digest: [u8; 32]) -> Self {
        Self(digest)
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// True when `bytes` hash to this identifier.
    pub fn matches(&self, bytes: &[u8]) -> bool {
        sha256(bytes) == self.0
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut raw = Vec::with_capacity(34);
        raw.extend_from_slice(&MULTIHASH_PREFIX);
        raw.extend_from_slice(&self.0);
        f.write_str(&bs58::encode(raw).into_string())
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({self})")
    }
}

impl FromStr for Cid {
    type Err = MalformedCid;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let raw = bs58::decode(s).into_vec().map_err(|_| MalformedCid(s.to_string()))?;
        if raw.len() != 34 || raw[..2] != MULTIHASH_PREFIX {
            return Err(MalformedCid(s.to_string()));
        }
        let mut digest = [0u8; 32];
        digest.copy_from_slice(&raw[2..]);
        Ok(Self(digest))
    }
}

impl Serialize for Cid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
