use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::IdentityError;

pub const DEFAULT_METHOD: &str = "chain";

/// A decentralized identifier, `did:<method>:<unique id>`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Did {
    method: String,
    unique_id: String,
}

fn valid_method(method: &str) -> bool {
    !method.is_empty() && method.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

fn valid_unique_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with(':')
        && !id.ends_with(':')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~' | b':'))
}

impl Did {
    pub fn new(method: &str, unique_id: &str) -> Result<Self, IdentityError> {
        if !valid_method(method) || !valid_unique_id(unique_id) {
            return Err(IdentityError::MalformedDid(format!("did:{method}:{unique_id}")));
        }
        Ok(Self {
            method: method.to_string(),
            unique_id: unique_id.to_string(),
        })
    }

    /// Base58 of 16 random bytes.
    pub fn generate(method: &str, rng: &mut impl RngCore) -> Result<Self, IdentityError> {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        Self::new(method, &bs58::encode(bytes).into_string())
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn unique_id(&self) -> &str {
        &self.unique_id
    }

    /// `did#fragment`
    pub fn url(&self, fragment: &str) -> String {
        format!("{self}#{fragment}")
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "did:{}:{}", self.method, self.unique_id)
    }
}

impl fmt::Debug for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Did({self})")
    }
}

impl FromStr for Did {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s
            .strip_prefix("did:")
            .ok_or_else(|| IdentityError::MalformedDid(s.to_string()))?;
        let (method, id) = rest
            .split_once(':')
            .ok_or_else(|| IdentityError::MalformedDid(s.to_string()))?;
        Did::new(method, id).map_err(|_| IdentityError::MalformedDid(s.to_string()))
    }
}

impl Serialize for Did {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Did {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn parses_reference_shape() {
        let did: Did = "did:example:123456789abcdefghi".parse().unwrap();
        assert_eq!(did.method(), "example");
        assert_eq!(did.unique_id(), "123456789abcdefghi");
        assert_eq!(did.to_string(), "did:example:123456789abcdefghi");
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "did:", "did:x", "did:x:", "did::abc", "DID:x:abc", "did:X:abc", "did:x:a b", "did:x:a/b", "urn:x:y", "did:x:a#frag"] {
            assert!(bad.parse::<Did>().is_err(), "{bad}");
        }
    }

    #[test]
    fn generated_ids_are_seed_deterministic() {
        let a = Did::generate(DEFAULT_METHOD, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        let b = Did::generate(DEFAULT_METHOD, &mut ChaCha20Rng::seed_from_u64(7)).unwrap();
        let c = Did::generate(DEFAULT_METHOD, &mut ChaCha20Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.to_string().starts_with("did:chain:"));
        assert_eq!(a.to_string().parse::<Did>().unwrap(), a);
    }
}
