use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::canonical::to_canonical_vec;
use crate::identity::{Did, KeyPair, SignatureBytes, VerificationKey, VersionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventType {
    Produce,
    Ship,
    Receive,
    Manufacture,
    Withdraw,
}

impl EventType {
    pub const ALL: [EventType; 5] = [
        EventType::Produce,
        EventType::Ship,
        EventType::Receive,
        EventType::Manufacture,
        EventType::Withdraw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventType::Produce => "produce",
            EventType::Ship => "ship",
            EventType::Receive => "receive",
            EventType::Manufacture => "manufacture",
            EventType::Withdraw => "withdraw",
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Signature by the record's issuer over its canonical bytes without this field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuerSignature {
    pub signer: Did,
    pub signature: SignatureBytes,
}

/// Off-chain metadata of one supply-chain event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EventRecord {
    pub event_type: EventType,
    pub asset_did: Did,
    pub actor_did: Did,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterparty_did: Option<Did>,
    /// Consumed inputs, Manufacture only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compartments: Vec<Did>,
    /// Version of each compartment's document at the moment it was consumed,
    /// aligned with `compartments`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compartment_versions: Vec<VersionId>,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer_signature: Option<IssuerSignature>,
}

impl EventRecord {
    pub fn new(event_type: EventType, asset_did: Did, actor_did: Did, timestamp: DateTime<Utc>) -> Self {
        Self {
            event_type,
            asset_did,
            actor_did,
            counterparty_did: None,
            compartments: Vec::new(),
            compartment_versions: Vec::new(),
            attributes: BTreeMap::new(),
            timestamp,
            issuer_signature: None,
        }
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let bad = |why: &str| Err(StoreError::MalformedRecord(why.to_string()));
        let is_manufacture = self.event_type == EventType::Manufacture;
        if is_manufacture == self.compartments.is_empty() {
            return bad("compartments must be non-empty exactly for manufacture events");
        }
        if !self.compartment_versions.is_empty() && self.compartment_versions.len() != self.compartments.len() {
            return bad("compartment_versions must align with compartments");
        }
        if matches!(self.event_type, EventType::Ship | EventType::Receive) && self.counterparty_did.is_none() {
            return bad("ship and receive events need a counterparty");
        }
        Ok(())
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        to_canonical_vec(self).expect("record serializes")
    }

    /// Canonical bytes with `issuer_signature` stripped.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut unsigned = self.clone();
        unsigned.issuer_signature = None;
        unsigned.canonical_bytes()
    }

    pub fn sign_as_issuer(&mut self, signer: Did, key: &KeyPair) {
        let signature = key.sign(&self.signing_bytes());
        self.issuer_signature = Some(IssuerSignature { signer, signature });
    }

    pub fn issuer_signature_valid(&self, keys: &[VerificationKey]) -> bool {
        let Some(sig) = &self.issuer_signature else {
            return false;
        };
        if sig.signer != self.actor_did {
            return false;
        }
        let bytes = self.signing_bytes();
        keys.iter().any(|k| k.verify(&bytes, &sig.signature))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn did(s: &str) -> Did {
        format!("did:chain:{s}").parse().unwrap()
    }

    fn ts() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2024-03-05T08:30:00Z").unwrap().with_timezone(&Utc)
    }

    #[test]
    fn compartments_iff_manufacture() {
        let mut r = EventRecord::new(EventType::Manufacture, did("p"), did("m"), ts());
        assert!(r.validate().is_err());
        r.compartments.push(did("c"));
        assert!(r.validate().is_ok());
        let mut p = EventRecord::new(EventType::Produce, did("a"), did("f"), ts());
        assert!(p.validate().is_ok());
        p.compartments.push(did("c"));
        assert!(p.validate().is_err());
    }

    #[test]
    fn ship_and_receive_need_counterparty() {
        for kind in [EventType::Ship, EventType::Receive] {
            let mut r = EventRecord::new(kind, did("a"), did("f"), ts());
            assert!(r.validate().is_err());
            r.counterparty_did = Some(did("m"));
            assert!(r.validate().is_ok());
        }
    }

    #[test]
    fn issuer_signature_checks_signer_and_bytes() {
        let key = KeyPair::from_seed(&[4u8; 32]).unwrap();
        let mut r = EventRecord::new(EventType::Produce, did("a"), did("lab"), ts());
        assert!(!r.issuer_signature_valid(&[key.verification_key()]));
        r.sign_as_issuer(did("lab"), &key);
        assert!(r.issuer_signature_valid(&[key.verification_key()]));
        let mut tampered = r.clone();
        tampered.attributes.insert("batch".into(), "2".into());
        assert!(!tampered.issuer_signature_valid(&[key.verification_key()]));
        let mut wrong_signer = r.clone();
        wrong_signer.sign_as_issuer(did("other"), &key);
        assert!(!wrong_signer.issuer_signature_valid(&[key.verification_key()]));
    }

    proptest! {
        #[test]
        fn canonical_form_is_stable(attrs in proptest::collection::btree_map("[a-z]{1,8}", "[ -~]{0,16}", 0..6), secs in 0i64..4_000_000_000) {
            let mut r = EventRecord::new(EventType::Ship, did("a"), did("f"), DateTime::from_timestamp(secs, 0).unwrap());
            r.counterparty_did = Some(did("m"));
            r.attributes = attrs;
            let bytes = r.canonical_bytes();
            let parsed: EventRecord = serde_json::from_slice(&bytes).unwrap();
            prop_assert_eq!(&parsed, &r);
            prop_assert_eq!(parsed.canonical_bytes(), bytes);
        }
    }
}
