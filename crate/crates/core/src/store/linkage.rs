use serde::Serialize;

use super::{ContentStore, StoreError};
use crate::cid::Cid;
use crate::identity::{DidDocument, ServiceType, VerificationKey};

/// Whether an event record can be trusted through its on-ledger link.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum LinkageVerdict {
    /// The record's issuer was a controller of the document when the link was
    /// committed, so the link itself is the authorization.
    TrustedByLinkage,
    /// Issuer and linking controller differ and the issuer's signature checks out.
    TrustedBySignature,
    Untrusted { reason: String },
}

impl LinkageVerdict {
    pub fn is_trusted(&self) -> bool {
        !matches!(self, LinkageVerdict::Untrusted { .. })
    }
}

/// Evaluates the redundancy rule for issuer signatures over a record linked
/// from `history` (all versions of one DID, oldest first).
///
/// Authority is evaluated at link-commit time: the controllers of the version
/// preceding the one that first carries the link (or of version 1 for links
/// committed at creation).
pub fn verify_linkage(
    store: &ContentStore,
    record_cid: &Cid,
    history: &[DidDocument],
    issuer_keys: impl Fn(&crate::identity::Did) -> Vec<VerificationKey>,
) -> Result<LinkageVerdict, StoreError> {
    let record = store.get(record_cid)?;
    let cid_text = record_cid.to_string();
    let linked_at = history.iter().position(|doc| {
        doc.document
            .services_of(ServiceType::EventMetadata)
            .any(|s| s.endpoint == cid_text)
    });
    let Some(index) = linked_at else {
        return Ok(LinkageVerdict::Untrusted {
            reason: "record is not linked from the document".into(),
        });
    };
    let authority = &history[index.saturating_sub(1)].document.controller;
    if authority.contains(&record.actor_did) {
        return Ok(LinkageVerdict::TrustedByLinkage);
    }
    if record.issuer_signature.is_none() {
        return Ok(LinkageVerdict::Untrusted {
            reason: "issuer differs from linking controller and no issuer signature is present".into(),
        });
    }
    if record.issuer_signature_valid(&issuer_keys(&record.actor_did)) {
        Ok(LinkageVerdict::TrustedBySignature)
    } else {
        Ok(LinkageVerdict::Untrusted {
            reason: "issuer signature does not verify".into(),
        })
    }
}
