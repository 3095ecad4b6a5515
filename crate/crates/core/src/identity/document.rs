use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{Did, IdentityError, SignatureBytes, VerificationKey};
use crate::canonical::{canonical_value_bytes, to_canonical_vec};
use crate::cid::{sha256, Cid};

pub const DID_CONTEXT: &str = "https://www.w3.org/ns/did/v1";
pub const ED25519_CONTEXT: &str = "https://w3id.org/security/suites/ed25519-2020/v1";
pub const ED25519_METHOD_TYPE: &str = "Ed25519VerificationKey2020";

pub const STATUS_ACTIVE: &str = "active";
pub const STATUS_WITHDRAWN: &str = "withdrawn";

/// Version token: hex SHA-256 over the version's content and its
/// predecessor's token.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VersionId(String);

impl VersionId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn parse(s: &str) -> Result<Self, IdentityError> {
        if s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
            Ok(Self(s.to_string()))
        } else {
            Err(IdentityError::UnknownVersion(s.to_string()))
        }
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServiceType {
    /// Endpoint is the Cid of an off-chain event record.
    EventMetadata,
    /// Endpoint is the DID of a consumed raw material or sub-product.
    Compartment,
    /// Endpoint is the hex Merkle root over all compartment DIDs.
    CompartmentMerkleRoot,
    /// Endpoint is `active` or `withdrawn`.
    Status,
    /// Endpoint is the DID of the product that consumed this asset.
    ConsumedBy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceEntry {
    pub id: String,
    #[serde(rename = "type")]
    pub service_type: ServiceType,
    #[serde(rename = "serviceEndpoint")]
    pub endpoint: String,
}

impl ServiceEntry {
    pub fn new(id: impl Into<String>, service_type: ServiceType, endpoint: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            service_type,
            endpoint: endpoint.into(),
        }
    }

    /// Link to an event record committed in version `anchor_version`; the
    /// id also carries the event kind so the head document alone tells the
    /// latest event.
    pub fn event_metadata(did: &Did, anchor_version: u32, kind: &str, cid: &Cid) -> Self {
        Self::new(did.url(&format!("event-{anchor_version}-{kind}")), ServiceType::EventMetadata, cid.to_string())
    }

    pub fn status(did: &Did, status: &str) -> Self {
        Self::new(did.url("status"), ServiceType::Status, status)
    }

    /// For EventMetadata entries built by [`ServiceEntry::event_metadata`]:
    /// the document version that committed the link.
    pub fn anchor_version(&self) -> Option<u32> {
        self.event_fragment()?.0.parse().ok()
    }

    /// Event kind recorded in an EventMetadata entry id.
    pub fn event_kind(&self) -> Option<&str> {
        self.event_fragment().map(|(_, kind)| kind)
    }

    fn event_fragment(&self) -> Option<(&str, &str)> {
        let (_, fragment) = self.id.rsplit_once('#')?;
        fragment.strip_prefix("event-")?.split_once('-')
    }

    pub fn validate(&self) -> Result<(), IdentityError> {
        let bad = |why: &str| Err(IdentityError::InvalidChange(format!("service {}: {why}", self.id)));
        if self.id.is_empty() {
            return bad("empty id");
        }
        match self.service_type {
            ServiceType::EventMetadata => {
                if self.endpoint.parse::<Cid>().is_err() {
                    return bad("endpoint is not a content identifier");
                }
            }
            ServiceType::Compartment | ServiceType::ConsumedBy => {
                if self.endpoint.parse::<Did>().is_err() {
                    return bad("endpoint is not a DID");
                }
            }
            ServiceType::CompartmentMerkleRoot => {
                if self.endpoint.len() != 64 || hex::decode(&self.endpoint).is_err() {
                    return bad("endpoint is not a 32-byte hex root");
                }
            }
            ServiceType::Status => {
                if self.endpoint != STATUS_ACTIVE && self.endpoint != STATUS_WITHDRAWN {
                    return bad("status must be active or withdrawn");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationMethod {
    pub id: String,
    #[serde(rename = "type")]
    pub method_type: String,
    pub controller: Did,
    #[serde(rename = "publicKeyMultibase")]
    pub public_key: VerificationKey,
}

impl VerificationMethod {
    pub fn ed25519(id: impl Into<String>, controller: Did, public_key: VerificationKey) -> Self {
        Self {
            id: id.into(),
            method_type: ED25519_METHOD_TYPE.to_string(),
            controller,
            public_key,
        }
    }
}

/// The DID Document proper.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DocumentBody {
    #[serde(rename = "@context")]
    pub context: Vec<String>,
    pub id: Did,
    pub controller: Vec<Did>,
    pub verification_method: Vec<VerificationMethod>,
    pub service: Vec<ServiceEntry>,
}

impl DocumentBody {
    pub fn new(id: Did, controller: Vec<Did>, verification_method: Vec<VerificationMethod>, service: Vec<ServiceEntry>) -> Self {
        Self {
            context: vec![DID_CONTEXT.to_string(), ED25519_CONTEXT.to_string()],
            id,
            controller,
            verification_method,
            service,
        }
    }

    pub fn validate(&self) -> Result<(), IdentityError> {
        if self.controller.is_empty() {
            return Err(IdentityError::InvalidChange("controller list is empty".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for vm in &self.verification_method {
            if !ids.insert(vm.id.as_str()) {
                return Err(IdentityError::InvalidChange(format!("duplicate verification method {}", vm.id)));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for service in &self.service {
            service.validate()?;
            if !ids.insert(service.id.as_str()) {
                return Err(IdentityError::InvalidChange(format!("duplicate service {}", service.id)));
            }
        }
        Ok(())
    }

    pub fn services_of(&self, kind: ServiceType) -> impl Iterator<Item = &ServiceEntry> {
        self.service.iter().filter(move |s| s.service_type == kind)
    }

    /// Verification methods whose controller is one of the listed controllers.
    pub fn controller_methods(&self) -> impl Iterator<Item = &VerificationMethod> {
        self.verification_method
            .iter()
            .filter(|vm| self.controller.contains(&vm.controller))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DocumentMetadata {
    pub created: DateTime<Utc>,
    pub updated: DateTime<Utc>,
    /// 1-based position in the history.
    pub version: u32,
    pub version_id: VersionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_version_id: Option<VersionId>,
    pub deactivated: bool,
}

/// One committed version: the document plus its metadata, as resolved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DidDocument {
    #[serde(rename = "didDocument")]
    pub document: DocumentBody,
    #[serde(rename = "didDocumentMetadata")]
    pub metadata: DocumentMetadata,
}

impl DidDocument {
    pub fn id(&self) -> &Did {
        &self.document.id
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        to_canonical_vec(self).expect("document serializes")
    }

    /// Recomputes the version token from content and predecessor link.
    pub fn compute_version_id(&self) -> VersionId {
        let mut value = serde_json::to_value(self).expect("document serializes");
        if let Some(meta) = value.get_mut("didDocumentMetadata").and_then(|m| m.as_object_mut()) {
            meta.remove("versionId");
        }
        let mut preimage = canonical_value_bytes(&value);
        if let Some(prev) = &self.metadata.previous_version_id {
            preimage.extend_from_slice(prev.as_str().as_bytes());
        }
        VersionId(hex::encode(sha256(&preimage)))
    }

    pub fn status(&self) -> Option<&str> {
        self.document
            .services_of(ServiceType::Status)
            .next()
            .map(|s| s.endpoint.as_str())
    }
}

/// A requested change to a document. Services are upserted by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DocumentDelta {
    pub put_services: Vec<ServiceEntry>,
    pub remove_services: Vec<String>,
    pub controllers: Option<Vec<Did>>,
    pub verification_methods: Option<Vec<VerificationMethod>>,
}

impl DocumentDelta {
    pub fn add_service(mut self, entry: ServiceEntry) -> Self {
        self.put_services.push(entry);
        self
    }

    pub fn apply(&self, current: &DocumentBody) -> Result<DocumentBody, IdentityError> {
        let mut next = current.clone();
        for id in &self.remove_services {
            let before = next.service.len();
            next.service.retain(|s| &s.id != id);
            if next.service.len() == before {
                return Err(IdentityError::InvalidChange(format!("no service {id} to remove")));
            }
        }
        for entry in &self.put_services {
            match next.service.iter_mut().find(|s| s.id == entry.id) {
                Some(existing) => *existing = entry.clone(),
                None => next.service.push(entry.clone()),
            }
        }
        if let Some(controllers) = &self.controllers {
            next.controller = controllers.clone();
        }
        if let Some(methods) = &self.verification_methods {
            next.verification_method = methods.clone();
        }
        next.validate()?;
        Ok(next)
    }
}

/// Signature over a proposed version, naming the verification method used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Proof {
    pub verification_method: String,
    pub signature: SignatureBytes,
}

#[derive(Serialize)]
struct SigningView<'a> {
    document: &'a DocumentBody,
    deactivated: bool,
}

/// Bytes a controller signs to authorize a new version: the canonical
/// proposed document and deactivation flag, followed by the version token
/// being superseded. Binding the predecessor makes old proofs unreplayable.
pub fn signing_payload(proposed: &DocumentBody, deactivate: bool, previous: &VersionId) -> Vec<u8> {
    let mut bytes = to_canonical_vec(&SigningView {
        document: proposed,
        deactivated: deactivate,
    })
    .expect("document serializes");
    bytes.extend_from_slice(previous.as_str().as_bytes());
    bytes
}
