use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::document::signing_payload;
use super::{
    Did, DidDocument, DocumentBody, DocumentDelta, DocumentMetadata, IdentityError, Proof, ServiceEntry, ServiceType,
    VerificationKey, VerificationMethod, VersionId, Wallet, DEFAULT_METHOD,
};
use crate::ledger::{AccountId, Ledger, TxKind};

/// How a document's on-ledger payload size is accounted.
///
/// The charged size is the larger of the real canonical size and a
/// calibrated envelope of `baseline_bytes + compartment_entry_bytes × n`,
/// where `n` counts Compartment service entries. The defaults (1075 bytes,
/// 256 bytes) put the ServiceList capacity under a 200 KiB block at 795
/// compartments. Zero both fields to charge canonical bytes only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DocumentSizing {
    pub baseline_bytes: usize,
    pub compartment_entry_bytes: usize,
}

impl Default for DocumentSizing {
    fn default() -> Self {
        Self {
            baseline_bytes: 1075,
            compartment_entry_bytes: 256,
        }
    }
}

impl DocumentSizing {
    pub fn canonical_only() -> Self {
        Self {
            baseline_bytes: 0,
            compartment_entry_bytes: 0,
        }
    }

    pub fn envelope(&self, compartments: usize) -> usize {
        self.baseline_bytes + self.compartment_entry_bytes * compartments
    }

    pub fn payload_size(&self, doc: &DidDocument) -> usize {
        let compartments = doc.document.services_of(ServiceType::Compartment).count();
        doc.canonical_bytes().len().max(self.envelope(compartments))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistryConfig {
    pub method: String,
    pub sizing: DocumentSizing,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        Self {
            method: DEFAULT_METHOD.to_string(),
            sizing: DocumentSizing::default(),
        }
    }
}

/// Parameters for a new DID.
#[derive(Debug, Clone, Default)]
pub struct CreateRequest {
    /// A DID obtained from [`Registry::reserve_did`]; drawn fresh when absent.
    pub did: Option<Did>,
    /// Defaults to the new DID itself.
    pub controller: Option<Did>,
    pub keys: Vec<VerificationKey>,
    pub services: Vec<ServiceEntry>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct DidEntry {
    /// Canonical JSON of every committed version, oldest first.
    versions: Vec<String>,
}

/// DID registrar and resolver. Every committed version is kept verbatim;
/// nothing is ever deleted, corrections are new versions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Registry {
    config: RegistryConfig,
    entries: BTreeMap<Did, DidEntry>,
    created_by: BTreeMap<AccountId, Vec<Did>>,
    rng: ChaCha20Rng,
}

impl Registry {
    pub fn new(config: RegistryConfig, seed: u64) -> Self {
        Self {
            config,
            entries: BTreeMap::new(),
            created_by: BTreeMap::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    pub fn sizing(&self) -> &DocumentSizing {
        &self.config.sizing
    }

    /// Draws an unused DID so callers can reference it in content committed
    /// with version 1.
    pub fn reserve_did(&mut self) -> Did {
        loop {
            let did = Did::generate(&self.config.method, &mut self.rng).expect("method validated");
            if !self.entries.contains_key(&did) {
                return did;
            }
        }
    }

    fn genesis(did: Did, controller: Option<Did>, keys: &[VerificationKey], services: Vec<ServiceEntry>, now: DateTime<Utc>) -> Result<DidDocument, IdentityError> {
        if keys.is_empty() {
            return Err(IdentityError::EmptyWallet);
        }
        let controller = controller.unwrap_or_else(|| did.clone());
        let methods = keys
            .iter()
            .enumerate()
            .map(|(i, key)| VerificationMethod::ed25519(did.url(&format!("key-{}", i + 1)), controller.clone(), *key))
            .collect();
        let body = DocumentBody::new(did, vec![controller], methods, services);
        body.validate()?;
        Ok(seal(body, None, false, now))
    }

    /// Registers a DID and commits version 1, charging the create fee.
    pub fn create(&mut self, ledger: &mut Ledger, request: CreateRequest, payer: &AccountId) -> Result<DidDocument, IdentityError> {
        let now = ledger.now();
        self.create_at(ledger, request, payer, now)
    }

    /// Version 1 that `request` would produce at `now`, without committing.
    pub fn simulate_create(&self, request: &CreateRequest, now: DateTime<Utc>) -> Result<DidDocument, IdentityError> {
        let did = request.did.clone().ok_or_else(|| IdentityError::InvalidChange("simulated create needs a reserved DID".into()))?;
        if self.entries.contains_key(&did) {
            return Err(IdentityError::DidExists(did));
        }
        Self::genesis(did, request.controller.clone(), &request.keys, request.services.clone(), now)
    }

    /// [`Registry::create`] with an explicit commit time.
    pub fn create_at(&mut self, ledger: &mut Ledger, request: CreateRequest, payer: &AccountId, now: DateTime<Utc>) -> Result<DidDocument, IdentityError> {
        let did = match request.did {
            Some(did) => {
                if self.entries.contains_key(&did) {
                    return Err(IdentityError::DidExists(did));
                }
                if did.method() != self.config.method {
                    return Err(IdentityError::MalformedDid(did.to_string()));
                }
                did
            }
            None => self.reserve_did(),
        };
        let doc = Self::genesis(did.clone(), request.controller, &request.keys, request.services, now)?;
        let size = self.config.sizing.payload_size(&doc);
        ledger.submit(TxKind::Create, payer, size, Some(did.to_string()))?;
        self.append(&doc);
        self.created_by.entry(payer.clone()).or_default().push(did);
        Ok(doc)
    }

    /// Self-controlled DID keyed by the wallet's primary key.
    pub fn create_did(
        &mut self,
        ledger: &mut Ledger,
        wallet: &Wallet,
        services: Vec<ServiceEntry>,
        payer: &AccountId,
    ) -> Result<(Did, DidDocument), IdentityError> {
        let request = CreateRequest {
            keys: wallet.verification_keys(),
            services,
            ..Default::default()
        };
        let doc = self.create(ledger, request, payer)?;
        Ok((doc.id().clone(), doc))
    }

    /// Fee-free genesis registration for participant identities set up by
    /// fixture, outside the metered event flow.
    pub fn register_fixture(&mut self, keys: &[VerificationKey], now: DateTime<Utc>) -> Result<DidDocument, IdentityError> {
        let did = self.reserve_did();
        let doc = Self::genesis(did, None, keys, Vec::new(), now)?;
        self.append(&doc);
        Ok(doc)
    }

    fn append(&mut self, doc: &DidDocument) {
        let text = String::from_utf8(doc.canonical_bytes()).expect("canonical json is utf-8");
        self.entries.entry(doc.id().clone()).or_default().versions.push(text);
    }

    fn entry(&self, did: &Did) -> Result<&DidEntry, IdentityError> {
        self.entries.get(did).ok_or_else(|| IdentityError::NotFound(did.clone()))
    }

    fn parse_version(did: &Did, index: usize, text: &str) -> Result<DidDocument, IdentityError> {
        serde_json::from_str(text).map_err(|_| IdentityError::CorruptVersion {
            did: did.clone(),
            version: index as u32 + 1,
        })
    }

    /// Latest version.
    pub fn resolve(&self, did: &Did) -> Result<DidDocument, IdentityError> {
        let entry = self.entry(did)?;
        let last = entry.versions.len() - 1;
        Self::parse_version(did, last, &entry.versions[last])
    }

    pub fn resolve_version(&self, did: &Did, version_id: &VersionId) -> Result<DidDocument, IdentityError> {
        for (i, text) in self.entry(did)?.versions.iter().enumerate() {
            let doc = Self::parse_version(did, i, text)?;
            if &doc.metadata.version_id == version_id {
                return Ok(doc);
            }
        }
        Err(IdentityError::UnknownVersion(version_id.to_string()))
    }

    /// Version by 1-based position.
    pub fn resolve_version_number(&self, did: &Did, version: u32) -> Result<DidDocument, IdentityError> {
        let entry = self.entry(did)?;
        let index = (version as usize)
            .checked_sub(1)
            .filter(|i| *i < entry.versions.len())
            .ok_or_else(|| IdentityError::UnknownVersion(format!("{did} v{version}")))?;
        Self::parse_version(did, index, &entry.versions[index])
    }

    pub fn list_versions(&self, did: &Did) -> Result<Vec<DocumentMetadata>, IdentityError> {
        Ok(self.history(did)?.into_iter().map(|d| d.metadata).collect())
    }

    pub fn history(&self, did: &Did) -> Result<Vec<DidDocument>, IdentityError> {
        self.entry(did)?
            .versions
            .iter()
            .enumerate()
            .map(|(i, text)| Self::parse_version(did, i, text))
            .collect()
    }

    pub fn version_count(&self, did: &Did) -> Result<usize, IdentityError> {
        Ok(self.entry(did)?.versions.len())
    }

    /// Stored bytes of every version, exactly as committed.
    pub fn raw_versions(&self, did: &Did) -> Result<&[String], IdentityError> {
        Ok(&self.entry(did)?.versions)
    }

    /// Direct access to stored version bytes, for fault-injection tests.
    #[doc(hidden)]
    pub fn raw_versions_mut(&mut self, did: &Did) -> Option<&mut Vec<String>> {
        self.entries.get_mut(did).map(|e| &mut e.versions)
    }

    pub fn contains(&self, did: &Did) -> bool {
        self.entries.contains_key(did)
    }

    pub fn dids(&self) -> impl Iterator<Item = &Did> {
        self.entries.keys()
    }

    /// DIDs whose creation `owner` paid for, in creation order.
    pub fn list_dids(&self, ledger: &Ledger, owner: &AccountId) -> Result<Vec<Did>, IdentityError> {
        ledger.account(owner)?;
        Ok(self.created_by.get(owner).cloned().unwrap_or_default())
    }

    /// Proposed body and the bytes a controller must sign for it.
    pub fn prepare_change(&self, did: &Did, delta: &DocumentDelta, deactivate: bool) -> Result<(DidDocument, DocumentBody, Vec<u8>), IdentityError> {
        let current = self.resolve(did)?;
        if current.metadata.deactivated {
            return Err(IdentityError::Deactivated(did.clone()));
        }
        let proposed = delta.apply(&current.document)?;
        let payload = signing_payload(&proposed, deactivate, &current.metadata.version_id);
        Ok((current, proposed, payload))
    }

    /// What a client signs to authorize `delta` (or deactivation) on `did`.
    pub fn signing_payload_for(&self, did: &Did, delta: &DocumentDelta, deactivate: bool) -> Result<Vec<u8>, IdentityError> {
        self.prepare_change(did, delta, deactivate).map(|(_, _, payload)| payload)
    }

    /// Charged payload size of the version `delta` would produce.
    pub fn projected_payload_size(&self, did: &Did, delta: &DocumentDelta, now: DateTime<Utc>) -> Result<usize, IdentityError> {
        let next = self.simulate_change(did, delta, false, now)?;
        Ok(self.config.sizing.payload_size(&next))
    }

    /// The version a change would produce if committed at `now`.
    pub fn simulate_change(&self, did: &Did, delta: &DocumentDelta, deactivate: bool, now: DateTime<Utc>) -> Result<DidDocument, IdentityError> {
        let (current, proposed, _) = self.prepare_change(did, delta, deactivate)?;
        Ok(seal(proposed, Some(&current), deactivate, now))
    }

    /// Like [`Registry::simulate_change`] but on top of `current` rather than
    /// the stored head, for planning several consecutive versions.
    pub fn simulate_change_from(current: &DidDocument, delta: &DocumentDelta, deactivate: bool, now: DateTime<Utc>) -> Result<(DidDocument, Vec<u8>), IdentityError> {
        if current.metadata.deactivated {
            return Err(IdentityError::Deactivated(current.id().clone()));
        }
        let proposed = delta.apply(&current.document)?;
        let payload = signing_payload(&proposed, deactivate, &current.metadata.version_id);
        Ok((seal(proposed, Some(current), deactivate, now), payload))
    }

    /// Checks that `proof` signs `payload` with a key of a listed controller of `current`.
    pub fn authorize(current: &DidDocument, payload: &[u8], proof: &Proof) -> Result<(), IdentityError> {
        let authorized = current
            .document
            .controller_methods()
            .filter(|vm| proof.verification_method.is_empty() || vm.id == proof.verification_method)
            .any(|vm| vm.public_key.verify(payload, &proof.signature));
        if authorized {
            Ok(())
        } else {
            Err(IdentityError::Unauthorized(current.id().clone()))
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn commit_change(
        &mut self,
        ledger: &mut Ledger,
        did: &Did,
        delta: &DocumentDelta,
        deactivate: bool,
        proof: &Proof,
        payer: &AccountId,
        now: DateTime<Utc>,
    ) -> Result<DidDocument, IdentityError> {
        let (current, proposed, payload) = self.prepare_change(did, delta, deactivate)?;
        Self::authorize(&current, &payload, proof)?;
        let next = seal(proposed, Some(&current), deactivate, now);
        let size = self.config.sizing.payload_size(&next);
        let kind = if deactivate { TxKind::Deactivate } else { TxKind::Update };
        ledger.submit(kind, payer, size, Some(did.to_string()))?;
        self.append(&next);
        Ok(next)
    }

    /// Appends a version carrying `delta`, authorized by `proof`.
    pub fn update_did(&mut self, ledger: &mut Ledger, did: &Did, delta: &DocumentDelta, proof: &Proof, payer: &AccountId) -> Result<DidDocument, IdentityError> {
        let now = ledger.now();
        self.commit_change(ledger, did, delta, false, proof, payer, now)
    }

    /// Commits an update or deactivation with an explicit commit time.
    #[allow(clippy::too_many_arguments)]
    pub fn commit_at(
        &mut self,
        ledger: &mut Ledger,
        did: &Did,
        delta: &DocumentDelta,
        deactivate: bool,
        proof: &Proof,
        payer: &AccountId,
        now: DateTime<Utc>,
    ) -> Result<DidDocument, IdentityError> {
        self.commit_change(ledger, did, delta, deactivate, proof, payer, now)
    }

    /// Replaces the controller set and installs the new controller's keys.
    pub fn handover_controller(
        &mut self,
        ledger: &mut Ledger,
        did: &Did,
        new_controller: Did,
        new_methods: Vec<VerificationMethod>,
        proof: &Proof,
        payer: &AccountId,
    ) -> Result<DidDocument, IdentityError> {
        let delta = handover_delta(new_controller, new_methods)?;
        let now = ledger.now();
        self.commit_change(ledger, did, &delta, false, proof, payer, now)
    }

    pub fn deactivate_did(&mut self, ledger: &mut Ledger, did: &Did, proof: &Proof, payer: &AccountId) -> Result<DidDocument, IdentityError> {
        let now = ledger.now();
        self.commit_change(ledger, did, &DocumentDelta::default(), true, proof, payer, now)
    }
}

pub fn handover_delta(new_controller: Did, new_methods: Vec<VerificationMethod>) -> Result<DocumentDelta, IdentityError> {
    if new_methods.is_empty() {
        return Err(IdentityError::InvalidChange("handover needs at least one verification method".into()));
    }
    Ok(DocumentDelta {
        controllers: Some(vec![new_controller]),
        verification_methods: Some(new_methods),
        ..Default::default()
    })
}

/// Wraps a body into the next version after `previous`.
fn seal(body: DocumentBody, previous: Option<&DidDocument>, deactivated: bool, now: DateTime<Utc>) -> DidDocument {
    let metadata = match previous {
        None => DocumentMetadata {
            created: now,
            updated: now,
            version: 1,
            version_id: VersionId::parse(&"0".repeat(64)).expect("placeholder"),
            previous_version_id: None,
            deactivated,
        },
        Some(prev) => DocumentMetadata {
            created: prev.metadata.created,
            updated: now.max(prev.metadata.updated),
            version: prev.metadata.version + 1,
            version_id: VersionId::parse(&"0".repeat(64)).expect("placeholder"),
            previous_version_id: Some(prev.metadata.version_id.clone()),
            deactivated,
        },
    };
    let mut doc = DidDocument { document: body, metadata };
    doc.metadata.version_id = doc.compute_version_id();
    doc
}
