use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::types::{
    Actor, ActorSpec, AssetKind, AssetState, AssetStatus, CommitMode, EngineConfig, EventOutcome, EventRequest,
    PlannedStep, PreparedEvent, Role,
};
use super::EngineError;
use crate::cid::{sha256, Cid};
use crate::clock::SharedClock;
use crate::identity::{
    CreateRequest, Did, DidDocument, DocumentDelta, KeyMode, KeyPair, Proof, Registry, ServiceEntry, ServiceType,
    VerificationMethod, Wallet, STATUS_ACTIVE, STATUS_WITHDRAWN,
};
use crate::ledger::{AccountId, Ledger, TxKind};
use crate::merkle::build_compartment_merkle;
use crate::store::{ContentStore, EventRecord, EventType};

const STATE_FILE: &str = "state.json";
const OBJECTS_DIR: &str = "objects";

#[derive(Serialize, Deserialize)]
struct PersistedState {
    config: EngineConfig,
    ledger: Ledger,
    registry: Registry,
    actors: BTreeMap<String, Actor>,
    assets: BTreeMap<Did, AssetState>,
    last_timestamp: Option<DateTime<Utc>>,
}

/// A fully planned event plus, for each signed step, the document the
/// signature is checked against.
struct Plan {
    prepared: PreparedEvent,
    bases: Vec<Option<DidDocument>>,
}

/// Owns the ledger, the DID registry, the content store and the
/// per-asset state machine.
#[derive(Debug)]
pub struct Engine {
    config: EngineConfig,
    ledger: Ledger,
    registry: Registry,
    store: ContentStore,
    actors: BTreeMap<String, Actor>,
    assets: BTreeMap<Did, AssetState>,
    last_timestamp: Option<DateTime<Utc>>,
    pending: HashMap<Cid, PreparedEvent>,
    data_dir: Option<PathBuf>,
}

impl Engine {
    /// Engine with an in-memory store.
    pub fn new(config: EngineConfig, clock: SharedClock) -> Result<Self, EngineError> {
        let ledger = Ledger::new(config.ledger.clone(), config.fees, clock)?;
        let registry = Registry::new(config.registry.clone(), config.seed);
        Ok(Self {
            config,
            ledger,
            registry,
            store: ContentStore::in_memory(),
            actors: BTreeMap::new(),
            assets: BTreeMap::new(),
            last_timestamp: None,
            pending: HashMap::new(),
            data_dir: None,
        })
    }

    /// Opens the engine persisted under `dir`, or starts a fresh one there
    /// with `config`. A persisted engine keeps its own configuration.
    pub fn open(dir: impl AsRef<Path>, config: EngineConfig, clock: SharedClock) -> Result<Self, EngineError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| EngineError::State(format!("{}: {e}", dir.display())))?;
        let store = ContentStore::open_dir(dir.join(OBJECTS_DIR))?;
        let state_path = dir.join(STATE_FILE);
        let mut engine = if state_path.exists() {
            let text = fs::read_to_string(&state_path).map_err(|e| EngineError::State(format!("{}: {e}", state_path.display())))?;
            let state: PersistedState = serde_json::from_str(&text).map_err(|e| EngineError::State(format!("{}: {e}", state_path.display())))?;
            let mut ledger = state.ledger;
            ledger.set_clock(clock);
            Self {
                config: state.config,
                ledger,
                registry: state.registry,
                store,
                actors: state.actors,
                assets: state.assets,
                last_timestamp: state.last_timestamp,
                pending: HashMap::new(),
                data_dir: None,
            }
        } else {
            let mut engine = Self::new(config, clock)?;
            engine.store = store;
            engine
        };
        engine.data_dir = Some(dir.to_path_buf());
        Ok(engine)
    }

    /// Writes the engine state next to the object store. No-op in memory.
    pub fn save(&self) -> Result<(), EngineError> {
        let Some(dir) = &self.data_dir else {
            return Ok(());
        };
        let state = PersistedState {
            config: self.config.clone(),
            ledger: self.ledger.clone(),
            registry: self.registry.clone(),
            actors: self.actors.clone(),
            assets: self.assets.clone(),
            last_timestamp: self.last_timestamp,
        };
        let text = serde_json::to_string(&state).map_err(|e| EngineError::State(e.to_string()))?;
        let tmp = dir.join(format!("{STATE_FILE}.tmp"));
        fs::write(&tmp, text).and_then(|_| fs::rename(&tmp, dir.join(STATE_FILE))).map_err(|e| EngineError::State(e.to_string()))
    }

    pub fn set_clock(&mut self, clock: SharedClock) {
        self.ledger.set_clock(clock);
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn set_max_compartments_per_tx(&mut self, limit: Option<usize>) {
        self.config.max_compartments_per_tx = limit;
    }

    pub fn set_lean_receiving(&mut self, lean: bool) {
        self.config.lean_receiving = lean;
    }

    pub fn set_circular_reuse(&mut self, allow: bool) {
        self.config.circular_reuse = allow;
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn store(&self) -> &ContentStore {
        &self.store
    }

    /// Ledger and registry together, for DID operations outside the event flow.
    pub fn identity_parts(&mut self) -> (&mut Ledger, &mut Registry) {
        (&mut self.ledger, &mut self.registry)
    }

    /// Direct store access, for fault-injection tests.
    #[doc(hidden)]
    pub fn store_mut(&mut self) -> &mut ContentStore {
        &mut self.store
    }

    /// Direct registry access, for fault-injection tests.
    #[doc(hidden)]
    pub fn registry_mut(&mut self) -> &mut Registry {
        &mut self.registry
    }

    /// Latest commit or registration time seen, so a restarted deterministic
    /// clock can resume after it.
    pub fn last_timestamp(&self) -> Option<DateTime<Utc>> {
        self.last_timestamp
    }

    pub fn actors(&self) -> impl Iterator<Item = &Actor> {
        self.actors.values()
    }

    pub fn actor(&self, alias: &str) -> Result<&Actor, EngineError> {
        self.actors.get(alias).ok_or_else(|| EngineError::UnknownActor(alias.to_string()))
    }

    pub fn actor_by_did(&self, did: &Did) -> Option<&Actor> {
        self.actors.values().find(|a| &a.did == did)
    }

    pub fn actor_by_account(&self, account: &AccountId) -> Option<&Actor> {
        self.actors.values().find(|a| &a.account == account)
    }

    pub fn assets(&self) -> impl Iterator<Item = &AssetState> {
        self.assets.values()
    }

    pub fn asset(&self, did: &Did) -> Result<&AssetState, EngineError> {
        self.assets.get(did).ok_or_else(|| EngineError::NotFound(did.clone()))
    }

    fn touch(&mut self, at: DateTime<Utc>) {
        self.last_timestamp = Some(self.last_timestamp.map_or(at, |t| t.max(at)));
    }

    /// Registers a participant: opens its funded account and a fee-free
    /// fixture DID controlled by its key.
    pub fn register_actor(&mut self, spec: ActorSpec) -> Result<&Actor, EngineError> {
        if spec.alias.is_empty() {
            return Err(EngineError::InvalidRequest("actor alias must not be empty".into()));
        }
        if self.actors.contains_key(&spec.alias) {
            return Err(EngineError::ActorExists(spec.alias));
        }
        let account = AccountId::new(spec.alias.clone());
        let (wallet, keys) = match spec.mode {
            KeyMode::InternalSecret => {
                let key = match &spec.seed {
                    Some(seed) => KeyPair::from_seed_hex(seed)?,
                    None => KeyPair::from_seed(&sha256(format!("actor:{}:{}", self.config.seed, spec.alias).as_bytes()))?,
                };
                let keys = vec![key.verification_key()];
                (Wallet::new(account.clone(), spec.mode).with_key("primary", key), keys)
            }
            KeyMode::ClientManagedSecret => {
                let key = spec
                    .public_key
                    .ok_or_else(|| EngineError::InvalidRequest("client-managed actors need a public_key".into()))?;
                (Wallet::new(account.clone(), spec.mode), vec![key])
            }
        };
        self.ledger.open_account(account.clone(), spec.balance)?;
        let now = self.ledger.now();
        let doc = self.registry.register_fixture(&keys, now)?;
        self.touch(now);
        let actor = Actor {
            alias: spec.alias.clone(),
            did: doc.id().clone(),
            role: spec.role,
            account,
            mode: spec.mode,
            verification_keys: keys,
            wallet,
        };
        Ok(self.actors.entry(spec.alias).or_insert(actor))
    }

    pub fn produce(&mut self, actor: &str, attributes: BTreeMap<String, String>) -> Result<(Did, Cid), EngineError> {
        let out = self.submit(EventRequest::Produce {
            actor: actor.to_string(),
            attributes,
        })?;
        Ok((out.asset, out.cid))
    }

    pub fn ship(&mut self, actor: &str, asset: &Did, recipient: &str) -> Result<Cid, EngineError> {
        let out = self.submit(EventRequest::Ship {
            actor: actor.to_string(),
            asset: asset.clone(),
            to: recipient.to_string(),
            attributes: BTreeMap::new(),
        })?;
        Ok(out.cid)
    }

    pub fn receive(&mut self, actor: &str, asset: &Did) -> Result<Cid, EngineError> {
        let out = self.submit(EventRequest::Receive {
            actor: actor.to_string(),
            asset: asset.clone(),
            attributes: BTreeMap::new(),
        })?;
        Ok(out.cid)
    }

    pub fn manufacture(
        &mut self,
        actor: &str,
        compartments: &[Did],
        attributes: BTreeMap<String, String>,
        mode: CommitMode,
    ) -> Result<(Did, Cid), EngineError> {
        let out = self.submit(EventRequest::Manufacture {
            actor: actor.to_string(),
            compartments: compartments.to_vec(),
            mode,
            attributes,
        })?;
        Ok((out.asset, out.cid))
    }

    pub fn withdraw(&mut self, actor: &str, asset: &Did, reason: &str, deactivate: bool) -> Result<Cid, EngineError> {
        let out = self.submit(EventRequest::Withdraw {
            actor: actor.to_string(),
            asset: asset.clone(),
            reason: reason.to_string(),
            deactivate,
        })?;
        Ok(out.cid)
    }

    /// Creates a standalone DID controlled by `actor` and paid from its account.
    pub fn registrar_create(&mut self, actor: &str, services: Vec<ServiceEntry>) -> Result<DidDocument, EngineError> {
        let actor = self.actor(actor)?.clone();
        let request = CreateRequest {
            did: None,
            controller: Some(actor.did.clone()),
            keys: actor.verification_keys.clone(),
            services,
        };
        let now = self.ledger.now();
        let doc = self.registry.create_at(&mut self.ledger, request, &actor.account, now)?;
        self.touch(now);
        Ok(doc)
    }

    /// Bytes a client must sign for [`Engine::registrar_change`].
    pub fn registrar_payload(&self, did: &Did, delta: &DocumentDelta, deactivate: bool) -> Result<Vec<u8>, EngineError> {
        self.registrar_target(did)?;
        Ok(self.registry.signing_payload_for(did, delta, deactivate)?)
    }

    /// Updates or deactivates a standalone DID. Without `proof` the actor's
    /// held key signs, which client-managed actors do not allow. Asset DIDs
    /// only change through events.
    pub fn registrar_change(
        &mut self,
        actor: &str,
        did: &Did,
        delta: &DocumentDelta,
        deactivate: bool,
        proof: Option<Proof>,
    ) -> Result<DidDocument, EngineError> {
        let actor = self.actor(actor)?.clone();
        self.registrar_target(did)?;
        let proof = match proof {
            Some(p) => p,
            None => {
                if actor.mode == KeyMode::ClientManagedSecret {
                    return Err(EngineError::ServerSigningForbidden(actor.alias.clone()));
                }
                let key = actor.wallet.primary().ok_or(crate::identity::IdentityError::EmptyWallet)?;
                Proof {
                    verification_method: String::new(),
                    signature: key.sign(&self.registry.signing_payload_for(did, delta, deactivate)?),
                }
            }
        };
        let now = self.ledger.now();
        let doc = self.registry.commit_at(&mut self.ledger, did, delta, deactivate, &proof, &actor.account, now)?;
        self.touch(now);
        Ok(doc)
    }

    fn registrar_target(&self, did: &Did) -> Result<(), EngineError> {
        if self.assets.contains_key(did) {
            return Err(EngineError::InvalidRequest(format!("{did} is an asset; it changes through events")));
        }
        Ok(())
    }

    /// Plans and commits an event, signing with the actor's held key.
    pub fn submit(&mut self, request: EventRequest) -> Result<EventOutcome, EngineError> {
        let plan = self.plan_fresh(request)?;
        self.apply(plan, None)
    }

    /// Plans an event without committing it. The returned steps carry the
    /// exact bytes to sign; pass the signatures to [`Engine::commit_prepared`].
    pub fn prepare(&mut self, request: EventRequest) -> Result<PreparedEvent, EngineError> {
        let plan = self.plan_fresh(request)?;
        let prepared = plan.prepared;
        self.pending.insert(prepared.cid, prepared.clone());
        Ok(prepared)
    }

    /// A prepared event awaiting its proofs.
    pub fn pending(&self, cid: &Cid) -> Option<&PreparedEvent> {
        self.pending.get(cid)
    }

    /// Commits a prepared event with one proof per signing step. Fails with
    /// [`EngineError::Stale`] if anything it depends on changed meanwhile.
    pub fn commit_prepared(&mut self, cid: &Cid, proofs: Vec<Proof>) -> Result<EventOutcome, EngineError> {
        let prepared = self.pending.get(cid).cloned().ok_or(EngineError::UnknownPrepared(*cid))?;
        let minted = prepared.request.creates_asset().then_some(&prepared.asset);
        let replanned = match self.plan(&prepared.request, prepared.timestamp, minted) {
            Ok(plan) => plan,
            Err(e) => {
                self.pending.remove(cid);
                return Err(e);
            }
        };
        if replanned.prepared != prepared {
            self.pending.remove(cid);
            return Err(EngineError::Stale);
        }
        let out = self.apply(replanned, Some(proofs))?;
        self.pending.remove(cid);
        Ok(out)
    }

    fn plan_fresh(&mut self, request: EventRequest) -> Result<Plan, EngineError> {
        // Cheap validation before a DID is drawn keeps the generator stream
        // independent of rejected requests.
        self.actor(request.actor())?;
        let timestamp = self.ledger.now();
        let minted = request.creates_asset().then(|| self.registry.reserve_did());
        self.plan(&request, timestamp, minted.as_ref())
    }

    fn require_role(actor: &Actor, required: Role, event: EventType) -> Result<(), EngineError> {
        if actor.role == required {
            Ok(())
        } else {
            Err(EngineError::WrongRole {
                actor: actor.alias.clone(),
                role: actor.role,
                required,
                event,
            })
        }
    }

    /// State and head document of an asset the actor wants to act on, checked
    /// in order: existence, deactivation, control.
    fn controlled_asset(&self, asset: &Did, actor: &Actor) -> Result<(&AssetState, DidDocument), EngineError> {
        let state = self.asset(asset)?;
        let head = self.registry.resolve(asset)?;
        if head.metadata.deactivated {
            return Err(EngineError::Deactivated(asset.clone()));
        }
        if !head.document.controller.contains(&actor.did) {
            return Err(EngineError::NotController {
                asset: asset.clone(),
                actor: actor.alias.clone(),
            });
        }
        Ok((state, head))
    }

    fn wrong_state(state: &AssetState, event: EventType) -> EngineError {
        EngineError::WrongState {
            asset: state.did.clone(),
            status: state.status,
            event,
        }
    }

    fn create_step(&self, did: &Did, actor: &Actor, services: Vec<ServiceEntry>, now: DateTime<Utc>) -> Result<PlannedStep, EngineError> {
        let request = CreateRequest {
            did: Some(did.clone()),
            controller: Some(actor.did.clone()),
            keys: actor.verification_keys.clone(),
            services: services.clone(),
        };
        let doc = self.registry.simulate_create(&request, now)?;
        Ok(PlannedStep {
            did: did.clone(),
            kind: TxKind::Create,
            delta: DocumentDelta {
                put_services: services,
                controllers: Some(vec![actor.did.clone()]),
                verification_methods: Some(doc.document.verification_method.clone()),
                ..Default::default()
            },
            signer: None,
            payload: Vec::new(),
            payload_size: self.registry.sizing().payload_size(&doc),
            fee: self.ledger.fees().create_fee,
        })
    }

    fn update_step(
        &self,
        base: &DidDocument,
        delta: DocumentDelta,
        deactivate: bool,
        signer: &Actor,
        now: DateTime<Utc>,
    ) -> Result<(PlannedStep, DidDocument), EngineError> {
        let (next, payload) = Registry::simulate_change_from(base, &delta, deactivate, now)?;
        let kind = if deactivate { TxKind::Deactivate } else { TxKind::Update };
        let step = PlannedStep {
            did: base.id().clone(),
            kind,
            delta,
            signer: Some(signer.did.clone()),
            payload,
            payload_size: self.registry.sizing().payload_size(&next),
            fee: self.ledger.fees().fee_for(kind),
        };
        Ok((step, next))
    }

    /// Keys of `recipient` installed on `asset` at version `version`.
    fn handover_methods(asset: &Did, version: u32, recipient: &Actor) -> Vec<VerificationMethod> {
        recipient
            .verification_keys
            .iter()
            .enumerate()
            .map(|(i, key)| {
                let fragment = if i == 0 {
                    format!("key-{version}")
                } else {
                    format!("key-{version}-{}", i + 1)
                };
                VerificationMethod::ed25519(asset.url(&fragment), recipient.did.clone(), *key)
            })
            .collect()
    }

    fn plan(&self, request: &EventRequest, now: DateTime<Utc>, minted: Option<&Did>) -> Result<Plan, EngineError> {
        if let EventRequest::Manufacture { compartments, .. } = request {
            if let Some(limit) = self.config.max_compartments_per_tx {
                if compartments.len() > limit {
                    return Err(EngineError::CompartmentLimitExceeded {
                        count: compartments.len(),
                        limit,
                    });
                }
            }
        }
        let actor = self.actor(request.actor())?;
        let event_type = request.event_type();
        let minted_did = || minted.cloned().ok_or_else(|| EngineError::InvalidRequest("no DID reserved for the new asset".into()));

        let mut steps = Vec::new();
        let mut bases = Vec::new();
        let (asset, record) = match request {
            EventRequest::Produce { attributes, .. } => {
                Self::require_role(actor, Role::Producer, event_type)?;
                let did = minted_did()?;
                let mut record = EventRecord::new(event_type, did.clone(), actor.did.clone(), now);
                record.attributes = attributes.clone();
                let cid = record_cid(&record);
                let services = vec![
                    ServiceEntry::event_metadata(&did, 1, event_type.as_str(), &cid),
                    ServiceEntry::status(&did, STATUS_ACTIVE),
                ];
                steps.push(self.create_step(&did, actor, services, now)?);
                bases.push(None);
                (did, record)
            }
            EventRequest::Ship { asset, to, attributes, .. } => {
                let (state, head) = self.controlled_asset(asset, actor)?;
                if !matches!(state.status, AssetStatus::Produced | AssetStatus::Received) {
                    return Err(Self::wrong_state(state, event_type));
                }
                let recipient = self.actor(to)?;
                let mut record = EventRecord::new(event_type, asset.clone(), actor.did.clone(), now);
                record.counterparty_did = Some(recipient.did.clone());
                record.attributes = attributes.clone();
                let cid = record_cid(&record);
                let version = head.metadata.version + 1;
                let delta = DocumentDelta {
                    put_services: vec![ServiceEntry::event_metadata(asset, version, event_type.as_str(), &cid)],
                    controllers: Some(vec![recipient.did.clone()]),
                    verification_methods: Some(Self::handover_methods(asset, version, recipient)),
                    ..Default::default()
                };
                let (step, _) = self.update_step(&head, delta, false, actor, now)?;
                steps.push(step);
                bases.push(Some(head));
                (asset.clone(), record)
            }
            EventRequest::Receive { asset, attributes, .. } => {
                let (state, head) = self.controlled_asset(asset, actor)?;
                if state.status != AssetStatus::InTransit {
                    return Err(Self::wrong_state(state, event_type));
                }
                let mut record = EventRecord::new(event_type, asset.clone(), actor.did.clone(), now);
                record.counterparty_did = state.shipped_by.clone().or_else(|| Some(actor.did.clone()));
                record.attributes = attributes.clone();
                let cid = record_cid(&record);
                let version = head.metadata.version + 1;
                let delta = DocumentDelta::default().add_service(ServiceEntry::event_metadata(asset, version, event_type.as_str(), &cid));
                let (step, _) = self.update_step(&head, delta, false, actor, now)?;
                steps.push(step);
                bases.push(Some(head));
                (asset.clone(), record)
            }
            EventRequest::Withdraw { asset, reason, deactivate, .. } => {
                let (state, head) = self.controlled_asset(asset, actor)?;
                if !matches!(state.status, AssetStatus::Produced | AssetStatus::Received) {
                    return Err(Self::wrong_state(state, event_type));
                }
                let mut record = EventRecord::new(event_type, asset.clone(), actor.did.clone(), now);
                record.attributes.insert("reason".into(), reason.clone());
                record.attributes.insert("deactivate".into(), deactivate.to_string());
                let cid = record_cid(&record);
                let version = head.metadata.version + 1;
                let delta = DocumentDelta::default()
                    .add_service(ServiceEntry::status(asset, STATUS_WITHDRAWN))
                    .add_service(ServiceEntry::event_metadata(asset, version, event_type.as_str(), &cid));
                let (step, next) = self.update_step(&head, delta, false, actor, now)?;
                steps.push(step);
                bases.push(Some(head));
                if *deactivate {
                    let (step, _) = self.update_step(&next, DocumentDelta::default(), true, actor, now)?;
                    steps.push(step);
                    bases.push(Some(next));
                }
                (asset.clone(), record)
            }
            EventRequest::Manufacture {
                compartments,
                mode,
                attributes,
                ..
            } => {
                Self::require_role(actor, Role::Manufacturer, event_type)?;
                if compartments.is_empty() {
                    return Err(EngineError::InvalidRequest("manufacture needs at least one compartment".into()));
                }
                let mut seen = BTreeSet::new();
                let mut heads = Vec::with_capacity(compartments.len());
                for c in compartments {
                    if !seen.insert(c) {
                        return Err(EngineError::DuplicateCompartment(c.clone()));
                    }
                    let (state, head) = self.controlled_asset(c, actor)?;
                    let admissible = match state.status {
                        AssetStatus::Produced | AssetStatus::Received => true,
                        AssetStatus::InTransit => self.config.lean_receiving,
                        AssetStatus::Withdrawn => self.config.circular_reuse,
                        AssetStatus::Consumed => false,
                    };
                    if !admissible {
                        return Err(Self::wrong_state(state, event_type));
                    }
                    heads.push(head);
                }
                let product = minted_did()?;
                let mut record = EventRecord::new(event_type, product.clone(), actor.did.clone(), now);
                record.compartments = compartments.clone();
                record.compartment_versions = heads.iter().map(|h| h.metadata.version_id.clone()).collect();
                record.attributes = attributes.clone();
                let cid = record_cid(&record);
                let mut services = vec![
                    ServiceEntry::event_metadata(&product, 1, event_type.as_str(), &cid),
                    ServiceEntry::status(&product, STATUS_ACTIVE),
                ];
                match mode {
                    CommitMode::ServiceList => services.extend(compartments.iter().enumerate().map(|(i, c)| {
                        ServiceEntry::new(product.url(&format!("compartment-{}", i + 1)), ServiceType::Compartment, c.to_string())
                    })),
                    CommitMode::MerkleRoot => {
                        let (root, _) = build_compartment_merkle(compartments)?;
                        services.push(ServiceEntry::new(
                            product.url("compartment-root"),
                            ServiceType::CompartmentMerkleRoot,
                            hex::encode(root),
                        ));
                    }
                }
                steps.push(self.create_step(&product, actor, services, now)?);
                bases.push(None);
                if !self.config.lean_receiving {
                    for head in heads {
                        let id = head.id().clone();
                        let delta = DocumentDelta::default().add_service(ServiceEntry::new(
                            id.url("consumed-by"),
                            ServiceType::ConsumedBy,
                            product.to_string(),
                        ));
                        let (step, _) = self.update_step(&head, delta, false, actor, now)?;
                        steps.push(step);
                        bases.push(Some(head));
                    }
                }
                (product, record)
            }
        };

        record.validate()?;
        for step in &steps {
            self.ledger.ensure_fits(step.payload_size)?;
        }
        let total = steps.iter().map(|s| s.fee).sum();
        self.ledger.ensure_affordable(&actor.account, total)?;

        let cid = record_cid(&record);
        Ok(Plan {
            prepared: PreparedEvent {
                request: request.clone(),
                timestamp: now,
                asset,
                record,
                cid,
                steps,
            },
            bases,
        })
    }

    fn apply(&mut self, plan: Plan, proofs: Option<Vec<Proof>>) -> Result<EventOutcome, EngineError> {
        let Plan { prepared, bases } = plan;
        let actor = self.actor(prepared.request.actor())?.clone();
        let signing: Vec<usize> = prepared
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.signer.is_some())
            .map(|(i, _)| i)
            .collect();
        let proofs = match proofs {
            Some(proofs) => {
                if proofs.len() != signing.len() {
                    return Err(EngineError::InvalidRequest(format!(
                        "expected {} proofs, got {}",
                        signing.len(),
                        proofs.len()
                    )));
                }
                proofs
            }
            None => {
                if actor.mode == KeyMode::ClientManagedSecret {
                    return Err(EngineError::ServerSigningForbidden(actor.alias.clone()));
                }
                let key = actor.wallet.primary().ok_or(crate::identity::IdentityError::EmptyWallet)?;
                signing
                    .iter()
                    .map(|&i| Proof {
                        verification_method: String::new(),
                        signature: key.sign(&prepared.steps[i].payload),
                    })
                    .collect()
            }
        };
        // Every signature is checked before anything is written, so a bad
        // proof on a later step cannot leave an event half committed.
        for (&i, proof) in signing.iter().zip(&proofs) {
            let base = bases[i].as_ref().expect("signed steps have a base document");
            Registry::authorize(base, &prepared.steps[i].payload, proof)?;
        }

        let cid = self.store.put(&prepared.record)?;
        debug_assert_eq!(cid, prepared.cid);
        let now = prepared.timestamp;
        let mut versions = Vec::with_capacity(prepared.steps.len());
        let mut proofs = proofs.into_iter();
        for step in &prepared.steps {
            let doc = match step.kind {
                TxKind::Create => {
                    let request = CreateRequest {
                        did: Some(step.did.clone()),
                        controller: step.delta.controllers.as_ref().and_then(|c| c.first().cloned()),
                        keys: step
                            .delta
                            .verification_methods
                            .iter()
                            .flatten()
                            .map(|vm| vm.public_key)
                            .collect(),
                        services: step.delta.put_services.clone(),
                    };
                    self.registry.create_at(&mut self.ledger, request, &actor.account, now)?
                }
                TxKind::Update | TxKind::Deactivate => {
                    let proof = proofs.next().expect("one proof per signed step");
                    self.registry.commit_at(
                        &mut self.ledger,
                        &step.did,
                        &step.delta,
                        step.kind == TxKind::Deactivate,
                        &proof,
                        &actor.account,
                        now,
                    )?
                }
            };
            versions.push((step.did.clone(), doc.metadata.version));
        }
        self.record_transition(&prepared, &actor);
        self.touch(now);
        Ok(EventOutcome {
            event_type: prepared.request.event_type(),
            asset: prepared.asset.clone(),
            cid,
            versions,
            fees_charged: prepared.total_fee(),
        })
    }

    fn record_transition(&mut self, prepared: &PreparedEvent, actor: &Actor) {
        let asset = prepared.asset.clone();
        let cid = prepared.cid;
        match &prepared.request {
            EventRequest::Produce { .. } => {
                self.assets.insert(
                    asset.clone(),
                    AssetState {
                        did: asset,
                        kind: AssetKind::RawMaterial,
                        current_controller: actor.did.clone(),
                        status: AssetStatus::Produced,
                        event_cids: vec![cid],
                        shipped_by: None,
                        consumed_by: None,
                        deactivated: false,
                    },
                );
            }
            EventRequest::Manufacture { compartments, .. } => {
                for c in compartments {
                    let state = self.assets.get_mut(c).expect("checked in plan");
                    state.status = AssetStatus::Consumed;
                    state.consumed_by = Some(asset.clone());
                }
                self.assets.insert(
                    asset.clone(),
                    AssetState {
                        did: asset,
                        kind: AssetKind::Product,
                        current_controller: actor.did.clone(),
                        status: AssetStatus::Produced,
                        event_cids: vec![cid],
                        shipped_by: None,
                        consumed_by: None,
                        deactivated: false,
                    },
                );
            }
            EventRequest::Ship { to, .. } => {
                let recipient = self.actors[to].did.clone();
                let state = self.assets.get_mut(&asset).expect("checked in plan");
                state.status = AssetStatus::InTransit;
                state.current_controller = recipient;
                state.shipped_by = Some(actor.did.clone());
                state.event_cids.push(cid);
            }
            EventRequest::Receive { .. } => {
                let state = self.assets.get_mut(&asset).expect("checked in plan");
                state.status = AssetStatus::Received;
                state.event_cids.push(cid);
            }
            EventRequest::Withdraw { deactivate, .. } => {
                let state = self.assets.get_mut(&asset).expect("checked in plan");
                state.status = AssetStatus::Withdrawn;
                state.deactivated = *deactivate;
                state.event_cids.push(cid);
            }
        }
    }
}

fn record_cid(record: &EventRecord) -> Cid {
    Cid::of(&record.canonical_bytes())
}
