use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::cid::Cid;
use crate::identity::{Did, DocumentDelta, KeyMode, VerificationKey, Wallet};
use crate::ledger::{AccountId, FeeSchedule, LedgerConfig, TokenAmount, TxKind};
use crate::identity::RegistryConfig;
use crate::store::{EventRecord, EventType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    Producer,
    Supplier,
    Manufacturer,
    Retailer,
    Customer,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::Producer, Role::Supplier, Role::Manufacturer, Role::Retailer, Role::Customer];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Producer => "Producer",
            Role::Supplier => "Supplier",
            Role::Manufacturer => "Manufacturer",
            Role::Retailer => "Retailer",
            Role::Customer => "Customer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown role {0:?}")]
pub struct UnknownRole(pub String);

impl FromStr for Role {
    type Err = UnknownRole;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownRole(s.to_string()))
    }
}

/// A supply-chain participant: a fixture DID, a ledger account and keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub alias: String,
    pub did: Did,
    pub role: Role,
    pub account: AccountId,
    pub mode: KeyMode,
    pub verification_keys: Vec<VerificationKey>,
    /// Empty for client-managed actors.
    pub wallet: Wallet,
}

/// Parameters for [`super::Engine::register_actor`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub alias: String,
    pub role: Role,
    #[serde(default)]
    pub balance: TokenAmount,
    #[serde(default)]
    pub mode: KeyMode,
    /// Hex Ed25519 seed for internal-secret actors; derived from the engine
    /// seed and alias when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<String>,
    /// Required for client-managed actors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_key: Option<VerificationKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssetKind {
    RawMaterial,
    Product,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AssetStatus {
    Produced,
    InTransit,
    Received,
    Consumed,
    Withdrawn,
}

impl fmt::Display for AssetStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetState {
    pub did: Did,
    pub kind: AssetKind,
    pub current_controller: Did,
    pub status: AssetStatus,
    /// In the order of the document's EventMetadata entries.
    pub event_cids: Vec<Cid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shipped_by: Option<Did>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumed_by: Option<Did>,
    #[serde(default)]
    pub deactivated: bool,
}

/// How a product commits to its compartments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommitMode {
    /// One Compartment service entry per input DID.
    #[default]
    ServiceList,
    /// A single CompartmentMerkleRoot entry; the list lives in the record.
    MerkleRoot,
}

impl fmt::Display for CommitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommitMode::ServiceList => "service-list",
            CommitMode::MerkleRoot => "merkle-root",
        })
    }
}

impl FromStr for CommitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "service-list" | "servicelist" => Ok(CommitMode::ServiceList),
            "merkle-root" | "merkleroot" | "merkle" => Ok(CommitMode::MerkleRoot),
            other => Err(format!("unknown commit mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct EngineConfig {
    pub ledger: LedgerConfig,
    pub fees: FeeSchedule,
    pub registry: RegistryConfig,
    /// Rejects manufacture with more compartments than this, before any
    /// other check. Off by default.
    pub max_compartments_per_tx: Option<usize>,
    /// Skip per-compartment consume updates; receivables are only listed in
    /// the Manufacture record and shipped-but-unreceived inputs are accepted.
    pub lean_receiving: bool,
    /// Allow withdrawn (not deactivated) assets to be consumed as compartments.
    pub circular_reuse: bool,
    /// Seeds DID generation and derived actor keys.
    pub seed: u64,
}


/// One supply-chain event to document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EventRequest {
    Produce {
        actor: String,
        #[serde(default)]
        attributes: BTreeMap<String, String>,
    },
    Ship {
        actor: String,
        asset: Did,
        to: String,
        #[serde(default)]
        attributes: BTreeMap<String, String>,
    },
    Receive {
        actor: String,
        asset: Did,
        #[serde(default)]
        attributes: BTreeMap<String, String>,
    },
    Manufacture {
        actor: String,
        compartments: Vec<Did>,
        #[serde(default)]
        mode: CommitMode,
        #[serde(default)]
        attributes: BTreeMap<String, String>,
    },
    Withdraw {
        actor: String,
        asset: Did,
        #[serde(default)]
        reason: String,
        #[serde(default)]
        deactivate: bool,
    },
}

impl EventRequest {
    pub fn actor(&self) -> &str {
        match self {
            EventRequest::Produce { actor, .. }
            | EventRequest::Ship { actor, .. }
            | EventRequest::Receive { actor, .. }
            | EventRequest::Manufacture { actor, .. }
            | EventRequest::Withdraw { actor, .. } => actor,
        }
    }

    pub fn event_type(&self) -> EventType {
        match self {
            EventRequest::Produce { .. } => EventType::Produce,
            EventRequest::Ship { .. } => EventType::Ship,
            EventRequest::Receive { .. } => EventType::Receive,
            EventRequest::Manufacture { .. } => EventType::Manufacture,
            EventRequest::Withdraw { .. } => EventType::Withdraw,
        }
    }

    /// True for events that mint a new asset DID.
    pub fn creates_asset(&self) -> bool {
        matches!(self, EventRequest::Produce { .. } | EventRequest::Manufacture { .. })
    }
}

/// One ledger transaction of a planned event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStep {
    pub did: Did,
    pub kind: TxKind,
    /// For creates, `put_services`, `controllers` and `verification_methods`
    /// describe version 1.
    pub delta: DocumentDelta,
    /// Whose key must sign `payload`; none for creates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signer: Option<Did>,
    #[serde(with = "hex_bytes", default, skip_serializing_if = "Vec::is_empty")]
    pub payload: Vec<u8>,
    pub payload_size: usize,
    pub fee: TokenAmount,
}

/// A fully determined event: the record, its Cid and every ledger step with
/// the exact bytes each signer must sign. Committing it later either yields
/// exactly this outcome or fails.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedEvent {
    pub request: EventRequest,
    pub timestamp: DateTime<Utc>,
    pub asset: Did,
    pub record: EventRecord,
    pub cid: Cid,
    pub steps: Vec<PlannedStep>,
}

impl PreparedEvent {
    pub fn total_fee(&self) -> TokenAmount {
        self.steps.iter().map(|s| s.fee).sum()
    }

    /// Steps that need a signature, in commit order.
    pub fn signing_steps(&self) -> impl Iterator<Item = &PlannedStep> {
        self.steps.iter().filter(|s| s.signer.is_some())
    }
}

/// What a committed event changed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventOutcome {
    pub event_type: EventType,
    pub asset: Did,
    pub cid: Cid,
    /// (DID, new version number) per ledger step.
    pub versions: Vec<(Did, u32)>,
    pub fees_charged: TokenAmount,
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}
