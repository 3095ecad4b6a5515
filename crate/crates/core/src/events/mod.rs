//! The supply-chain state machine. Every event stores an [`EventRecord`],
//! links its Cid from the asset's DID Document and pays for the DID
//! operations it needs.
//!
//! Per asset the admissible event sequences are
//! `Produce (Ship Receive)* (consume | Withdraw)?`, with Manufacture in place
//! of Produce for products. Control moves with the shipping update, so only
//! the recipient can document the matching receive.
//!
//! [`EventRecord`]: crate::store::EventRecord

mod engine;
mod types;

use thiserror::Error;

pub use engine::Engine;
pub use types::{
    Actor, ActorSpec, AssetKind, AssetState, AssetStatus, CommitMode, EngineConfig, EventOutcome, EventRequest,
    PlannedStep, PreparedEvent, Role, UnknownRole,
};

use crate::cid::Cid;
use crate::error::{Classify, ErrorCode};
use crate::identity::{Did, IdentityError};
use crate::ledger::LedgerError;
use crate::merkle::MerkleError;
use crate::store::{EventType, StoreError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown actor {0:?}")]
    UnknownActor(String),
    #[error("actor {0:?} is already registered")]
    ActorExists(String),
    #[error("asset {0} not found")]
    NotFound(Did),
    #[error("asset {0} is deactivated")]
    Deactivated(Did),
    #[error("{actor} does not control {asset}")]
    NotController { asset: Did, actor: String },
    #[error("{event} is not allowed on {asset} while {status}")]
    WrongState { asset: Did, status: AssetStatus, event: EventType },
    #[error("compartment {0} listed more than once")]
    DuplicateCompartment(Did),
    #[error("{actor} is a {role}; {event} needs a {required}")]
    WrongRole {
        actor: String,
        role: Role,
        required: Role,
        event: EventType,
    },
    #[error("{count} compartments exceed the per-transaction limit of {limit}")]
    CompartmentLimitExceeded { count: usize, limit: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("actor {0:?} keeps its keys client-side; the service does not sign for it")]
    ServerSigningForbidden(String),
    #[error("no prepared event {0}")]
    UnknownPrepared(Cid),
    #[error("state changed since the event was prepared")]
    Stale,
    #[error("state file: {0}")]
    State(String),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl From<MerkleError> for EngineError {
    fn from(e: MerkleError) -> Self {
        EngineError::InvalidRequest(e.to_string())
    }
}

impl Classify for EngineError {
    fn code(&self) -> ErrorCode {
        match self {
            EngineError::UnknownActor(_) => ErrorCode::UnknownActor,
            EngineError::ActorExists(_) | EngineError::Stale => ErrorCode::Conflict,
            EngineError::NotFound(_) | EngineError::UnknownPrepared(_) => ErrorCode::NotFound,
            EngineError::Deactivated(_) => ErrorCode::Deactivated,
            EngineError::NotController { .. } => ErrorCode::NotController,
            EngineError::WrongState { .. } | EngineError::DuplicateCompartment(_) => ErrorCode::WrongState,
            EngineError::WrongRole { .. } => ErrorCode::Unauthorized,
            EngineError::CompartmentLimitExceeded { .. } => ErrorCode::CompartmentLimitExceeded,
            EngineError::InvalidRequest(_) | EngineError::ServerSigningForbidden(_) => ErrorCode::MalformedRequest,
            EngineError::State(_) => ErrorCode::Internal,
            EngineError::Identity(e) => e.code(),
            EngineError::Store(e) => e.code(),
            EngineError::Ledger(e) => e.code(),
        }
    }
}
