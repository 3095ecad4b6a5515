//! DIDs, DID Documents with linked version history, Ed25519 key custody, and
//! the registrar/resolver over the fee ledger.

mod did;
mod document;
mod keys;
mod registry;

pub use did::{Did, DEFAULT_METHOD};
pub use document::{
    signing_payload, DidDocument, DocumentBody, DocumentDelta, DocumentMetadata, Proof, ServiceEntry, ServiceType,
    VerificationMethod, VersionId, DID_CONTEXT, ED25519_CONTEXT, ED25519_METHOD_TYPE, STATUS_ACTIVE,
    STATUS_WITHDRAWN,
};
pub use keys::{KeyMode, KeyPair, SignatureBytes, VerificationKey, Wallet};
pub use registry::{handover_delta, CreateRequest, DocumentSizing, Registry, RegistryConfig};

use thiserror::Error;

use crate::error::{Classify, ErrorCode};
use crate::ledger::LedgerError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("malformed DID {0:?}")]
    MalformedDid(String),
    #[error("malformed key material {0:?}")]
    MalformedKey(String),
    #[error("seed must be 32 bytes, got {0}")]
    BadSeedLength(usize),
    #[error("wallet holds no key pairs")]
    EmptyWallet,
    #[error("DID {0} not found")]
    NotFound(Did),
    #[error("DID {0} already exists")]
    DidExists(Did),
    #[error("unknown version {0}")]
    UnknownVersion(String),
    #[error("DID {0} is deactivated")]
    Deactivated(Did),
    #[error("signature does not satisfy any controller of {0}")]
    Unauthorized(Did),
    #[error("invalid document change: {0}")]
    InvalidChange(String),
    #[error("stored version {version} of {did} is unreadable")]
    CorruptVersion { did: Did, version: u32 },
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

impl Classify for IdentityError {
    fn code(&self) -> ErrorCode {
        match self {
            IdentityError::MalformedDid(_) => ErrorCode::MalformedDid,
            IdentityError::MalformedKey(_)
            | IdentityError::BadSeedLength(_)
            | IdentityError::EmptyWallet
            | IdentityError::InvalidChange(_) => ErrorCode::MalformedRequest,
            IdentityError::NotFound(_) => ErrorCode::NotFound,
            IdentityError::DidExists(_) => ErrorCode::Conflict,
            IdentityError::UnknownVersion(_) => ErrorCode::UnknownVersion,
            IdentityError::Deactivated(_) => ErrorCode::Deactivated,
            IdentityError::Unauthorized(_) => ErrorCode::Unauthorized,
            IdentityError::CorruptVersion { .. } => ErrorCode::IntegrityViolation,
            IdentityError::Ledger(e) => e.code(),
        }
    }
}
