//! Content-addressed store for event records.
//!
//! Objects are the canonical JSON bytes of an [`EventRecord`], named by the
//! [`Cid`] of those bytes. Reads re-hash before parsing, so any change to a
//! stored object surfaces as [`StoreError::IntegrityViolation`]. The store is
//! append-only.

mod linkage;
mod record;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use linkage::{verify_linkage, LinkageVerdict};
pub use record::{EventRecord, EventType, IssuerSignature};

use crate::cid::Cid;
use crate::error::{Classify, ErrorCode};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("no object {0}")]
    NotFound(Cid),
    #[error("object {0} does not match its content identifier")]
    IntegrityViolation(Cid),
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
}

impl Classify for StoreError {
    fn code(&self) -> ErrorCode {
        match self {
            StoreError::NotFound(_) => ErrorCode::NotFound,
            StoreError::IntegrityViolation(_) => ErrorCode::IntegrityViolation,
            StoreError::MalformedRecord(_) => ErrorCode::MalformedRequest,
            StoreError::Io(_) => ErrorCode::Internal,
        }
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Memory(BTreeMap<Cid, Vec<u8>>),
    /// One file per object, named by the Cid text form.
    Directory(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ContentStore {
    backend: Backend,
}

/// Result of re-hashing every stored object.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize)]
pub struct ScanReport {
    pub checked: usize,
    pub violations: Vec<Cid>,
}

impl ScanReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl ContentStore {
    pub fn in_memory() -> Self {
        Self {
            backend: Backend::Memory(BTreeMap::new()),
        }
    }

    pub fn open_dir(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        fs::create_dir_all(&path)?;
        Ok(Self {
            backend: Backend::Directory(path),
        })
    }

    /// Validates and stores `record`. Storing the same record twice returns the
    /// same Cid and keeps one copy.
    pub fn put(&mut self, record: &EventRecord) -> Result<Cid, StoreError> {
        record.validate()?;
        let bytes = record.canonical_bytes();
        let cid = Cid::of(&bytes);
        match &mut self.backend {
            Backend::Memory(objects) => {
                objects.entry(cid).or_insert(bytes);
            }
            Backend::Directory(dir) => {
                let path = dir.join(cid.to_string());
                if !path.exists() {
                    let tmp = dir.join(format!(".{cid}.tmp"));
                    fs::write(&tmp, &bytes)?;
                    fs::rename(&tmp, &path)?;
                }
            }
        }
        Ok(cid)
    }

    fn raw(&self, cid: &Cid) -> Result<Vec<u8>, StoreError> {
        match &self.backend {
            Backend::Memory(objects) => objects.get(cid).cloned().ok_or(StoreError::NotFound(*cid)),
            Backend::Directory(dir) => match fs::read(dir.join(cid.to_string())) {
                Ok(bytes) => Ok(bytes),
                Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::NotFound(*cid)),
                Err(e) => Err(e.into()),
            },
        }
    }

    /// Stored bytes, verified against `cid`.
    pub fn get_bytes(&self, cid: &Cid) -> Result<Vec<u8>, StoreError> {
        let bytes = self.raw(cid)?;
        if !cid.matches(&bytes) {
            return Err(StoreError::IntegrityViolation(*cid));
        }
        Ok(bytes)
    }

    pub fn get(&self, cid: &Cid) -> Result<EventRecord, StoreError> {
        let bytes = self.get_bytes(cid)?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::MalformedRecord(e.to_string()))
    }

    pub fn contains(&self, cid: &Cid) -> bool {
        match &self.backend {
            Backend::Memory(objects) => objects.contains_key(cid),
            Backend::Directory(dir) => dir.join(cid.to_string()).exists(),
        }
    }

    pub fn cids(&self) -> Result<Vec<Cid>, StoreError> {
        match &self.backend {
            Backend::Memory(objects) => Ok(objects.keys().copied().collect()),
            Backend::Directory(dir) => {
                let mut out = Vec::new();
                for entry in fs::read_dir(dir)? {
                    let name = entry?.file_name();
                    if let Some(cid) = name.to_str().and_then(|n| n.parse::<Cid>().ok()) {
                        out.push(cid);
                    }
                }
                out.sort();
                Ok(out)
            }
        }
    }

    pub fn len(&self) -> Result<usize, StoreError> {
        self.cids().map(|c| c.len())
    }

    pub fn is_empty(&self) -> Result<bool, StoreError> {
        self.len().map(|n| n == 0)
    }

    /// Re-hashes every object.
    pub fn scan(&self) -> Result<ScanReport, StoreError> {
        let mut report = ScanReport::default();
        for cid in self.cids()? {
            report.checked += 1;
            if !cid.matches(&self.raw(&cid)?) {
                report.violations.push(cid);
            }
        }
        Ok(report)
    }

    /// Mutable access to a stored object in a memory store, for
    /// fault-injection tests.
    #[doc(hidden)]
    pub fn raw_object_mut(&mut self, cid: &Cid) -> Option<&mut Vec<u8>> {
        match &mut self.backend {
            Backend::Memory(objects) => objects.get_mut(cid),
            Backend::Directory(_) => None,
        }
    }

    pub fn directory(&self) -> Option<&Path> {
        match &self.backend {
            Backend::Memory(_) => None,
            Backend::Directory(dir) => Some(dir),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Did;
    use chrono::{DateTime, Utc};

    fn record(batch: &str) -> EventRecord {
        let did: Did = "did:chain:milk".parse().unwrap();
        let mut r = EventRecord::new(
            EventType::Produce,
            did.clone(),
            "did:chain:farm".parse().unwrap(),
            DateTime::parse_from_rfc3339("2024-03-05T08:30:00Z").unwrap().with_timezone(&Utc),
        );
        r.attributes.insert("batch".into(), batch.into());
        r
    }

    #[test]
    fn put_is_idempotent_and_round_trips() {
        let mut store = ContentStore::in_memory();
        let a = store.put(&record("1")).unwrap();
        let b = store.put(&record("1")).unwrap();
        assert_eq!(a, b);
        assert_eq!(store.len().unwrap(), 1);
        assert_eq!(store.get(&a).unwrap(), record("1"));
    }

    #[test]
    fn every_single_byte_corruption_detected() {
        let mut store = ContentStore::in_memory();
        let cid = store.put(&record("1")).unwrap();
        let len = store.raw_object_mut(&cid).unwrap().len();
        for i in 0..len {
            let original = store.raw_object_mut(&cid).unwrap()[i];
            store.raw_object_mut(&cid).unwrap()[i] ^= 0x01;
            assert!(matches!(store.get(&cid), Err(StoreError::IntegrityViolation(c)) if c == cid));
            assert_eq!(store.scan().unwrap().violations, vec![cid]);
            store.raw_object_mut(&cid).unwrap()[i] = original;
        }
        assert!(store.scan().unwrap().is_clean());
    }

    #[test]
    fn unknown_cid_not_found() {
        let store = ContentStore::in_memory();
        assert!(matches!(store.get(&Cid::of(b"x")), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn invalid_record_rejected() {
        let mut store = ContentStore::in_memory();
        let mut r = record("1");
        r.event_type = EventType::Manufacture;
        assert!(matches!(store.put(&r), Err(StoreError::MalformedRecord(_))));
    }

    #[test]
    fn directory_backend_files_named_by_cid() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ContentStore::open_dir(dir.path()).unwrap();
        let cid = store.put(&record("7")).unwrap();
        let path = dir.path().join(cid.to_string());
        assert!(path.exists());
        assert_eq!(store.get(&cid).unwrap(), record("7"));
        let reopened = ContentStore::open_dir(dir.path()).unwrap();
        assert_eq!(reopened.cids().unwrap(), vec![cid]);

        let mut bytes = fs::read(&path).unwrap();
        bytes[3] ^= 0x20;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(reopened.get(&cid), Err(StoreError::IntegrityViolation(_))));
        assert_eq!(reopened.scan().unwrap().violations, vec![cid]);
    }
}
