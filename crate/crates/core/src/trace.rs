//! Tracing (recursive history over the compartment graph), tracking (head
//! state only), version-chain verification and the linear trace-time model.
//!
//! A trace reads the root's head, then for every event one stored record and
//! the document version that anchors it. A compartment is entered through the
//! version pinned in the consuming Manufacture record, and that read doubles
//! as the anchor of its last event. For histories written by the engine this
//! makes `resolution_count = 2·events + 1` exactly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cid::Cid;
use crate::error::{Classify, ErrorCode};
use crate::events::{AssetKind, AssetStatus};
use crate::identity::{Did, DidDocument, IdentityError, Registry, ServiceType, VersionId, STATUS_WITHDRAWN};
use crate::merkle::{build_compartment_merkle, leaf_hash, verify_proof};
use crate::store::{ContentStore, EventRecord, EventType, StoreError};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("DID {0} not found")]
    NotFound(Did),
    #[error("integrity violation at {location}: {detail}")]
    IntegrityViolation {
        /// Offending Cid, or DID and version for document faults.
        location: String,
        cid: Option<Cid>,
        detail: String,
    },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error(transparent)]
    Identity(IdentityError),
    #[error(transparent)]
    Store(StoreError),
}

impl TraceError {
    fn at_cid(cid: Cid, detail: impl Into<String>) -> Self {
        TraceError::IntegrityViolation {
            location: cid.to_string(),
            cid: Some(cid),
            detail: detail.into(),
        }
    }

    fn at_doc(did: &Did, version: u32, detail: impl Into<String>) -> Self {
        TraceError::IntegrityViolation {
            location: format!("{did} v{version}"),
            cid: None,
            detail: detail.into(),
        }
    }
}

impl From<IdentityError> for TraceError {
    fn from(e: IdentityError) -> Self {
        match e {
            IdentityError::NotFound(did) => TraceError::NotFound(did),
            IdentityError::CorruptVersion { did, version } => TraceError::at_doc(&did, version, "stored version is unreadable"),
            other => TraceError::Identity(other),
        }
    }
}

impl From<StoreError> for TraceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::IntegrityViolation(cid) => TraceError::at_cid(cid, "stored bytes do not hash to the Cid"),
            other => TraceError::Store(other),
        }
    }
}

impl Classify for TraceError {
    fn code(&self) -> ErrorCode {
        match self {
            TraceError::NotFound(_) => ErrorCode::NotFound,
            TraceError::IntegrityViolation { .. } => ErrorCode::IntegrityViolation,
            TraceError::DegenerateInput(_) => ErrorCode::DegenerateInput,
            TraceError::Identity(e) => e.code(),
            TraceError::Store(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub asset: Did,
    pub record: EventRecord,
    pub cid: Cid,
    /// Document version that committed the link to this record.
    pub version: u32,
    pub version_id: VersionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompartmentNode {
    pub did: Did,
    pub event_count: usize,
    /// How many times the parent lists this DID.
    pub multiplicity: u32,
    /// True when the subtree was already traced elsewhere and is not repeated.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub shared: bool,
    pub compartments: Vec<CompartmentNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceReport {
    pub root: Did,
    /// The root's events, then each compartment subtree depth-first in
    /// service-entry order.
    pub events: Vec<TraceEvent>,
    pub compartment_tree: CompartmentNode,
    pub resolution_count: u64,
    pub verified: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<String>,
}

struct Tracer<'a> {
    registry: &'a Registry,
    store: &'a ContentStore,
    resolutions: u64,
    events: Vec<TraceEvent>,
    issues: Vec<String>,
    path: Vec<Did>,
    visited: BTreeSet<Did>,
}

impl Tracer<'_> {
    fn head(&mut self, did: &Did) -> Result<DidDocument, TraceError> {
        self.resolutions += 1;
        Ok(self.registry.resolve(did)?)
    }

    fn version(&mut self, did: &Did, version_id: &VersionId) -> Result<DidDocument, TraceError> {
        self.resolutions += 1;
        Ok(self.registry.resolve_version(did, version_id)?)
    }

    fn version_number(&mut self, did: &Did, version: u32) -> Result<DidDocument, TraceError> {
        self.resolutions += 1;
        Ok(self.registry.resolve_version_number(did, version)?)
    }

    fn get(&mut self, cid: &Cid) -> Result<EventRecord, TraceError> {
        self.resolutions += 1;
        Ok(self.store.get(cid)?)
    }

    fn check_self_hash(doc: &DidDocument) -> Result<(), TraceError> {
        if doc.compute_version_id() != doc.metadata.version_id {
            return Err(TraceError::at_doc(doc.id(), doc.metadata.version, "version token does not match content"));
        }
        Ok(())
    }

    /// Traces one asset from `view`: the head for the root, the pinned
    /// version for compartments.
    fn visit(&mut self, view: DidDocument, pinned: bool) -> Result<CompartmentNode, TraceError> {
        let did = view.id().clone();
        Self::check_self_hash(&view)?;
        self.path.push(did.clone());
        self.visited.insert(did.clone());

        let links: Vec<_> = view.document.services_of(ServiceType::EventMetadata).cloned().collect();
        let mut pending_compartments = Vec::new();
        for (i, link) in links.iter().enumerate() {
            let cid: Cid = link
                .endpoint
                .parse()
                .map_err(|_| TraceError::at_doc(&did, view.metadata.version, format!("service {} does not hold a Cid", link.id)))?;
            let record = self.get(&cid)?;
            let last = i + 1 == links.len();
            let anchor_number = link.anchor_version().unwrap_or(view.metadata.version);
            let anchor = if pinned && last && anchor_number == view.metadata.version {
                view.clone()
            } else {
                let doc = self.version_number(&did, anchor_number)?;
                Self::check_self_hash(&doc)?;
                doc
            };
            if !anchor
                .document
                .services_of(ServiceType::EventMetadata)
                .any(|s| s.id == link.id && s.endpoint == link.endpoint)
            {
                self.issues.push(format!("{cid}: not linked in {did} v{anchor_number}"));
            }
            if record.asset_did != did {
                self.issues.push(format!("{cid}: record names asset {} but is linked from {did}", record.asset_did));
            }
            if record.event_type == EventType::Manufacture {
                Self::check_commitment(&anchor, &record, &cid)?;
                pending_compartments.push(record.clone());
            }
            self.events.push(TraceEvent {
                asset: did.clone(),
                record,
                cid,
                version: anchor.metadata.version,
                version_id: anchor.metadata.version_id.clone(),
            });
        }
        let event_count = links.len();

        let mut children: Vec<CompartmentNode> = Vec::new();
        for record in pending_compartments {
            for (i, c) in record.compartments.iter().enumerate() {
                if self.path.contains(c) {
                    return Err(TraceError::at_doc(c, 0, format!("compartment cycle through {did}")));
                }
                if let Some(existing) = children.iter_mut().find(|n| &n.did == c) {
                    existing.multiplicity += 1;
                    continue;
                }
                if self.visited.contains(c) {
                    children.push(CompartmentNode {
                        did: c.clone(),
                        event_count: 0,
                        multiplicity: 1,
                        shared: true,
                        compartments: Vec::new(),
                    });
                    continue;
                }
                let view = match record.compartment_versions.get(i) {
                    Some(version_id) => self.version(c, version_id)?,
                    None => self.head(c)?,
                };
                children.push(self.visit(view, true)?);
            }
        }
        self.path.pop();
        Ok(CompartmentNode {
            did,
            event_count,
            multiplicity: 1,
            shared: false,
            compartments: children,
        })
    }

    /// The product document must commit to exactly the record's compartments.
    fn check_commitment(anchor: &DidDocument, record: &EventRecord, cid: &Cid) -> Result<(), TraceError> {
        let listed: Vec<&str> = anchor
            .document
            .services_of(ServiceType::Compartment)
            .map(|s| s.endpoint.as_str())
            .collect();
        let root = anchor.document.services_of(ServiceType::CompartmentMerkleRoot).next();
        match (listed.is_empty(), root) {
            (false, None) => {
                let recorded: Vec<String> = record.compartments.iter().map(Did::to_string).collect();
                if listed != recorded.iter().map(String::as_str).collect::<Vec<_>>() {
                    return Err(TraceError::at_cid(*cid, "compartment list differs from the product document"));
                }
            }
            (true, Some(root_entry)) => {
                let (root, proofs) = build_compartment_merkle(&record.compartments)
                    .map_err(|e| TraceError::at_cid(*cid, e.to_string()))?;
                if hex::encode(root) != root_entry.endpoint {
                    return Err(TraceError::at_cid(*cid, "compartment list does not match the committed Merkle root"));
                }
                for (c, proof) in record.compartments.iter().zip(&proofs) {
                    if !verify_proof(&leaf_hash(c), proof, &root) {
                        return Err(TraceError::at_cid(*cid, format!("inclusion proof for {c} fails")));
                    }
                }
            }
            _ => return Err(TraceError::at_cid(*cid, "product document carries no usable compartment commitment")),
        }
        Ok(())
    }
}

/// Full recursive history of `did`. Deactivated DIDs trace normally.
pub fn trace(registry: &Registry, store: &ContentStore, did: &Did) -> Result<TraceReport, TraceError> {
    let mut tracer = Tracer {
        registry,
        store,
        resolutions: 0,
        events: Vec::new(),
        issues: Vec::new(),
        path: Vec::new(),
        visited: BTreeSet::new(),
    };
    let head = tracer.head(did)?;
    let tree = tracer.visit(head, false)?;
    Ok(TraceReport {
        root: did.clone(),
        verified: tracer.issues.is_empty(),
        events: tracer.events,
        compartment_tree: tree,
        resolution_count: tracer.resolutions,
        issues: tracer.issues,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatestEvent {
    pub cid: Cid,
    pub event_type: Option<String>,
    pub version: Option<u32>,
}

/// Head-state projection of an asset from a single resolution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackReport {
    pub did: Did,
    pub kind: AssetKind,
    /// None for DIDs that carry no events.
    pub status: Option<AssetStatus>,
    pub controllers: Vec<Did>,
    pub latest_event: Option<LatestEvent>,
    pub consumed_by: Option<Did>,
    pub deactivated: bool,
    pub version: u32,
    pub resolution_count: u64,
}

pub fn track(registry: &Registry, did: &Did) -> Result<TrackReport, TraceError> {
    let doc = registry.resolve(did)?;
    let body = &doc.document;
    let latest = body.services_of(ServiceType::EventMetadata).last();
    let consumed_by = body
        .services_of(ServiceType::ConsumedBy)
        .next()
        .and_then(|s| s.endpoint.parse::<Did>().ok());
    let kind = if body.services_of(ServiceType::Compartment).next().is_some()
        || body.services_of(ServiceType::CompartmentMerkleRoot).next().is_some()
    {
        AssetKind::Product
    } else {
        AssetKind::RawMaterial
    };
    let status = if doc.status() == Some(STATUS_WITHDRAWN) {
        Some(AssetStatus::Withdrawn)
    } else if consumed_by.is_some() {
        Some(AssetStatus::Consumed)
    } else {
        latest.and_then(|l| l.event_kind()).and_then(|k| match k {
            "produce" | "manufacture" => Some(AssetStatus::Produced),
            "ship" => Some(AssetStatus::InTransit),
            "receive" => Some(AssetStatus::Received),
            "withdraw" => Some(AssetStatus::Withdrawn),
            _ => None,
        })
    };
    Ok(TrackReport {
        did: did.clone(),
        kind,
        status,
        controllers: body.controller.clone(),
        latest_event: latest.and_then(|l| {
            Some(LatestEvent {
                cid: l.endpoint.parse().ok()?,
                event_type: l.event_kind().map(str::to_string),
                version: l.anchor_version(),
            })
        }),
        consumed_by,
        deactivated: doc.metadata.deactivated,
        version: doc.metadata.version,
        resolution_count: 1,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainFailure {
    pub version: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainVerdict {
    pub did: Did,
    pub versions: usize,
    pub ok: bool,
    /// First failing version, if any.
    pub failure: Option<ChainFailure>,
}

/// Re-derives every version token from the stored bytes and checks the
/// links and timestamp rules between consecutive versions.
pub fn verify_history_chain(registry: &Registry, did: &Did) -> Result<ChainVerdict, TraceError> {
    let raw = registry.raw_versions(did)?;
    let fail = |version: usize, reason: &str| ChainVerdict {
        did: did.clone(),
        versions: raw.len(),
        ok: false,
        failure: Some(ChainFailure {
            version: version as u32,
            reason: reason.to_string(),
        }),
    };
    let mut previous: Option<DidDocument> = None;
    for (i, text) in raw.iter().enumerate() {
        let number = i + 1;
        let Ok(doc) = serde_json::from_str::<DidDocument>(text) else {
            return Ok(fail(number, "unparseable"));
        };
        if doc.canonical_bytes() != text.as_bytes() {
            return Ok(fail(number, "stored bytes are not the canonical form of their content"));
        }
        if doc.id() != did {
            return Ok(fail(number, "document id differs from the DID"));
        }
        if doc.metadata.version as usize != number {
            return Ok(fail(number, "version number out of sequence"));
        }
        if doc.compute_version_id() != doc.metadata.version_id {
            return Ok(fail(number, "version token does not match content"));
        }
        match &previous {
            None => {
                if doc.metadata.previous_version_id.is_some() {
                    return Ok(fail(number, "first version names a predecessor"));
                }
                if doc.metadata.updated != doc.metadata.created {
                    return Ok(fail(number, "first version has updated != created"));
                }
            }
            Some(prev) => {
                if doc.metadata.previous_version_id.as_ref() != Some(&prev.metadata.version_id) {
                    return Ok(fail(number, "previous version token does not link to the predecessor"));
                }
                if doc.metadata.created != prev.metadata.created {
                    return Ok(fail(number, "created timestamp changed"));
                }
                if doc.metadata.updated < prev.metadata.updated {
                    return Ok(fail(number, "updated timestamp went backwards"));
                }
                if prev.metadata.deactivated {
                    return Ok(fail(number, "version after deactivation"));
                }
            }
        }
        previous = Some(doc);
    }
    Ok(ChainVerdict {
        did: did.clone(),
        versions: raw.len(),
        ok: true,
        failure: None,
    })
}

/// `TracingTimeInSeconds(x) = a·x + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceTimeModel {
    /// Seconds per event.
    pub a: f64,
    /// Seconds.
    pub b: f64,
}

impl TraceTimeModel {
    /// Reference coefficients measured against a public testnet.
    pub const REFERENCE: TraceTimeModel = TraceTimeModel { a: 0.44, b: 0.32 };

    pub fn predict(&self, events: u64) -> f64 {
        self.a * events as f64 + self.b
    }
}

pub fn predict_trace_time(model: &TraceTimeModel, events: u64) -> f64 {
    model.predict(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceFit {
    pub model: TraceTimeModel,
    pub r_squared: f64,
    /// Absent with exactly two samples.
    pub slope_se: Option<f64>,
    pub intercept_se: Option<f64>,
    pub samples: usize,
}

/// Ordinary least squares of `t` on `x`.
pub fn fit_trace_model(samples: &[(f64, f64)]) -> Result<TraceFit, TraceError> {
    let n = samples.len();
    if n < 2 {
        return Err(TraceError::DegenerateInput(format!("need at least 2 samples, got {n}")));
    }
    let nf = n as f64;
    let mean_x = samples.iter().map(|s| s.0).sum::<f64>() / nf;
    let mean_t = samples.iter().map(|s| s.1).sum::<f64>() / nf;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return Err(TraceError::DegenerateInput("all x values are equal".into()));
    }
    let sxt: f64 = samples.iter().map(|s| (s.0 - mean_x) * (s.1 - mean_t)).sum();
    let a = sxt / sxx;
    let b = mean_t - a * mean_x;
    let ss_res: f64 = samples.iter().map(|s| (s.1 - (a * s.0 + b)).powi(2)).sum();
    let ss_tot: f64 = samples.iter().map(|s| (s.1 - mean_t).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    let (slope_se, intercept_se) = if n > 2 {
        let sigma2 = ss_res / (nf - 2.0);
        let slope_se = (sigma2 / sxx).sqrt();
        let intercept_se = (sigma2 * (1.0 / nf + mean_x * mean_x / sxx)).sqrt();
        (Some(slope_se), Some(intercept_se))
    } else {
        (None, None)
    };
    Ok(TraceFit {
        model: TraceTimeModel { a, b },
        r_squared,
        slope_se,
        intercept_se,
        samples: n,
    })
}

/// Trace reports grouped by asset, for callers that want per-DID event lists.
pub fn events_by_asset(report: &TraceReport) -> BTreeMap<Did, Vec<&TraceEvent>> {
    let mut out: BTreeMap<Did, Vec<&TraceEvent>> = BTreeMap::new();
    for e in &report.events {
        out.entry(e.asset.clone()).or_default().push(e);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_model_predictions() {
        let m = TraceTimeModel::REFERENCE;
        assert!((m.predict(13) - 6.04).abs() < 1e-12);
        assert_eq!(m.predict(0), 0.32);
        assert!((m.predict(1) - 0.76).abs() < 1e-12);
    }

    #[test]
    fn exact_line_recovered() {
        let samples: Vec<_> = (0..20).map(|x| (x as f64, 0.44 * x as f64 + 0.32)).collect();
        let fit = fit_trace_model(&samples).unwrap();
        assert!((fit.model.a - 0.44).abs() < 1e-12);
        assert!((fit.model.b - 0.32).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_line() {
        let fit = fit_trace_model(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]).unwrap();
        assert!((fit.model.a - 1.0).abs() < 1e-12);
        assert!(fit.model.b.abs() < 1e-12);
        assert_eq!(fit.slope_se, Some(0.0));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_trace_model(&[(2.0, 1.0), (2.0, 3.0)]), Err(TraceError::DegenerateInput(_))));
        assert!(matches!(fit_trace_model(&[(2.0, 1.0)]), Err(TraceError::DegenerateInput(_))));
        let two = fit_trace_model(&[(0.0, 1.0), (2.0, 3.0)]).unwrap();
        assert_eq!(two.slope_se, None);
    }

    #[test]
    fn standard_error_matches_textbook_example() {
        // x = 1..5, t = [2, 4, 5, 4, 5]: slope 0.6, intercept 2.2,
        // residual SS 2.4, slope SE sqrt(0.8/10).
        let samples = [(1.0, 2.0), (2.0, 4.0), (3.0, 5.0), (4.0, 4.0), (5.0, 5.0)];
        let fit = fit_trace_model(&samples).unwrap();
        assert!((fit.model.a - 0.6).abs() < 1e-12);
        assert!((fit.model.b - 2.2).abs() < 1e-12);
        assert!((fit.slope_se.unwrap() - (0.08f64).sqrt()).abs() < 1e-12);
        assert!((fit.r_squared - 0.6).abs() < 1e-12);
    }
}
