use std::fmt::Display;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use didchain_core::cid::Cid;
use didchain_core::costing::ledger_cost;
use didchain_core::error::{Classify, ErrorCode};
use didchain_core::events::{Engine, EngineError, EventRequest};
use didchain_core::identity::{Did, DocumentDelta, Proof, ServiceEntry, VersionId};
use didchain_core::ledger::AccountId;
use didchain_core::trace::{trace, track};
use rust_decimal::Decimal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::AppState;

/// HTTP status for each error code.
pub fn status_for(code: ErrorCode) -> StatusCode {
    match code {
        ErrorCode::MalformedRequest
        | ErrorCode::MalformedDid
        | ErrorCode::MalformedScript
        | ErrorCode::UnknownRole
        | ErrorCode::DegenerateInput
        | ErrorCode::ConfigInvalid => StatusCode::BAD_REQUEST,
        ErrorCode::InvalidToken => StatusCode::UNAUTHORIZED,
        ErrorCode::Unauthorized | ErrorCode::NotController => StatusCode::FORBIDDEN,
        ErrorCode::NotFound | ErrorCode::UnknownAccount | ErrorCode::UnknownVersion | ErrorCode::UnknownActor => {
            StatusCode::NOT_FOUND
        }
        ErrorCode::WrongState | ErrorCode::Deactivated | ErrorCode::Conflict => StatusCode::CONFLICT,
        ErrorCode::PayloadTooLarge => StatusCode::PAYLOAD_TOO_LARGE,
        ErrorCode::CompartmentLimitExceeded | ErrorCode::InsufficientBalance => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorCode::IntegrityViolation | ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub error_code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            error_code: code,
            message: message.into(),
        }
    }

    fn from_err<E: Classify + Display>(e: E) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (status_for(self.error_code), Json(self)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn ok<T: Serialize>(value: T) -> ApiResult {
    Ok(Json(value).into_response())
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let body = if body.iter().all(u8::is_ascii_whitespace) { b"{}".as_slice() } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError::new(ErrorCode::MalformedRequest, e.to_string()))
}

fn parse_did(s: &str) -> Result<Did, ApiError> {
    s.parse::<Did>().map_err(ApiError::from_err)
}

fn authenticate(state: &AppState, headers: &HeaderMap) -> Result<AccountId, ApiError> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or_else(|| ApiError::new(ErrorCode::InvalidToken, "missing bearer token"))?;
    state
        .tokens
        .get(token)
        .cloned()
        .ok_or_else(|| ApiError::new(ErrorCode::InvalidToken, "unknown token"))
}

fn actor_alias(engine: &Engine, account: &AccountId) -> Result<String, ApiError> {
    engine
        .actor_by_account(account)
        .map(|a| a.alias.clone())
        .ok_or_else(|| ApiError::new(ErrorCode::UnknownActor, format!("no actor for account {account}")))
}

fn persist(engine: &Engine) -> Result<(), ApiError> {
    engine.save().map_err(ApiError::from_err)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/did/create", post(did_create))
        .route("/did/update", post(did_update))
        .route("/did/deactivate", post(did_deactivate))
        .route("/did/signing-payload", post(did_signing_payload))
        .route("/did/list", get(did_list))
        .route("/did/search/{did}", get(did_search))
        .route("/did/versions/{did}", get(did_versions))
        .route("/event/commit", post(event_commit))
        .route("/event/{op}", post(event_submit))
        .route("/trace/{did}", get(trace_did))
        .route("/track/{did}", get(track_did))
        .route("/cost/report", get(cost_report))
        .fallback(|| async { ApiError::new(ErrorCode::NotFound, "no such endpoint") })
        .with_state(state)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    #[serde(default)]
    services: Vec<ServiceEntry>,
}

async fn did_create(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let account = authenticate(&state, &headers)?;
    let body: CreateBody = parse_body(&body)?;
    let mut engine = state.engine.write().await;
    let alias = actor_alias(&engine, &account)?;
    let doc = engine.registrar_create(&alias, body.services).map_err(ApiError::from_err)?;
    persist(&engine)?;
    ok(doc)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChangeBody {
    did: Did,
    #[serde(default)]
    delta: DocumentDelta,
    #[serde(default)]
    proof: Option<Proof>,
}

async fn did_change(state: AppState, headers: HeaderMap, body: Bytes, deactivate: bool) -> ApiResult {
    let account = authenticate(&state, &headers)?;
    let body: ChangeBody = parse_body(&body)?;
    let mut engine = state.engine.write().await;
    let alias = actor_alias(&engine, &account)?;
    let doc = engine
        .registrar_change(&alias, &body.did, &body.delta, deactivate, body.proof)
        .map_err(ApiError::from_err)?;
    persist(&engine)?;
    ok(doc)
}

async fn did_update(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    did_change(state, headers, body, false).await
}

async fn did_deactivate(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    did_change(state, headers, body, true).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PayloadBody {
    did: Did,
    #[serde(default)]
    delta: DocumentDelta,
    #[serde(default)]
    deactivate: bool,
}

/// Bytes a client-managed key must sign for an update or deactivation.
async fn did_signing_payload(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    authenticate(&state, &headers)?;
    let body: PayloadBody = parse_body(&body)?;
    let engine = state.engine.read().await;
    let payload = engine
        .registrar_payload(&body.did, &body.delta, body.deactivate)
        .map_err(ApiError::from_err)?;
    ok(json!({ "payload": hex::encode(payload) }))
}

async fn did_list(State(state): State<AppState>, headers: HeaderMap) -> ApiResult {
    let account = authenticate(&state, &headers)?;
    let engine = state.engine.read().await;
    let dids = engine
        .registry()
        .list_dids(engine.ledger(), &account)
        .map_err(ApiError::from_err)?;
    ok(json!({ "account": account, "dids": dids }))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct SearchQuery {
    version: Option<u32>,
    version_id: Option<String>,
}

async fn did_search(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(did): Path<String>,
    Query(query): Query<SearchQuery>,
) -> ApiResult {
    authenticate(&state, &headers)?;
    let did = parse_did(&did)?;
    let engine = state.engine.read().await;
    let registry = engine.registry();
    let doc = match (query.version, query.version_id) {
        (Some(_), Some(_)) => {
            return Err(ApiError::new(ErrorCode::MalformedRequest, "give version or versionId, not both"));
        }
        (Some(n), None) => registry.resolve_version_number(&did, n),
        (None, Some(id)) => VersionId::parse(&id).and_then(|id| registry.resolve_version(&did, &id)),
        (None, None) => registry.resolve(&did),
    }
    .map_err(ApiError::from_err)?;
    ok(doc)
}

async fn did_versions(State(state): State<AppState>, headers: HeaderMap, Path(did): Path<String>) -> ApiResult {
    authenticate(&state, &headers)?;
    let did = parse_did(&did)?;
    let engine = state.engine.read().await;
    let versions = engine.registry().list_versions(&did).map_err(ApiError::from_err)?;
    ok(json!({ "did": did, "versions": versions }))
}

/// Body of `POST /event/{op}`: the event fields without `op`, an optional
/// `actor` that must match the token's account, and `prepare: true` to get
/// the unsigned plan instead of committing.
async fn event_submit(State(state): State<AppState>, headers: HeaderMap, Path(op): Path<String>, body: Bytes) -> ApiResult {
    let account = authenticate(&state, &headers)?;
    let mut fields: serde_json::Map<String, Value> = parse_body(&body)?;
    let prepare = match fields.remove("prepare") {
        None => false,
        Some(Value::Bool(b)) => b,
        Some(_) => return Err(ApiError::new(ErrorCode::MalformedRequest, "prepare must be a boolean")),
    };
    if !matches!(op.as_str(), "produce" | "ship" | "receive" | "manufacture" | "withdraw") {
        return Err(ApiError::new(ErrorCode::NotFound, format!("unknown event {op:?}")));
    }
    let mut engine = state.engine.write().await;
    let alias = actor_alias(&engine, &account)?;
    match fields.get("actor") {
        None => {}
        Some(Value::String(a)) if *a == alias => {}
        Some(_) => return Err(ApiError::new(ErrorCode::Unauthorized, "token does not belong to the named actor")),
    }
    fields.insert("actor".into(), Value::String(alias));
    fields.insert("op".into(), Value::String(op));
    let request: EventRequest =
        serde_json::from_value(Value::Object(fields)).map_err(|e| ApiError::new(ErrorCode::MalformedRequest, e.to_string()))?;
    if prepare {
        return ok(engine.prepare(request).map_err(ApiError::from_err)?);
    }
    let outcome = engine.submit(request).map_err(ApiError::from_err)?;
    persist(&engine)?;
    ok(outcome)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CommitBody {
    cid: Cid,
    #[serde(default)]
    proofs: Vec<Proof>,
}

async fn event_commit(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let account = authenticate(&state, &headers)?;
    let body: CommitBody = parse_body(&body)?;
    let mut engine = state.engine.write().await;
    let alias = actor_alias(&engine, &account)?;
    let owner = engine
        .pending(&body.cid)
        .map(|p| p.request.actor().to_string())
        .ok_or_else(|| ApiError::from_err(EngineError::UnknownPrepared(body.cid)))?;
    if owner != alias {
        return Err(ApiError::new(ErrorCode::Unauthorized, "prepared by another actor"));
    }
    let outcome = engine.commit_prepared(&body.cid, body.proofs).map_err(ApiError::from_err)?;
    persist(&engine)?;
    ok(outcome)
}

async fn trace_did(State(state): State<AppState>, headers: HeaderMap, Path(did): Path<String>) -> ApiResult {
    authenticate(&state, &headers)?;
    let did = parse_did(&did)?;
    let engine = state.engine.read().await;
    ok(trace(engine.registry(), engine.store(), &did).map_err(ApiError::from_err)?)
}

async fn track_did(State(state): State<AppState>, headers: HeaderMap, Path(did): Path<String>) -> ApiResult {
    authenticate(&state, &headers)?;
    let did = parse_did(&did)?;
    let engine = state.engine.read().await;
    ok(track(engine.registry(), &did).map_err(ApiError::from_err)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CostQuery {
    price: Option<Decimal>,
}

/// Per-account fees actually charged, priced at the configured or given
/// USD rate.
async fn cost_report(State(state): State<AppState>, headers: HeaderMap, Query(query): Query<CostQuery>) -> ApiResult {
    authenticate(&state, &headers)?;
    let engine = state.engine.read().await;
    let price = query.price.unwrap_or(engine.ledger().config().token_price_usd);
    if price <= Decimal::ZERO {
        return Err(ApiError::new(ErrorCode::MalformedRequest, "price must be positive"));
    }
    let reports = ledger_cost(engine.ledger(), price);
    let total: u64 = reports.iter().map(|r| r.total_ct).sum();
    ok(json!({ "price_usd": price, "total_ct": total, "accounts": reports }))
}
