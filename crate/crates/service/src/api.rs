//! HTTP routes under `/api/v1`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{async_trait, Json, Router};
use redress_core::disclosure::{FindingBody, ResponseDecision};
use redress_core::engine::{
    AppealAction, AppendSegment, ComposeViews, FileReport, GrantRequest, InviteRequest,
    NotifyRequest, OpenRequest, Rescope,
};
use redress_core::lifecycle::{AssignmentRequest, Decision, TerminationReason};
use redress_core::model::AccountId;
use redress_core::{Engine, EngineError, EngineState};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::storage::{Storage, StorageError};

/// Header carrying the logical clock, honored in harness mode only.
pub const CLOCK_HEADER: &str = "x-logical-clock";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub detail: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, detail: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_owned(),
            detail: detail.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "detail": self.detail}))).into_response()
    }
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "not_found" => StatusCode::NOT_FOUND,
        "unauthorized" | "no_grant" | "grant_expired" | "grant_exhausted" => StatusCode::FORBIDDEN,
        "invalid_state" | "blocked" | "conflict" | "not_appealable" | "appeal_window_closed" => StatusCode::CONFLICT,
        "window_expired" => StatusCode::GONE,
        "mac_invalid" | "unknown_key" | "attestation_refused" => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let code = e.code();
        ApiError::new(status_for(code), code, e.to_string())
    }
}

impl From<StorageError> for ApiError {
    fn from(e: StorageError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string())
    }
}

struct Inner {
    engine: Engine,
    saved_len: usize,
}

/// Shared service state. One lock guards the engine, so mutations on any
/// report are serialized and audit appends are linearizable.
pub struct AppState {
    inner: Mutex<Inner>,
    store: Box<dyn Storage>,
    sessions: HashMap<String, AccountId>,
    harness_mode: bool,
}

impl AppState {
    pub fn new(
        engine: Engine,
        store: Box<dyn Storage>,
        sessions: impl IntoIterator<Item = (String, AccountId)>,
        harness_mode: bool,
    ) -> Result<Self, StorageError> {
        store.save(engine.state())?;
        let saved_len = engine.audit().len();
        Ok(Self {
            inner: Mutex::new(Inner { engine, saved_len }),
            store,
            sessions: sessions.into_iter().collect(),
            harness_mode,
        })
    }

    /// Runs `op` under the engine lock and persists if it recorded anything.
    pub fn with_engine<R>(&self, op: impl FnOnce(&mut Engine) -> Result<R, EngineError>) -> Result<R, ApiError> {
        let mut inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let result = op(&mut inner.engine);
        let len = inner.engine.audit().len();
        if len != inner.saved_len {
            self.store.save(inner.engine.state())?;
            inner.saved_len = len;
        }
        Ok(result?)
    }

    pub fn head_hash(&self) -> [u8; 32] {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).engine.audit().head()
    }

    pub fn snapshot(&self) -> EngineState {
        self.inner.lock().unwrap_or_else(|p| p.into_inner()).engine.state().clone()
    }

    pub fn harness_mode(&self) -> bool {
        self.harness_mode
    }
}

type Shared = Arc<AppState>;

/// The authenticated caller and the time the request is evaluated at.
pub struct Ctx {
    pub caller: AccountId,
    pub now: u64,
}

#[async_trait]
impl FromRequestParts<Shared> for Ctx {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Shared) -> Result<Self, Self::Rejection> {
        let unauth = || ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "missing or unknown bearer token");
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(unauth)?;
        let caller = state.sessions.get(token.trim()).cloned().ok_or_else(unauth)?;
        let header_clock = parts.headers.get(CLOCK_HEADER).filter(|_| state.harness_mode);
        let now = match header_clock {
            Some(v) => v
                .to_str()
                .ok()
                .and_then(|s| s.trim().parse::<u64>().ok())
                .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "invalid", "logical clock must be an integer"))?,
            None => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or_default(),
        };
        Ok(Ctx { caller, now })
    }
}

/// A JSON body. Content type is not required; an empty body reads as `{}`.
pub struct Body<T>(pub T);

#[async_trait]
impl<S, T> FromRequest<S> for Body<T>
where
    S: Send + Sync,
    T: DeserializeOwned,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid", e.body_text()))?;
        let bytes: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { &bytes };
        serde_json::from_slice(bytes)
            .map(Body)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid", e.to_string()))
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn reply<R: Serialize>(r: R) -> ApiResult {
    Ok(Json(serde_json::to_value(r).expect("views serialize")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RespondBody {
    decision: ResponseDecision,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConsentBody {
    approve: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TerminateBody {
    reason: TerminationReason,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageBody {
    body: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TagBody {
    subject: String,
    label: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentityBody {
    pseudonym: String,
}

async fn file_report(State(s): State<Shared>, c: Ctx, Body(b): Body<FileReport>) -> ApiResult {
    reply(s.with_engine(|e| e.file_report(&c.caller, b, c.now))?)
}

async fn get_report(State(s): State<Shared>, c: Ctx, Path(id): Path<String>) -> ApiResult {
    reply(s.with_engine(|e| e.get_report(&c.caller, &id, c.now))?)
}

async fn rescope(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<Rescope>) -> ApiResult {
    reply(s.with_engine(|e| e.rescope(&c.caller, &id, b, c.now))?)
}

async fn compose_views(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<ComposeViews>) -> ApiResult {
    reply(s.with_engine(|e| e.compose_views(&c.caller, &id, b, c.now))?)
}

async fn create_grant(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<GrantRequest>) -> ApiResult {
    reply(s.with_engine(|e| e.create_grant(&c.caller, &id, b, c.now))?)
}

async fn fetch_evidence(State(s): State<Shared>, c: Ctx, Path(id): Path<String>) -> ApiResult {
    reply(s.with_engine(|e| e.fetch_evidence(&c.caller, &id, c.now))?)
}

async fn open_request(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<OpenRequest>) -> ApiResult {
    reply(s.with_engine(|e| e.open_request(&c.caller, &id, b, c.now))?)
}

async fn respond_request(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<RespondBody>) -> ApiResult {
    reply(s.with_engine(|e| e.respond_request(&c.caller, &id, b.decision, c.now))?)
}

async fn invite_bystander(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<InviteRequest>) -> ApiResult {
    reply(s.with_engine(|e| e.invite_bystander(&c.caller, &id, b, c.now))?)
}

async fn consent_invite(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<ConsentBody>) -> ApiResult {
    reply(s.with_engine(|e| e.consent_invite(&c.caller, &id, b.approve, c.now))?)
}

async fn submit_finding(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<FindingBody>) -> ApiResult {
    reply(s.with_engine(|e| e.submit_finding(&c.caller, &id, b, c.now))?)
}

async fn assign(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<AssignmentRequest>) -> ApiResult {
    reply(s.with_engine(|e| e.assign(&c.caller, &id, b, c.now))?)
}

async fn decide(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<Decision>) -> ApiResult {
    reply(s.with_engine(|e| e.decide(&c.caller, &id, b, c.now))?)
}

async fn notify(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<NotifyRequest>) -> ApiResult {
    reply(s.with_engine(|e| e.notify(&c.caller, &id, b, c.now))?)
}

async fn appeal(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<AppealAction>) -> ApiResult {
    reply(s.with_engine(|e| e.appeal(&c.caller, &id, b, c.now))?)
}

async fn terminate(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<TerminateBody>) -> ApiResult {
    reply(s.with_engine(|e| e.terminate(&c.caller, &id, b.reason, c.now))?)
}

async fn audit_excerpt(State(s): State<Shared>, c: Ctx, Path(id): Path<String>) -> ApiResult {
    reply(s.with_engine(|e| e.audit_excerpt(&c.caller, &id, c.now))?)
}

async fn export_bundle(State(s): State<Shared>, c: Ctx, Path(id): Path<String>) -> ApiResult {
    reply(s.with_engine(|e| e.export_bundle(&c.caller, &id, c.now))?)
}

async fn import_bundle(State(s): State<Shared>, c: Ctx, Body(b): Body<Value>) -> ApiResult {
    reply(s.with_engine(|e| e.import_bundle(&c.caller, &b, c.now))?)
}

async fn append_segment(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<AppendSegment>) -> ApiResult {
    reply(s.with_engine(|e| e.append_segment(&c.caller, &id, b, c.now))?)
}

async fn reportable(State(s): State<Shared>, c: Ctx, Path(id): Path<String>) -> ApiResult {
    reply(s.with_engine(|e| e.reportable(&c.caller, &id, c.now))?)
}

async fn send_message(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<MessageBody>) -> ApiResult {
    reply(s.with_engine(|e| e.send_message(&c.caller, &id, &b.body, c.now))?)
}

async fn moderator_profile(State(s): State<Shared>, _c: Ctx, Path(handle): Path<String>) -> ApiResult {
    reply(s.with_engine(|e| e.moderator_profile(&handle))?)
}

async fn moderator_profiles(State(s): State<Shared>, _c: Ctx) -> ApiResult {
    reply(s.with_engine(|e| Ok(e.moderator_profiles()))?)
}

async fn list_tags(State(s): State<Shared>, c: Ctx, Path(id): Path<String>) -> ApiResult {
    reply(s.with_engine(|e| e.list_tags(&c.caller, &id, c.now))?)
}

async fn assign_tag(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<TagBody>) -> ApiResult {
    reply(s.with_engine(|e| e.assign_tag(&c.caller, &id, &b.subject, &b.label, c.now))?)
}

async fn resolve_identity(State(s): State<Shared>, c: Ctx, Path(id): Path<String>, Body(b): Body<IdentityBody>) -> ApiResult {
    reply(s.with_engine(|e| e.resolve_identity(&c.caller, &id, &b.pseudonym, c.now))?)
}

async fn transitions(State(s): State<Shared>, _c: Ctx) -> ApiResult {
    reply(s.with_engine(|e| Ok(e.transitions()))?)
}

async fn export_audit(State(s): State<Shared>, c: Ctx) -> Result<Response, ApiError> {
    let text = s.with_engine(|e| e.export_audit(&c.caller, c.now))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Shared) -> Router {
    let v1 = Router::new()
        .route("/reports", post(file_report))
        .route("/reports/:id", get(get_report))
        .route("/reports/:id/scope", post(rescope))
        .route("/reports/:id/views", post(compose_views))
        .route("/reports/:id/grants", post(create_grant))
        .route("/reports/:id/evidence", get(fetch_evidence))
        .route("/reports/:id/disclosure-requests", post(open_request))
        .route("/disclosure-requests/:id/respond", post(respond_request))
        .route("/reports/:id/bystander-invites", post(invite_bystander))
        .route("/bystander-invites/:id/consent", post(consent_invite))
        .route("/bystander-invites/:id/finding", post(submit_finding))
        .route("/reports/:id/assign", post(assign))
        .route("/reports/:id/decide", post(decide))
        .route("/reports/:id/notify", post(notify))
        .route("/reports/:id/appeal", post(appeal))
        .route("/reports/:id/terminate", post(terminate))
        .route("/reports/:id/audit", get(audit_excerpt))
        .route("/reports/:id/export", get(export_bundle))
        .route("/reports/:id/tags", get(list_tags).post(assign_tag))
        .route("/reports/:id/identities", post(resolve_identity))
        .route("/import", post(import_bundle))
        .route("/conversations/:id/segments", post(append_segment))
        .route("/conversations/:id/reportable", get(reportable))
        .route("/conversations/:id/messages", post(send_message))
        .route("/moderators", get(moderator_profiles))
        .route("/moderators/:handle/profile", get(moderator_profile))
        .route("/transitions", get(transitions))
        .route("/audit/export", get(export_audit));
    Router::new().nest("/api/v1", v1).fallback(fallback).with_state(state)
}
