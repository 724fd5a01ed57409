use thiserror::Error;

use crate::access::{AccessError, Denial};
use crate::auth::AuthError;
use crate::disclosure::DisclosureError;
use crate::ephemeral::EphemeralError;
use crate::lifecycle::{LifecycleError, ReportState};
use crate::minimize::MinimizeError;
use crate::model::ModelError;
use crate::scope::ScopeError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("not authorized: {0}")]
    Unauthorized(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("operation {op} not permitted in state {}", state.as_str())]
    InvalidState { state: ReportState, op: &'static str },
    #[error("scope selects no messages and no ephemeral segments")]
    EmptyScope,
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("justification must not be empty")]
    EmptyJustification,
    #[error("blocked: {0}")]
    Blocked(String),
    #[error("no eligible moderator remains after exclusions")]
    AssignmentImpossible,
    #[error("segments outside the reporting window: {0:?}")]
    WindowExpired(Vec<String>),
    #[error("access denied: {}", .0.code())]
    Denied(Denial),
    #[error("bundle failed verification")]
    MacInvalid,
    #[error("unknown key id {0:?}")]
    UnknownKey(String),
    #[error("attestation refused for {0}")]
    AttestationRefused(String),
    #[error("clock error: {0}")]
    Clock(String),
    #[error("a dismissed report cannot be appealed")]
    NotAppealable,
    #[error("the appeal window has closed")]
    AppealWindowClosed,
    #[error("conflict: {0}")]
    Conflict(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::NotFound { .. } => "not_found",
            EngineError::Unauthorized(_) => "unauthorized",
            EngineError::Invalid(_) => "invalid",
            EngineError::InvalidState { .. } => "invalid_state",
            EngineError::EmptyScope => "empty_scope",
            EngineError::InvalidTarget(_) => "invalid_target",
            EngineError::EmptyJustification => "empty_justification",
            EngineError::Blocked(_) => "blocked",
            EngineError::AssignmentImpossible => "assignment_impossible",
            EngineError::WindowExpired(_) => "window_expired",
            EngineError::Denied(d) => d.code(),
            EngineError::MacInvalid => "mac_invalid",
            EngineError::UnknownKey(_) => "unknown_key",
            EngineError::AttestationRefused(_) => "attestation_refused",
            EngineError::Clock(_) => "clock_error",
            EngineError::NotAppealable => "not_appealable",
            EngineError::AppealWindowClosed => "appeal_window_closed",
            EngineError::Conflict(_) => "conflict",
        }
    }

    pub(crate) fn not_found(kind: &'static str, id: impl ToString) -> Self {
        EngineError::NotFound {
            kind,
            id: id.to_string(),
        }
    }
}

impl From<MinimizeError> for EngineError {
    fn from(e: MinimizeError) -> Self {
        EngineError::Invalid(e.to_string())
    }
}

impl From<ScopeError> for EngineError {
    fn from(e: ScopeError) -> Self {
        EngineError::Invalid(e.to_string())
    }
}

impl From<AccessError> for EngineError {
    fn from(e: AccessError) -> Self {
        EngineError::Invalid(e.to_string())
    }
}

impl From<ModelError> for EngineError {
    fn from(e: ModelError) -> Self {
        EngineError::Invalid(e.to_string())
    }
}

impl From<DisclosureError> for EngineError {
    fn from(e: DisclosureError) -> Self {
        match e {
            DisclosureError::EmptyJustification => EngineError::EmptyJustification,
            DisclosureError::InvalidTarget(t) => EngineError::InvalidTarget(t),
            other => EngineError::Invalid(other.to_string()),
        }
    }
}

impl From<LifecycleError> for EngineError {
    fn from(e: LifecycleError) -> Self {
        match e {
            LifecycleError::AssignmentImpossible => EngineError::AssignmentImpossible,
            other => EngineError::Invalid(other.to_string()),
        }
    }
}

impl From<EphemeralError> for EngineError {
    fn from(e: EphemeralError) -> Self {
        match e {
            EphemeralError::WindowExpired(ids) => EngineError::WindowExpired(ids),
            EphemeralError::FutureCapture { .. } | EphemeralError::ClockBackwards { .. } => {
                EngineError::Clock(e.to_string())
            }
            EphemeralError::UnknownConversation(c) => EngineError::not_found("ephemeral conversation", c),
            EphemeralError::UnknownSegment(s) => EngineError::not_found("segment", s),
            EphemeralError::DuplicateSegment(s) => EngineError::Conflict(format!("segment {s} exists")),
            other => EngineError::Invalid(other.to_string()),
        }
    }
}

impl From<AuthError> for EngineError {
    fn from(e: AuthError) -> Self {
        match e {
            AuthError::AttestationRefused { item_id } => EngineError::AttestationRefused(item_id),
            AuthError::UnknownKey(k) => EngineError::UnknownKey(k),
            AuthError::InvalidKey(k) => EngineError::Invalid(k),
        }
    }
}
