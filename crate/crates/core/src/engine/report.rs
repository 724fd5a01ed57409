use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::access::{GrantSet, IdentifierPolicy, PseudonymTable};
use crate::disclosure::{
    BystanderFinding, BystanderInvite, CredibilityAnnotation, DisclosureRequest, ReportFlag,
};
use crate::ephemeral::EphemeralSegment;
use crate::lifecycle::{Decision, Notice, ReportState, TerminationReason};
use crate::minimize::VisibilityLevel;
use crate::model::{AccountId, ConvId, MsgId, ReportId};
use crate::scope::ScopePolicy;

/// Why a message's level changed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevelCause {
    /// The reporter's own selection while assembling.
    Initial { audit_seq: u64 },
    /// A disclosure request the reporter granted.
    Grant { request_id: String, audit_seq: u64 },
}

impl LevelCause {
    pub fn audit_seq(&self) -> u64 {
        match self {
            LevelCause::Initial { audit_seq } | LevelCause::Grant { audit_seq, .. } => *audit_seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelChange {
    pub msg_id: MsgId,
    pub from: Option<VisibilityLevel>,
    pub to: VisibilityLevel,
    pub cause: LevelCause,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinnedSegment {
    pub segment: EphemeralSegment,
    pub attached_at: u64,
    pub audit_seq: u64,
}

/// Evidence submitted as media (screenshots, recordings). Never attested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeMedia {
    pub item_id: String,
    pub description: String,
    pub media_ref: String,
    #[serde(default)]
    pub claimed_sender: Option<String>,
    pub submitted_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeMediaInput {
    pub description: String,
    #[serde(default)]
    pub media_ref: String,
    #[serde(default)]
    pub claimed_sender: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChange {
    pub from: ReportState,
    pub to: ReportState,
    pub at: u64,
    pub audit_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub assigned: Vec<AccountId>,
    pub preferred: Vec<AccountId>,
    pub excluded: Vec<(AccountId, String)>,
    pub conflicted: Vec<AccountId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppealRecord {
    pub statement: String,
    pub filed_at: u64,
    pub resolution: Option<AppealResolution>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppealResolution {
    pub affirmed: bool,
    pub rationale: String,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationRecord {
    pub notice: Option<Notice>,
    pub reporter_message: String,
    pub downgraded: bool,
    pub at: u64,
    /// Last instant an appeal is accepted.
    pub appeal_deadline: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub id: ReportId,
    pub reporter: AccountId,
    pub reported: AccountId,
    pub reason: String,
    pub filed_at: u64,
    pub state: ReportState,
    pub history: Vec<StateChange>,
    pub scope: ScopePolicy,
    pub conversations: Vec<ConvId>,
    pub identifier_policy: IdentifierPolicy,
    pub pseudonyms: PseudonymTable,
    pub candidates: Vec<MsgId>,
    pub levels: BTreeMap<MsgId, VisibilityLevel>,
    pub level_log: Vec<LevelChange>,
    pub segments: Vec<PinnedSegment>,
    pub free_media: Vec<FreeMedia>,
    pub assignment: Option<AssignmentRecord>,
    pub requests: Vec<DisclosureRequest>,
    pub invites: Vec<BystanderInvite>,
    pub findings: Vec<BystanderFinding>,
    pub annotations: Vec<CredibilityAnnotation>,
    pub flags: BTreeSet<ReportFlag>,
    pub grants: GrantSet,
    pub decision: Option<Decision>,
    pub decided_at: Option<u64>,
    pub punishment_applied_at: Option<u64>,
    pub notification: Option<NotificationRecord>,
    pub appeal: Option<AppealRecord>,
    pub termination: Option<(TerminationReason, u64)>,
    pub closed_by_lapse: bool,
    pub filer_rate_signal: bool,
}

impl Report {
    pub fn is_assigned(&self, who: &AccountId) -> bool {
        self.assignment
            .as_ref()
            .is_some_and(|a| a.assigned.contains(who))
    }

    pub fn assigned(&self) -> &[AccountId] {
        self.assignment.as_ref().map_or(&[], |a| &a.assigned)
    }

    pub fn level(&self, msg: &MsgId) -> Option<&VisibilityLevel> {
        self.levels.get(msg)
    }

    pub fn request(&self, id: &str) -> Option<&DisclosureRequest> {
        self.requests.iter().find(|r| r.request_id == id)
    }

    pub fn invite(&self, id: &str) -> Option<&BystanderInvite> {
        self.invites.iter().find(|i| i.invite_id == id)
    }

    /// Audit object prefix for events about this report.
    pub fn object(&self) -> String {
        format!("report:{}", self.id)
    }

    pub fn has_pending_critical(&self) -> bool {
        self.requests.iter().any(|r| {
            r.is_pending() && r.criticality == crate::disclosure::Criticality::Critical
        })
    }
}
