//! The reporting engine: one deterministic state machine over the whole
//! platform state. Every operation takes the caller and the current time
//! explicitly, so a run is reproducible from its inputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::access::{IdentifierPolicy, TagStore};
use crate::audit::AuditLog;
use crate::auth::{EvidenceSources, KeyRing};
use crate::ephemeral::{EphemeralSegment, EphemeralStore, EphemeralWindow};
use crate::error::EngineError;
use crate::fixtures;
use crate::lifecycle::{ModeratorProfile, Punishment};
use crate::minimize::Minimizer;
use crate::model::{
    AccountId, ConvId, Conversation, Message, MsgId, ReportId, Role, SegId, UserProfile,
};
use crate::scope::{shipped_presets, ScopePolicy};

mod ops;
mod report;
mod views;

pub use ops::{
    AppealAction, AppendSegment, ComposeViews, FileReport, GrantRequest, ImportResult,
    InviteRequest, NotifyRequest, OpenRequest, Rescope, ScopeSpec,
};
pub use report::{
    AppealRecord, AppealResolution, AssignmentRecord, FreeMedia, FreeMediaInput, LevelCause,
    LevelChange, NotificationRecord, PinnedSegment, Report, StateChange,
};
pub use views::{
    AuditEntryView, AuditExcerpt, EvidenceView, ExportFile, FindingView, FlaggedView,
    ForwardedBundle, FreeMediaView, GrantView, IdentityResolution, ImpersonationWarning,
    InviteView, ParticipantView, ReportView, RequestView, TagView, TestimonialView, ViewerKind,
    EXPORT_FORMAT,
};

/// Actor name for events the platform records on its own.
pub const PLATFORM_ACTOR: &str = "platform";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    pub appeal_window_ms: u64,
    pub identifier_policy: IdentifierPolicy,
    pub flood_threshold: u32,
    pub flood_window_ms: u64,
    pub moderators_per_report: usize,
    pub presets: BTreeMap<String, ScopePolicy>,
    pub default_ephemeral: EphemeralWindow,
    pub excerpt_chars: usize,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            appeal_window_ms: 7 * 24 * 3600 * 1000,
            identifier_policy: IdentifierPolicy::DelayedUntilDecision,
            flood_threshold: 10,
            flood_window_ms: 60_000,
            moderators_per_report: 1,
            presets: shipped_presets().into_iter().map(|p| (p.name, p.policy)).collect(),
            default_ephemeral: EphemeralWindow::seconds(30).expect("positive"),
            excerpt_chars: 140,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directory {
    pub profiles: BTreeMap<AccountId, UserProfile>,
    pub moderators: BTreeMap<AccountId, ModeratorProfile>,
}

impl Directory {
    pub fn profile(&self, id: &AccountId) -> Option<&UserProfile> {
        self.profiles.get(id)
    }

    pub fn is_moderator(&self, id: &AccountId) -> bool {
        self.profiles.get(id).is_some_and(UserProfile::is_moderator)
    }

    pub fn has_role(&self, id: &AccountId, role: Role) -> bool {
        self.profiles.get(id).is_some_and(|p| p.has_role(role))
    }

    pub fn handle(&self, id: &AccountId) -> Option<&str> {
        self.moderators.get(id).map(|m| m.handle.as_str())
    }

    pub fn by_handle(&self, handle: &str) -> Option<&AccountId> {
        self.moderators
            .iter()
            .find(|(_, m)| m.handle == handle)
            .map(|(a, _)| a)
    }

    /// Accepts a moderator handle or a moderator account id.
    pub fn resolve_moderator(&self, name: &str) -> Option<AccountId> {
        if let Some(a) = self.by_handle(name) {
            return Some(a.clone());
        }
        let id = AccountId::new(name).ok()?;
        self.is_moderator(&id).then_some(id)
    }

    /// Adds a profile; moderators without a public profile get the next
    /// `mod-<k>` handle.
    pub fn insert(&mut self, profile: UserProfile) {
        if profile.is_moderator() && !self.moderators.contains_key(&profile.account_id) {
            let handle = format!("mod-{}", self.moderators.len() + 1);
            self.moderators.insert(
                profile.account_id.clone(),
                ModeratorProfile {
                    handle,
                    tenure_days: 0,
                    reports_reviewed: 0,
                    endorsed_values: Vec::new(),
                },
            );
        }
        self.profiles.insert(profile.account_id.clone(), profile);
    }

    pub fn community_pool(&self) -> Vec<AccountId> {
        self.profiles
            .values()
            .filter(|p| p.has_role(Role::CommunityModerator))
            .map(|p| p.account_id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sanction {
    pub report_id: ReportId,
    pub account: AccountId,
    pub punishment: Punishment,
    pub applied_at: u64,
    pub lifted_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportRecord {
    pub import_id: String,
    pub source_report: ReportId,
    pub key_id: String,
    pub items: usize,
    pub importer: AccountId,
    pub at: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub report: u64,
    pub request: u64,
    pub invite: u64,
    pub grant: u64,
    pub segment: u64,
    pub media: u64,
    pub import: u64,
    pub message: u64,
}

/// Everything the engine persists. Keys, the minimizer and settings are
/// supplied by configuration instead.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineState {
    pub directory: Directory,
    pub conversations: BTreeMap<ConvId, Conversation>,
    pub messages: BTreeMap<ConvId, Vec<Message>>,
    pub message_index: BTreeMap<MsgId, ConvId>,
    pub buffers: EphemeralStore,
    pub reports: BTreeMap<ReportId, Report>,
    pub tags: TagStore,
    pub audit: AuditLog,
    pub sanctions: Vec<Sanction>,
    pub filings: BTreeMap<AccountId, Vec<u64>>,
    pub imports: Vec<ImportRecord>,
    pub counters: Counters,
    /// Audit sequence number of the event that purged each segment.
    pub purges: BTreeMap<SegId, u64>,
}

impl EngineState {
    pub fn message(&self, id: &MsgId) -> Option<&Message> {
        let conv = self.message_index.get(id)?;
        self.messages.get(conv)?.iter().find(|m| &m.msg_id == id)
    }

    pub fn report(&self, id: &ReportId) -> Option<&Report> {
        self.reports.get(id)
    }

    pub fn find_request(&self, request_id: &str) -> Option<(&ReportId, usize)> {
        self.reports.iter().find_map(|(rid, r)| {
            r.requests
                .iter()
                .position(|q| q.request_id == request_id)
                .map(|i| (rid, i))
        })
    }

    pub fn find_invite(&self, invite_id: &str) -> Option<(&ReportId, usize)> {
        self.reports.iter().find_map(|(rid, r)| {
            r.invites
                .iter()
                .position(|q| q.invite_id == invite_id)
                .map(|i| (rid, i))
        })
    }

    /// Adds a conversation and its messages. Messages are stored in
    /// `(sent_at, msg_id)` order.
    pub fn insert_conversation(&mut self, conv: Conversation, mut messages: Vec<Message>) {
        messages.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        for m in &messages {
            self.message_index.insert(m.msg_id.clone(), conv.conv_id.clone());
        }
        if let Some(w) = conv.ephemeral_policy {
            let _ = self.buffers.register(conv.conv_id.clone(), w);
        }
        self.messages.insert(conv.conv_id.clone(), messages);
        self.conversations.insert(conv.conv_id.clone(), conv);
    }
}

/// Lookup of originals for one report: stored messages plus the segments
/// pinned into that report.
pub(crate) struct ReportSources<'a> {
    pub state: &'a EngineState,
    pub report: &'a Report,
}

impl EvidenceSources for ReportSources<'_> {
    fn message(&self, msg_id: &str) -> Option<&Message> {
        self.state.message(&MsgId::new(msg_id).ok()?)
    }

    fn segment(&self, seg_id: &str) -> Option<&EphemeralSegment> {
        self.report
            .segments
            .iter()
            .find(|p| p.segment.seg_id.as_str() == seg_id)
            .map(|p| &p.segment)
    }
}

pub struct Engine {
    state: EngineState,
    keys: KeyRing,
    minimizer: Minimizer,
    settings: EngineSettings,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("reports", &self.state.reports.len())
            .field("audit_len", &self.state.audit.len())
            .field("settings", &self.settings)
            .finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(state: EngineState, keys: KeyRing, minimizer: Minimizer, settings: EngineSettings) -> Self {
        Self {
            state,
            keys,
            minimizer,
            settings,
        }
    }

    /// An engine holding the fixture world. Fixture messages are franked with
    /// the active key of `keys`.
    pub fn with_fixtures(keys: KeyRing, minimizer: Minimizer, settings: EngineSettings) -> Self {
        let world = fixtures::world();
        let mut state = EngineState::default();
        for p in world.profiles {
            state.directory.profiles.insert(p.account_id.clone(), p);
        }
        for (id, profile) in world.moderators {
            state.directory.moderators.insert(id, profile);
        }
        let profiles: Vec<UserProfile> = state.directory.profiles.values().cloned().collect();
        for p in profiles {
            state.directory.insert(p);
        }
        for conv in world.conversations {
            let mut msgs: Vec<Message> = world
                .messages
                .iter()
                .filter(|m| m.conversation_id == conv.conv_id)
                .cloned()
                .collect();
            for m in &mut msgs {
                m.frank_tag = keys.frank(m).expect("fixture fits bounds");
            }
            state.insert_conversation(conv, msgs);
        }
        Self::new(state, keys, minimizer, settings)
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn into_state(self) -> EngineState {
        self.state
    }

    pub fn keys(&self) -> &KeyRing {
        &self.keys
    }

    pub fn minimizer(&self) -> &Minimizer {
        &self.minimizer
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn audit(&self) -> &AuditLog {
        &self.state.audit
    }

    pub fn report(&self, id: &str) -> Option<&Report> {
        self.state.reports.get(&ReportId::new(id).ok()?)
    }

    /// Test hook: direct mutable access to persisted state.
    #[doc(hidden)]
    pub fn state_mut(&mut self) -> &mut EngineState {
        &mut self.state
    }

    pub(crate) fn record(&mut self, actor: &str, action: &str, object: &str, at: u64) -> u64 {
        self.state.audit.append(actor, action, object, at).seq
    }

    /// Records an authorization failure and returns the error for it.
    pub(crate) fn deny(&mut self, caller: &AccountId, op: &str, object: &str, now: u64, why: &str) -> EngineError {
        let obj = format!("{object};op={op}");
        self.record(caller.as_str(), "authz.denied", &obj, now);
        EngineError::Unauthorized(why.to_owned())
    }

    pub(crate) fn profile(&self, caller: &AccountId) -> Result<&UserProfile, EngineError> {
        self.state
            .directory
            .profile(caller)
            .ok_or_else(|| EngineError::Unauthorized(format!("unknown principal {caller}")))
    }
}

#[cfg(test)]
mod tests;
