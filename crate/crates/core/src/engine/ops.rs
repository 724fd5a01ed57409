use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::views::{sender_ref, b64, ViewerKind};
use super::{
    AppealRecord, AppealResolution, AssignmentRecord, AuditEntryView, AuditExcerpt, Engine,
    EvidenceView, ExportFile, FreeMedia, FreeMediaInput, IdentityResolution, ImportRecord,
    LevelCause, LevelChange, NotificationRecord, PinnedSegment, Report, ReportView, Sanction,
    TagView, EXPORT_FORMAT, PLATFORM_ACTOR,
};
use crate::access::{AccessError, AccessGrant, IdentifierPolicy, PartyRole, PseudonymTable};
use crate::auth::{verify_forwarded, VerificationReport};
use crate::bundle::{parse_bundle_strict, RenderedItem};
use crate::disclosure::{
    check_justification, BystanderFinding, BystanderInvite, Consent, CredibilityAnnotation,
    Criticality, DisclosureRequest, FindingBody, Involvement, ReportFlag, RequestState,
    ResponseDecision,
};
use crate::ephemeral::{EphemeralSegment, SegmentInput};
use crate::error::EngineError;
use crate::lifecycle::{
    effective_granularity, next_state, select_moderators, transition_table, AssignmentRequest,
    Decision, Granularity, LifecycleOp, ModeratorProfile, Notice, Outcome, Punishment,
    ReportState, TerminationReason, TransitionRow,
};
use crate::minimize::{LevelSpec, VisibilityLevel};
use crate::model::{
    b64 as b64_serde, AccountId, ConvId, ConversationKind, Message, MsgId, ReportId, Role, SegId,
    MAX_BODY_BYTES,
};
use crate::scope::{apply_scope, ScopePolicy};

/// A scope given either as a named preset or as an explicit policy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScopeSpec {
    Preset { preset: String },
    Policy(ScopePolicy),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileReport {
    pub reported: AccountId,
    pub reason: String,
    #[serde(default)]
    pub conversations: Vec<ConvId>,
    pub scope: ScopeSpec,
    #[serde(default)]
    pub levels: BTreeMap<MsgId, LevelSpec>,
    #[serde(default)]
    pub segments: Vec<SegId>,
    #[serde(default)]
    pub free_media: Vec<FreeMediaInput>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rescope {
    pub scope: ScopeSpec,
    #[serde(default)]
    pub conversations: Option<Vec<ConvId>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeViews {
    #[serde(default)]
    pub levels: BTreeMap<MsgId, LevelSpec>,
    #[serde(default)]
    pub segments: Vec<SegId>,
    #[serde(default)]
    pub free_media: Vec<FreeMediaInput>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrantRequest {
    pub grantees: Vec<String>,
    #[serde(default)]
    pub expires_at: Option<u64>,
    #[serde(default)]
    pub view_limit: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenRequest {
    pub targets: Vec<MsgId>,
    #[serde(default)]
    pub level: Option<LevelSpec>,
    pub justification: String,
    pub criticality: Criticality,
    #[serde(default)]
    pub consequence_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InviteRequest {
    /// A pseudonym from the report or an account id.
    pub bystander: String,
    pub involvement: Involvement,
    pub question: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotifyRequest {
    #[serde(default)]
    pub granularity: Option<Granularity>,
    #[serde(default)]
    pub offending_message: Option<MsgId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum AppealAction {
    File { statement: String },
    Resolve { affirm: bool, #[serde(default)] rationale: String },
    Close,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppendSegment {
    #[serde(default)]
    pub seg_id: Option<SegId>,
    #[serde(default)]
    pub captured_at: Option<u64>,
    #[serde(with = "b64_serde")]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportResult {
    pub import_id: String,
    pub verification: VerificationReport,
    pub items: Vec<RenderedItem>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Standing {
    Reporter,
    Assigned,
    /// Another moderator holding a grant, or a platform moderator.
    Observer,
    Reported,
    Bystander,
    Outsider,
}

fn expect_op(report: &Report, op: LifecycleOp, name: &'static str) -> Result<ReportState, EngineError> {
    next_state(report.state, op).ok_or(EngineError::InvalidState {
        state: report.state,
        op: name,
    })
}

fn set_state(report: &mut Report, to: ReportState, at: u64, audit_seq: u64) {
    if report.state != to {
        report.history.push(super::StateChange {
            from: report.state,
            to,
            at,
            audit_seq,
        });
        report.state = to;
    }
}

fn live_grants(report: &Report) -> usize {
    report.grants.iter().filter(|g| !g.revoked).count()
}

fn join<T: std::fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

fn level_summary<'a>(levels: impl IntoIterator<Item = (&'a MsgId, &'a VisibilityLevel)>) -> String {
    join(levels.into_iter().map(|(m, l)| format!("{m}:{}", l.kind().as_str())))
}

fn parse_report_id(id: &str) -> Result<ReportId, EngineError> {
    ReportId::new(id).map_err(|_| EngineError::not_found("report", id))
}

impl Engine {
    fn standing(&self, r: &Report, caller: &AccountId) -> Standing {
        let dir = &self.state.directory;
        if caller == &r.reporter {
            Standing::Reporter
        } else if r.is_assigned(caller) {
            Standing::Assigned
        } else if dir.is_moderator(caller)
            && (r.grants.is_covered(caller) || dir.has_role(caller, Role::PlatformModerator))
        {
            Standing::Observer
        } else if caller == &r.reported {
            Standing::Reported
        } else if r
            .invites
            .iter()
            .any(|i| &i.bystander == caller && i.contacted_at.is_some())
        {
            Standing::Bystander
        } else {
            Standing::Outsider
        }
    }

    /// Looks up a report, applies any lapse due at `now`, and checks the
    /// caller's standing. Failures are audited.
    fn open(
        &mut self,
        id: &str,
        caller: &AccountId,
        op: &str,
        now: u64,
        allowed: &[Standing],
    ) -> Result<(ReportId, Standing), EngineError> {
        self.profile(caller)?;
        let rid = parse_report_id(id)?;
        if !self.state.reports.contains_key(&rid) {
            return Err(EngineError::not_found("report", id));
        }
        self.settle(&rid, now);
        let r = &self.state.reports[&rid];
        let standing = self.standing(r, caller);
        if !allowed.contains(&standing) {
            let object = r.object();
            return Err(self.deny(caller, op, &object, now, &format!("{op} on report {rid}")));
        }
        Ok((rid, standing))
    }

    fn rep(&self, rid: &ReportId) -> &Report {
        &self.state.reports[rid]
    }

    fn rep_mut(&mut self, rid: &ReportId) -> &mut Report {
        self.state.reports.get_mut(rid).expect("report exists")
    }

    /// Closes a notified report whose appeal window has passed.
    fn settle(&mut self, rid: &ReportId, now: u64) {
        let r = &self.state.reports[rid];
        let due = r.state == ReportState::Notified
            && r.notification.as_ref().is_some_and(|n| now > n.appeal_deadline);
        if !due {
            return;
        }
        let punish = r.decision.as_ref().is_some_and(|d| d.outcome == Outcome::Uphold && d.punishment != Punishment::None)
            && r.punishment_applied_at.is_none();
        let revoked = live_grants(r);
        let mut object = format!("{};reason=appeal-window-lapsed", r.object());
        if punish {
            object.push_str(";punishment-applied");
        }
        object.push_str(&format!(";grants-revoked={revoked}"));
        let at = now;
        let seq = self.record(PLATFORM_ACTOR, "report.close", &object, at);
        if punish {
            self.apply_punishment(rid, at);
        }
        let r = self.rep_mut(rid);
        r.grants.revoke_all();
        r.closed_by_lapse = true;
        set_state(r, ReportState::Closed, at, seq);
    }

    fn apply_punishment(&mut self, rid: &ReportId, at: u64) {
        let r = &self.state.reports[rid];
        let Some(d) = &r.decision else { return };
        if d.punishment == Punishment::None || r.punishment_applied_at.is_some() {
            return;
        }
        let sanction = Sanction {
            report_id: rid.clone(),
            account: r.reported.clone(),
            punishment: d.punishment,
            applied_at: at,
            lifted_at: None,
        };
        self.state.sanctions.push(sanction);
        self.rep_mut(rid).punishment_applied_at = Some(at);
    }

    fn advance_buffer(&mut self, conv: &ConvId, now: u64) -> Result<(), EngineError> {
        let purged = self.state.buffers.advance(conv, now)?;
        self.record_purges(conv, purged.iter().map(|t| &t.seg_id), now);
        Ok(())
    }

    fn record_purges<'a>(&mut self, conv: &ConvId, ids: impl IntoIterator<Item = &'a SegId>, now: u64) {
        for id in ids {
            let object = format!("conversation:{conv};segment={id}");
            let seq = self.record(PLATFORM_ACTOR, "segment.purge", &object, now);
            self.state.purges.insert(id.clone(), seq);
        }
    }

    fn resolve_scope(&self, spec: &ScopeSpec) -> Result<ScopePolicy, EngineError> {
        match spec {
            ScopeSpec::Policy(p) => Ok(p.clone()),
            ScopeSpec::Preset { preset } => self
                .settings
                .presets
                .get(preset)
                .cloned()
                .ok_or_else(|| EngineError::Invalid(format!("unknown scope preset {preset:?}"))),
        }
    }

    /// The conversations a scope ranges over. Every one must exist and
    /// include the reporter.
    fn scoped_conversations(
        &mut self,
        caller: &AccountId,
        reported: &AccountId,
        policy: &ScopePolicy,
        requested: &[ConvId],
        object: &str,
        now: u64,
    ) -> Result<Vec<ConvId>, EngineError> {
        let list: Vec<ConvId> = if requested.is_empty() && matches!(policy, ScopePolicy::CrossConversation { .. }) {
            self.state
                .conversations
                .values()
                .filter(|c| c.has_participant(caller) && c.has_participant(reported))
                .map(|c| c.conv_id.clone())
                .collect()
        } else {
            let mut seen = Vec::new();
            for c in requested {
                if !seen.contains(c) {
                    seen.push(c.clone());
                }
            }
            seen
        };
        for c in &list {
            let conv = self
                .state
                .conversations
                .get(c)
                .ok_or_else(|| EngineError::not_found("conversation", c))?;
            if !conv.has_participant(caller) {
                return Err(self.deny(caller, "scope", object, now, &format!("not a participant of {c}")));
            }
        }
        Ok(list)
    }

    fn candidates(&self, policy: &ScopePolicy, convs: &[ConvId], parties: &[AccountId]) -> Vec<MsgId> {
        let input: Vec<_> = convs
            .iter()
            .filter_map(|c| {
                let conv = self.state.conversations.get(c)?.clone();
                let msgs = self.state.messages.get(c).cloned().unwrap_or_default();
                Some((conv, msgs))
            })
            .collect();
        apply_scope(policy, &input, parties).into_iter().map(|m| m.msg_id).collect()
    }

    /// Resolves requested levels for `targets`, which must all be candidates.
    fn resolve_levels(
        &self,
        candidates: &[MsgId],
        requested: &BTreeMap<MsgId, LevelSpec>,
    ) -> Result<BTreeMap<MsgId, VisibilityLevel>, EngineError> {
        let mut out = BTreeMap::new();
        for (id, spec) in requested {
            if !candidates.contains(id) {
                return Err(EngineError::InvalidTarget(format!("{id} is not in the report's scope")));
            }
            let m = self.state.message(id).ok_or_else(|| EngineError::not_found("message", id))?;
            out.insert(id.clone(), self.minimizer.resolve(m, spec)?);
        }
        Ok(out)
    }

    /// Checks segment ownership, purges what has expired, and copies the
    /// named segments out of their buffers.
    fn pin_segments(
        &mut self,
        caller: &AccountId,
        ids: &[SegId],
        object: &str,
        now: u64,
    ) -> Result<Vec<EphemeralSegment>, EngineError> {
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let mut convs: Vec<ConvId> = Vec::new();
        for id in ids {
            let conv = self
                .state
                .buffers
                .conversation_of(id)
                .cloned()
                .ok_or_else(|| EngineError::not_found("segment", id))?;
            let member = self.state.conversations.get(&conv).is_some_and(|c| c.has_participant(caller));
            if !member {
                return Err(self.deny(caller, "attach", object, now, &format!("not a participant of {conv}")));
            }
            if !convs.contains(&conv) {
                convs.push(conv);
            }
        }
        for conv in &convs {
            self.advance_buffer(conv, now)?;
        }
        Ok(self.state.buffers.attach(ids, now)?)
    }

    fn assign_pseudonyms(&self, table: &mut PseudonymTable, convs: &[ConvId]) {
        for c in convs {
            if let Some(conv) = self.state.conversations.get(c) {
                for p in &conv.participants {
                    if table.of(p).is_none() {
                        table.assign(p, PartyRole::Bystander);
                    }
                }
            }
        }
    }

    fn store_media(&mut self, inputs: &[FreeMediaInput], now: u64) -> Result<Vec<FreeMedia>, EngineError> {
        let mut out = Vec::new();
        for f in inputs {
            if f.description.trim().is_empty() {
                return Err(EngineError::Invalid("free media needs a description".into()));
            }
            self.state.counters.media += 1;
            out.push(FreeMedia {
                item_id: format!("FM-{}", self.state.counters.media),
                description: f.description.clone(),
                media_ref: f.media_ref.clone(),
                claimed_sender: f.claimed_sender.clone(),
                submitted_at: now,
            });
        }
        Ok(out)
    }

    pub fn file_report(&mut self, caller: &AccountId, req: FileReport, now: u64) -> Result<ReportView, EngineError> {
        self.profile(caller)?;
        if self.state.directory.profile(&req.reported).is_none() {
            return Err(EngineError::not_found("account", &req.reported));
        }
        if &req.reported == caller {
            return Err(EngineError::Invalid("cannot report yourself".into()));
        }
        if req.reason.trim().is_empty() {
            return Err(EngineError::Invalid("reason must not be empty".into()));
        }
        let policy = self.resolve_scope(&req.scope)?;
        let object = "report:new".to_owned();
        let mut convs = self.scoped_conversations(caller, &req.reported, &policy, &req.conversations, &object, now)?;
        let candidates = self.candidates(&policy, &convs, &[caller.clone(), req.reported.clone()]);
        let mut specs: BTreeMap<MsgId, LevelSpec> = candidates.iter().map(|c| (c.clone(), LevelSpec::Full)).collect();
        for (k, v) in &req.levels {
            if !candidates.contains(k) {
                return Err(EngineError::InvalidTarget(format!("{k} is not in the report's scope")));
            }
            specs.insert(k.clone(), v.clone());
        }
        let levels = self.resolve_levels(&candidates, &specs)?;
        if candidates.is_empty() && req.segments.is_empty() {
            return Err(EngineError::EmptyScope);
        }
        let segments = self.pin_segments(caller, &req.segments, &object, now)?;
        for s in &segments {
            if !convs.contains(&s.conversation_id) {
                convs.push(s.conversation_id.clone());
            }
        }
        let media = self.store_media(&req.free_media, now)?;

        let window = self.settings.flood_window_ms;
        let filings = self.state.filings.entry(caller.clone()).or_default();
        filings.retain(|t| now.saturating_sub(*t) < window && *t <= now);
        filings.push(now);
        let recent = filings.len();
        let signal = recent > self.settings.flood_threshold as usize;

        self.state.counters.report += 1;
        let rid = ReportId::new(format!("R-{}", self.state.counters.report)).expect("valid id");
        let mut pseudonyms = PseudonymTable::new(caller, &req.reported);
        self.assign_pseudonyms(&mut pseudonyms, &convs);

        let mut obj = format!("report:{rid};mode={}", serde_json::to_value(policy.mode()).expect("mode").as_str().unwrap_or(""));
        obj.push_str(&format!(";levels={}", level_summary(&levels)));
        if !segments.is_empty() {
            obj.push_str(&format!(";segments={}", join(segments.iter().map(|s| &s.seg_id))));
        }
        if !media.is_empty() {
            obj.push_str(&format!(";free_media={}", join(media.iter().map(|m| &m.item_id))));
        }
        let seq = self.record(caller.as_str(), "report.file", &obj, now);

        let level_log = levels
            .iter()
            .map(|(m, l)| LevelChange {
                msg_id: m.clone(),
                from: None,
                to: l.clone(),
                cause: LevelCause::Initial { audit_seq: seq },
                at: now,
            })
            .collect();
        let mut report = Report {
            id: rid.clone(),
            reporter: caller.clone(),
            reported: req.reported.clone(),
            reason: req.reason.trim().to_owned(),
            filed_at: now,
            state: ReportState::Filed,
            history: Vec::new(),
            scope: policy,
            conversations: convs,
            identifier_policy: self.settings.identifier_policy,
            pseudonyms,
            candidates,
            levels,
            level_log,
            segments: segments
                .into_iter()
                .map(|segment| PinnedSegment {
                    segment,
                    attached_at: now,
                    audit_seq: seq,
                })
                .collect(),
            free_media: media,
            assignment: None,
            requests: Vec::new(),
            invites: Vec::new(),
            findings: Vec::new(),
            annotations: Vec::new(),
            flags: BTreeSet::new(),
            grants: Default::default(),
            decision: None,
            decided_at: None,
            punishment_applied_at: None,
            notification: None,
            appeal: None,
            termination: None,
            closed_by_lapse: false,
            filer_rate_signal: signal,
        };
        set_state(&mut report, ReportState::Assembling, now, seq);
        self.state.reports.insert(rid.clone(), report);
        if signal {
            let obj = format!("report:{rid};window-count={recent}");
            self.record(PLATFORM_ACTOR, "filer.rate-signal", &obj, now);
        }
        Ok(self.report_view(self.rep(&rid), caller, ViewerKind::Reporter))
    }

    pub fn get_report(&mut self, caller: &AccountId, id: &str, now: u64) -> Result<ReportView, EngineError> {
        let (rid, standing) = self.open(
            id,
            caller,
            "get",
            now,
            &[
                Standing::Reporter,
                Standing::Assigned,
                Standing::Observer,
                Standing::Reported,
                Standing::Bystander,
            ],
        )?;
        let r = self.rep(&rid);
        let viewer = match standing {
            Standing::Reporter => ViewerKind::Reporter,
            Standing::Assigned | Standing::Observer => ViewerKind::Moderator,
            Standing::Reported if r.notification.as_ref().is_some_and(|n| n.notice.is_some()) => ViewerKind::Reported,
            Standing::Bystander => ViewerKind::Bystander,
            _ => {
                let object = r.object();
                return Err(self.deny(caller, "get", &object, now, "report not visible"));
            }
        };
        Ok(self.report_view(self.rep(&rid), caller, viewer))
    }

    pub fn rescope(&mut self, caller: &AccountId, id: &str, req: Rescope, now: u64) -> Result<ReportView, EngineError> {
        let (rid, _) = self.open(id, caller, "scope", now, &[Standing::Reporter])?;
        let r = self.rep(&rid);
        expect_op(r, LifecycleOp::ComposeEvidence, "scope")?;
        let policy = self.resolve_scope(&req.scope)?;
        let object = r.object();
        let reported = r.reported.clone();
        let requested = req.conversations.clone().unwrap_or_else(|| {
            r.conversations
                .iter()
                .filter(|c| self.state.buffers.buffer(c).is_none())
                .cloned()
                .collect()
        });
        let mut convs = self.scoped_conversations(caller, &reported, &policy, &requested, &object, now)?;
        let candidates = self.candidates(&policy, &convs, &[caller.clone(), reported]);
        let r = self.rep(&rid);
        if candidates.is_empty() && r.segments.is_empty() {
            return Err(EngineError::EmptyScope);
        }
        for p in &r.segments {
            if !convs.contains(&p.segment.conversation_id) {
                convs.push(p.segment.conversation_id.clone());
            }
        }
        let added: BTreeMap<MsgId, LevelSpec> = candidates
            .iter()
            .filter(|c| !r.levels.contains_key(*c))
            .map(|c| (c.clone(), LevelSpec::Full))
            .collect();
        let added = self.resolve_levels(&candidates, &added)?;
        let dropped: Vec<MsgId> = r.levels.keys().filter(|k| !candidates.contains(k)).cloned().collect();
        let mode = serde_json::to_value(policy.mode()).expect("mode");
        let mut obj = format!("{object};mode={}", mode.as_str().unwrap_or(""));
        obj.push_str(&format!(";levels={}", level_summary(&added)));
        if !dropped.is_empty() {
            obj.push_str(&format!(";dropped={}", join(&dropped)));
        }
        let seq = self.record(caller.as_str(), "report.scope", &obj, now);
        let mut pseudonyms = self.rep(&rid).pseudonyms.clone();
        self.assign_pseudonyms(&mut pseudonyms, &convs);
        let r = self.rep_mut(&rid);
        r.pseudonyms = pseudonyms;
        r.scope = policy;
        r.conversations = convs;
        r.candidates = candidates;
        for d in &dropped {
            r.levels.remove(d);
        }
        for (m, l) in added {
            r.level_log.push(LevelChange {
                msg_id: m.clone(),
                from: None,
                to: l.clone(),
                cause: LevelCause::Initial { audit_seq: seq },
                at: now,
            });
            r.levels.insert(m, l);
        }
        Ok(self.report_view(self.rep(&rid), caller, ViewerKind::Reporter))
    }

    pub fn compose_views(&mut self, caller: &AccountId, id: &str, req: ComposeViews, now: u64) -> Result<ReportView, EngineError> {
        let (rid, _) = self.open(id, caller, "views", now, &[Standing::Reporter])?;
        let r = self.rep(&rid);
        expect_op(r, LifecycleOp::ComposeEvidence, "views")?;
        let resolved = self.resolve_levels(&r.candidates, &req.levels)?;
        let changed: BTreeMap<MsgId, VisibilityLevel> = resolved
            .into_iter()
            .filter(|(m, l)| r.levels.get(m) != Some(l))
            .collect();
        let pinned: Vec<SegId> = req
            .segments
            .iter()
            .filter(|s| !r.segments.iter().any(|p| &p.segment.seg_id == *s))
            .cloned()
            .collect();
        let object = r.object();
        for f in &req.free_media {
            if f.description.trim().is_empty() {
                return Err(EngineError::Invalid("free media needs a description".into()));
            }
        }
        let segments = self.pin_segments(caller, &pinned, &object, now)?;
        let media = self.store_media(&req.free_media, now)?;
        let mut obj = format!("{object};levels={}", level_summary(&changed));
        if !segments.is_empty() {
            obj.push_str(&format!(";segments={}", join(segments.iter().map(|s| &s.seg_id))));
        }
        if !media.is_empty() {
            obj.push_str(&format!(";free_media={}", join(media.iter().map(|m| &m.item_id))));
        }
        let seq = self.record(caller.as_str(), "report.views", &obj, now);
        let mut pseudonyms = self.rep(&rid).pseudonyms.clone();
        let seg_convs: Vec<ConvId> = segments.iter().map(|s| s.conversation_id.clone()).collect();
        self.assign_pseudonyms(&mut pseudonyms, &seg_convs);
        let r = self.rep_mut(&rid);
        r.pseudonyms = pseudonyms;
        for c in seg_convs {
            if !r.conversations.contains(&c) {
                r.conversations.push(c);
            }
        }
        for (m, l) in changed {
            r.level_log.push(LevelChange {
                msg_id: m.clone(),
                from: r.levels.get(&m).cloned(),
                to: l.clone(),
                cause: LevelCause::Initial { audit_seq: seq },
                at: now,
            });
            r.levels.insert(m, l);
        }
        r.segments.extend(segments.into_iter().map(|segment| PinnedSegment {
            segment,
            attached_at: now,
            audit_seq: seq,
        }));
        r.free_media.extend(media);
        Ok(self.report_view(self.rep(&rid), caller, ViewerKind::Reporter))
    }

    pub fn create_grant(&mut self, caller: &AccountId, id: &str, req: GrantRequest, now: u64) -> Result<super::GrantView, EngineError> {
        let (rid, _) = self.open(id, caller, "grant", now, &[Standing::Reporter])?;
        let r = self.rep(&rid);
        if r.state.is_terminal() {
            return Err(EngineError::InvalidState {
                state: r.state,
                op: "grant",
            });
        }
        let mut grantees = BTreeSet::new();
        for g in &req.grantees {
            let who = self
                .state
                .directory
                .resolve_moderator(g)
                .ok_or_else(|| EngineError::from(AccessError::NotModerator(g.clone())))?;
            grantees.insert(who);
        }
        let grant_id = format!("G-{}", self.state.counters.grant + 1);
        let grant = AccessGrant::new(grant_id.clone(), rid.clone(), grantees, req.expires_at, req.view_limit)?;
        let handles = join(grant.grantees.iter().map(|a| self.handle_of(a)));
        let views = req.view_limit.map_or_else(|| "unlimited".to_owned(), |n| n.to_string());
        let expires = req.expires_at.map_or_else(|| "never".to_owned(), |e| e.to_string());
        let obj = format!("{};grant={grant_id};grantees={handles};views={views};expires={expires}", r.object());
        self.record(caller.as_str(), "grant.create", &obj, now);
        self.state.counters.grant += 1;
        self.rep_mut(&rid).grants.push(grant);
        let r = self.rep(&rid);
        let view = self.report_view(r, caller, ViewerKind::Reporter);
        Ok(view
            .grants
            .into_iter()
            .find(|g| g.grant_id == grant_id)
            .expect("grant just added"))
    }

    /// Renders the evidence for `caller`. Moderators spend one view of a live
    /// grant; the reporter previews without a grant.
    pub fn fetch_evidence(&mut self, caller: &AccountId, id: &str, now: u64) -> Result<EvidenceView, EngineError> {
        self.gated_render(caller, id, now, "evidence.fetch").map(|(v, _)| v)
    }

    pub fn export_bundle(&mut self, caller: &AccountId, id: &str, now: u64) -> Result<ExportFile, EngineError> {
        let (view, _) = self.gated_render(caller, id, now, "bundle.export")?;
        Ok(ExportFile {
            format: EXPORT_FORMAT.to_owned(),
            report_id: view.report_id,
            items: view.items,
            token: view.token,
        })
    }

    fn gated_render(&mut self, caller: &AccountId, id: &str, now: u64, action: &str) -> Result<(EvidenceView, Standing), EngineError> {
        let op = if action == "bundle.export" { "export" } else { "evidence" };
        let (rid, standing) = self.open(id, caller, op, now, &[Standing::Reporter, Standing::Assigned, Standing::Observer])?;
        let r = self.rep(&rid);
        let object = r.object();
        if standing == Standing::Reporter {
            let view = self.evidence_view(r, caller, now)?;
            if action == "bundle.export" {
                self.record(caller.as_str(), action, &format!("{object};by=reporter"), now);
            }
            return Ok((view, standing));
        }
        let grant_id = match r.grants.select(caller, now) {
            Ok(g) => g,
            Err(d) => {
                self.record(caller.as_str(), "fetch.denied", &format!("{object};op={op};reason={}", d.code()), now);
                return Err(EngineError::Denied(d));
            }
        };
        let mut view = self.evidence_view(r, caller, now)?;
        let r = self.rep_mut(&rid);
        r.grants.consume(&grant_id);
        let remaining = r.grants.get(&grant_id).map(|g| g.remaining_views);
        let left = match remaining {
            Some(crate::access::ViewLimit::Remaining(n)) => n.to_string(),
            _ => "unlimited".to_owned(),
        };
        self.record(caller.as_str(), action, &format!("{object};grant={grant_id};remaining={left}"), now);
        view.grant_id = Some(grant_id);
        view.remaining_views = remaining;
        Ok((view, standing))
    }

    /// Verifies a file produced by [`Engine::export_bundle`], possibly on
    /// another instance holding the same key.
    pub fn import_bundle(&mut self, caller: &AccountId, file: &Value, now: u64) -> Result<ImportResult, EngineError> {
        self.profile(caller)?;
        let parsed = Self::parse_export(file);
        let outcome = parsed.and_then(|(f, items)| {
            let report = verify_forwarded(&items, &f.token, &self.keys)?;
            if !report.mac_valid || f.token.report_id != f.report_id {
                return Err(EngineError::MacInvalid);
            }
            Ok((f, items, report))
        });
        match outcome {
            Ok((f, items, verification)) => {
                self.state.counters.import += 1;
                let import_id = format!("I-{}", self.state.counters.import);
                let obj = format!("import:{import_id};source={};items={}", f.report_id, items.len());
                self.record(caller.as_str(), "bundle.import", &obj, now);
                self.state.imports.push(ImportRecord {
                    import_id: import_id.clone(),
                    source_report: f.report_id.clone(),
                    key_id: f.token.key_id.clone(),
                    items: items.len(),
                    importer: caller.clone(),
                    at: now,
                });
                Ok(ImportResult {
                    import_id,
                    verification,
                    items,
                })
            }
            Err(e) => {
                self.record(caller.as_str(), "bundle.import-rejected", &format!("import;reason={}", e.code()), now);
                Err(e)
            }
        }
    }

    fn parse_export(file: &Value) -> Result<(ExportFile, Vec<RenderedItem>), EngineError> {
        let items_value = file.get("items").ok_or(EngineError::MacInvalid)?;
        let items = parse_bundle_strict(items_value).map_err(|_| EngineError::MacInvalid)?;
        let f: ExportFile = serde_json::from_value(file.clone()).map_err(|_| EngineError::MacInvalid)?;
        if f.format != EXPORT_FORMAT || f.items != items {
            return Err(EngineError::MacInvalid);
        }
        Ok((f, items))
    }

    pub fn open_request(&mut self, caller: &AccountId, id: &str, req: OpenRequest, now: u64) -> Result<super::RequestView, EngineError> {
        let (rid, _) = self.open(id, caller, "disclosure-request", now, &[Standing::Assigned])?;
        let r = self.rep(&rid);
        expect_op(r, LifecycleOp::OpenRequest, "open_request")?;
        let justification = check_justification(&req.justification)?;
        if req.targets.is_empty() {
            return Err(EngineError::InvalidTarget("request names no targets".into()));
        }
        let spec = req.level.clone().unwrap_or(LevelSpec::Full);
        let mut seen = BTreeSet::new();
        for t in &req.targets {
            if !seen.insert(t) {
                return Err(EngineError::InvalidTarget(format!("{t} listed twice")));
            }
            if !r.candidates.contains(t) {
                return Err(EngineError::InvalidTarget(format!("{t} is not in the report's scope")));
            }
            let m = self.state.message(t).ok_or_else(|| EngineError::not_found("message", t))?;
            let next = self.minimizer.resolve(m, &spec)?;
            let current = r.levels.get(t).cloned().unwrap_or(VisibilityLevel::Removed);
            if next.le(&current) {
                return Err(EngineError::InvalidTarget(format!(
                    "{t} is already at {} or above the requested level",
                    current.kind().as_str()
                )));
            }
        }
        let request_id = format!("DR-{}", self.state.counters.request + 1);
        let obj = format!(
            "{};request={request_id};criticality={};targets={};level={}",
            r.object(),
            serde_json::to_value(req.criticality).expect("enum").as_str().unwrap_or(""),
            join(&req.targets),
            level_spec_kind(&spec),
        );
        self.record(caller.as_str(), "request.open", &obj, now);
        self.state.counters.request += 1;
        let consequence_note = req
            .consequence_note
            .filter(|n| !n.trim().is_empty())
            .unwrap_or_else(|| req.criticality.default_consequence().to_owned());
        let request = DisclosureRequest {
            request_id: request_id.clone(),
            report_id: rid.clone(),
            requester: caller.clone(),
            targets: req.targets,
            level: spec,
            justification,
            criticality: req.criticality,
            consequence_note,
            state: RequestState::Pending,
            opened_at: now,
            resolved_at: None,
        };
        self.rep_mut(&rid).requests.push(request);
        let view = self.report_view(self.rep(&rid), caller, ViewerKind::Moderator);
        Ok(view
            .requests
            .into_iter()
            .find(|q| q.request_id == request_id)
            .expect("request just added"))
    }

    pub fn respond_request(
        &mut self,
        caller: &AccountId,
        request_id: &str,
        decision: ResponseDecision,
        now: u64,
    ) -> Result<ReportView, EngineError> {
        let (rid, idx) = self
            .state
            .find_request(request_id)
            .map(|(r, i)| (r.clone(), i))
            .ok_or_else(|| EngineError::not_found("disclosure request", request_id))?;
        self.open(rid.as_str(), caller, "respond", now, &[Standing::Reporter])?;
        let r = self.rep(&rid);
        let q = r.requests[idx].clone();
        if !q.is_pending() {
            return Err(EngineError::InvalidState {
                state: r.state,
                op: "respond_request",
            });
        }
        expect_op(r, LifecycleOp::RespondRequest, "respond_request")?;
        let object = r.object();
        match decision {
            ResponseDecision::Grant => {
                let mut upgrades = BTreeMap::new();
                for t in &q.targets {
                    let m = self.state.message(t).ok_or_else(|| EngineError::not_found("message", t))?;
                    upgrades.insert(t.clone(), self.minimizer.resolve(m, &q.level)?);
                }
                let obj = format!("{object};request={};levels={}", q.request_id, level_summary(&upgrades));
                let seq = self.record(caller.as_str(), "request.grant", &obj, now);
                let r = self.rep_mut(&rid);
                for (m, l) in upgrades {
                    r.level_log.push(LevelChange {
                        msg_id: m.clone(),
                        from: r.levels.get(&m).cloned(),
                        to: l.clone(),
                        cause: LevelCause::Grant {
                            request_id: q.request_id.clone(),
                            audit_seq: seq,
                        },
                        at: now,
                    });
                    r.levels.insert(m, l);
                }
                let q = &mut r.requests[idx];
                q.state = RequestState::Granted;
                q.resolved_at = Some(now);
            }
            ResponseDecision::Deny => {
                let critical = q.criticality == Criticality::Critical;
                let mut obj = format!(
                    "{object};request={};criticality={}",
                    q.request_id,
                    if critical { "critical" } else { "informational" }
                );
                if critical {
                    obj.push_str(";flag=dismissible_for_nondisclosure");
                }
                self.record(caller.as_str(), "request.deny", &obj, now);
                let r = self.rep_mut(&rid);
                r.annotations.push(CredibilityAnnotation {
                    request_id: q.request_id.clone(),
                    note: format!(
                        "The reporter declined {} disclosure request {} for {}.",
                        if critical { "critical" } else { "informational" },
                        q.request_id,
                        join(&q.targets)
                    ),
                    at: now,
                });
                if critical {
                    r.flags.insert(ReportFlag::DismissibleForNondisclosure);
                }
                let q = &mut r.requests[idx];
                q.state = RequestState::Denied;
                q.resolved_at = Some(now);
            }
        }
        Ok(self.report_view(self.rep(&rid), caller, ViewerKind::Reporter))
    }

    pub fn invite_bystander(&mut self, caller: &AccountId, id: &str, req: InviteRequest, now: u64) -> Result<super::InviteView, EngineError> {
        let (rid, _) = self.open(id, caller, "bystander-invite", now, &[Standing::Assigned])?;
        let r = self.rep(&rid);
        expect_op(r, LifecycleOp::InviteBystander, "invite_bystander")?;
        let question = req.question.trim();
        if question.is_empty() {
            return Err(EngineError::EmptyJustification);
        }
        let bystander = match r.pseudonyms.account(&req.bystander) {
            Some(a) => a.clone(),
            None => AccountId::new(req.bystander.clone())
                .map_err(|_| EngineError::Invalid(format!("unknown bystander {:?}", req.bystander)))?,
        };
        if bystander == r.reporter || bystander == r.reported {
            return Err(EngineError::Invalid("the reporter and the reported party cannot be bystanders".into()));
        }
        let participant = r
            .conversations
            .iter()
            .filter_map(|c| self.state.conversations.get(c))
            .any(|c| c.has_participant(&bystander));
        if !participant {
            return Err(EngineError::Invalid("bystander is not a participant of a scoped conversation".into()));
        }
        let invite_id = format!("BI-{}", self.state.counters.invite + 1);
        let label = r.pseudonyms.of(&bystander).map_or("unlisted", |p| p.label.as_str());
        let obj = format!(
            "{};invite={invite_id};bystander={label};involvement={}",
            r.object(),
            req.involvement.as_str()
        );
        self.record(caller.as_str(), "invite.create", &obj, now);
        self.state.counters.invite += 1;
        let invite = BystanderInvite {
            invite_id: invite_id.clone(),
            report_id: rid.clone(),
            bystander,
            requester: caller.clone(),
            involvement: req.involvement,
            question: question.to_owned(),
            consent: Consent::AwaitingReporter,
            created_at: now,
            contacted_at: None,
        };
        self.rep_mut(&rid).invites.push(invite);
        let r = self.rep(&rid);
        let view = self.report_view(r, caller, ViewerKind::Moderator);
        Ok(view
            .invites
            .into_iter()
            .find(|i| i.invite_id == invite_id)
            .expect("invite just added"))
    }

    pub fn consent_invite(&mut self, caller: &AccountId, invite_id: &str, approve: bool, now: u64) -> Result<super::InviteView, EngineError> {
        let (rid, idx) = self
            .state
            .find_invite(invite_id)
            .map(|(r, i)| (r.clone(), i))
            .ok_or_else(|| EngineError::not_found("bystander invite", invite_id))?;
        self.open(rid.as_str(), caller, "consent", now, &[Standing::Reporter])?;
        let r = self.rep(&rid);
        if r.invites[idx].consent != Consent::AwaitingReporter {
            return Err(EngineError::InvalidState {
                state: r.state,
                op: "consent_invite",
            });
        }
        expect_op(r, LifecycleOp::ConsentInvite, "consent_invite")?;
        let obj = format!("{};invite={invite_id}", r.object());
        if approve {
            self.record(caller.as_str(), "invite.approve", &obj, now);
            self.rep_mut(&rid).invites[idx].consent = Consent::ReporterApproved;
            self.record(PLATFORM_ACTOR, "bystander.contact", &obj, now);
            self.rep_mut(&rid).invites[idx].contacted_at = Some(now);
        } else {
            self.record(caller.as_str(), "invite.decline", &obj, now);
            self.rep_mut(&rid).invites[idx].consent = Consent::ReporterDeclined;
        }
        let r = self.rep(&rid);
        let view = self.report_view(r, caller, ViewerKind::Reporter);
        Ok(view
            .invites
            .into_iter()
            .find(|i| i.invite_id == invite_id)
            .expect("invite exists"))
    }

    pub fn submit_finding(&mut self, caller: &AccountId, invite_id: &str, body: FindingBody, now: u64) -> Result<super::FindingView, EngineError> {
        let (rid, idx) = self
            .state
            .find_invite(invite_id)
            .map(|(r, i)| (r.clone(), i))
            .ok_or_else(|| EngineError::not_found("bystander invite", invite_id))?;
        self.profile(caller)?;
        self.settle(&rid, now);
        let r = self.rep(&rid);
        let invite = r.invites[idx].clone();
        let object = r.object();
        if invite.bystander != *caller {
            return Err(self.deny(caller, "finding", &object, now, "not the invited bystander"));
        }
        if invite.consent != Consent::ReporterApproved || invite.contacted_at.is_none() {
            return Err(self.deny(caller, "finding", &object, now, "invite not approved by the reporter"));
        }
        let r = self.rep(&rid);
        expect_op(r, LifecycleOp::SubmitFinding, "submit_finding")?;
        if r.findings.iter().any(|f| f.invite_id == invite_id) {
            return Err(EngineError::Conflict(format!("finding for {invite_id} already submitted")));
        }
        body.validate(invite.involvement)?;
        match &body {
            FindingBody::YesNo { .. } => {}
            FindingBody::Flag { flags } => {
                for m in flags {
                    if !r.candidates.contains(m) {
                        return Err(EngineError::InvalidTarget(format!("{m} is not in the report's scope")));
                    }
                }
            }
            FindingBody::Disclose { disclosures } => {
                for d in disclosures {
                    let held = self.state.message(&d.msg_id).is_some_and(|m| {
                        r.conversations.contains(&m.conversation_id)
                            && self
                                .state
                                .conversations
                                .get(&m.conversation_id)
                                .is_some_and(|c| c.has_participant(caller))
                    });
                    if !held {
                        return Err(EngineError::InvalidTarget(format!(
                            "{} is not a message of a scoped conversation you take part in",
                            d.msg_id
                        )));
                    }
                    if !d.forward && d.account.trim().is_empty() {
                        return Err(EngineError::Invalid(format!("disclosure of {} needs an account or forward", d.msg_id)));
                    }
                }
            }
        }
        let mode = match &body {
            FindingBody::YesNo { verdict } => format!("yes_no;verdict={verdict}"),
            FindingBody::Flag { flags } => format!("flag;msgs={}", join(flags)),
            FindingBody::Disclose { disclosures } => format!(
                "disclose;msgs={};forwarded={}",
                join(disclosures.iter().map(|d| &d.msg_id)),
                join(disclosures.iter().filter(|d| d.forward).map(|d| &d.msg_id))
            ),
        };
        let obj = format!("{object};invite={invite_id};mode={mode}");
        self.record(caller.as_str(), "finding.submit", &obj, now);
        self.rep_mut(&rid).findings.push(BystanderFinding {
            invite_id: invite_id.to_owned(),
            body,
            submitted_at: now,
        });
        let r = self.rep(&rid);
        let reveal = self.reveals(r, caller);
        let f = r.findings.last().expect("just pushed");
        Ok(super::FindingView {
            invite_id: f.invite_id.clone(),
            bystander: sender_ref(r, caller, reveal),
            mode: invite.involvement,
            verdict: match &f.body {
                FindingBody::YesNo { verdict } => Some(*verdict),
                _ => None,
            },
            flagged: match &f.body {
                FindingBody::Flag { flags } => flags.clone(),
                _ => Vec::new(),
            },
            disclosed: match &f.body {
                FindingBody::Disclose { disclosures } => disclosures.iter().map(|d| d.msg_id.clone()).collect(),
                _ => Vec::new(),
            },
            submitted_at: now,
        })
    }

    pub fn assign(&mut self, caller: &AccountId, id: &str, req: AssignmentRequest, now: u64) -> Result<ReportView, EngineError> {
        let (rid, _) = self.open(id, caller, "assign", now, &[Standing::Reporter])?;
        let r = self.rep(&rid);
        expect_op(r, LifecycleOp::Assign, "assign")?;
        let dir = &self.state.directory;
        let resolve = |name: &str| {
            dir.resolve_moderator(name)
                .ok_or_else(|| EngineError::Invalid(format!("unknown moderator {name:?}")))
        };
        let preferred = req.preferred.iter().map(|p| resolve(p)).collect::<Result<Vec<_>, _>>()?;
        let mut excluded = Vec::new();
        for e in &req.excluded {
            if e.justification.trim().is_empty() {
                return Err(crate::lifecycle::LifecycleError::UnjustifiedExclusion(e.moderator.clone()).into());
            }
            excluded.push((resolve(&e.moderator)?, e.justification.trim().to_owned()));
        }
        let count = req.count.unwrap_or(self.settings.moderators_per_report);
        if count == 0 {
            return Err(EngineError::Invalid("count must be positive".into()));
        }
        let pool = dir.community_pool();
        let conflicted: BTreeSet<AccountId> = pool
            .iter()
            .filter(|m| {
                r.conversations
                    .iter()
                    .filter_map(|c| self.state.conversations.get(c))
                    .any(|c| c.has_participant(m))
            })
            .cloned()
            .collect();
        let excluded_set: BTreeSet<AccountId> = excluded.iter().map(|(a, _)| a.clone()).collect();
        let assigned = select_moderators(&pool, &conflicted, &preferred, &excluded_set, count)?;
        let handles = |xs: &mut dyn Iterator<Item = &AccountId>| join(xs.map(|a| self.handle_of(a)));
        let obj = format!(
            "{};assigned={};excluded={};conflicted={}",
            r.object(),
            handles(&mut assigned.iter()),
            handles(&mut excluded_set.iter()),
            handles(&mut conflicted.iter()),
        );
        let seq = self.record(caller.as_str(), "report.assign", &obj, now);
        let r = self.rep_mut(&rid);
        r.assignment = Some(AssignmentRecord {
            assigned,
            preferred,
            excluded,
            conflicted: conflicted.into_iter().collect(),
        });
        set_state(r, ReportState::UnderReview, now, seq);
        Ok(self.report_view(self.rep(&rid), caller, ViewerKind::Reporter))
    }

    pub fn decide(&mut self, caller: &AccountId, id: &str, decision: Decision, now: u64) -> Result<ReportView, EngineError> {
        let (rid, _) = self.open(id, caller, "decide", now, &[Standing::Assigned])?;
        let r = self.rep(&rid);
        expect_op(r, LifecycleOp::Decide, "decide")?;
        if r.has_pending_critical() {
            let pending = join(
                r.requests
                    .iter()
                    .filter(|q| q.is_pending() && q.criticality == Criticality::Critical)
                    .map(|q| &q.request_id),
            );
            return Err(EngineError::Blocked(format!("critical disclosure requests pending: {pending}")));
        }
        decision.validate()?;
        let withdrawn: Vec<String> = r
            .requests
            .iter()
            .filter(|q| q.is_pending())
            .map(|q| q.request_id.clone())
            .collect();
        let immediate = decision.applies_immediately();
        let mut obj = format!(
            "{};outcome={};punishment={};timing={}",
            r.object(),
            enum_str(&decision.outcome),
            enum_str(&decision.punishment),
            enum_str(&decision.punishment_timing)
        );
        if immediate {
            obj.push_str(";punishment-applied");
        }
        if !withdrawn.is_empty() {
            obj.push_str(&format!(";withdrawn={}", join(&withdrawn)));
        }
        if decision.outcome == Outcome::Dismiss && r.flags.contains(&ReportFlag::DismissibleForNondisclosure) {
            obj.push_str(";cites=dismissible_for_nondisclosure");
        }
        let seq = self.record(caller.as_str(), "report.decide", &obj, now);
        let r = self.rep_mut(&rid);
        for q in r.requests.iter_mut().filter(|q| q.is_pending()) {
            q.state = RequestState::Withdrawn;
            q.resolved_at = Some(now);
        }
        r.decision = Some(decision);
        r.decided_at = Some(now);
        set_state(r, ReportState::Decided, now, seq);
        if immediate {
            self.apply_punishment(&rid, now);
        }
        if let Some(p) = self.state.directory.moderators.get_mut(caller) {
            p.reports_reviewed += 1;
        }
        Ok(self.report_view(self.rep(&rid), caller, ViewerKind::Moderator))
    }

    pub fn notify(&mut self, caller: &AccountId, id: &str, req: NotifyRequest, now: u64) -> Result<ReportView, EngineError> {
        let (rid, _) = self.open(id, caller, "notify", now, &[Standing::Assigned])?;
        let r = self.rep(&rid);
        expect_op(r, LifecycleOp::Notify, "notify")?;
        let decision = r.decision.clone().expect("decided reports carry a decision");
        let object = r.object();
        let reporter_message = format!(
            "Your report {} was reviewed. Outcome: {}.",
            r.id,
            enum_str(&decision.outcome)
        );
        let (record, obj) = if decision.outcome == Outcome::Dismiss {
            (
                NotificationRecord {
                    notice: None,
                    reporter_message,
                    downgraded: false,
                    at: now,
                    appeal_deadline: now,
                },
                format!("{object};recipients=reporter"),
            )
        } else {
            let requested = req.granularity.unwrap_or(Granularity::Generic);
            let any_direct = r
                .conversations
                .iter()
                .filter_map(|c| self.state.conversations.get(c))
                .any(|c| c.kind == ConversationKind::Direct);
            let (granularity, downgraded) = effective_granularity(requested, any_direct);
            let deadline = now.saturating_add(self.settings.appeal_window_ms);
            let mut notice = Notice {
                granularity,
                policy: decision.policy_violated.clone(),
                conversation: None,
                excerpt: None,
                punishment: decision.punishment,
                appealable_until: Some(deadline),
            };
            let mut obj = format!("{object};recipients=reporter,reported;granularity={}", enum_str(&granularity));
            match granularity {
                Granularity::Generic => {}
                Granularity::PolicyOnly => {
                    notice.conversation = r.conversations.first().map(|c| c.to_string());
                }
                Granularity::MessageLevel => {
                    let msg = match &req.offending_message {
                        Some(m) => m.clone(),
                        None => r
                            .candidates
                            .iter()
                            .rev()
                            .find(|m| self.state.message(m).is_some_and(|x| x.sender == r.reported))
                            .cloned()
                            .ok_or_else(|| EngineError::Invalid("no message of the reported party in scope".into()))?,
                    };
                    let m = self
                        .state
                        .message(&msg)
                        .filter(|m| r.candidates.contains(&m.msg_id) && m.sender == r.reported)
                        .ok_or_else(|| EngineError::InvalidTarget(format!("{msg} is not a scoped message of the reported party")))?;
                    notice.excerpt = Some(m.body.chars().take(self.settings.excerpt_chars).collect());
                    obj.push_str(&format!(";excerpt={msg}"));
                }
            }
            if downgraded {
                obj.push_str(&format!(";downgraded-from={}", enum_str(&requested)));
            }
            (
                NotificationRecord {
                    notice: Some(notice),
                    reporter_message,
                    downgraded,
                    at: now,
                    appeal_deadline: deadline,
                },
                obj,
            )
        };
        let seq = self.record(caller.as_str(), "report.notify", &obj, now);
        let r = self.rep_mut(&rid);
        r.notification = Some(record);
        set_state(r, ReportState::Notified, now, seq);
        Ok(self.report_view(self.rep(&rid), caller, ViewerKind::Moderator))
    }

    pub fn appeal(&mut self, caller: &AccountId, id: &str, action: AppealAction, now: u64) -> Result<ReportView, EngineError> {
        match action {
            AppealAction::File { statement } => self.file_appeal(caller, id, statement, now),
            AppealAction::Resolve { affirm, rationale } => self.resolve_appeal(caller, id, affirm, rationale, now),
            AppealAction::Close => self.close_appeal(caller, id, now),
        }
    }

    fn file_appeal(&mut self, caller: &AccountId, id: &str, statement: String, now: u64) -> Result<ReportView, EngineError> {
        let (rid, _) = self.open(id, caller, "appeal", now, &[Standing::Reported])?;
        let r = self.rep(&rid);
        let dismissed = r.decision.as_ref().is_some_and(|d| d.outcome == Outcome::Dismiss);
        if r.notification.is_some() && dismissed {
            return Err(EngineError::NotAppealable);
        }
        if r.state == ReportState::Closed && r.closed_by_lapse {
            return Err(EngineError::AppealWindowClosed);
        }
        expect_op(r, LifecycleOp::Appeal, "appeal")?;
        if statement.trim().is_empty() {
            return Err(EngineError::Invalid("appeal statement must not be empty".into()));
        }
        let obj = r.object();
        let seq = self.record(caller.as_str(), "appeal.file", &obj, now);
        let r = self.rep_mut(&rid);
        r.appeal = Some(AppealRecord {
            statement: statement.trim().to_owned(),
            filed_at: now,
            resolution: None,
        });
        set_state(r, ReportState::AppealOpen, now, seq);
        Ok(self.report_view(self.rep(&rid), caller, ViewerKind::Reported))
    }

    fn resolve_appeal(&mut self, caller: &AccountId, id: &str, affirm: bool, rationale: String, now: u64) -> Result<ReportView, EngineError> {
        let (rid, _) = self.open(id, caller, "appeal", now, &[Standing::Assigned])?;
        let r = self.rep(&rid);
        let op = if affirm { LifecycleOp::AffirmAppeal } else { LifecycleOp::ReverseAppeal };
        let to = expect_op(r, op, "resolve_appeal")?;
        let revoked = live_grants(r);
        let pending_punishment = r.punishment_applied_at.is_none()
            && r.decision.as_ref().is_some_and(|d| d.punishment != Punishment::None);
        let lift = !affirm && r.punishment_applied_at.is_some();
        let mut obj = format!("{};{}", r.object(), if affirm { "affirmed" } else { "reversed" });
        if affirm && pending_punishment {
            obj.push_str(";punishment-applied");
        }
        if lift {
            obj.push_str(";punishment-lifted");
        }
        obj.push_str(&format!(";grants-revoked={revoked}"));
        let seq = self.record(caller.as_str(), "appeal.resolve", &obj, now);
        if affirm {
            self.apply_punishment(&rid, now);
        }
        if lift {
            for s in self.state.sanctions.iter_mut().filter(|s| s.report_id == rid && s.lifted_at.is_none()) {
                s.lifted_at = Some(now);
            }
        }
        let r = self.rep_mut(&rid);
        if let Some(a) = r.appeal.as_mut() {
            a.resolution = Some(AppealResolution {
                affirmed: affirm,
                rationale,
                at: now,
            });
        }
        r.grants.revoke_all();
        set_state(r, to, now, seq);
        Ok(self.report_view(self.rep(&rid), caller, ViewerKind::Moderator))
    }

    fn close_appeal(&mut self, caller: &AccountId, id: &str, now: u64) -> Result<ReportView, EngineError> {
        let (rid, _) = self.open(id, caller, "appeal", now, &[Standing::Assigned])?;
        let r = self.rep(&rid);
        let to = expect_op(r, LifecycleOp::Close, "close")?;
        let obj = format!("{};grants-revoked={}", r.object(), live_grants(r));
        let seq = self.record(caller.as_str(), "report.close", &obj, now);
        let r = self.rep_mut(&rid);
        r.grants.revoke_all();
        set_state(r, to, now, seq);
        Ok(self.report_view(self.rep(&rid), caller, ViewerKind::Moderator))
    }

    pub fn terminate(&mut self, caller: &AccountId, id: &str, reason: TerminationReason, now: u64) -> Result<ReportView, EngineError> {
        let (rid, standing) = self.open(id, caller, "terminate", now, &[Standing::Reporter, Standing::Assigned])?;
        let r = self.rep(&rid);
        if standing == Standing::Reporter && reason != TerminationReason::ReporterWithdrawn {
            let object = r.object();
            return Err(self.deny(caller, "terminate", &object, now, "reporters may only withdraw"));
        }
        let r = self.rep(&rid);
        let to = expect_op(r, LifecycleOp::Terminate, "terminate")?;
        let obj = format!("{};reason={};grants-revoked={}", r.object(), enum_str(&reason), live_grants(r));
        let seq = self.record(caller.as_str(), "report.terminate", &obj, now);
        let r = self.rep_mut(&rid);
        r.grants.revoke_all();
        r.termination = Some((reason, now));
        for q in r.requests.iter_mut().filter(|q| q.is_pending()) {
            q.state = RequestState::Withdrawn;
            q.resolved_at = Some(now);
        }
        set_state(r, to, now, seq);
        let viewer = if standing == Standing::Reporter { ViewerKind::Reporter } else { ViewerKind::Moderator };
        Ok(self.report_view(self.rep(&rid), caller, viewer))
    }

    /// The report's audit events. Actors appear as pseudonyms or moderator
    /// handles, following the caller's identifier visibility.
    pub fn audit_excerpt(&mut self, caller: &AccountId, id: &str, now: u64) -> Result<AuditExcerpt, EngineError> {
        let (rid, _) = self.open(id, caller, "audit", now, &[Standing::Reporter, Standing::Assigned, Standing::Observer])?;
        let r = self.rep(&rid);
        let reveal = self.reveals(r, caller);
        let exact = r.object();
        let prefix = format!("{exact};");
        let events = self
            .state
            .audit
            .events()
            .iter()
            .filter(|e| e.object == exact || e.object.starts_with(&prefix))
            .map(|e| AuditEntryView {
                seq: e.seq,
                actor: self.actor_label(r, &e.actor, reveal),
                action: e.action.clone(),
                object: e.object.clone(),
                at: e.at,
                hash: b64(&e.hash),
            })
            .collect();
        Ok(AuditExcerpt {
            report_id: rid.clone(),
            events,
            chain: self.state.audit.verify(),
            head: b64(&self.state.audit.head()),
        })
    }

    fn actor_label(&self, r: &Report, actor: &str, reveal: bool) -> String {
        if actor == PLATFORM_ACTOR {
            return actor.to_owned();
        }
        let Ok(a) = AccountId::new(actor) else {
            return actor.to_owned();
        };
        if let Some(h) = self.state.directory.handle(&a) {
            return h.to_owned();
        }
        if reveal {
            return actor.to_owned();
        }
        match r.pseudonyms.of(&a) {
            Some(p) => p.label.clone(),
            None => "[identifier withheld]".to_owned(),
        }
    }

    /// The whole log as NDJSON; platform moderators only.
    pub fn export_audit(&mut self, caller: &AccountId, now: u64) -> Result<String, EngineError> {
        self.profile(caller)?;
        if !self.state.directory.has_role(caller, Role::PlatformModerator) {
            return Err(self.deny(caller, "export", "audit", now, "platform moderators only"));
        }
        Ok(self.state.audit.to_ndjson())
    }

    pub fn resolve_identity(&mut self, caller: &AccountId, id: &str, pseudonym: &str, now: u64) -> Result<IdentityResolution, EngineError> {
        let (rid, _) = self.open(id, caller, "identity", now, &[Standing::Assigned])?;
        let r = self.rep(&rid);
        let account = r
            .pseudonyms
            .account(pseudonym)
            .cloned()
            .ok_or_else(|| EngineError::not_found("pseudonym", pseudonym))?;
        let revealed = self.reveals(r, caller);
        let resolved = sender_ref(r, &account, revealed);
        let obj = format!(
            "{};pseudonym={pseudonym};outcome={}",
            r.object(),
            if revealed { "account" } else { "pseudonym" }
        );
        self.record(caller.as_str(), "identity.resolve", &obj, now);
        Ok(IdentityResolution {
            pseudonym: pseudonym.to_owned(),
            revealed,
            resolved,
        })
    }

    pub fn assign_tag(&mut self, caller: &AccountId, id: &str, subject: &str, label: &str, now: u64) -> Result<TagView, EngineError> {
        let (rid, _) = self.open(id, caller, "tag", now, &[Standing::Assigned])?;
        let r = self.rep(&rid);
        let account = r
            .pseudonyms
            .account(subject)
            .cloned()
            .ok_or_else(|| EngineError::not_found("pseudonym", subject))?;
        let obj = format!("{};subject={subject};label={}", r.object(), label.trim());
        let tag = self.state.tags.assign(account, label, caller.clone(), now)?.clone();
        self.record(caller.as_str(), "tag.assign", &obj, now);
        let r = self.rep(&rid);
        let reveal = self.reveals(r, caller);
        Ok(TagView {
            subject: sender_ref(r, &tag.subject, reveal),
            label: tag.label,
            author: self.handle_of(&tag.author),
            created_at: tag.created_at,
        })
    }

    /// Tags on every party of the report, shown against report pseudonyms.
    pub fn list_tags(&mut self, caller: &AccountId, id: &str, now: u64) -> Result<Vec<TagView>, EngineError> {
        let (rid, _) = self.open(id, caller, "tag", now, &[Standing::Assigned, Standing::Observer])?;
        let r = self.rep(&rid);
        let reveal = self.reveals(r, caller);
        let mut out = Vec::new();
        for (account, _) in r.pseudonyms.iter() {
            for t in self.state.tags.list(account) {
                out.push(TagView {
                    subject: sender_ref(r, account, reveal),
                    label: t.label.clone(),
                    author: self.handle_of(&t.author),
                    created_at: t.created_at,
                });
            }
        }
        Ok(out)
    }

    pub fn append_segment(&mut self, caller: &AccountId, conv: &str, req: AppendSegment, now: u64) -> Result<EphemeralSegment, EngineError> {
        self.profile(caller)?;
        let cid = self.member_of(caller, conv, "segments", now)?;
        if self.state.buffers.buffer(&cid).is_none() {
            return Err(EngineError::Invalid(format!("{cid} has no ephemeral policy")));
        }
        let seg_id = match req.seg_id {
            Some(s) => s,
            None => {
                self.state.counters.segment += 1;
                SegId::new(format!("seg-{}", self.state.counters.segment)).expect("valid id")
            }
        };
        let input = SegmentInput {
            seg_id,
            speaker: caller.clone(),
            captured_at: req.captured_at.unwrap_or(now),
            payload: req.payload,
        };
        let outcome = self.state.buffers.append(&cid, input, self.keys.active(), now)?;
        let obj = format!("conversation:{cid};segment={}", outcome.segment.seg_id);
        self.record(caller.as_str(), "segment.append", &obj, now);
        self.record_purges(&cid, outcome.purged.iter().map(|t| &t.seg_id), now);
        Ok(outcome.segment)
    }

    pub fn reportable(&mut self, caller: &AccountId, conv: &str, now: u64) -> Result<Vec<EphemeralSegment>, EngineError> {
        self.profile(caller)?;
        let cid = self.member_of(caller, conv, "reportable", now)?;
        if self.state.buffers.buffer(&cid).is_none() {
            return Err(EngineError::Invalid(format!("{cid} has no ephemeral policy")));
        }
        self.advance_buffer(&cid, now)?;
        Ok(self.state.buffers.reportable(&cid, now)?)
    }

    pub fn send_message(&mut self, caller: &AccountId, conv: &str, body: &str, now: u64) -> Result<Message, EngineError> {
        self.profile(caller)?;
        let cid = self.member_of(caller, conv, "messages", now)?;
        if body.len() > MAX_BODY_BYTES {
            return Err(EngineError::Invalid(format!("body exceeds {MAX_BODY_BYTES} bytes")));
        }
        self.state.counters.message += 1;
        let mut m = Message {
            msg_id: MsgId::new(format!("msg-{}", self.state.counters.message)).expect("valid id"),
            conversation_id: cid.clone(),
            sender: caller.clone(),
            sent_at: now,
            body: body.to_owned(),
            frank_tag: crate::auth::FrankTag::zero(),
            deleted: false,
            edited: false,
        };
        m.frank_tag = self.keys.frank(&m)?;
        let obj = format!("conversation:{cid};message={}", m.msg_id);
        self.record(caller.as_str(), "message.send", &obj, now);
        let msgs = self.state.messages.entry(cid.clone()).or_default();
        let pos = msgs.partition_point(|x| x.order_key() <= m.order_key());
        msgs.insert(pos, m.clone());
        self.state.message_index.insert(m.msg_id.clone(), cid);
        Ok(m)
    }

    fn member_of(&mut self, caller: &AccountId, conv: &str, op: &str, now: u64) -> Result<ConvId, EngineError> {
        let cid = ConvId::new(conv).map_err(|_| EngineError::not_found("conversation", conv))?;
        let c = self
            .state
            .conversations
            .get(&cid)
            .ok_or_else(|| EngineError::not_found("conversation", conv))?;
        if !c.has_participant(caller) {
            return Err(self.deny(caller, op, &format!("conversation:{cid}"), now, "not a participant"));
        }
        Ok(cid)
    }

    pub fn moderator_profile(&self, handle: &str) -> Result<ModeratorProfile, EngineError> {
        self.state
            .directory
            .moderators
            .values()
            .find(|m| m.handle == handle)
            .cloned()
            .ok_or_else(|| EngineError::not_found("moderator", handle))
    }

    pub fn moderator_profiles(&self) -> Vec<ModeratorProfile> {
        let mut v: Vec<_> = self.state.directory.moderators.values().cloned().collect();
        v.sort_by(|a, b| a.handle.cmp(&b.handle));
        v
    }

    pub fn transitions(&self) -> Vec<TransitionRow> {
        transition_table()
    }

    /// Whether the reporting platform's identifier policy for new reports
    /// reveals raw ids to the given roles before a decision.
    pub fn identifier_policy(&self) -> IdentifierPolicy {
        self.settings.identifier_policy
    }
}

fn enum_str<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn level_spec_kind(spec: &LevelSpec) -> &'static str {
    match spec {
        LevelSpec::Removed => "removed",
        LevelSpec::MetadataOnly => "metadata_only",
        LevelSpec::Attributes { .. } => "attributes",
        LevelSpec::Answer { .. } => "answer",
        LevelSpec::Redacted { .. } => "redacted",
        LevelSpec::Full => "full",
    }
}
