use std::collections::{BTreeMap, BTreeSet};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Engine, Report, ReportSources};
use crate::access::{PartyRole, ViewLimit};
use crate::audit::ChainCheck;
use crate::auth::{attest_bundle, detect_impersonation, AttestationToken, IdentityMatch};
use crate::bundle::{ItemContent, RenderedItem, SenderRef};
use crate::disclosure::{
    Consent, CredibilityAnnotation, Criticality, FindingBody, Involvement, Provenance, ReportFlag,
    RequestState,
};
use crate::error::EngineError;
use crate::lifecycle::{
    Decision, ModeratorProfile, Notice, ReportState, TerminationReason,
};
use crate::minimize::{LevelKind, LevelSpec};
use crate::model::{AccountId, ConvId, MsgId, ReportId};
use crate::scope::ScopePolicy;

pub const EXPORT_FORMAT: &str = "redress-bundle/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewerKind {
    Reporter,
    Moderator,
    Reported,
    Bystander,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub pseudonym: String,
    pub role: PartyRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub account: Option<AccountId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestView {
    pub request_id: String,
    pub requester: String,
    pub targets: Vec<MsgId>,
    pub level: LevelSpec,
    pub justification: String,
    pub criticality: Criticality,
    pub consequence_note: String,
    pub state: RequestState,
    pub opened_at: u64,
    pub resolved_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InviteView {
    pub invite_id: String,
    pub bystander: SenderRef,
    pub requester: String,
    pub involvement: Involvement,
    pub question: String,
    pub consent: Consent,
    pub contacted_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingView {
    pub invite_id: String,
    pub bystander: SenderRef,
    pub mode: Involvement,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged: Vec<MsgId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disclosed: Vec<MsgId>,
    pub submitted_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrantView {
    pub grant_id: String,
    pub grantees: Vec<String>,
    pub expires_at: Option<u64>,
    pub remaining_views: ViewLimit,
    pub revoked: bool,
    pub successful_fetches: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpersonationWarning {
    pub item_id: String,
    pub sender: SenderRef,
    pub claimed: SenderRef,
    pub identity: IdentityMatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationView {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notice: Option<Notice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reporter_message: Option<String>,
    pub downgraded: bool,
    pub at: u64,
    pub appeal_deadline: u64,
}

/// A report as seen by one caller. Fields a viewer may not see are absent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportView {
    pub id: ReportId,
    pub state: ReportState,
    pub viewer: ViewerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reporter: Option<SenderRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported: Option<SenderRef>,
    pub filed_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<ScopePolicy>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conversations: Vec<ConvId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub participants: Vec<ParticipantView>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub levels: BTreeMap<MsgId, LevelKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub segments: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub free_media: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assigned_moderators: Vec<ModeratorProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requests: Vec<RequestView>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invites: Vec<InviteView>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub findings: Vec<FindingView>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<CredibilityAnnotation>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<ReportFlag>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grants: Vec<GrantView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub punishment_applied_at: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notification: Option<NotificationView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appeal: Option<super::AppealRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<TerminationReason>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub closed_by_lapse: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub filer_rate_signal: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub impersonation_warnings: Vec<ImpersonationWarning>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreeMediaView {
    pub item_id: String,
    pub description: String,
    pub media_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claimed_sender: Option<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedView {
    pub invite_id: String,
    pub msg_id: MsgId,
    /// The flagged message as the moderator already sees it, if at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<RenderedItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestimonialView {
    pub invite_id: String,
    pub bystander: SenderRef,
    pub msg_id: MsgId,
    pub account: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardedBundle {
    pub invite_id: String,
    pub bystander: SenderRef,
    pub items: Vec<RenderedItem>,
    pub token: AttestationToken,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceView {
    pub report_id: ReportId,
    pub items: Vec<RenderedItem>,
    pub token: AttestationToken,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub free_media: Vec<FreeMediaView>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged: Vec<FlaggedView>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub testimonials: Vec<TestimonialView>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forwarded: Vec<ForwardedBundle>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<CredibilityAnnotation>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<ReportFlag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grant_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remaining_views: Option<ViewLimit>,
}

/// Portable file produced by export and accepted by import.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportFile {
    pub format: String,
    pub report_id: ReportId,
    pub items: Vec<RenderedItem>,
    pub token: AttestationToken,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntryView {
    pub seq: u64,
    pub actor: String,
    pub action: String,
    pub object: String,
    pub at: u64,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditExcerpt {
    pub report_id: ReportId,
    pub events: Vec<AuditEntryView>,
    pub chain: ChainCheck,
    pub head: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagView {
    pub subject: SenderRef,
    pub label: String,
    pub author: String,
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityResolution {
    pub pseudonym: String,
    pub revealed: bool,
    pub resolved: SenderRef,
}

pub(crate) fn sender_ref(report: &Report, account: &AccountId, reveal: bool) -> SenderRef {
    if reveal {
        return SenderRef::Account {
            account: account.clone(),
        };
    }
    match report.pseudonyms.of(account) {
        Some(p) => SenderRef::Pseudonym {
            pseudonym: p.label.clone(),
            role: p.role,
        },
        None => SenderRef::Pseudonym {
            pseudonym: "Participant-unlisted".to_owned(),
            role: PartyRole::Bystander,
        },
    }
}

pub(crate) fn b64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

impl Engine {
    /// Whether `caller` sees raw account ids in `report`.
    pub(crate) fn reveals(&self, report: &Report, caller: &AccountId) -> bool {
        if caller == &report.reporter {
            return true;
        }
        let roles = self
            .state
            .directory
            .profile(caller)
            .map(|p| p.roles.clone())
            .unwrap_or_default();
        report.identifier_policy.reveals(&roles, report.decided_at.is_some())
    }

    pub(crate) fn handle_of(&self, id: &AccountId) -> String {
        self.state
            .directory
            .handle(id)
            .map_or_else(|| "moderator".to_owned(), str::to_owned)
    }

    /// Candidate messages at their levels, then pinned segments.
    pub(crate) fn render_items(&self, report: &Report, reveal: bool) -> Result<Vec<RenderedItem>, EngineError> {
        let mut items = Vec::new();
        for id in &report.candidates {
            let Some(level) = report.levels.get(id) else { continue };
            let m = self
                .state
                .message(id)
                .ok_or_else(|| EngineError::not_found("message", id))?;
            if let Some(view) = self.minimizer.minimize(m, level)? {
                items.extend(view.into_item(m.conversation_id.clone(), sender_ref(report, &m.sender, reveal)));
            }
        }
        for p in &report.segments {
            let s = &p.segment;
            items.push(RenderedItem {
                id: s.seg_id.to_string(),
                conversation: s.conversation_id.clone(),
                sender: sender_ref(report, &s.speaker, reveal),
                sent_at: s.captured_at,
                content: ItemContent::Segment {
                    payload: s.payload.clone(),
                },
            });
        }
        Ok(items)
    }

    pub(crate) fn attest(&self, report: &Report, items: &[RenderedItem], now: u64) -> Result<AttestationToken, EngineError> {
        let sources = ReportSources {
            state: &self.state,
            report,
        };
        Ok(attest_bundle(items, &report.id, &self.keys, now, &sources)?)
    }

    pub(crate) fn evidence_view(
        &self,
        report: &Report,
        caller: &AccountId,
        now: u64,
    ) -> Result<EvidenceView, EngineError> {
        let reveal = self.reveals(report, caller);
        let items = self.render_items(report, reveal)?;
        let token = self.attest(report, &items, now)?;
        let mut view = EvidenceView {
            report_id: report.id.clone(),
            items,
            token,
            provenance: Provenance::Attested,
            free_media: report
                .free_media
                .iter()
                .map(|f| FreeMediaView {
                    item_id: f.item_id.clone(),
                    description: f.description.clone(),
                    media_ref: f.media_ref.clone(),
                    claimed_sender: f.claimed_sender.as_ref().map(|c| claimed_label(report, c, reveal)),
                    provenance: Provenance::Unattested,
                })
                .collect(),
            flagged: Vec::new(),
            testimonials: Vec::new(),
            forwarded: Vec::new(),
            annotations: report.annotations.clone(),
            flags: report.flags.clone(),
            grant_id: None,
            remaining_views: None,
        };
        for finding in &report.findings {
            let Some(invite) = report.invite(&finding.invite_id) else { continue };
            let bystander = sender_ref(report, &invite.bystander, reveal);
            match &finding.body {
                FindingBody::YesNo { .. } => {}
                FindingBody::Flag { flags } => {
                    for id in flags {
                        let current = match (self.state.message(id), report.levels.get(id)) {
                            (Some(m), Some(level)) => self
                                .minimizer
                                .minimize(m, level)?
                                .and_then(|v| v.into_item(m.conversation_id.clone(), sender_ref(report, &m.sender, reveal))),
                            _ => None,
                        };
                        view.flagged.push(FlaggedView {
                            invite_id: finding.invite_id.clone(),
                            msg_id: id.clone(),
                            current,
                        });
                    }
                }
                FindingBody::Disclose { disclosures } => {
                    let mut forwarded = Vec::new();
                    for d in disclosures {
                        if d.forward {
                            if let Some(m) = self.state.message(&d.msg_id) {
                                forwarded.push(RenderedItem {
                                    id: m.msg_id.to_string(),
                                    conversation: m.conversation_id.clone(),
                                    sender: sender_ref(report, &m.sender, reveal),
                                    sent_at: m.sent_at,
                                    content: ItemContent::Full { body: m.body.clone() },
                                });
                            }
                        } else {
                            view.testimonials.push(TestimonialView {
                                invite_id: finding.invite_id.clone(),
                                bystander: bystander.clone(),
                                msg_id: d.msg_id.clone(),
                                account: d.account.clone(),
                                provenance: Provenance::UnattestedTestimonial,
                            });
                        }
                    }
                    if !forwarded.is_empty() {
                        let token = self.attest(report, &forwarded, now)?;
                        view.forwarded.push(ForwardedBundle {
                            invite_id: finding.invite_id.clone(),
                            bystander,
                            items: forwarded,
                            token,
                            provenance: Provenance::Attested,
                        });
                    }
                }
            }
        }
        Ok(view)
    }

    pub(crate) fn report_view(&self, report: &Report, caller: &AccountId, viewer: ViewerKind) -> ReportView {
        let mut view = ReportView {
            id: report.id.clone(),
            state: report.state,
            viewer,
            reason: None,
            reporter: None,
            reported: None,
            filed_at: report.filed_at,
            scope: None,
            conversations: Vec::new(),
            participants: Vec::new(),
            levels: BTreeMap::new(),
            segments: Vec::new(),
            free_media: Vec::new(),
            assigned_moderators: Vec::new(),
            requests: Vec::new(),
            invites: Vec::new(),
            findings: Vec::new(),
            annotations: Vec::new(),
            flags: BTreeSet::new(),
            grants: Vec::new(),
            decision: None,
            punishment_applied_at: None,
            notification: None,
            appeal: None,
            termination: report.termination.map(|(r, _)| r),
            closed_by_lapse: report.closed_by_lapse,
            filer_rate_signal: false,
            impersonation_warnings: Vec::new(),
        };
        match viewer {
            ViewerKind::Reported => {
                if let Some(n) = &report.notification {
                    view.notification = Some(NotificationView {
                        notice: n.notice.clone(),
                        reporter_message: None,
                        downgraded: false,
                        at: n.at,
                        appeal_deadline: n.appeal_deadline,
                    });
                }
                view.appeal = report.appeal.clone();
                view.punishment_applied_at = report.punishment_applied_at;
                return view;
            }
            ViewerKind::Bystander => {
                view.invites = report
                    .invites
                    .iter()
                    .filter(|i| &i.bystander == caller && i.contacted_at.is_some())
                    .map(|i| self.invite_view(report, i, false))
                    .collect();
                return view;
            }
            ViewerKind::Reporter | ViewerKind::Moderator => {}
        }
        let reveal = self.reveals(report, caller);
        let is_reporter = viewer == ViewerKind::Reporter;
        view.reason = Some(report.reason.clone());
        view.reporter = Some(sender_ref(report, &report.reporter, reveal));
        view.reported = Some(sender_ref(report, &report.reported, reveal));
        view.scope = Some(report.scope.clone());
        view.conversations = report.conversations.clone();
        view.participants = report
            .pseudonyms
            .iter()
            .map(|(a, p)| ParticipantView {
                pseudonym: p.label.clone(),
                role: p.role,
                account: reveal.then(|| a.clone()),
            })
            .collect();
        if is_reporter {
            view.levels = report.levels.iter().map(|(k, v)| (k.clone(), v.kind())).collect();
        }
        view.segments = report.segments.iter().map(|p| p.segment.seg_id.to_string()).collect();
        view.free_media = report.free_media.iter().map(|f| f.item_id.clone()).collect();
        view.assigned_moderators = report
            .assigned()
            .iter()
            .filter_map(|a| self.state.directory.moderators.get(a).cloned())
            .collect();
        view.requests = report
            .requests
            .iter()
            .map(|r| RequestView {
                request_id: r.request_id.clone(),
                requester: self.handle_of(&r.requester),
                targets: r.targets.clone(),
                level: r.level.clone(),
                justification: r.justification.clone(),
                criticality: r.criticality,
                consequence_note: r.consequence_note.clone(),
                state: r.state,
                opened_at: r.opened_at,
                resolved_at: r.resolved_at,
            })
            .collect();
        view.invites = report.invites.iter().map(|i| self.invite_view(report, i, reveal)).collect();
        view.findings = report
            .findings
            .iter()
            .filter_map(|f| {
                let invite = report.invite(&f.invite_id)?;
                let (verdict, flagged, disclosed) = match &f.body {
                    FindingBody::YesNo { verdict } => (Some(*verdict), Vec::new(), Vec::new()),
                    FindingBody::Flag { flags } => (None, flags.clone(), Vec::new()),
                    FindingBody::Disclose { disclosures } => {
                        (None, Vec::new(), disclosures.iter().map(|d| d.msg_id.clone()).collect())
                    }
                };
                Some(FindingView {
                    invite_id: f.invite_id.clone(),
                    bystander: sender_ref(report, &invite.bystander, reveal),
                    mode: invite.involvement,
                    verdict,
                    flagged,
                    disclosed,
                    submitted_at: f.submitted_at,
                })
            })
            .collect();
        view.annotations = report.annotations.clone();
        view.flags = report.flags.clone();
        view.grants = report
            .grants
            .iter()
            .filter(|g| is_reporter || g.grantees.contains(caller))
            .map(|g| GrantView {
                grant_id: g.grant_id.clone(),
                grantees: g.grantees.iter().map(|a| self.handle_of(a)).collect(),
                expires_at: g.expires_at,
                remaining_views: g.remaining_views,
                revoked: g.revoked,
                successful_fetches: g.successful_fetches,
            })
            .collect();
        view.decision = report.decision.clone();
        view.punishment_applied_at = report.punishment_applied_at;
        view.notification = report.notification.as_ref().map(|n| NotificationView {
            notice: if is_reporter { None } else { n.notice.clone() },
            reporter_message: Some(n.reporter_message.clone()),
            downgraded: n.downgraded,
            at: n.at,
            appeal_deadline: n.appeal_deadline,
        });
        view.appeal = report.appeal.clone();
        view.filer_rate_signal = report.filer_rate_signal;
        view.impersonation_warnings = self.impersonation_warnings(report, reveal);
        view
    }

    fn invite_view(&self, report: &Report, i: &crate::disclosure::BystanderInvite, reveal: bool) -> InviteView {
        InviteView {
            invite_id: i.invite_id.clone(),
            bystander: sender_ref(report, &i.bystander, reveal),
            requester: self.handle_of(&i.requester),
            involvement: i.involvement,
            question: i.question.clone(),
            consent: i.consent,
            contacted_at: i.contacted_at,
        }
    }

    /// Items sent by someone other than the reported party who shares the
    /// reported party's display name.
    pub(crate) fn impersonation_warnings(&self, report: &Report, reveal: bool) -> Vec<ImpersonationWarning> {
        let dir = &self.state.directory;
        let Some(claimed) = dir.profile(&report.reported) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let senders = report
            .candidates
            .iter()
            .filter(|id| report.levels.get(*id).is_some_and(|l| !l.is_removed()))
            .filter_map(|id| self.state.message(id).map(|m| (id.to_string(), m.sender.clone())))
            .chain(
                report
                    .segments
                    .iter()
                    .map(|p| (p.segment.seg_id.to_string(), p.segment.speaker.clone())),
            );
        for (item_id, sender) in senders {
            let lookalike = dir
                .profile(&sender)
                .is_some_and(|p| p.display_name == claimed.display_name);
            if lookalike && detect_impersonation(claimed, &sender) == IdentityMatch::Mismatch {
                out.push(ImpersonationWarning {
                    item_id,
                    sender: sender_ref(report, &sender, reveal),
                    claimed: sender_ref(report, &report.reported, reveal),
                    identity: IdentityMatch::Mismatch,
                });
            }
        }
        out
    }
}

/// Free-text sender claims that name a report party are shown the same way
/// as item senders.
fn claimed_label(report: &Report, claim: &str, reveal: bool) -> String {
    if reveal {
        return claim.to_owned();
    }
    match AccountId::new(claim).ok().and_then(|a| report.pseudonyms.of(&a).cloned()) {
        Some(p) => p.label,
        None if report.pseudonyms.iter().any(|(a, _)| claim.contains(a.as_str())) => {
            "[identifier withheld]".to_owned()
        }
        None => claim.to_owned(),
    }
}
