//! Report state machine and the workflow value types around it.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AccountId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportState {
    Filed,
    Assembling,
    UnderReview,
    Decided,
    Notified,
    AppealOpen,
    AppealResolved,
    Closed,
    Dismissed,
    Terminated,
}

impl ReportState {
    pub const ALL: [ReportState; 10] = [
        ReportState::Filed,
        ReportState::Assembling,
        ReportState::UnderReview,
        ReportState::Decided,
        ReportState::Notified,
        ReportState::AppealOpen,
        ReportState::AppealResolved,
        ReportState::Closed,
        ReportState::Dismissed,
        ReportState::Terminated,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            ReportState::Closed
                | ReportState::Dismissed
                | ReportState::Terminated
                | ReportState::AppealResolved
        )
    }

    /// Decided or any state reachable from it.
    pub fn is_post_decision(self) -> bool {
        matches!(
            self,
            ReportState::Decided
                | ReportState::Notified
                | ReportState::AppealOpen
                | ReportState::AppealResolved
                | ReportState::Closed
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReportState::Filed => "filed",
            ReportState::Assembling => "assembling",
            ReportState::UnderReview => "under_review",
            ReportState::Decided => "decided",
            ReportState::Notified => "notified",
            ReportState::AppealOpen => "appeal_open",
            ReportState::AppealResolved => "appeal_resolved",
            ReportState::Closed => "closed",
            ReportState::Dismissed => "dismissed",
            ReportState::Terminated => "terminated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleOp {
    File,
    ComposeEvidence,
    Assign,
    OpenRequest,
    RespondRequest,
    InviteBystander,
    ConsentInvite,
    SubmitFinding,
    Decide,
    Notify,
    Appeal,
    LapseAppealWindow,
    AffirmAppeal,
    ReverseAppeal,
    Close,
    Terminate,
}

impl LifecycleOp {
    pub const ALL: [LifecycleOp; 16] = [
        LifecycleOp::File,
        LifecycleOp::ComposeEvidence,
        LifecycleOp::Assign,
        LifecycleOp::OpenRequest,
        LifecycleOp::RespondRequest,
        LifecycleOp::InviteBystander,
        LifecycleOp::ConsentInvite,
        LifecycleOp::SubmitFinding,
        LifecycleOp::Decide,
        LifecycleOp::Notify,
        LifecycleOp::Appeal,
        LifecycleOp::LapseAppealWindow,
        LifecycleOp::AffirmAppeal,
        LifecycleOp::ReverseAppeal,
        LifecycleOp::Close,
        LifecycleOp::Terminate,
    ];
}

/// The transition table. `None` means the operation is not permitted.
pub fn next_state(state: ReportState, op: LifecycleOp) -> Option<ReportState> {
    use LifecycleOp as O;
    use ReportState as S;
    match (state, op) {
        (S::Filed, O::File) => Some(S::Assembling),
        (S::Assembling, O::ComposeEvidence) => Some(S::Assembling),
        (S::Assembling, O::Assign) => Some(S::UnderReview),
        (
            S::UnderReview,
            O::OpenRequest | O::RespondRequest | O::InviteBystander | O::ConsentInvite | O::SubmitFinding,
        ) => Some(S::UnderReview),
        (S::UnderReview, O::Decide) => Some(S::Decided),
        (S::Decided, O::Notify) => Some(S::Notified),
        (S::Notified, O::Appeal) => Some(S::AppealOpen),
        (S::Notified, O::LapseAppealWindow) => Some(S::Closed),
        (S::AppealOpen, O::AffirmAppeal) => Some(S::AppealResolved),
        (S::AppealOpen, O::ReverseAppeal) => Some(S::Dismissed),
        (S::AppealResolved, O::Close) => Some(S::Closed),
        (s, O::Terminate) if !s.is_terminal() => Some(S::Terminated),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub from: ReportState,
    pub op: LifecycleOp,
    pub to: ReportState,
}

/// Every permitted transition, for publication as JSON.
pub fn transition_table() -> Vec<TransitionRow> {
    let mut rows = Vec::new();
    for from in ReportState::ALL {
        for op in LifecycleOp::ALL {
            if let Some(to) = next_state(from, op) {
                rows.push(TransitionRow { from, op, to });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Uphold,
    Dismiss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Punishment {
    None,
    Warn,
    Mute,
    Ban,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PunishmentTiming {
    Immediate,
    DelayedUntilAppeal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    #[serde(default)]
    pub policy_violated: Option<String>,
    pub punishment: Punishment,
    pub punishment_timing: PunishmentTiming,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LifecycleError {
    #[error("a dismissal cannot carry a punishment")]
    DismissWithPunishment,
    #[error("an upheld decision must name the violated policy")]
    MissingPolicy,
    #[error("exclusion of {0} needs a justification")]
    UnjustifiedExclusion(String),
    #[error("no eligible moderator remains after exclusions")]
    AssignmentImpossible,
}

impl Decision {
    pub fn validate(&self) -> Result<(), LifecycleError> {
        match self.outcome {
            Outcome::Dismiss if self.punishment != Punishment::None => {
                Err(LifecycleError::DismissWithPunishment)
            }
            Outcome::Uphold if self.policy_violated.as_deref().is_none_or(str::is_empty) => {
                Err(LifecycleError::MissingPolicy)
            }
            _ => Ok(()),
        }
    }

    /// Whether the punishment takes effect at decision time.
    pub fn applies_immediately(&self) -> bool {
        self.outcome == Outcome::Uphold
            && self.punishment != Punishment::None
            && self.punishment_timing == PunishmentTiming::Immediate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Generic,
    PolicyOnly,
    MessageLevel,
}

/// What the reported party is told.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notice {
    pub granularity: Granularity,
    pub policy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excerpt: Option<String>,
    pub punishment: Punishment,
    pub appealable_until: Option<u64>,
}

/// Granularity after the direct-conversation rule, and whether it was
/// downgraded.
pub fn effective_granularity(requested: Granularity, any_direct: bool) -> (Granularity, bool) {
    if any_direct && requested != Granularity::Generic {
        (Granularity::Generic, true)
    } else {
        (requested, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    ConsentRefused,
    ReporterWithdrawn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub moderator: String,
    pub justification: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRequest {
    #[serde(default)]
    pub preferred: Vec<String>,
    #[serde(default)]
    pub excluded: Vec<Exclusion>,
    #[serde(default)]
    pub count: Option<usize>,
}

/// The moderator details a reporter may see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeratorProfile {
    pub handle: String,
    pub tenure_days: u32,
    pub reports_reviewed: u32,
    pub endorsed_values: Vec<String>,
}

/// Chooses `count` moderators: preferred ones first (in request order), then
/// the rest of the pool in pool order. Conflicted and excluded moderators are
/// never chosen. If fewer than `count` are eligible, all eligible are taken.
pub fn select_moderators(
    pool: &[AccountId],
    conflicted: &BTreeSet<AccountId>,
    preferred: &[AccountId],
    excluded: &BTreeSet<AccountId>,
    count: usize,
) -> Result<Vec<AccountId>, LifecycleError> {
    let eligible: Vec<&AccountId> = pool
        .iter()
        .filter(|m| !conflicted.contains(*m) && !excluded.contains(*m))
        .collect();
    if eligible.is_empty() {
        return Err(LifecycleError::AssignmentImpossible);
    }
    let mut chosen: Vec<AccountId> = Vec::new();
    for p in preferred {
        if chosen.len() < count && eligible.contains(&p) && !chosen.contains(p) {
            chosen.push(p.clone());
        }
    }
    for m in eligible {
        if chosen.len() >= count {
            break;
        }
        if !chosen.contains(m) {
            chosen.push(m.clone());
        }
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn acct(s: &str) -> AccountId {
        AccountId::new(s).unwrap()
    }

    #[test]
    fn table_matches_declared_edges() {
        use LifecycleOp as O;
        use ReportState as S;
        let declared: BTreeSet<(S, O, S)> = [
            (S::Filed, O::File, S::Assembling),
            (S::Assembling, O::ComposeEvidence, S::Assembling),
            (S::Assembling, O::Assign, S::UnderReview),
            (S::UnderReview, O::OpenRequest, S::UnderReview),
            (S::UnderReview, O::RespondRequest, S::UnderReview),
            (S::UnderReview, O::InviteBystander, S::UnderReview),
            (S::UnderReview, O::ConsentInvite, S::UnderReview),
            (S::UnderReview, O::SubmitFinding, S::UnderReview),
            (S::UnderReview, O::Decide, S::Decided),
            (S::Decided, O::Notify, S::Notified),
            (S::Notified, O::Appeal, S::AppealOpen),
            (S::Notified, O::LapseAppealWindow, S::Closed),
            (S::AppealOpen, O::AffirmAppeal, S::AppealResolved),
            (S::AppealOpen, O::ReverseAppeal, S::Dismissed),
            (S::AppealResolved, O::Close, S::Closed),
            (S::Filed, O::Terminate, S::Terminated),
            (S::Assembling, O::Terminate, S::Terminated),
            (S::UnderReview, O::Terminate, S::Terminated),
            (S::Decided, O::Terminate, S::Terminated),
            (S::Notified, O::Terminate, S::Terminated),
            (S::AppealOpen, O::Terminate, S::Terminated),
        ]
        .into_iter()
        .collect();
        let table: BTreeSet<(S, O, S)> =
            transition_table().into_iter().map(|r| (r.from, r.op, r.to)).collect();
        assert_eq!(table, declared);
    }

    #[test]
    fn terminal_states_have_no_exit_but_close() {
        for s in ReportState::ALL.into_iter().filter(|s| s.is_terminal()) {
            for op in LifecycleOp::ALL {
                let next = next_state(s, op);
                if s == ReportState::AppealResolved && op == LifecycleOp::Close {
                    assert_eq!(next, Some(ReportState::Closed));
                } else {
                    assert_eq!(next, None, "{s:?} {op:?}");
                }
            }
        }
    }

    #[test]
    fn table_json() {
        let v = serde_json::to_value(transition_table()).unwrap();
        assert_eq!(v[0], serde_json::json!({"from": "filed", "op": "file", "to": "assembling"}));
    }

    #[test]
    fn decision_validation() {
        let d = Decision {
            outcome: Outcome::Dismiss,
            policy_violated: None,
            punishment: Punishment::Ban,
            punishment_timing: PunishmentTiming::Immediate,
            rationale: String::new(),
        };
        assert_eq!(d.validate(), Err(LifecycleError::DismissWithPunishment));
        let d = Decision {
            outcome: Outcome::Uphold,
            policy_violated: Some("harassment".into()),
            punishment: Punishment::Ban,
            punishment_timing: PunishmentTiming::DelayedUntilAppeal,
            rationale: "r".into(),
        };
        assert!(d.validate().is_ok());
        assert!(!d.applies_immediately());
    }

    #[test]
    fn direct_forces_generic() {
        assert_eq!(
            effective_granularity(Granularity::MessageLevel, true),
            (Granularity::Generic, true)
        );
        assert_eq!(
            effective_granularity(Granularity::MessageLevel, false),
            (Granularity::MessageLevel, false)
        );
    }

    #[test]
    fn assignment_examples() {
        let pool = vec![acct("m1"), acct("m2"), acct("m3")];
        let conflicted = BTreeSet::from([acct("m2")]);
        let none = BTreeSet::new();
        let got = select_moderators(&pool, &conflicted, &[acct("m2")], &none, 3).unwrap();
        assert!(!got.contains(&acct("m2")));
        let got = select_moderators(&pool, &conflicted, &[acct("m3")], &none, 1).unwrap();
        assert_eq!(got, vec![acct("m3")]);
        let all = BTreeSet::from([acct("m1"), acct("m3")]);
        assert_eq!(
            select_moderators(&pool, &conflicted, &[], &all, 1),
            Err(LifecycleError::AssignmentImpossible)
        );
    }

    proptest! {
        #[test]
        fn conflicted_never_assigned(
            pool in proptest::collection::btree_set(0u8..12, 1..12),
            conflicted in proptest::collection::btree_set(0u8..12, 0..6),
            preferred in proptest::collection::vec(0u8..12, 0..4),
            excluded in proptest::collection::btree_set(0u8..12, 0..4),
            count in 1usize..5,
        ) {
            let a = |i: &u8| acct(&format!("m{i}"));
            let pool: Vec<AccountId> = pool.iter().map(a).collect();
            let conflicted: BTreeSet<AccountId> = conflicted.iter().map(a).collect();
            let excluded: BTreeSet<AccountId> = excluded.iter().map(a).collect();
            let preferred: Vec<AccountId> = preferred.iter().map(a).collect();
            if let Ok(chosen) = select_moderators(&pool, &conflicted, &preferred, &excluded, count) {
                prop_assert!(chosen.iter().all(|m| !conflicted.contains(m) && !excluded.contains(m)));
                prop_assert!(chosen.len() <= count && !chosen.is_empty());
            }
        }
    }
}
