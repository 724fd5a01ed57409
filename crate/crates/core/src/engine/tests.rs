use serde_json::json;

use super::*;
use crate::access::Denial;
use crate::bundle::ItemContent;
use crate::disclosure::{FindingBody, ReportFlag, ResponseDecision};
use crate::fixtures::{self, ALICE, BOB, CAROL, F1, F2, MOD_1, MOD_2, MOD_3, PLATFORM, V1, WENDY};
use crate::lifecycle::{AssignmentRequest, Decision, ReportState, TerminationReason};
use crate::minimize::{LevelKind, MinimizerConfig};

fn engine() -> Engine {
    Engine::with_fixtures(
        fixtures::key_ring(),
        Minimizer::new(MinimizerConfig::default()).unwrap(),
        EngineSettings::default(),
    )
}

fn a(s: &str) -> AccountId {
    AccountId::new(s).unwrap()
}

fn file(e: &mut Engine, body: serde_json::Value, now: u64) -> ReportView {
    let req: FileReport = serde_json::from_value(body).unwrap();
    e.file_report(&a(ALICE), req, now).unwrap()
}

fn f1_report(e: &mut Engine) -> String {
    file(
        e,
        json!({
            "reported": BOB, "reason": "harassment", "conversations": [F1],
            "scope": {"mode": "last_n", "n": 5},
            "levels": {"m8": {"level": "removed"}, "m10": {"level": "metadata_only"}}
        }),
        100_000,
    )
    .id
    .to_string()
}

fn assign(e: &mut Engine, id: &str, now: u64) {
    let req = AssignmentRequest {
        preferred: vec!["mod-1".into()],
        ..Default::default()
    };
    e.assign(&a(ALICE), id, req, now).unwrap();
}

fn uphold() -> Decision {
    serde_json::from_value(json!({
        "outcome": "uphold", "policy_violated": "harassment",
        "punishment": "mute", "punishment_timing": "delayed_until_appeal"
    }))
    .unwrap()
}

#[test]
fn filing_scopes_and_levels() {
    let mut e = engine();
    let v = file(
        &mut e,
        json!({
            "reported": BOB, "reason": "harassment", "conversations": [F1],
            "scope": {"preset": "whatsapp-5"},
            "levels": {"m8": {"level": "removed"}}
        }),
        100_000,
    );
    assert_eq!(v.state, ReportState::Assembling);
    let ids: Vec<_> = v.levels.keys().map(|m| m.as_str().to_owned()).collect();
    assert_eq!(ids.len(), 5);
    assert!(ids.contains(&"m12".to_owned()) && ids.contains(&"m8".to_owned()));
    assert_eq!(v.levels[&MsgId::new("m8").unwrap()], LevelKind::Removed);
    let file_event = e.audit().events().iter().find(|ev| ev.action == "report.file").unwrap();
    assert!(file_event.object.contains("m8:removed"), "{}", file_event.object);
    assert!(!file_event.object.contains(BOB));
}

#[test]
fn unknown_level_key_and_foreign_conversation_are_rejected() {
    let mut e = engine();
    let req: FileReport = serde_json::from_value(json!({
        "reported": BOB, "reason": "x", "conversations": [F1],
        "scope": {"mode": "last_n", "n": 2}, "levels": {"m1": {"level": "full"}}
    }))
    .unwrap();
    assert!(matches!(e.file_report(&a(ALICE), req, 1), Err(EngineError::InvalidTarget(_))));

    let req: FileReport = serde_json::from_value(json!({
        "reported": ALICE, "reason": "x", "conversations": ["conv-f3"],
        "scope": {"mode": "all_in_conversation"}
    }))
    .unwrap();
    assert!(e.file_report(&a(MOD_1), req, 1).is_err());
    let last = e.audit().events().last().unwrap();
    assert_eq!(last.action, "authz.denied");
}

#[test]
fn grant_fetch_limits_and_outsiders() {
    let mut e = engine();
    let id = f1_report(&mut e);
    let g = GrantRequest {
        grantees: vec!["mod-1".into()],
        expires_at: Some(200_000),
        view_limit: Some(2),
    };
    e.create_grant(&a(ALICE), &id, g, 100_001).unwrap();
    let v = e.fetch_evidence(&a(MOD_1), &id, 100_002).unwrap();
    assert_eq!(v.items.len(), 4);
    assert!(v.items.iter().all(|i| i.id != "m8"));
    e.fetch_evidence(&a(MOD_1), &id, 100_003).unwrap();
    assert!(matches!(
        e.fetch_evidence(&a(MOD_1), &id, 100_004),
        Err(EngineError::Denied(Denial::Exhausted))
    ));
    assert!(matches!(e.fetch_evidence(&a(MOD_3), &id, 100_004), Err(EngineError::Denied(_)) | Err(EngineError::Unauthorized(_))));
    assert!(matches!(e.fetch_evidence(&a(CAROL), &id, 100_004), Err(EngineError::Unauthorized(_))));
    assert!(matches!(e.get_report(&a(BOB), &id, 100_004), Err(EngineError::Unauthorized(_))));
    assert!(e.audit().verify().valid);
}

#[test]
fn export_import_round_trip_and_tamper() {
    let mut e = engine();
    let id = f1_report(&mut e);
    let file = e.export_bundle(&a(ALICE), &id, 100_001).unwrap();
    let value = serde_json::to_value(&file).unwrap();
    let ok = e.import_bundle(&a(MOD_1), &value, 100_002).unwrap();
    assert!(ok.verification.mac_valid);

    let mut bad = value.clone();
    let body = bad["items"][0]["body"].as_str().unwrap().to_owned();
    bad["items"][0]["body"] = json!(format!("{body}!"));
    let err = e.import_bundle(&a(MOD_1), &bad, 100_003).unwrap_err();
    assert_eq!(err.code(), "mac_invalid");
    let mut extra = value;
    extra["note"] = json!("x");
    assert!(e.import_bundle(&a(MOD_1), &extra, 100_004).is_err());
}

#[test]
fn disclosure_grant_upgrades_only_targets() {
    let mut e = engine();
    let id = f1_report(&mut e);
    assign(&mut e, &id, 100_001);
    let req: OpenRequest = serde_json::from_value(json!({
        "targets": ["m8"], "justification": "context for the threat",
        "criticality": "critical"
    }))
    .unwrap();
    let q = e.open_request(&a(MOD_1), &id, req, 100_002).unwrap();
    assert!(matches!(e.decide(&a(MOD_1), &id, uphold(), 100_003), Err(EngineError::Blocked(_))));
    let before = e.report(&id).unwrap().levels.clone();
    e.respond_request(&a(ALICE), &q.request_id, ResponseDecision::Grant, 100_004).unwrap();
    let after = &e.report(&id).unwrap().levels;
    for (m, l) in &before {
        if m.as_str() == "m8" {
            assert_eq!(after[m].kind(), LevelKind::Full);
        } else {
            assert_eq!(&after[m], l);
        }
    }
    e.decide(&a(MOD_1), &id, uphold(), 100_005).unwrap();
}

#[test]
fn critical_denial_flags_report() {
    let mut e = engine();
    let id = f1_report(&mut e);
    assign(&mut e, &id, 100_001);
    let req: OpenRequest = serde_json::from_value(json!({
        "targets": ["m10"], "justification": "need context", "criticality": "critical"
    }))
    .unwrap();
    let q = e.open_request(&a(MOD_1), &id, req, 100_002).unwrap();
    let v = e.respond_request(&a(ALICE), &q.request_id, ResponseDecision::Deny, 100_003).unwrap();
    assert!(v.flags.contains(&ReportFlag::DismissibleForNondisclosure));
    assert_eq!(v.annotations.len(), 1);
    assert_eq!(e.report(&id).unwrap().levels[&MsgId::new("m10").unwrap()].kind(), LevelKind::MetadataOnly);
}

#[test]
fn empty_justification_rejected() {
    let mut e = engine();
    let id = f1_report(&mut e);
    assign(&mut e, &id, 100_001);
    let req: OpenRequest = serde_json::from_value(json!({
        "targets": ["m8"], "justification": "   ", "criticality": "informational"
    }))
    .unwrap();
    assert!(matches!(e.open_request(&a(MOD_1), &id, req, 2), Err(EngineError::EmptyJustification)));
}

#[test]
fn conflicted_moderator_never_assigned() {
    let mut e = engine();
    let id = f1_report(&mut e);
    let req = AssignmentRequest {
        preferred: vec!["mod-2".into()],
        count: Some(4),
        ..Default::default()
    };
    let v = e.assign(&a(ALICE), &id, req, 100_001).unwrap();
    let handles: Vec<_> = v.assigned_moderators.iter().map(|m| m.handle.as_str()).collect();
    assert!(!handles.contains(&"mod-2"), "{handles:?}");
    assert!(!e.report(&id).unwrap().is_assigned(&a(MOD_2)));
}

#[test]
fn bystander_flow_requires_consent() {
    let mut e = engine();
    let id = f1_report(&mut e);
    assign(&mut e, &id, 100_001);
    let inv: InviteRequest = serde_json::from_value(json!({
        "bystander": "P3", "involvement": "flag_suspicious", "question": "anything else?"
    }))
    .unwrap();
    let label = e.report(&id).unwrap().pseudonyms.of(&a(WENDY)).unwrap().label.clone();
    let inv = InviteRequest { bystander: label, ..inv };
    let i = e.invite_bystander(&a(MOD_1), &id, inv, 100_002).unwrap();
    let body = FindingBody::Flag { flags: vec![MsgId::new("m11").unwrap()] };
    assert!(e.submit_finding(&a(WENDY), &i.invite_id, body.clone(), 100_003).is_err());
    e.consent_invite(&a(ALICE), &i.invite_id, true, 100_004).unwrap();
    e.submit_finding(&a(WENDY), &i.invite_id, body.clone(), 100_005).unwrap();
    assert!(matches!(e.submit_finding(&a(WENDY), &i.invite_id, body, 100_006), Err(EngineError::Conflict(_))));
    let g = GrantRequest { grantees: vec!["mod-1".into()], expires_at: None, view_limit: None };
    e.create_grant(&a(ALICE), &id, g, 100_007).unwrap();
    let v = e.fetch_evidence(&a(MOD_1), &id, 100_008).unwrap();
    assert_eq!(v.flagged.len(), 1);
}

#[test]
fn full_lifecycle_with_lapse() {
    let mut e = engine();
    let id = f1_report(&mut e);
    assign(&mut e, &id, 100_001);
    e.decide(&a(MOD_1), &id, uphold(), 100_002).unwrap();
    let req = NotifyRequest { granularity: Some(crate::lifecycle::Granularity::MessageLevel), offending_message: None };
    let v = e.notify(&a(MOD_1), &id, req, 100_003).unwrap();
    let notice = v.notification.unwrap();
    assert!(notice.notice.unwrap().excerpt.is_some());
    let window = e.settings().appeal_window_ms;
    let seen = e.get_report(&a(BOB), &id, 100_004).unwrap();
    assert_eq!(seen.viewer, ViewerKind::Reported);
    let late = 100_003 + window + 1;
    let err = e
        .appeal(&a(BOB), &id, AppealAction::File { statement: "unfair".into() }, late)
        .unwrap_err();
    assert!(matches!(err, EngineError::AppealWindowClosed));
    let r = e.report(&id).unwrap();
    assert_eq!(r.state, ReportState::Closed);
    assert!(r.punishment_applied_at.is_some());
    let close = e.audit().events().iter().find(|ev| ev.action == "report.close").unwrap();
    assert_eq!(close.actor, PLATFORM_ACTOR);
    assert!(close.object.contains("grants-revoked="));
}

#[test]
fn appeal_reverse_lifts_and_dismiss_is_not_appealable() {
    let mut e = engine();
    let id = f1_report(&mut e);
    assign(&mut e, &id, 100_001);
    let mut d = uphold();
    d.punishment_timing = crate::lifecycle::PunishmentTiming::Immediate;
    e.decide(&a(MOD_1), &id, d, 100_002).unwrap();
    e.notify(&a(MOD_1), &id, NotifyRequest::default(), 100_003).unwrap();
    e.appeal(&a(BOB), &id, AppealAction::File { statement: "context".into() }, 100_004).unwrap();
    let v = e
        .appeal(&a(MOD_1), &id, AppealAction::Resolve { affirm: false, rationale: "new context".into() }, 100_005)
        .unwrap();
    assert_eq!(v.state, ReportState::Dismissed);
    assert!(e.state().sanctions[0].lifted_at.is_some());

    let id2 = f1_report(&mut e);
    assign(&mut e, &id2, 100_010);
    let d: Decision = serde_json::from_value(json!({
        "outcome": "dismiss", "punishment": "none", "punishment_timing": "immediate"
    }))
    .unwrap();
    e.decide(&a(MOD_1), &id2, d, 100_011).unwrap();
    e.notify(&a(MOD_1), &id2, NotifyRequest::default(), 100_012).unwrap();
    let err = e.appeal(&a(BOB), &id2, AppealAction::File { statement: "x".into() }, 100_012).unwrap_err();
    assert!(matches!(err, EngineError::NotAppealable));
}

#[test]
fn direct_conversation_downgrades_notice() {
    let mut e = engine();
    let id = file(
        &mut e,
        json!({"reported": BOB, "reason": "dm abuse", "conversations": [F2], "scope": {"mode": "all_in_conversation"}}),
        100_000,
    )
    .id
    .to_string();
    assign(&mut e, &id, 100_001);
    e.decide(&a(MOD_1), &id, uphold(), 100_002).unwrap();
    let req = NotifyRequest { granularity: Some(crate::lifecycle::Granularity::MessageLevel), offending_message: None };
    let v = e.notify(&a(MOD_1), &id, req, 100_003).unwrap();
    let n = v.notification.unwrap();
    assert!(n.downgraded);
    let notice = n.notice.unwrap();
    assert_eq!(notice.granularity, crate::lifecycle::Granularity::Generic);
    assert!(notice.excerpt.is_none());
}

#[test]
fn withdraw_revokes_grants() {
    let mut e = engine();
    let id = f1_report(&mut e);
    let g = GrantRequest { grantees: vec!["mod-1".into()], expires_at: None, view_limit: None };
    e.create_grant(&a(ALICE), &id, g, 100_001).unwrap();
    assert!(e.terminate(&a(ALICE), &id, TerminationReason::ConsentRefused, 100_002).is_err());
    e.terminate(&a(ALICE), &id, TerminationReason::ReporterWithdrawn, 100_003).unwrap();
    assert!(matches!(
        e.fetch_evidence(&a(MOD_1), &id, 100_004),
        Err(EngineError::Unauthorized(_)) | Err(EngineError::Denied(Denial::NoGrant))
    ));
}

#[test]
fn ephemeral_segments_purge_and_attach() {
    let mut e = engine();
    let seg = |p: &[u8]| AppendSegment { seg_id: None, captured_at: None, payload: p.to_vec() };
    let s1 = e.append_segment(&a(ALICE), V1, seg(b"one"), 1_000).unwrap();
    e.append_segment(&a(BOB), V1, seg(b"two"), 20_000).unwrap();
    assert!(e.append_segment(&a(CAROL), V1, seg(b"x"), 20_001).is_err());
    let listed = e.reportable(&a(ALICE), V1, 25_000).unwrap();
    assert_eq!(listed.len(), 2);
    let v = file(
        &mut e,
        json!({"reported": BOB, "reason": "voice", "conversations": [V1], "scope": {"mode": "all_in_conversation"}, "segments": [s1.seg_id.as_str()]}),
        26_000,
    );
    assert_eq!(v.segments, vec![s1.seg_id.to_string()]);
    assert!(e.reportable(&a(ALICE), V1, 40_000).unwrap().len() == 1);
    assert!(e.state().purges.contains_key(&s1.seg_id));
    let ev = e.fetch_evidence(&a(ALICE), v.id.as_str(), 40_001).unwrap();
    assert!(ev.items.iter().any(|i| matches!(i.content, ItemContent::Segment { .. })));
}

#[test]
fn flooding_sets_signal() {
    let mut e = engine();
    let mut last = None;
    for i in 0..11u64 {
        last = Some(file(
            &mut e,
            json!({"reported": BOB, "reason": "spam", "conversations": [F1], "scope": {"mode": "last_n", "n": 1}}),
            1_000 + i,
        ));
    }
    assert!(last.unwrap().filer_rate_signal);
    assert!(e.audit().events().iter().any(|ev| ev.action == "filer.rate-signal"));
}

#[test]
fn audit_excerpt_and_export_permissions() {
    let mut e = engine();
    let id = f1_report(&mut e);
    let ex = e.audit_excerpt(&a(ALICE), &id, 100_001).unwrap();
    assert!(!ex.events.is_empty());
    assert!(e.audit_excerpt(&a(CAROL), &id, 100_001).is_err());
    assert!(e.export_audit(&a(MOD_1), 100_002).is_err());
    let nd = e.export_audit(&a(PLATFORM), 100_003).unwrap();
    assert_eq!(nd.lines().count(), e.audit().len());
}

#[test]
fn sent_messages_are_franked() {
    let mut e = engine();
    let m = e.send_message(&a(ALICE), F1, "hello", 200_000).unwrap();
    assert!(e.keys().verify_frank(&m));
    assert!(e.send_message(&a(CAROL), F1, "hello", 200_001).is_err());
}
