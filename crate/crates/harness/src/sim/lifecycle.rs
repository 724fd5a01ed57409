//! The report state machine: every (state, operation) pair probed against
//! the transition table, and fuzzed traces checked for punishment timing,
//! conflicted assignment and grant revocation.

use rand::seq::SliceRandom;
use rand::Rng;
use redress_core::disclosure::{Consent, RequestState, ResponseDecision};
use redress_core::engine::{AppealAction, Engine, Report};
use redress_core::fixtures::{ALICE, BOB, F1, F2, F3, MOD_1, WENDY};
use redress_core::lifecycle::{next_state, LifecycleOp, Outcome, Punishment, PunishmentTiming, ReportState, TerminationReason};
use serde_json::json;

use super::{acct, fixture_engine, parse, Fuzz, Op, MODERATORS};
use crate::props::Tally;

/// Named starting points for the enumeration. Closed is reached two ways.
pub const STARTS: [&str; 11] = [
    "filed",
    "assembling",
    "under_review",
    "decided",
    "notified",
    "appeal_open",
    "appeal_resolved",
    "dismissed",
    "closed_by_lapse",
    "closed_after_appeal",
    "terminated",
];

struct Probe {
    engine: Engine,
    id: String,
    now: u64,
}

impl Probe {
    fn report(&self) -> &Report {
        self.engine.report(&self.id).expect("probe report exists")
    }

    fn report_mut(&mut self) -> &mut Report {
        let id = self.id.clone();
        self.engine
            .state_mut()
            .reports
            .values_mut()
            .find(|r| r.id.as_str() == id)
            .expect("probe report exists")
    }

    fn tick(&mut self) -> u64 {
        self.now += 10;
        self.now
    }

    fn decide(&mut self, outcome: &str, punishment: &str) {
        let now = self.tick();
        let d = parse(json!({
            "outcome": outcome, "policy_violated": "harassment", "punishment": punishment,
            "punishment_timing": "delayed_until_appeal", "rationale": "reviewed"
        }));
        self.engine.decide(&acct(MOD_1), &self.id, d, now).expect("decide on the fixed path");
    }

    fn notify(&mut self) {
        let now = self.tick();
        self.engine
            .notify(&acct(MOD_1), &self.id, parse(json!({})), now)
            .expect("notify on the fixed path");
    }

    fn appeal(&mut self, action: AppealAction, who: &str) {
        let now = self.tick();
        self.engine.appeal(&acct(who), &self.id, action, now).expect("appeal on the fixed path");
    }
}

fn file(engine: &mut Engine, now: u64) -> Result<String, String> {
    let req = parse(json!({
        "reported": BOB, "reason": "harassment", "conversations": [F1],
        "scope": {"mode": "all_in_conversation"},
        "levels": {"m1": {"level": "metadata_only"}, "m3": {"level": "metadata_only"}}
    }));
    engine.file_report(&acct(ALICE), req, now).map(|v| v.id.to_string()).map_err(|e| e.to_string())
}

/// Builds a report in the named state through the public operations. From
/// review onward it carries a pending informational request, an invite
/// awaiting consent and an approved invite, so that every probe has an
/// object to act on.
fn reach(start: &str) -> Probe {
    let mut engine = fixture_engine();
    let now = 5_000_000;
    let id = file(&mut engine, now).expect("fixture filing");
    let mut p = Probe { engine, id, now };
    if start == "filed" {
        p.report_mut().state = ReportState::Filed;
        return p;
    }
    if start == "assembling" {
        return p;
    }
    let now = p.tick();
    p.engine
        .assign(&acct(ALICE), &p.id, parse(json!({"preferred": [MOD_1], "count": 1})), now)
        .expect("mod-1 is not conflicted on F1");
    let now = p.tick();
    let req = parse(json!({"targets": ["m1"], "justification": "context", "criticality": "informational", "level": {"level": "full"}}));
    p.engine.open_request(&acct(MOD_1), &p.id, req, now).expect("request on the fixed path");
    for _ in 0..2 {
        let now = p.tick();
        let req = parse(json!({"bystander": WENDY, "involvement": "yes_no", "question": "Did you see this?"}));
        p.engine.invite_bystander(&acct(MOD_1), &p.id, req, now).expect("invite on the fixed path");
    }
    let first = p.report().invites[0].invite_id.clone();
    let now = p.tick();
    p.engine.consent_invite(&acct(ALICE), &first, true, now).expect("consent on the fixed path");
    match start {
        "under_review" => {}
        "terminated" => {
            let now = p.tick();
            p.engine
                .terminate(&acct(ALICE), &p.id, TerminationReason::ReporterWithdrawn, now)
                .expect("withdraw on the fixed path");
        }
        "decided" => p.decide("uphold", "warn"),
        "notified" => {
            p.decide("uphold", "warn");
            p.notify();
        }
        "closed_by_lapse" => {
            p.decide("uphold", "warn");
            p.notify();
            p.now += p.engine.settings().appeal_window_ms + 1;
            let now = p.now;
            p.engine.get_report(&acct(ALICE), &p.id, now).expect("reporter reads");
        }
        "appeal_open" | "appeal_resolved" | "dismissed" | "closed_after_appeal" => {
            p.decide("uphold", "warn");
            p.notify();
            p.appeal(AppealAction::File { statement: "context missing".into() }, BOB);
            match start {
                "appeal_resolved" => p.appeal(AppealAction::Resolve { affirm: true, rationale: "stands".into() }, MOD_1),
                "dismissed" => p.appeal(AppealAction::Resolve { affirm: false, rationale: "reversed".into() }, MOD_1),
                "closed_after_appeal" => {
                    p.appeal(AppealAction::Resolve { affirm: true, rationale: "stands".into() }, MOD_1);
                    p.appeal(AppealAction::Close, MOD_1);
                }
                _ => {}
            }
        }
        other => panic!("unknown start {other}"),
    }
    for q in p.report_mut().requests.iter_mut().filter(|q| q.state == RequestState::Withdrawn) {
        q.state = RequestState::Pending;
        q.resolved_at = None;
    }
    p
}

/// Applies `op` to the probe's report. `Ok` means the engine accepted it.
fn apply(p: &mut Probe, op: LifecycleOp) -> Result<(), String> {
    let now = p.tick();
    let id = p.id.clone();
    let r = p.report();
    let pending_request = r.requests.iter().find(|q| q.state == RequestState::Pending).map(|q| q.request_id.clone());
    let awaiting = r.invites.iter().find(|i| i.consent == Consent::AwaitingReporter).map(|i| i.invite_id.clone());
    let approved = r.invites.iter().find(|i| i.consent == Consent::ReporterApproved).map(|i| i.invite_id.clone());
    let e = &mut p.engine;
    let (alice, bob, mod1, wendy) = (acct(ALICE), acct(BOB), acct(MOD_1), acct(WENDY));
    let res = match op {
        LifecycleOp::File => unreachable!("filing is probed separately"),
        LifecycleOp::ComposeEvidence => e.compose_views(&alice, &id, parse(json!({"levels": {"m2": {"level": "metadata_only"}}})), now).map(drop),
        LifecycleOp::Assign => e.assign(&alice, &id, parse(json!({"preferred": [MOD_1], "count": 1})), now).map(drop),
        LifecycleOp::OpenRequest => {
            let req = parse(json!({"targets": ["m3"], "justification": "context", "criticality": "informational"}));
            e.open_request(&mod1, &id, req, now).map(drop)
        }
        LifecycleOp::RespondRequest => match pending_request {
            Some(q) => e.respond_request(&alice, &q, ResponseDecision::Deny, now).map(drop),
            None => return Err("no pending request".into()),
        },
        LifecycleOp::InviteBystander => {
            let req = parse(json!({"bystander": WENDY, "involvement": "yes_no", "question": "Anything else?"}));
            e.invite_bystander(&mod1, &id, req, now).map(drop)
        }
        LifecycleOp::ConsentInvite => match awaiting {
            Some(i) => e.consent_invite(&alice, &i, true, now).map(drop),
            None => return Err("no invite awaiting consent".into()),
        },
        LifecycleOp::SubmitFinding => match approved {
            Some(i) => e.submit_finding(&wendy, &i, parse(json!({"mode": "yes_no", "verdict": true})), now).map(drop),
            None => return Err("no approved invite".into()),
        },
        LifecycleOp::Decide => {
            let d = parse(json!({"outcome": "uphold", "policy_violated": "harassment", "punishment": "warn", "punishment_timing": "delayed_until_appeal", "rationale": "r"}));
            e.decide(&mod1, &id, d, now).map(drop)
        }
        LifecycleOp::Notify => e.notify(&mod1, &id, parse(json!({})), now).map(drop),
        LifecycleOp::Appeal => e.appeal(&bob, &id, AppealAction::File { statement: "context".into() }, now).map(drop),
        LifecycleOp::LapseAppealWindow => {
            let later = now + e.settings().appeal_window_ms * 10;
            p.now = later;
            e.get_report(&alice, &id, later).map(drop)
        }
        LifecycleOp::AffirmAppeal => e.appeal(&mod1, &id, AppealAction::Resolve { affirm: true, rationale: "r".into() }, now).map(drop),
        LifecycleOp::ReverseAppeal => e.appeal(&mod1, &id, AppealAction::Resolve { affirm: false, rationale: "r".into() }, now).map(drop),
        LifecycleOp::Close => e.appeal(&mod1, &id, AppealAction::Close, now).map(drop),
        LifecycleOp::Terminate => e.terminate(&alice, &id, TerminationReason::ReporterWithdrawn, now).map(drop),
    };
    res.map_err(|e| e.to_string())
}

/// Probes every operation from every starting point and compares the
/// outcome with [`next_state`].
pub fn enumerate() -> Tally {
    let mut t = Tally::default();
    for start in STARTS {
        for op in LifecycleOp::ALL {
            let mut p = reach(start);
            let from = p.report().state;
            let audit_before = p.engine.audit().len();
            if op == LifecycleOp::File {
                let now = p.tick();
                let filed = file(&mut p.engine, now);
                let fresh = filed.as_ref().ok().and_then(|id| p.engine.report(id)).map(|r| r.history.clone());
                let first = fresh.as_ref().and_then(|h| h.first()).map(|c| (c.from, c.to));
                t.check(first == Some((ReportState::Filed, ReportState::Assembling)), || {
                    format!("{start}: filing produced {filed:?} with first transition {first:?}")
                });
                t.check(p.report().state == from, || format!("{start}: filing another report moved this one"));
                continue;
            }
            let want = next_state(from, op);
            let res = apply(&mut p, op);
            let to = p.report().state;
            let ok = match want {
                Some(w) => res.is_ok() && to == w,
                None => to == from && (op == LifecycleOp::LapseAppealWindow || res.is_err()),
            };
            t.check(ok, || format!("{start} --{op:?}--> {to:?} ({res:?}), table says {want:?}"));
            t.note(if want.is_some() { "permitted" } else { "refused" }, 1);
            if want.is_some_and(|w| w != from) {
                let last = p.report().history.last().map(|c| (c.from, c.to, c.audit_seq));
                let logged = last.is_some_and(|(f, w, seq)| f == from && Some(w) == want && seq as usize >= audit_before);
                t.check(logged, || format!("{start} --{op:?}: history {last:?} does not record the move"));
            }
        }
    }
    t.check(never_left_filed(), || "a report can be created in a state other than assembling".into());
    t
}

/// No engine path leaves a report in Filed.
fn never_left_filed() -> bool {
    let mut f = Fuzz::new(77);
    for _ in 0..300 {
        f.step();
    }
    f.reports.iter().all(|id| f.report(id).state != ReportState::Filed)
}

/// Maps a state-changing audit event back to the table operation.
fn op_of(action: &str, object: &str) -> Option<LifecycleOp> {
    Some(match action {
        "report.file" => LifecycleOp::File,
        "report.assign" => LifecycleOp::Assign,
        "report.decide" => LifecycleOp::Decide,
        "report.notify" => LifecycleOp::Notify,
        "appeal.file" => LifecycleOp::Appeal,
        "appeal.resolve" if object.contains(";affirmed") => LifecycleOp::AffirmAppeal,
        "appeal.resolve" => LifecycleOp::ReverseAppeal,
        "report.close" if object.contains("reason=appeal-window-lapsed") => LifecycleOp::LapseAppealWindow,
        "report.close" => LifecycleOp::Close,
        "report.terminate" => LifecycleOp::Terminate,
        _ => return None,
    })
}

fn check_report(t: &mut Tally, k: usize, e: &Engine, r: &Report) {
    for c in &r.history {
        let ev = e.audit().get(c.audit_seq);
        let op = ev.and_then(|ev| op_of(&ev.action, &ev.object));
        let fits = op.is_some_and(|op| next_state(c.from, op) == Some(c.to));
        t.check(fits, || format!("run {k}: {} moved {:?} -> {:?} via {:?}", r.id, c.from, c.to, ev.map(|e| &e.action)));
    }
    if let Some(d) = &r.decision {
        let delayed = d.outcome == Outcome::Uphold
            && d.punishment != Punishment::None
            && d.punishment_timing == PunishmentTiming::DelayedUntilAppeal;
        let affirmed = r.appeal.as_ref().and_then(|a| a.resolution.as_ref()).filter(|x| x.affirmed);
        if delayed {
            let due = affirmed.map(|a| a.at).or_else(|| r.closed_by_lapse.then(|| r.history.last().map_or(0, |c| c.at)));
            match (r.punishment_applied_at, due) {
                (Some(at), Some(d)) => t.check(at == d, || format!("run {k}: {} punished at {at}, due at {d}", r.id)),
                (Some(at), None) => t.violation(|| format!("run {k}: {} punished at {at} before resolution or lapse", r.id)),
                (None, Some(_)) => t.violation(|| format!("run {k}: {} resolved without applying punishment", r.id)),
                (None, None) => t.check(true, String::new),
            }
            if r.punishment_applied_at.is_some() {
                t.note("delayed-applied", 1);
            }
        } else if d.outcome == Outcome::Dismiss || d.punishment == Punishment::None {
            t.check(r.punishment_applied_at.is_none(), || format!("run {k}: {} punished without a sanction to apply", r.id));
        }
    }
    if let Some(a) = &r.assignment {
        let clash: Vec<_> = a.assigned.iter().filter(|m| a.conflicted.contains(m)).collect();
        t.check(clash.is_empty(), || format!("run {k}: {} assigned conflicted {clash:?}", r.id));
    }
    if r.state.is_terminal() {
        t.check(r.grants.iter().all(|g| g.revoked), || format!("run {k}: {} is {:?} with live grants", r.id, r.state));
        let last = r.history.last().and_then(|c| e.audit().get(c.audit_seq));
        t.check(last.is_some_and(|ev| ev.object.contains("grants-revoked=")), || {
            format!("run {k}: {} entered {:?} without recording revocation", r.id, r.state)
        });
    }
}

/// Fuzzed traces. Moderators occasionally join conversations so that
/// conflicts arise during a run.
pub fn fuzz(seed: u64, runs: usize, steps: usize) -> Tally {
    let mut t = Tally::default();
    for k in 0..runs {
        let mut f = Fuzz::new(seed.wrapping_mul(7_919).wrapping_add(k as u64));
        for _ in 0..steps {
            if f.rng.gen_bool(0.03) {
                let m = acct(MODERATORS.choose(&mut f.rng).expect("non-empty"));
                let c = *[F1, F2, F3].choose(&mut f.rng).expect("non-empty");
                if let Some(conv) = f.engine.state_mut().conversations.values_mut().find(|x| x.conv_id.as_str() == c) {
                    conv.participants.insert(m);
                }
            }
            let out = f.step();
            if let (Op::Assign, Ok(()), Some(id)) = (out.op, &out.result, &out.report) {
                let r = f.report(id);
                let convs: Vec<_> = r.conversations.iter().filter_map(|c| f.engine.state().conversations.get(c)).collect();
                let assigned = r.assigned();
                let conflicted: Vec<_> = assigned.iter().filter(|m| convs.iter().any(|c| c.has_participant(m))).collect();
                t.check(conflicted.is_empty(), || format!("run {k}: assigned participants {conflicted:?}"));
                t.note("assignments", 1);
            }
            for id in f.reports.clone() {
                let r = f.report(&id);
                if r.decision.is_none() || r.punishment_applied_at.is_none() {
                    continue;
                }
                let d = r.decision.as_ref().expect("checked");
                if d.punishment_timing == PunishmentTiming::DelayedUntilAppeal {
                    let settled = r.closed_by_lapse || r.appeal.as_ref().is_some_and(|a| a.resolution.as_ref().is_some_and(|x| x.affirmed));
                    t.check(settled, || format!("run {k}: {id} punished in {:?} before resolution or lapse", r.state));
                }
            }
        }
        for id in &f.reports {
            check_report(&mut t, k, &f.engine, f.report(id));
            t.note(f.report(id).state.as_str(), 1);
        }
        t.check(f.engine.audit().verify().valid, || format!("run {k}: audit chain broken"));
        t.note("runs", 1);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_start_is_reachable() {
        let expect = [
            ReportState::Filed,
            ReportState::Assembling,
            ReportState::UnderReview,
            ReportState::Decided,
            ReportState::Notified,
            ReportState::AppealOpen,
            ReportState::AppealResolved,
            ReportState::Dismissed,
            ReportState::Closed,
            ReportState::Closed,
            ReportState::Terminated,
        ];
        for (s, want) in STARTS.iter().zip(expect) {
            assert_eq!(reach(s).report().state, want, "{s}");
        }
    }

    #[test]
    fn enumeration_matches_table() {
        let t = enumerate();
        assert!(t.ok(), "{t}");
        assert!(t.noted("permitted") >= 15);
    }

    #[test]
    fn small_fuzz_is_clean() {
        let t = fuzz(3, 10, 150);
        assert!(t.ok(), "{t}");
    }
}
