//! In-process fuzzing of the engine: random operations by random actors
//! under a logical clock, with invariant checks over state and audit log.

pub mod disclosure;
pub mod grants;
pub mod lifecycle;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redress_core::disclosure::{Criticality, FindingBody, Involvement, ResponseDecision};
use redress_core::engine::{AppealAction, Engine, EngineSettings, Report};
use redress_core::error::EngineError;
use redress_core::fixtures::{self, ALICE, BOB, CAROL, F1, F2, F3, MOD_1, MOD_2, MOD_3, PLATFORM, SENIOR, WENDY};
use redress_core::lifecycle::TerminationReason;
use redress_core::model::AccountId;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::props::minimize::minimizer;

pub const ACCOUNTS: [&str; 9] = [ALICE, BOB, CAROL, WENDY, MOD_1, MOD_2, MOD_3, SENIOR, PLATFORM];
pub const MODERATORS: [&str; 4] = [MOD_1, MOD_2, MOD_3, SENIOR];

pub fn acct(s: &str) -> AccountId {
    AccountId::new(s).expect("fixture id")
}

pub fn fixture_engine() -> Engine {
    Engine::with_fixtures(fixtures::key_ring(), minimizer(), EngineSettings::default())
}

fn parse<T: DeserializeOwned>(v: Value) -> T {
    serde_json::from_value(v).expect("generated request is well-formed")
}

/// Operations the fuzzer draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    File,
    Views,
    Rescope,
    Assign,
    OpenRequest,
    Respond,
    Invite,
    Consent,
    Finding,
    Grant,
    Fetch,
    Decide,
    Notify,
    Appeal,
    ResolveAppeal,
    CloseAppeal,
    Terminate,
    Lapse,
}

impl Op {
    const WEIGHTED: [(Op, u32); 18] = [
        (Op::File, 3),
        (Op::Views, 4),
        (Op::Rescope, 1),
        (Op::Assign, 3),
        (Op::OpenRequest, 4),
        (Op::Respond, 4),
        (Op::Invite, 2),
        (Op::Consent, 3),
        (Op::Finding, 2),
        (Op::Grant, 2),
        (Op::Fetch, 2),
        (Op::Decide, 2),
        (Op::Notify, 2),
        (Op::Appeal, 2),
        (Op::ResolveAppeal, 1),
        (Op::CloseAppeal, 1),
        (Op::Terminate, 1),
        (Op::Lapse, 1),
    ];

    fn draw(rng: &mut ChaCha8Rng) -> Op {
        Self::WEIGHTED.choose_weighted(rng, |(_, w)| *w).expect("positive weights").0
    }
}

/// Result of one fuzzed step.
#[derive(Debug)]
pub struct Outcome {
    pub op: Op,
    pub actor: String,
    pub report: Option<String>,
    pub result: Result<(), EngineError>,
    /// Audit length before the step.
    pub audit_from: usize,
}

pub struct Fuzz {
    pub engine: Engine,
    pub rng: ChaCha8Rng,
    pub now: u64,
    pub reports: Vec<String>,
    /// Probability of picking the actor the operation expects.
    pub on_script: f64,
}

const F1_IDS: [&str; 12] = ["m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8", "m9", "m10", "m11", "m12"];

pub fn level_spec(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..8) {
        0 => json!({"level": "removed"}),
        1 => json!({"level": "metadata_only"}),
        2 => json!({"level": "attributes", "names": ["length_chars"]}),
        3 => json!({"level": "attributes", "names": ["length_chars", "sentiment", "keyword_hits"]}),
        4 => json!({"level": "answer", "question": "threat-made"}),
        5 => json!({"level": "redacted", "auto": true}),
        _ => json!({"level": "full"}),
    }
}

fn scope(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..5) {
        0 => json!({"mode": "all_in_conversation"}),
        1 => json!({"mode": "last_n", "n": rng.gen_range(1..14)}),
        2 => json!({"preset": "whatsapp-5"}),
        3 => json!({"mode": "participants", "senders": [BOB]}),
        _ => json!({"mode": "cross_conversation", "inner": {"mode": "all_in_conversation"}}),
    }
}

impl Fuzz {
    pub fn new(seed: u64) -> Self {
        Self {
            engine: fixture_engine(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: 1_000_000,
            reports: Vec::new(),
            on_script: 0.8,
        }
    }

    pub fn report(&self, id: &str) -> &Report {
        self.engine.report(id).expect("tracked report exists")
    }

    fn any_actor(&mut self) -> &'static str {
        ACCOUNTS.choose(&mut self.rng).expect("non-empty")
    }

    /// `expected` with probability `on_script`, otherwise anyone.
    fn actor(&mut self, expected: Option<AccountId>) -> AccountId {
        match expected {
            Some(a) if self.rng.gen_bool(self.on_script) => a,
            _ => acct(self.any_actor()),
        }
    }

    fn pick_report(&mut self) -> Option<String> {
        self.reports.choose(&mut self.rng).cloned()
    }

    fn assigned(&mut self, id: &str) -> Option<AccountId> {
        let r = self.report(id);
        let mods = r.assignment.as_ref().map(|a| a.assigned.clone()).unwrap_or_default();
        mods.choose(&mut self.rng).cloned()
    }

    fn candidates(&mut self, id: &str, max: usize) -> Vec<String> {
        let mut c: Vec<String> = self.report(id).candidates.iter().map(|m| m.to_string()).collect();
        c.shuffle(&mut self.rng);
        c.truncate(self.rng.gen_range(1..=max));
        c
    }

    fn levels_for(&mut self, ids: &[String]) -> Value {
        let mut map = serde_json::Map::new();
        for id in ids {
            map.insert(id.clone(), level_spec(&mut self.rng));
        }
        Value::Object(map)
    }

    fn decision(&mut self) -> Value {
        let outcome = if self.rng.gen_bool(0.7) { "uphold" } else { "dismiss" };
        let punishment = if outcome == "dismiss" && self.rng.gen_bool(0.9) {
            "none"
        } else {
            *["none", "warn", "mute", "ban"].choose(&mut self.rng).expect("non-empty")
        };
        let timing = if self.rng.gen_bool(0.6) { "delayed_until_appeal" } else { "immediate" };
        json!({"outcome": outcome, "policy_violated": "harassment", "punishment": punishment, "punishment_timing": timing})
    }

    /// Advances the clock and performs one random operation.
    pub fn step(&mut self) -> Outcome {
        let op = Op::draw(&mut self.rng);
        self.now += self.rng.gen_range(1..5_000);
        self.perform(op)
    }

    pub fn perform(&mut self, op: Op) -> Outcome {
        let audit_from = self.engine.audit().len();
        let now = self.now;
        let report = if op == Op::File { None } else { self.pick_report() };
        let (actor, result, report) = match (op, report) {
            (Op::File, _) => {
                let actor = self.actor(Some(acct(ALICE)));
                let conv = *[F1, F1, F1, F3, F2].choose(&mut self.rng).expect("non-empty");
                let picks: Vec<String> = F1_IDS.iter().filter(|_| self.rng.gen_bool(0.3)).map(|s| (*s).to_owned()).collect();
                let levels = if conv == F1 { self.levels_for(&picks) } else { json!({}) };
                let reported = if self.rng.gen_bool(0.9) { BOB } else { CAROL };
                let req = parse(json!({
                    "reported": reported, "reason": "harassment", "conversations": [conv],
                    "scope": scope(&mut self.rng), "levels": levels
                }));
                let r = self.engine.file_report(&actor, req, now);
                let id = r.as_ref().ok().map(|v| v.id.to_string());
                if let Some(id) = &id {
                    self.reports.push(id.clone());
                }
                (actor, r.map(drop), id)
            }
            (_, None) => (acct(ALICE), Ok(()), None),
            (Op::Views, Some(id)) => {
                let actor = self.actor(Some(self.report(&id).reporter.clone()));
                let ids = self.candidates(&id, 4);
                let req = parse(json!({"levels": self.levels_for(&ids)}));
                (actor.clone(), self.engine.compose_views(&actor, &id, req, now).map(drop), Some(id))
            }
            (Op::Rescope, Some(id)) => {
                let actor = self.actor(Some(self.report(&id).reporter.clone()));
                let req = parse(json!({"scope": scope(&mut self.rng)}));
                (actor.clone(), self.engine.rescope(&actor, &id, req, now).map(drop), Some(id))
            }
            (Op::Assign, Some(id)) => {
                let actor = self.actor(Some(self.report(&id).reporter.clone()));
                let mut preferred: Vec<&str> = MODERATORS.iter().copied().filter(|_| self.rng.gen_bool(0.4)).collect();
                preferred.shuffle(&mut self.rng);
                let mut req = json!({"preferred": preferred, "count": self.rng.gen_range(1..=3)});
                if self.rng.gen_bool(0.2) {
                    let who = *MODERATORS.choose(&mut self.rng).expect("non-empty");
                    req["excluded"] = json!([{"moderator": who, "justification": "prior dispute"}]);
                }
                (actor.clone(), self.engine.assign(&actor, &id, parse(req), now).map(drop), Some(id))
            }
            (Op::OpenRequest, Some(id)) => {
                let expected = self.assigned(&id);
                let actor = self.actor(expected);
                let targets = self.candidates(&id, 3);
                let mut req = json!({
                    "targets": targets, "justification": "needed to assess context",
                    "criticality": if self.rng.gen_bool(0.5) { "critical" } else { "informational" }
                });
                if self.rng.gen_bool(0.5) {
                    req["level"] = level_spec(&mut self.rng);
                }
                (actor.clone(), self.engine.open_request(&actor, &id, parse(req), now).map(drop), Some(id))
            }
            (Op::Respond, Some(id)) => {
                let r = self.report(&id);
                let reporter = r.reporter.clone();
                let ids: Vec<String> = r.requests.iter().map(|q| q.request_id.clone()).collect();
                let actor = self.actor(Some(reporter));
                match ids.choose(&mut self.rng).cloned() {
                    Some(q) => {
                        let d = if self.rng.gen_bool(0.6) { ResponseDecision::Grant } else { ResponseDecision::Deny };
                        (actor.clone(), self.engine.respond_request(&actor, &q, d, now).map(drop), Some(id))
                    }
                    None => (actor, Ok(()), Some(id)),
                }
            }
            (Op::Invite, Some(id)) => {
                let expected = self.assigned(&id);
                let actor = self.actor(expected);
                let bystander = *[WENDY, WENDY, CAROL, BOB, MOD_2].choose(&mut self.rng).expect("non-empty");
                let involvement = *["yes_no", "flag_suspicious", "disclose_messages"].choose(&mut self.rng).expect("non-empty");
                let req = parse(json!({"bystander": bystander, "involvement": involvement, "question": "Was anything left out?"}));
                (actor.clone(), self.engine.invite_bystander(&actor, &id, req, now).map(drop), Some(id))
            }
            (Op::Consent, Some(id)) => {
                let r = self.report(&id);
                let reporter = r.reporter.clone();
                let ids: Vec<String> = r.invites.iter().map(|i| i.invite_id.clone()).collect();
                let actor = self.actor(Some(reporter));
                match ids.choose(&mut self.rng).cloned() {
                    Some(inv) => {
                        let approve = self.rng.gen_bool(0.8);
                        (actor.clone(), self.engine.consent_invite(&actor, &inv, approve, now).map(drop), Some(id))
                    }
                    None => (actor, Ok(()), Some(id)),
                }
            }
            (Op::Finding, Some(id)) => {
                let r = self.report(&id);
                let invites: Vec<(String, AccountId, Involvement)> =
                    r.invites.iter().map(|i| (i.invite_id.clone(), i.bystander.clone(), i.involvement)).collect();
                match invites.choose(&mut self.rng).cloned() {
                    Some((inv, bystander, involvement)) => {
                        let actor = self.actor(Some(bystander));
                        let flags = self.candidates(&id, 3);
                        let shape = if self.rng.gen_bool(0.85) { involvement } else { Involvement::YesNo };
                        let body: FindingBody = parse(match shape {
                            Involvement::YesNo => json!({"mode": "yes_no", "verdict": self.rng.gen_bool(0.5)}),
                            Involvement::FlagSuspicious => json!({"mode": "flag", "flags": flags}),
                            Involvement::DiscloseMessages => json!({"mode": "disclose", "disclosures": flags.iter().map(|m| json!({"msg_id": m, "account": "it was hostile", "forward": self.rng.gen_bool(0.3)})).collect::<Vec<_>>()}),
                        });
                        (actor.clone(), self.engine.submit_finding(&actor, &inv, body, now).map(drop), Some(id))
                    }
                    None => (acct(WENDY), Ok(()), Some(id)),
                }
            }
            (Op::Grant, Some(id)) => {
                let actor = self.actor(Some(self.report(&id).reporter.clone()));
                let grantees: Vec<&str> = MODERATORS.iter().copied().filter(|_| self.rng.gen_bool(0.5)).collect();
                let mut req = json!({"grantees": if grantees.is_empty() { vec![MOD_1] } else { grantees }});
                if self.rng.gen_bool(0.7) {
                    req["view_limit"] = json!(self.rng.gen_range(1..4));
                }
                if self.rng.gen_bool(0.5) {
                    req["expires_at"] = json!(now + self.rng.gen_range(0..20_000));
                }
                (actor.clone(), self.engine.create_grant(&actor, &id, parse(req), now).map(drop), Some(id))
            }
            (Op::Fetch, Some(id)) => {
                let expected = self.assigned(&id);
                let actor = self.actor(expected);
                (actor.clone(), self.engine.fetch_evidence(&actor, &id, now).map(drop), Some(id))
            }
            (Op::Decide, Some(id)) => {
                let expected = self.assigned(&id);
                let actor = self.actor(expected);
                let d = parse(self.decision());
                (actor.clone(), self.engine.decide(&actor, &id, d, now).map(drop), Some(id))
            }
            (Op::Notify, Some(id)) => {
                let expected = self.assigned(&id);
                let actor = self.actor(expected);
                let g = *["generic", "policy_only", "message_level"].choose(&mut self.rng).expect("non-empty");
                let req = parse(json!({"granularity": g}));
                (actor.clone(), self.engine.notify(&actor, &id, req, now).map(drop), Some(id))
            }
            (Op::Appeal, Some(id)) => {
                let actor = self.actor(Some(self.report(&id).reported.clone()));
                let a = AppealAction::File { statement: "missing context".into() };
                (actor.clone(), self.engine.appeal(&actor, &id, a, now).map(drop), Some(id))
            }
            (Op::ResolveAppeal, Some(id)) => {
                let expected = self.assigned(&id);
                let actor = self.actor(expected);
                let a = AppealAction::Resolve { affirm: self.rng.gen_bool(0.5), rationale: "reviewed".into() };
                (actor.clone(), self.engine.appeal(&actor, &id, a, now).map(drop), Some(id))
            }
            (Op::CloseAppeal, Some(id)) => {
                let expected = self.assigned(&id);
                let actor = self.actor(expected);
                (actor.clone(), self.engine.appeal(&actor, &id, AppealAction::Close, now).map(drop), Some(id))
            }
            (Op::Terminate, Some(id)) => {
                let reporter = self.report(&id).reporter.clone();
                let expected = if self.rng.gen_bool(0.7) { Some(reporter.clone()) } else { self.assigned(&id) };
                let actor = self.actor(expected);
                let reason = if actor == reporter { TerminationReason::ReporterWithdrawn } else { TerminationReason::ConsentRefused };
                (actor.clone(), self.engine.terminate(&actor, &id, reason, now).map(drop), Some(id))
            }
            (Op::Lapse, Some(id)) => {
                self.now += self.engine.settings().appeal_window_ms + 1;
                let actor = self.report(&id).reporter.clone();
                (actor.clone(), self.engine.get_report(&actor, &id, self.now).map(drop), Some(id))
            }
        };
        Outcome {
            op,
            actor: actor.to_string(),
            report,
            result,
            audit_from,
        }
    }
}

/// Criticality names as the audit log writes them.
pub fn criticality_str(c: Criticality) -> &'static str {
    match c {
        Criticality::Informational => "informational",
        Criticality::Critical => "critical",
    }
}
