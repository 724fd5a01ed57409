//! The four threat-model scenarios.

use redress_core::fixtures::{ALICE, BOB, CAROL, F1, F3, MOD_1, WENDY};
use serde_json::{json, Value};

use crate::scenario::{Assertion, Check, Phase, Run, Scenario, Step};

pub const NAMES: [&str; 4] = ["selective-disclosure", "forged-screenshot", "impersonation", "report-flooding"];

pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "selective-disclosure" => Some(selective_disclosure()),
        "forged-screenshot" => Some(forged_screenshot()),
        "impersonation" => Some(impersonation()),
        "report-flooding" => Some(report_flooding()),
        _ => None,
    }
}

pub fn all() -> Vec<Scenario> {
    NAMES.iter().filter_map(|n| by_name(n)).collect()
}

/// Unrelated traffic from an outsider, interleaved with the main script.
fn noise(tag: &str) -> Vec<Step> {
    vec![
        Step::get(format!("{tag}-noise-profile"), CAROL, "/moderators/mod-3/profile"),
        Step::post(
            format!("{tag}-noise-file"),
            CAROL,
            "/reports",
            json!({"reported": BOB, "reason": "spam", "conversations": [F3], "scope": {"mode": "last_n", "n": 2}}),
        ),
    ]
}

fn has_part(e: &redress_core::audit::AuditEvent, part: &str) -> bool {
    e.object.split(';').any(|p| p == part)
}

fn selective_disclosure() -> Scenario {
    let file = Step::post(
        "file",
        ALICE,
        "/reports",
        json!({
            "reported": BOB, "reason": "harassment", "conversations": [F1],
            "scope": {"mode": "all_in_conversation"},
            "levels": {"m2": {"level": "removed"}, "m4": {"level": "removed"}}
        }),
    )
    .capture("report", "/id");
    Scenario {
        name: "selective-disclosure",
        summary: "reporter hides own hostile messages; bystander flags them; critical request is denied",
        tick_ms: 1_000,
        phases: vec![
            Phase(vec![vec![file], noise("sd")]),
            Phase(vec![vec![Step::post("assign", ALICE, "/reports/{report}/assign", json!({"preferred": ["mod-1"]}))]]),
            Phase(vec![vec![Step::post(
                "invite",
                MOD_1,
                "/reports/{report}/bystander-invites",
                json!({"bystander": WENDY, "involvement": "flag_suspicious", "question": "Were any relevant messages left out?"}),
            )
            .capture("invite", "/invite_id")]]),
            Phase(vec![vec![Step::post("consent", ALICE, "/bystander-invites/{invite}/consent", json!({"approve": true}))]]),
            Phase(vec![vec![Step::post(
                "finding",
                WENDY,
                "/bystander-invites/{invite}/finding",
                json!({"mode": "flag", "flags": ["m2", "m4"]}),
            )]]),
            Phase(vec![vec![Step::post(
                "request",
                MOD_1,
                "/reports/{report}/disclosure-requests",
                json!({
                    "targets": ["m2", "m4"], "criticality": "critical",
                    "justification": "A bystander flagged these messages as part of the exchange."
                }),
            )
            .capture("request", "/request_id")]]),
            Phase(vec![vec![Step::post("deny", ALICE, "/disclosure-requests/{request}/respond", json!({"decision": "deny"}))]]),
            Phase(vec![
                vec![Step::get("moderator-view", MOD_1, "/reports/{report}")],
                vec![Step::get("outsider-view", CAROL, "/reports/{report}").expect(403)],
            ]),
        ],
        assertions: vec![
            Assertion {
                name: "reporter withheld m2 and m4 at filing",
                check: |run| {
                    let r = run.var("report");
                    match run.report_events(r, "report.file").next() {
                        Some(e) => {
                            let ok = e.actor == ALICE && e.object.contains("m2:removed") && e.object.contains("m4:removed");
                            Check::from(ok, "filing event records both messages as removed", vec![e.seq])
                        }
                        None => Check::fail("no filing event"),
                    }
                },
            },
            Assertion {
                name: "bystander contact followed reporter consent",
                check: |run| {
                    let r = run.var("report");
                    let invite = format!("invite={}", run.var("invite"));
                    let approve = run.report_events(r, "invite.approve").find(|e| has_part(e, &invite));
                    let contact = run.report_events(r, "bystander.contact").find(|e| has_part(e, &invite));
                    let finding = run.report_events(r, "finding.submit").find(|e| has_part(e, &invite));
                    match (approve, contact, finding) {
                        (Some(a), Some(c), Some(f)) => Check::from(
                            a.seq < c.seq && c.seq < f.seq && a.actor == ALICE && f.actor == WENDY,
                            "approve, contact and finding are ordered",
                            vec![a.seq, c.seq, f.seq],
                        ),
                        _ => Check::fail("consent, contact or finding event missing"),
                    }
                },
            },
            Assertion {
                name: "bystander flagged the withheld messages",
                check: |run| {
                    let r = run.var("report");
                    match run.report_events(r, "finding.submit").next() {
                        Some(e) => Check::from(e.object.contains("mode=flag;msgs=m2,m4"), "flag-mode finding names m2,m4", vec![e.seq]),
                        None => Check::fail("no finding event"),
                    }
                },
            },
            Assertion {
                name: "critical request denied and report flagged dismissible_for_nondisclosure",
                check: |run| {
                    let r = run.var("report");
                    let deny = run.report_events(r, "request.deny").next();
                    let flags = run.body("moderator-view")["flags"].as_array().cloned().unwrap_or_default();
                    let flagged = flags.iter().any(|f| f == "dismissible_for_nondisclosure");
                    match deny {
                        Some(e) => Check::from(
                            flagged && e.actor == ALICE && has_part(e, "flag=dismissible_for_nondisclosure"),
                            format!("moderator view flags {flags:?}"),
                            vec![e.seq],
                        ),
                        None => Check::fail("no denial event"),
                    }
                },
            },
            Assertion {
                name: "denial left the withheld messages undisclosed",
                check: |run| {
                    let r = run.var("report");
                    let grants = run.report_events(r, "request.grant").count();
                    let deny: Vec<u64> = run.report_events(r, "request.deny").map(|e| e.seq).collect();
                    Check::from(grants == 0, format!("{grants} granted requests"), deny)
                },
            },
            Assertion {
                name: "outsider read attempt denied and audited",
                check: |run| {
                    let r = run.var("report");
                    let denied: Vec<u64> = run
                        .report_events(r, "authz.denied")
                        .filter(|e| e.actor == CAROL)
                        .map(|e| e.seq)
                        .collect();
                    Check::from(run.status("outsider-view") == 403 && denied.len() == 1, "403 with one denial event", denied)
                },
            },
        ],
    }
}

/// An export with a fabricated item spliced in as if it were a message.
fn forge(run: &Run) -> Value {
    let mut file = run.body("export").clone();
    if let Some(items) = file["items"].as_array_mut() {
        let conversation = items.first().map_or(json!(F1), |i| i["conversation"].clone());
        let sent_at = items.last().map_or(json!(0), |i| i["sent_at"].clone());
        items.push(json!({
            "id": run.var("media"),
            "conversation": conversation,
            "sender": {"account": BOB},
            "sent_at": sent_at,
            "level": "full",
            "body": "I know where you live"
        }));
    }
    file
}

fn forged_screenshot() -> Scenario {
    Scenario {
        name: "forged-screenshot",
        summary: "reporter adds an edited screenshot as free media; it stays unattested and outside the token",
        tick_ms: 1_000,
        phases: vec![
            Phase(vec![
                vec![Step::post(
                    "file",
                    ALICE,
                    "/reports",
                    json!({
                        "reported": BOB, "reason": "threats", "conversations": [F1],
                        "scope": {"preset": "whatsapp-5"},
                        "free_media": [{
                            "description": "screenshot of Bob threatening me",
                            "media_ref": "upload://shot-1.png",
                            "claimed_sender": BOB
                        }]
                    }),
                )
                .capture("report", "/id")
                .capture("media", "/free_media/0")],
                noise("fs"),
            ]),
            Phase(vec![vec![
                Step::post("grant", ALICE, "/reports/{report}/grants", json!({"grantees": ["mod-1"], "view_limit": 3})),
                Step::post("assign", ALICE, "/reports/{report}/assign", json!({"preferred": ["mod-1"]})),
                Step::get("export", ALICE, "/reports/{report}/export"),
            ]]),
            Phase(vec![vec![
                Step::get("evidence", MOD_1, "/reports/{report}/evidence"),
                Step::post("import", MOD_1, "/import", Value::Null).build(|run| run.body("export").clone()),
                Step::post("import-forged", MOD_1, "/import", Value::Null).build(forge).expect(422),
            ]]),
        ],
        assertions: vec![
            Assertion {
                name: "free media recorded at filing",
                check: |run| {
                    let r = run.var("report");
                    let part = format!("free_media={}", run.var("media"));
                    match run.report_events(r, "report.file").next() {
                        Some(e) => Check::from(has_part(e, &part), format!("filing event carries {part}"), vec![e.seq]),
                        None => Check::fail("no filing event"),
                    }
                },
            },
            Assertion {
                name: "screenshot classed unattested",
                check: |run| {
                    let ev = run.body("evidence");
                    let media = ev["free_media"].as_array().cloned().unwrap_or_default();
                    let ok = media.len() == 1
                        && media[0]["item_id"] == run.var("media")
                        && media[0]["provenance"] == "unattested"
                        && ev["provenance"] == "attested";
                    let cites = run.report_events(run.var("report"), "evidence.fetch").map(|e| e.seq).collect();
                    Check::from(ok, format!("free media {media:?}"), cites)
                },
            },
            Assertion {
                name: "attestation token excludes the screenshot",
                check: |run| {
                    let media = run.var("media");
                    let items = run.body("export")["items"].as_array().cloned().unwrap_or_default();
                    let excluded = !items.is_empty() && items.iter().all(|i| i["id"] != media);
                    let verified = run.body("import")["verification"]["mac_valid"] == true;
                    let cites = run
                        .report_events(run.var("report"), "bundle.export")
                        .chain(run.events("bundle.import"))
                        .map(|e| e.seq)
                        .collect();
                    Check::from(
                        excluded && verified,
                        format!("{} attested items, none is {media}; import verified", items.len()),
                        cites,
                    )
                },
            },
            Assertion {
                name: "bundle with the screenshot spliced in is rejected",
                check: |run| {
                    let err = run.body("import-forged")["error"].clone();
                    let cites: Vec<u64> = run.events("bundle.import-rejected").map(|e| e.seq).collect();
                    Check::from(err == "mac_invalid" && cites.len() == 1, format!("import error {err}"), cites)
                },
            },
        ],
    }
}

fn impersonation() -> Scenario {
    Scenario {
        name: "impersonation",
        summary: "an account sharing the reported user's display name sends abuse; attribution follows the account",
        tick_ms: 1_000,
        phases: vec![
            Phase(vec![
                vec![Step::post("lookalike-send", CAROL, "/conversations/conv-f3/messages", json!({"body": "Alice, nobody here wants you"}))
                    .capture("msg", "/msg_id")],
                vec![Step::get("wendy-profile", WENDY, "/moderators/mod-1/profile")],
            ]),
            Phase(vec![vec![Step::post(
                "file",
                ALICE,
                "/reports",
                json!({
                    "reported": BOB, "reason": "harassment by Bob", "conversations": [F3],
                    "scope": {"mode": "all_in_conversation"}
                }),
            )
            .capture("report", "/id")]]),
            Phase(vec![vec![
                Step::get("view", ALICE, "/reports/{report}"),
                Step::get("evidence", ALICE, "/reports/{report}/evidence"),
            ]]),
        ],
        assertions: vec![
            Assertion {
                name: "look-alike items attributed to the sending account",
                check: |run| {
                    let items = run.body("evidence")["items"].as_array().cloned().unwrap_or_default();
                    let msg = run.var("msg");
                    let carol: Vec<String> = items
                        .iter()
                        .filter(|i| i["sender"]["account"] == CAROL)
                        .filter_map(|i| i["id"].as_str().map(str::to_owned))
                        .collect();
                    let bob: Vec<String> = items
                        .iter()
                        .filter(|i| i["sender"]["account"] == BOB)
                        .filter_map(|i| i["id"].as_str().map(str::to_owned))
                        .collect();
                    let cites = run.events("message.send").filter(|e| e.actor == CAROL).map(|e| e.seq).collect();
                    Check::from(
                        ["p2", "p4", msg].iter().all(|id| carol.iter().any(|c| c == id)) && bob == ["p1"],
                        format!("{CAROL} sent {carol:?}; {BOB} sent {bob:?}"),
                        cites,
                    )
                },
            },
            Assertion {
                name: "detect_impersonation reports mismatch for every look-alike item",
                check: |run| {
                    let warnings = run.body("view")["impersonation_warnings"].as_array().cloned().unwrap_or_default();
                    let mut ids: Vec<String> = warnings.iter().filter_map(|w| w["item_id"].as_str().map(str::to_owned)).collect();
                    ids.sort();
                    let items = run.body("evidence")["items"].as_array().cloned().unwrap_or_default();
                    let mut want: Vec<String> = items
                        .iter()
                        .filter(|i| i["sender"]["account"] == CAROL)
                        .filter_map(|i| i["id"].as_str().map(str::to_owned))
                        .collect();
                    want.sort();
                    let msg = run.var("msg").to_owned();
                    let all_mismatch = warnings
                        .iter()
                        .all(|w| w["identity"] == "mismatch" && w["sender"]["account"] == CAROL && w["claimed"]["account"] == BOB);
                    let cites = run.report_events(run.var("report"), "report.file").map(|e| e.seq).collect();
                    Check::from(ids == want && ids.contains(&msg) && all_mismatch, format!("warnings on {ids:?}"), cites)
                },
            },
        ],
    }
}

const FLOOD: usize = 50;

fn report_flooding() -> Scenario {
    let filings: Vec<Step> = (1..=FLOOD)
        .map(|i| {
            Step::post(
                format!("flood-{i:02}"),
                WENDY,
                "/reports",
                json!({"reported": BOB, "reason": "spam", "conversations": [F1], "scope": {"mode": "last_n", "n": 1}}),
            )
        })
        .collect();
    let bystander = vec![Step::post(
        "alice-file",
        ALICE,
        "/reports",
        json!({"reported": BOB, "reason": "harassment", "conversations": [F1], "scope": {"preset": "whatsapp-5"}}),
    )];
    Scenario {
        name: "report-flooding",
        summary: "one principal files 50 reports inside one logical minute",
        tick_ms: 1_000,
        phases: vec![Phase(vec![filings, bystander])],
        assertions: vec![
            Assertion {
                name: "every filing accepted with a distinct id",
                check: |run| {
                    let ids: std::collections::BTreeSet<String> = (1..=FLOOD)
                        .filter_map(|i| run.body(&format!("flood-{i:02}"))["id"].as_str().map(str::to_owned))
                        .collect();
                    let cites = run.events("report.file").filter(|e| e.actor == WENDY).map(|e| e.seq).take(1).collect();
                    Check::from(ids.len() == FLOOD, format!("{} distinct report ids", ids.len()), cites)
                },
            },
            Assertion {
                name: "rate signal raised on the filer",
                check: |run| {
                    let flagged: Vec<usize> = (1..=FLOOD)
                        .filter(|i| run.body(&format!("flood-{i:02}"))["filer_rate_signal"] == true)
                        .collect();
                    let signals: Vec<u64> = run.events("filer.rate-signal").map(|e| e.seq).collect();
                    let first = signals.first().copied().into_iter().collect();
                    Check::from(
                        !flagged.is_empty() && flagged.len() == signals.len() && flagged.last() == Some(&FLOOD),
                        format!("{} of {FLOOD} filings carry the signal, first at #{}", flagged.len(), flagged.first().copied().unwrap_or(0)),
                        first,
                    )
                },
            },
            Assertion {
                name: "other filers unaffected",
                check: |run| {
                    let v = run.body("alice-file");
                    let cites = run.events("report.file").filter(|e| e.actor == ALICE).map(|e| e.seq).collect();
                    Check::from(v["id"].is_string() && v.get("filer_rate_signal").is_none(), "alice's filing has no signal", cites)
                },
            },
            Assertion {
                name: "audit chain intact",
                check: |run| {
                    let last = run.full_audit.last().map(|e| e.seq).into_iter().collect();
                    Check::from(run.chain_valid(), format!("{} events verify from genesis", run.full_audit.len()), last)
                },
            },
        ],
    }
}
