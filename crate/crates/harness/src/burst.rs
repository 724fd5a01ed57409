//! Concurrent evidence fetches over HTTP against one report's grants.

use redress_core::audit::verify_audit_chain;
use redress_core::fixtures::{ALICE, BOB, F1, MOD_1, MOD_3, SENIOR};
use reqwest::Method;
use serde_json::json;
use tokio::task::JoinSet;

use crate::client::{Api, ClientError};
use crate::props::Tally;

async fn post(api: &Api, who: &str, path: &str, body: serde_json::Value, at: u64) -> Result<serde_json::Value, ClientError> {
    let (status, v) = api.call(who, Method::POST, path, Some(&body), at).await?;
    assert!(status < 300, "setup {path} returned {status}: {v}");
    Ok(v)
}

/// Fires `fetches` concurrent requests at each of two grants: one with a
/// view limit, one with an expiry that half the requests arrive after.
pub async fn grant_burst(api: &Api, base: u64, view_limit: u32, fetches: usize) -> Result<Tally, ClientError> {
    let mut t = Tally::default();
    let filed = post(
        api,
        ALICE,
        "/reports",
        json!({"reported": BOB, "reason": "harassment", "conversations": [F1], "scope": {"mode": "all_in_conversation"}}),
        base,
    )
    .await?;
    let id = filed["id"].as_str().expect("report id").to_owned();
    post(api, ALICE, &format!("/reports/{id}/assign"), json!({"preferred": ["mod-1"], "count": 1}), base + 1).await?;

    let limited = post(api, ALICE, &format!("/reports/{id}/grants"), json!({"grantees": ["mod-1", "mod-3"], "view_limit": view_limit}), base + 2).await?;
    let limited = limited["grant_id"].as_str().expect("grant id").to_owned();
    let mut set = JoinSet::new();
    for k in 0..fetches {
        let (api, path) = (api.clone(), format!("/reports/{id}/evidence"));
        let who = if k % 2 == 0 { MOD_1 } else { MOD_3 };
        set.spawn(async move { api.call(who, Method::GET, &path, None, base + 10).await });
    }
    let mut served = 0usize;
    while let Some(res) = set.join_next().await {
        let (status, body) = res.expect("fetch task")?;
        match status {
            200 => {
                served += 1;
                t.check(body["grant_id"] == limited.as_str(), || format!("served through {}", body["grant_id"]));
            }
            403 => t.check(body["error"] == "grant_exhausted", || format!("refused with {}", body["error"])),
            other => t.violation(|| format!("unexpected status {other}: {body}")),
        }
    }
    t.check(served == view_limit as usize, || format!("{served} fetches served on a limit of {view_limit}"));
    t.note("served-limited", served);

    let deadline = base + 1_000;
    let timed = post(api, ALICE, &format!("/reports/{id}/grants"), json!({"grantees": ["mod-4"], "expires_at": deadline}), base + 20).await?;
    let timed = timed["grant_id"].as_str().expect("grant id").to_owned();
    let mut set = JoinSet::new();
    for k in 0..fetches {
        let (api, path) = (api.clone(), format!("/reports/{id}/evidence"));
        let at = if k % 2 == 0 { deadline } else { deadline + 1 };
        set.spawn(async move { (at, api.call(SENIOR, Method::GET, &path, None, at).await) });
    }
    let mut on_time = 0usize;
    while let Some(res) = set.join_next().await {
        let (at, res) = res.expect("fetch task");
        let (status, body) = res?;
        if at > deadline {
            t.check(status == 403 && body["error"] == "grant_expired", || format!("fetch after expiry got {status}: {body}"));
        } else {
            t.check(status == 200 && body["grant_id"] == timed.as_str(), || format!("fetch at the deadline got {status}: {body}"));
            on_time += 1;
        }
    }
    t.note("served-at-deadline", on_time);

    let events = api.audit(base + 2_000).await?;
    let fetched = |g: &str| {
        events
            .iter()
            .filter(|e| e.action == "evidence.fetch" && e.object.contains(&format!(";grant={g};")))
            .count()
    };
    t.check(fetched(&limited) == served, || format!("audit records {} fetches on {limited}", fetched(&limited)));
    t.check(fetched(&timed) == on_time, || format!("audit records {} fetches on {timed}", fetched(&timed)));
    t.check(verify_audit_chain(&events).valid, || "audit chain broken".into());
    Ok(t)
}
