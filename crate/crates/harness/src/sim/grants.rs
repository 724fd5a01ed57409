//! Access-grant arithmetic under interleaved and threaded fetches.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redress_core::engine::{Engine, GrantRequest};
use redress_core::fixtures::{ALICE, BOB, F1, F3, MOD_1};
use redress_core::lifecycle::TerminationReason;
use serde_json::json;

use super::{acct, fixture_engine, MODERATORS};
use crate::props::Tally;

/// What the reporter asked for when the grant was created.
#[derive(Debug, Clone)]
struct Issued {
    limit: Option<u32>,
    expires_at: Option<u64>,
    /// Step at which the grant was revoked.
    revoked_at: Option<usize>,
}

/// Successful fetches per grant, as `(logical time, step)`.
type Ledger = BTreeMap<String, Vec<(u64, usize)>>;

fn setup(rng: &mut ChaCha8Rng, now: u64) -> (Engine, String) {
    let mut e = fixture_engine();
    let conv = if rng.gen_bool(0.5) { F1 } else { F3 };
    let req = serde_json::from_value(json!({
        "reported": BOB, "reason": "harassment", "conversations": [conv],
        "scope": {"mode": "all_in_conversation"}
    }))
    .expect("well-formed");
    let id = e.file_report(&acct(ALICE), req, now).expect("fixture filing").id.to_string();
    if rng.gen_bool(0.5) {
        let req = serde_json::from_value(json!({"preferred": [MOD_1]})).expect("well-formed");
        e.assign(&acct(ALICE), &id, req, now).expect("mod-1 is eligible");
    }
    (e, id)
}

fn grant(e: &mut Engine, rng: &mut ChaCha8Rng, id: &str, now: u64, issued: &mut BTreeMap<String, Issued>) {
    let grantees: Vec<String> = MODERATORS.iter().filter(|_| rng.gen_bool(0.5)).map(|s| (*s).to_owned()).collect();
    let req = GrantRequest {
        grantees: if grantees.is_empty() { vec![MOD_1.to_owned()] } else { grantees },
        expires_at: rng.gen_bool(0.6).then(|| now + rng.gen_range(0..30_000)),
        view_limit: rng.gen_bool(0.8).then(|| rng.gen_range(1..6)),
    };
    if let Ok(g) = e.create_grant(&acct(ALICE), id, req.clone(), now) {
        issued.insert(
            g.grant_id,
            Issued {
                limit: req.view_limit,
                expires_at: req.expires_at,
                revoked_at: None,
            },
        );
    }
}

fn audit_grants(e: &Engine, id: &str) -> BTreeMap<String, usize> {
    let prefix = format!("report:{id};grant=");
    let mut out = BTreeMap::new();
    for ev in e.audit().events().iter().filter(|ev| ev.action == "evidence.fetch") {
        if let Some(rest) = ev.object.strip_prefix(&prefix) {
            let g = rest.split(';').next().unwrap_or("").to_owned();
            *out.entry(g).or_default() += 1;
        }
    }
    out
}

fn judge(t: &mut Tally, run: usize, e: &Engine, id: &str, issued: &BTreeMap<String, Issued>, ledger: &Ledger) {
    for (g, times) in ledger {
        let Some(i) = issued.get(g) else {
            t.check(false, || format!("run {run}: fetch through unknown grant {g}"));
            continue;
        };
        let within = i.limit.is_none_or(|l| times.len() <= l as usize);
        t.check(within, || format!("run {run}: {g} served {} fetches over limit {:?}", times.len(), i.limit));
        let late: Vec<u64> = times
            .iter()
            .filter(|(at, step)| i.expires_at.is_some_and(|x| *at > x) || i.revoked_at.is_some_and(|r| *step > r))
            .map(|(at, _)| *at)
            .collect();
        t.check(late.is_empty(), || format!("run {run}: {g} served fetches at {late:?} after expiry {:?}", i.expires_at));
        t.note("successful-fetches", times.len());
    }
    let counted: BTreeMap<String, usize> = ledger.iter().map(|(g, v)| (g.clone(), v.len())).collect();
    let logged = audit_grants(e, id);
    t.check(counted == logged, || format!("run {run}: responses {counted:?} disagree with audit {logged:?}"));
    t.check(e.audit().verify().valid, || format!("run {run}: audit chain broken"));
}

/// Seeded interleavings: grant creation, fetches by random moderators at
/// random times, and occasional withdrawal.
pub fn run(seed: u64, runs: usize) -> Tally {
    let mut t = Tally::default();
    for k in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e37_79b9));
        let mut now = 2_000_000u64;
        let (mut e, id) = setup(&mut rng, now);
        let mut issued = BTreeMap::new();
        let mut ledger = Ledger::new();
        for _ in 0..rng.gen_range(1..4) {
            grant(&mut e, &mut rng, &id, now, &mut issued);
        }
        for step in 0..rng.gen_range(10..80) {
            now += *[0u64, 1, 500, 5_000, 15_000].choose(&mut rng).expect("non-empty");
            match rng.gen_range(0..20) {
                0 => grant(&mut e, &mut rng, &id, now, &mut issued),
                1 if rng.gen_bool(0.3) => {
                    if e.terminate(&acct(ALICE), &id, TerminationReason::ReporterWithdrawn, now).is_ok() {
                        for i in issued.values_mut().filter(|i| i.revoked_at.is_none()) {
                            i.revoked_at = Some(step);
                        }
                    }
                }
                _ => {
                    let who = acct(MODERATORS.choose(&mut rng).expect("non-empty"));
                    if let Ok(v) = e.fetch_evidence(&who, &id, now) {
                        match v.grant_id {
                            Some(g) => ledger.entry(g).or_default().push((now, step)),
                            None => t.check(false, || format!("run {k}: moderator fetch without a grant")),
                        }
                    }
                }
            }
        }
        judge(&mut t, k, &e, &id, &issued, &ledger);
        t.note("runs", 1);
    }
    t
}

/// Several threads fetch through one shared engine; the clock is a shared
/// counter, so the order of calls is up to the scheduler.
pub fn threaded(seed: u64, runs: usize, threads: usize, fetches: usize) -> Tally {
    let mut t = Tally::default();
    for k in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let start = 3_000_000u64;
        let (mut e, id) = setup(&mut rng, start);
        let mut issued = BTreeMap::new();
        for _ in 0..rng.gen_range(1..4) {
            grant(&mut e, &mut rng, &id, start, &mut issued);
        }
        let engine = Arc::new(Mutex::new(e));
        let clock = Arc::new(AtomicU64::new(start));
        let handles: Vec<_> = (0..threads)
            .map(|n| {
                let engine = Arc::clone(&engine);
                let clock = Arc::clone(&clock);
                let id = id.clone();
                thread::spawn(move || {
                    let who = acct(MODERATORS[n % MODERATORS.len()]);
                    let mut won = Vec::new();
                    for _ in 0..fetches {
                        let now = clock.fetch_add(250, Ordering::SeqCst);
                        let res = engine.lock().expect("engine lock").fetch_evidence(&who, &id, now);
                        if let Ok(v) = res {
                            won.push((v.grant_id.unwrap_or_default(), now));
                        }
                    }
                    won
                })
            })
            .collect();
        let mut ledger = Ledger::new();
        for h in handles {
            for (g, at) in h.join().expect("fetch thread") {
                ledger.entry(g).or_default().push((at, 0));
            }
        }
        let e = engine.lock().expect("engine lock");
        judge(&mut t, k, &e, &id, &issued, &ledger);
        t.note("runs", 1);
    }
    t
}
