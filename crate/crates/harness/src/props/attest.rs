//! Tampering with exported bundles and tokens.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redress_core::engine::{Engine, EngineSettings, FileReport};
use redress_core::fixtures::{self, ALICE, BOB, F1, F3, MOD_1};
use redress_core::model::AccountId;
use serde_json::{json, Value};

use super::Tally;
use crate::props::minimize::minimizer;

const F1_IDS: [&str; 12] = ["m1", "m2", "m3", "m4", "m5", "m6", "m7", "m8", "m9", "m10", "m11", "m12"];

fn level_spec(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..7) {
        0 => json!({"level": "removed"}),
        1 => json!({"level": "metadata_only"}),
        2 => json!({"level": "attributes", "names": ["length_chars", "sentiment", "keyword_hits"]}),
        3 => json!({"level": "answer", "question": "threat-made"}),
        4 => json!({"level": "redacted", "auto": true}),
        _ => json!({"level": "full"}),
    }
}

/// Exports `count` reports with random levels from a fresh fixture engine.
fn pool(rng: &mut ChaCha8Rng, count: usize) -> (Engine, Vec<Value>) {
    let mut e = Engine::with_fixtures(fixtures::key_ring(), minimizer(), EngineSettings::default());
    let alice = AccountId::new(ALICE).expect("fixture id");
    let mut out = Vec::new();
    let mut now = 10_000_000u64;
    while out.len() < count {
        now += 1_000;
        let f3 = rng.gen_bool(0.25);
        let levels: serde_json::Map<String, Value> = if f3 {
            serde_json::Map::new()
        } else {
            let mut m = serde_json::Map::new();
            for id in F1_IDS {
                if rng.gen_bool(0.6) {
                    m.insert(id.to_owned(), level_spec(rng));
                }
            }
            m
        };
        let req: FileReport = serde_json::from_value(json!({
            "reported": BOB, "reason": "harassment", "conversations": [if f3 { F3 } else { F1 }],
            "scope": {"mode": "all_in_conversation"},
            "levels": levels,
        }))
        .expect("well-formed request");
        let id = match e.file_report(&alice, req, now) {
            Ok(v) => v.id,
            Err(_) => continue,
        };
        let file = e.export_bundle(&alice, id.as_str(), now + 1).expect("reporter can export");
        if file.items.is_empty() {
            continue;
        }
        out.push(serde_json::to_value(&file).expect("serializable"));
    }
    (e, out)
}

/// Callers check first that `items` is a non-empty array.
fn items(v: &mut Value) -> &mut Vec<Value> {
    v["items"].as_array_mut().expect("export has items")
}

fn two(rng: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    (rng.gen_range(0..n), rng.gen_range(0..n))
}

/// One tamper step. Returns `None` when the bytes no longer parse as JSON.
fn tamper(rng: &mut ChaCha8Rng, v: &Value, others: &[Value], kind: &mut &'static str) -> Option<Value> {
    let mut v = v.clone();
    let n = v["items"].as_array().map_or(0, Vec::len);
    let choice = if n == 0 { 0 } else { rng.gen_range(0..8) };
    match choice {
        0 | 1 => {
            *kind = "bit-flip";
            let mut raw = serde_json::to_vec(&v).expect("serializable");
            let i = rng.gen_range(0..raw.len());
            raw[i] ^= 1 << rng.gen_range(0..8);
            return serde_json::from_slice(&raw).ok();
        }
        2 => {
            *kind = "reorder";
            let (a, b) = two(rng, n);
            items(&mut v).swap(a, b);
        }
        3 => {
            *kind = "insert";
            let extra = if rng.gen_bool(0.5) {
                let other = others.choose(rng).expect("non-empty pool");
                other["items"].as_array().and_then(|xs| xs.choose(rng)).cloned()
            } else {
                items(&mut v).choose(rng).cloned()
            };
            if let Some(item) = extra {
                let at = rng.gen_range(0..=n);
                items(&mut v).insert(at, item);
            }
        }
        4 => {
            *kind = "delete";
            let at = rng.gen_range(0..n);
            items(&mut v).remove(at);
        }
        5 => {
            *kind = "field-swap";
            let (a, b) = two(rng, n);
            let field = *["sender", "sent_at", "id", "conversation", "body", "level", "attributes", "answer"]
                .choose(rng)
                .expect("non-empty");
            let xs = items(&mut v);
            let (fa, fb) = (xs[a].get(field).cloned(), xs[b].get(field).cloned());
            match (fa, fb) {
                (Some(x), Some(y)) => {
                    xs[a][field] = y;
                    xs[b][field] = x;
                }
                (Some(x), None) => {
                    xs[b][field] = x;
                }
                _ => {}
            }
        }
        6 => {
            *kind = "token-swap";
            let other = others.choose(rng).expect("non-empty pool");
            match rng.gen_range(0..3) {
                0 => v["token"] = other["token"].clone(),
                1 => v["report_id"] = other["report_id"].clone(),
                _ => {
                    v["token"]["report_id"] = other["report_id"].clone();
                    v["report_id"] = other["report_id"].clone();
                }
            }
        }
        _ => {
            *kind = "value-edit";
            let at = rng.gen_range(0..n);
            let item = &mut items(&mut v)[at];
            match rng.gen_range(0..4) {
                0 => item["sent_at"] = json!(item["sent_at"].as_u64().unwrap_or(0) + rng.gen_range(1..100_000)),
                1 => item["sender"] = json!({"account": if item["sender"]["account"] == BOB { ALICE } else { BOB }}),
                2 => {
                    item["level"] = json!("full");
                    item["body"] = json!("fabricated text");
                }
                _ => v["token"]["issued_at"] = json!(v["token"]["issued_at"].as_u64().unwrap_or(0) + 1),
            }
        }
    }
    Some(v)
}

/// `attempts` non-trivial tampers spread over a pool of valid exports.
pub fn run(seed: u64, attempts: usize) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut engine, pool) = pool(&mut rng, 24);
    let importer = AccountId::new(MOD_1).expect("fixture id");
    let mut t = Tally::default();
    let mut now = 20_000_000u64;
    for file in &pool {
        now += 1;
        let ok = engine.import_bundle(&importer, file, now).is_ok_and(|r| r.verification.mac_valid);
        t.check(ok, || format!("untampered export of {} rejected", file["report_id"]));
        t.note("untampered", 1);
    }
    let mut tampered = 0;
    while tampered < attempts {
        let original = pool.choose(&mut rng).expect("non-empty");
        let mut v = original.clone();
        let mut kinds = Vec::new();
        let mut parsed = true;
        for _ in 0..rng.gen_range(1..=3) {
            let mut kind = "";
            match tamper(&mut rng, &v, &pool, &mut kind) {
                Some(next) => v = next,
                None => parsed = false,
            }
            kinds.push(kind);
            if !parsed {
                break;
            }
        }
        if parsed && &v == original {
            continue;
        }
        tampered += 1;
        t.note(kinds[0], 1);
        if !parsed {
            t.note("unparseable", 1);
            t.check(true, String::new);
            continue;
        }
        now += 1;
        let accepted = engine.import_bundle(&importer, &v, now).is_ok();
        t.check(!accepted, || format!("tamper {kinds:?} on {} verified", original["report_id"]));
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_is_clean() {
        let t = run(5, 300);
        assert!(t.ok(), "{t}");
        assert_eq!(t.noted("untampered"), 24);
        assert_eq!(t.cases, 324);
    }
}
